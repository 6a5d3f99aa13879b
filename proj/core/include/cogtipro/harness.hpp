// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cogtipro/embed.hpp"
#include "cogtipro/llm_gateway.hpp"
#include "cogtipro/prompt_opt.hpp"
#include "cogtipro/records.hpp"
#include "cogtipro/tsmodel.hpp"

namespace cogtipro::harness {

struct Fold {
  std::string test;
  std::vector<std::string> train;
};

/// One fold per participant, in input order. Throws ConfigError below two
/// participants or on duplicate ids.
std::vector<Fold> loso_split(const std::vector<std::string>& participants);

struct FoldResult {
  std::string fold_id;
  std::uint64_t seed = 0;
  Prediction prediction = Prediction::Abstain;
  double probability = 0.0;
  Label label = Label::HC;
  /// Months 1..window used for this prediction (window mode), else T.
  int window = 0;
};

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

/// MCI is positive; Abstain counts as the wrong class. Throws ConfigError
/// on an empty list.
Metrics compute_metrics(const std::vector<FoldResult>& results);

struct PipelineConfig {
  std::string name = "Full";
  bool optimize_prompt = true;
  int max_iter = 3;
  int minibatch_size = prompt::kDefaultMinibatch;
  int minibatch_val = prompt::kDefaultMinibatchVal;
  /// architecture and sizes; months and variates are filled from the data
  ts::ModelConfig model;
  ts::TrainConfig train;
  embed::SequenceOptions sequence;
  /// Share of training participants held out for early stopping.
  double val_fraction = 0.2;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t global_seed = 0;
  /// Concurrent (fold, seed) jobs. Order-dependent backends force 1.
  int workers = 1;
  /// Use months 1..t only (the "up to month t" reading); 0 = all months.
  int truncate_months = 0;
  /// Predict the held-out participant from months 1..t for every
  /// t >= window_min_months instead of once from all months.
  bool window_mode = false;
  int window_min_months = 3;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Preprocessed cohort shared by every fold.
struct Dataset {
  std::vector<std::string> participants;  // sorted
  std::map<std::string, std::vector<MonthlyTranscript>> transcripts;
  std::map<std::string, Label> labels;
  int months = 0;
  std::string cohort_hash;

  /// Throws ConfigError when labels and transcripts disagree.
  void validate() const;
};

Dataset make_dataset(std::map<std::string, std::vector<MonthlyTranscript>> transcripts,
                     const std::map<std::string, Label>& labels, std::string cohort_hash);

/// SHA-256 over the canonical JSON-lines rendering of records and labels.
std::string cohort_hash(const std::vector<CommandRecord>& records,
                        const std::vector<CohortLabel>& labels);

struct Providers {
  embed::AcousticProvider* acoustic = nullptr;
  embed::LinguisticProvider* linguistic = nullptr;
};

/// Participants whose data entered each training-side stage of one fold.
struct FoldProvenance {
  std::string fold_id;
  std::uint64_t seed = 0;
  std::vector<std::string> minibatch_participants;
  std::vector<std::string> train_participants;
  std::vector<std::string> val_participants;
  /// Providers are stateless lookups; kept for the audit contract.
  std::vector<std::string> embedding_fit_participants;
  std::string prompt_lineage_sha256;
  int best_iteration = 0;
  std::optional<double> best_val_f1;
  int best_epoch = 0;
  std::optional<std::string> failure;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  Metrics metrics;
  int failed_folds = 0;
};

struct ExperimentReport {
  std::string name;
  std::vector<SeedMetrics> per_seed;
  /// Arithmetic mean of per-seed accuracy and F1; confusion summed.
  Metrics mean;
  std::vector<FoldResult> results;
  std::vector<FoldProvenance> provenance;
  /// Lineage documents keyed "seed<k>/<participant>".
  std::map<std::string, nlohmann::json> lineages;
  nlohmann::json model_config;
  nlohmann::json train_config;
  std::string cohort_hash;
  bool partial = false;
};

/// Prompts and summaries depend only on (seed, fold, optimize flag), so
/// ablation variants that share them can reuse one optimization run.
class PromptCache {
 public:
  struct Entry {
    nlohmann::json lineage;
    prompt::PromptTemplate best;
    int best_iteration = 0;
    std::optional<double> best_val_f1;
    std::vector<std::string> minibatch_participants;
    std::map<std::string, std::vector<prompt::LinguisticSummary>> summaries;
  };
  std::optional<Entry> find(const std::string& key) const;
  void put(const std::string& key, Entry entry);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
};

/// LOSO over every participant for every seed. Stage errors abort only the
/// affected fold, which is then recorded as a failure and the report is
/// marked partial.
ExperimentReport run_pipeline(const PipelineConfig& config, const Dataset& data,
                              const Providers& providers, llm::Gateway& gateway,
                              PromptCache* cache = nullptr);

inline constexpr std::string_view kFull = "Full";
inline constexpr std::string_view kWithoutPrompt = "w/o Prompt";
inline constexpr std::string_view kWithoutTemporal = "w/o Temporal";
inline constexpr std::string_view kWithoutAcoustic = "w/o Acoustic";

/// Full, w/o Prompt, w/o Temporal, w/o Acoustic, in that order.
std::vector<PipelineConfig> ablation_grid(const PipelineConfig& base);
std::vector<ExperimentReport> run_ablations(const PipelineConfig& base, const Dataset& data,
                                            const Providers& providers,
                                            llm::Gateway& gateway);

struct AuditResult {
  int checked_folds = 0;
  std::vector<std::string> violations;
  bool clean() const { return violations.empty(); }
};

/// Verifies that no fold's held-out participant appears in its minibatch,
/// training, validation or embedding-fit participant lists.
AuditResult audit_leakage(const ExperimentReport& report);

nlohmann::json report_to_json(const ExperimentReport& report);

/// Writes report.json, report.md, report.csv and lineages/ under `dir`.
/// Throws ConfigError on an empty list and IoError when `dir` is unwritable.
void emit_report(const std::vector<ExperimentReport>& reports,
                 const std::filesystem::path& dir);

/// "73.80" style percentage.
std::string percent(double fraction);

}  // namespace cogtipro::harness
