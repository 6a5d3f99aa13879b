// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cogtipro/llm_gateway.hpp"
#include "cogtipro/records.hpp"

namespace cogtipro::prompt {

struct Exemplar {
  std::string excerpt;
  Label label = Label::HC;
  friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

/// Three-part extraction prompt: marker background, extraction directive and
/// few-shot exemplars from both groups. Rendered in that order.
struct PromptTemplate {
  std::string context;
  std::string instruction;
  std::vector<Exemplar> exemplars;

  /// Validating constructor for an initial prompt: all parts non-empty.
  static PromptTemplate make(std::string context, std::string instruction,
                             std::vector<Exemplar> exemplars);
  std::string render() const;
  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

inline constexpr std::string_view kNoData = "NO DATA";

struct LinguisticSummary {
  std::string text;
  std::string participant_id;
  int month_index = 0;
  int prompt_iteration = 0;
  bool no_data() const { return text == kNoData; }
};

struct LabeledTranscript {
  MonthlyTranscript transcript;
  Label label = Label::HC;
};

struct MinibatchSplit {
  std::vector<LabeledTranscript> train;
  std::vector<LabeledTranscript> val;
};

inline constexpr int kDefaultMinibatch = 64;
inline constexpr int kDefaultMinibatchVal = 13;

/// Seeded draw of prompt-optimization items from `pool` (non-empty months
/// only). With at least `size` items: `size` items, `val_size` of them held
/// for validation. Otherwise every item, split 80/20 within each class.
MinibatchSplit make_minibatch(const std::vector<LabeledTranscript>& pool,
                              std::uint64_t seed, int size = kDefaultMinibatch,
                              int val_size = kDefaultMinibatchVal);

/// Two MCI and two HC excerpts from `train`, seed-deterministic.
std::vector<Exemplar> select_exemplars(const std::vector<LabeledTranscript>& train,
                                       std::uint64_t seed, int per_class = 2);

/// Default initial prompt with exemplars drawn from `train`.
PromptTemplate default_initial_prompt(
    const std::vector<LabeledTranscript>& train, std::uint64_t seed);

/// Extractor role. Empty transcripts short-circuit to the NO DATA sentinel
/// without contacting the gateway.
LinguisticSummary extract_features(const MonthlyTranscript& transcript,
                                   const PromptTemplate& prompt,
                                   llm::Gateway& gateway, int iteration = 0);
std::vector<LinguisticSummary> extract_batch(
    const std::vector<const MonthlyTranscript*>& transcripts,
    const PromptTemplate& prompt, llm::Gateway& gateway, int iteration = 0);

/// Classifier role; NO DATA summaries abstain without a call.
Prediction classify_with_prompt(const LinguisticSummary& summary,
                                const PromptTemplate& prompt,
                                llm::Gateway& gateway);
std::vector<Prediction> classify_batch(
    const std::vector<LinguisticSummary>& summaries,
    const PromptTemplate& prompt, llm::Gateway& gateway);

/// F1 with MCI positive. Abstain on an MCI item counts as a false negative
/// and never as a false positive. 0 when 2TP + FP + FN = 0.
double f1_score(const std::vector<Prediction>& predicted,
                const std::vector<Label>& actual);

/// Extract + classify + F1 over `val`. Throws ConfigError if `val` is empty.
double evaluate_prompt(const PromptTemplate& prompt,
                       const std::vector<LabeledTranscript>& val,
                       llm::Gateway& gateway);

struct ErrorCase {
  std::string participant_id;
  int month_index = 0;
  Prediction predicted = Prediction::Abstain;
  Label actual = Label::HC;
  std::string summary;
  /// Rendered transcript excerpt the refiner can read; may be empty.
  std::string transcript;
};

inline constexpr std::string_view kNoErrors = "NO ERRORS";
inline constexpr std::size_t kDigestSummaryChars = 500;
inline constexpr std::size_t kDigestCommands = 60;
inline constexpr std::size_t kDigestCasesPerClass = 3;

/// Deterministic error digest: per-class error counts, the three most common
/// marker terms in the misclassified summaries, then up to three cases of
/// each true class with their summary and transcript excerpt.
std::string analyze_errors(const std::vector<ErrorCase>& errors);

struct RefineResult {
  PromptTemplate prompt;
  std::string note;
};

/// Refiner role. NO ERRORS feedback returns the prompt unchanged without a
/// call. Throws RefinementParseError when the reply has no INSTRUCTION block.
RefineResult refine_with_note(const PromptTemplate& prompt,
                              const std::string& feedback,
                              llm::Gateway& gateway);
PromptTemplate refine(const PromptTemplate& prompt, const std::string& feedback,
                      llm::Gateway& gateway);

struct PromptCandidate {
  PromptTemplate prompt;
  int iteration = 1;
  std::optional<double> val_f1;
  std::optional<int> parent_iteration;
  /// Refiner edit note that produced this prompt.
  std::string feedback_applied;
  /// Error digest computed on this prompt's predictions.
  std::string feedback_digest;
  /// Set when refining this prompt failed and the next iteration reused it.
  std::optional<std::string> refine_error;
  int train_errors = 0;
};

struct OptimizeResult {
  PromptCandidate best;
  std::vector<PromptCandidate> lineage;
};

/// Iterative refinement: each iteration extracts with the current prompt,
/// classifies, scores F1 on `split.val`, keeps the prompt on strict
/// improvement, analyzes the training-side errors and refines. The refiner
/// is not called after the final iteration.
OptimizeResult optimize(const PromptTemplate& p_init, const MinibatchSplit& split,
                        llm::Gateway& gateway, int max_iter = 3);

nlohmann::json to_json(const PromptTemplate& p);
PromptTemplate template_from_json(const nlohmann::json& j);
nlohmann::json lineage_to_json(const OptimizeResult& result,
                               const MinibatchSplit& split);
OptimizeResult lineage_from_json(const nlohmann::json& j);

}  // namespace cogtipro::prompt
