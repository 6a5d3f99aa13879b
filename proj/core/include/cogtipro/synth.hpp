// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cogtipro/markers.hpp"
#include "cogtipro/records.hpp"

namespace cogtipro::synth {

struct SynthConfig {
  int n_participants = 20;
  double mci_fraction = 0.5;
  int months = 12;
  /// Reference usage level of the study cohort.
  double commands_per_week = 47.0;
  /// Per-category strength in [0, 1], indexed by markers::index_of().
  std::array<double, markers::kNumCategories> marker_strength{};
  int acoustic_dim = 768;
  /// Mean shift applied to acoustic dims 0..7 of MCI participants.
  double acoustic_shift = 0.0;
  std::uint64_t seed = 0;
  Date study_start = Date{std::chrono::year{2022} / 1 / 1};
  /// Probability that a participant-month carries no usable commands.
  double empty_month_probability = 0.05;
  /// Fraction of raw records that are device error strings or blank.
  double error_record_rate = 0.02;

  void set_all_strengths(double s) { marker_strength.fill(s); }
  /// Throws ConfigError on any out-of-range field or single-class cohort.
  void validate() const;
};

SynthConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthConfig& c);

struct AcousticRow {
  std::string participant_id;
  int month_index = 1;
  std::vector<double> vector;
};

struct SyntheticCohort {
  std::vector<CommandRecord> records;
  std::vector<CohortLabel> labels;
  std::vector<AcousticRow> acoustic;
};

/// Deterministic in `config.seed`. MCI participants carry each marker at a
/// rate that grows with its strength; HC participants are drawn from the
/// same base process without planting.
SyntheticCohort generate_cohort(const SynthConfig& config);

/// Number of MCI participants implied by the config (rounded).
int mci_count(const SynthConfig& config);

/// Writes cohort.jsonl, labels.jsonl and acoustic.jsonl under `dir`.
void write_cohort(const std::filesystem::path& dir,
                  const SyntheticCohort& cohort);

}  // namespace cogtipro::synth
