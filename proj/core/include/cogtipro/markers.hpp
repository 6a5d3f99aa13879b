// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cogtipro/records.hpp"

namespace cogtipro::markers {

/// The seven linguistic marker families associated with MCI.
enum class Category {
  kWordFinding,     // vague placeholders ("that thing")
  kCoherence,       // abrupt topic jumps
  kSelfCorrection,  // "never mind", "no wait"
  kGrammar,         // imperative-only style
  kRepetition,      // bursts of identical requests
  kPragmatic,       // narrow, re-used phrasing (low lexical diversity)
  kDisfluency,      // filler pauses
};
inline constexpr std::size_t kNumCategories = 7;
inline constexpr std::array<Category, kNumCategories> kAllCategories = {
    Category::kWordFinding, Category::kCoherence,  Category::kSelfCorrection,
    Category::kGrammar,     Category::kRepetition, Category::kPragmatic,
    Category::kDisfluency};

/// Short directive name used in prompts and summaries ("repetition", ...).
std::string_view directive_name(Category c);
std::optional<Category> category_from_name(std::string_view name);
inline std::size_t index_of(Category c) { return static_cast<std::size_t>(c); }

/// Eight-way command intent taxonomy used for topic-jump detection.
enum class Intent { kMusic, kAlarm, kLights, kWeather, kQA, kMath, kLists,
                    kSmalltalk };
inline constexpr std::size_t kNumIntents = 8;
std::string_view to_string(Intent i);

/// Keyword-rule intent of one command text.
Intent classify_intent(std::string_view command_text);

struct MarkerRules {
  std::vector<std::string> fillers = {"um", "uh", "er", "hmm"};
  std::vector<std::string> placeholders = {"that thing", "the thing",
                                           "whatever it is"};
  std::vector<std::string> imperatives = {"play", "stop", "turn", "set",
                                          "volume"};
  std::vector<std::string> corrections = {"never mind", "no wait"};
  int burst_min_length = 3;
  int burst_window_seconds = 30;
  int topic_jump_seconds = 10;
};
const MarkerRules& default_rules();

struct MarkerStats {
  double type_token_ratio = 1.0;
  int repetition_burst_count = 0;
  double filler_rate = 0.0;
  double vague_placeholder_rate = 0.0;
  double imperative_fraction = 0.0;
  double topic_jump_rate = 0.0;
  int self_correction_abandon_count = 0;

  friend bool operator==(const MarkerStats&, const MarkerStats&) = default;
};

/// Exact counting rules over one cleaned transcript. Pure.
MarkerStats marker_statistics(const MonthlyTranscript& transcript,
                              const MarkerRules& rules = default_rules());

/// The statistic that grows with a category's marker strength. Pragmatic
/// maps to 1 - type_token_ratio so every value is "higher = more marked".
double marker_value(const MarkerStats& stats, Category c);

}  // namespace cogtipro::markers
