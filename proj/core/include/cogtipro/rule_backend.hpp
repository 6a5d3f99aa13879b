// SPDX-License-Identifier: Apache-2.0
#pragma once

// Text contracts of the rule backend. The same functions are used by the
// prompt templates so that prompts, summaries and refinements round-trip.
//
//   directive line   WEIGHTS: repetition:1 filler:0.5 threshold:1.5
//   transcript       TRANSCRIPT participant=P01 month=3
//                    2022-03-01T10:00:00Z<TAB>play jazz
//   summary          MARKER SUMMARY ... one "name: value" line per focus
//   refiner reply    NOTE: ... / INSTRUCTION: ... (block markers)

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "cogtipro/markers.hpp"
#include "cogtipro/records.hpp"

namespace cogtipro::llm::rule {

struct Directives {
  std::array<double, markers::kNumCategories> weights{};
  double threshold = 1.0;

  double weight(markers::Category c) const {
    return weights[markers::index_of(c)];
  }
  friend bool operator==(const Directives&, const Directives&) = default;
};

/// Parses the last line beginning with "WEIGHTS:". No such line yields the
/// defaults; malformed tokens throw ConfigError.
Directives parse_directives(std::string_view prompt_text);
std::string render_directives(const Directives& d);

/// Replaces (or appends) the WEIGHTS line of an instruction text.
std::string with_directives(std::string_view instruction, const Directives& d);

std::string render_transcript(const MonthlyTranscript& t);
MonthlyTranscript parse_transcript(std::string_view text);

/// sum_c weight_c * marker_value(stats, c) / notable_level(c)
double score(const markers::MarkerStats& stats, const Directives& d);
/// MCI iff score strictly exceeds the threshold.
Label verdict(const markers::MarkerStats& stats, const Directives& d);

/// Reference level above which a marker is reported as notable.
double notable_level(markers::Category c);
std::vector<markers::Category> notable(const markers::MarkerStats& stats);

/// Summary header used to tell summaries from transcripts.
inline constexpr std::string_view kSummaryHeader = "MARKER SUMMARY";

std::string render_summary(const markers::MarkerStats& stats,
                           std::size_t n_commands, const Directives& focus);
/// Inverse of render_summary() for the reported lines; unreported markers
/// read as unmarked (zero, or type_token_ratio 1).
markers::MarkerStats parse_summary(std::string_view text);
bool is_summary(std::string_view text);

/// Summary-line key for a category ("repetition_bursts", ...).
std::string_view summary_key(markers::Category c);

}  // namespace cogtipro::llm::rule
