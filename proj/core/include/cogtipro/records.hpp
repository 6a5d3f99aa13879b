// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cogtipro/timeutil.hpp"

namespace cogtipro {

enum class Label { HC, MCI };

/// Classifier outcome. Abstain is a value: it is never thrown.
enum class Prediction { HC, MCI, Abstain };

std::string_view to_string(Label l);
std::string_view to_string(Prediction p);
Label parse_label_name(std::string_view s);
inline Prediction as_prediction(Label l) {
  return l == Label::MCI ? Prediction::MCI : Prediction::HC;
}

/// One timestamped voice command.
struct CommandRecord {
  std::string participant_id;
  Instant timestamp{};
  std::string text;
  std::optional<std::string> acoustic_ref;
  /// Set once the leading wake word has been removed so repeated stripping is
  /// a no-op.
  bool wake_word_stripped = false;

  friend bool operator==(const CommandRecord&, const CommandRecord&) = default;
};

/// All cleaned commands of one participant in one study month.
struct MonthlyTranscript {
  std::string participant_id;
  int month_index = 1;  // 1-based
  std::vector<CommandRecord> commands;

  bool empty() const { return commands.empty(); }
};

struct CohortLabel {
  std::string participant_id;
  Label label = Label::HC;
  std::optional<int> moca_score;
};

/// MoCA cut-off separating HC (>= 26) from MCI.
inline constexpr int kMocaHealthyCutoff = 26;

/// Throws ConfigError when the label disagrees with the MoCA cut-off.
void validate(const CohortLabel& label);

}  // namespace cogtipro
