// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cogtipro::text {

std::string to_lower_ascii(std::string_view s);
std::string_view trim(std::string_view s);

/// Trim then ASCII case-fold.
std::string normalize(std::string_view s);

/// Strips ASCII punctuation from both ends of a token.
std::string_view strip_edge_punct(std::string_view token);

/// Case-folds, splits on ASCII whitespace, strips edge punctuation and drops
/// tokens that become empty.
std::vector<std::string> tokenize(std::string_view s);

/// First token under the same rules as tokenize(); empty string if none.
std::string first_token(std::string_view s);

/// Normalized tokens re-joined by single spaces.
std::string canonical(std::string_view s);

/// Counts occurrences of a multi-token phrase in a token sequence.
std::size_t count_phrase(const std::vector<std::string>& tokens,
                         const std::vector<std::string>& phrase);

std::vector<std::string> split_lines(std::string_view s);

bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Text following `marker` (matched case-insensitively at a line start) up to
/// the next line starting with any of `all_markers`, trimmed. The last such
/// block wins; nullopt if the marker never starts a line.
std::optional<std::string> marker_block(
    std::string_view s, std::string_view marker,
    const std::vector<std::string_view>& all_markers);

}  // namespace cogtipro::text
