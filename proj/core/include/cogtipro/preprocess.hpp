// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cogtipro/records.hpp"

namespace cogtipro::preprocess {

/// System strings that mark a record as unusable.
const std::set<std::string>& default_error_phrases();
/// Device activation words seen in the study.
const std::set<std::string>& default_wake_lexicon();
inline constexpr int kDefaultWakeTopK = 4;

struct DropEntry {
  CommandRecord record;
  std::string reason;  // "empty" or "error_phrase:<phrase>"
};

struct FilterResult {
  std::vector<CommandRecord> kept;
  std::vector<DropEntry> dropped;
};

/// Drops records whose trimmed, case-folded text equals an error phrase, and
/// records with blank text. Order of the kept records is preserved.
FilterResult filter_error_records(
    const std::vector<CommandRecord>& records,
    const std::set<std::string>& error_phrases = default_error_phrases());

/// First tokens ranked by frequency (ties broken lexicographically); the top
/// `k` are intersected with `lexicon`.
std::set<std::string> detect_wake_words(
    const std::vector<CommandRecord>& records, int k = kDefaultWakeTopK,
    const std::set<std::string>& lexicon = default_wake_lexicon());

/// Removes a leading wake word plus one following separator. Applied at most
/// once per record.
CommandRecord strip_wake_word(const CommandRecord& record,
                              const std::set<std::string>& wake_words);

/// Buckets one participant's records into exactly `months` transcripts by
/// calendar month since `study_start`. Throws WindowingError for a record
/// outside [study_start, study_start + months).
std::vector<MonthlyTranscript> group_monthly(
    const std::vector<CommandRecord>& records, Date study_start, int months);

struct Options {
  Date study_start{};
  int months = 18;
  int wake_top_k = kDefaultWakeTopK;
  std::set<std::string> error_phrases = default_error_phrases();
  std::set<std::string> wake_lexicon = default_wake_lexicon();
  /// Rank first words over the whole cohort instead of per participant.
  bool pooled_wake_words = false;
};

struct CohortTranscripts {
  /// participant id -> `months` transcripts in month order
  std::map<std::string, std::vector<MonthlyTranscript>> by_participant;
  std::vector<DropEntry> drop_log;
  std::map<std::string, std::set<std::string>> wake_words;
};

/// Full cleaning pass: filter, detect and strip wake words, group by month.
CohortTranscripts preprocess_cohort(const std::vector<CommandRecord>& records,
                                    const Options& options);

// --- JSON-lines I/O ---------------------------------------------------------

std::vector<CommandRecord> read_cohort_jsonl(const std::filesystem::path& path);
void write_cohort_jsonl(const std::filesystem::path& path,
                        const std::vector<CommandRecord>& records);

std::vector<CohortLabel> read_labels_jsonl(const std::filesystem::path& path);
void write_labels_jsonl(const std::filesystem::path& path,
                        const std::vector<CohortLabel>& labels);

void write_drop_log_jsonl(const std::filesystem::path& path,
                          const std::vector<DropEntry>& entries);

/// One MonthlyTranscript per line.
void write_transcripts_jsonl(const std::filesystem::path& path,
                             const CohortTranscripts& cohort);
std::map<std::string, std::vector<MonthlyTranscript>> read_transcripts_jsonl(
    const std::filesystem::path& path);

std::map<std::string, Label> label_map(const std::vector<CohortLabel>& labels);

}  // namespace cogtipro::preprocess
