// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/text.hpp"

namespace cogtipro {

std::string_view to_string(Label l) { return l == Label::MCI ? "MCI" : "HC"; }

std::string_view to_string(Prediction p) {
  switch (p) {
    case Prediction::HC:
      return "HC";
    case Prediction::MCI:
      return "MCI";
    case Prediction::Abstain:
      return "Abstain";
  }
  return "Abstain";
}

Label parse_label_name(std::string_view s) {
  auto n = text::normalize(s);
  if (n == "mci") return Label::MCI;
  if (n == "hc") return Label::HC;
  throw IngestionError(fmt::format("unknown label '{}'", s));
}

void validate(const CohortLabel& label) {
  if (!label.moca_score) return;
  int m = *label.moca_score;
  if (m < 0 || m > 30) {
    throw ConfigError(fmt::format("MoCA score {} out of range for {}", m,
                                  label.participant_id));
  }
  bool healthy = m >= kMocaHealthyCutoff;
  if (healthy != (label.label == Label::HC)) {
    throw ConfigError(fmt::format(
        "label {} of {} contradicts MoCA score {}", to_string(label.label),
        label.participant_id, m));
  }
}

namespace json_io {

json to_json(const CommandRecord& r) {
  json j;
  j["participant_id"] = r.participant_id;
  j["timestamp"] = timeutil::format_rfc3339(r.timestamp);
  j["text"] = r.text;
  j["acoustic_ref"] =
      r.acoustic_ref ? json(*r.acoustic_ref) : json(nullptr);
  return j;
}

CommandRecord command_from_json(const json& j) {
  CommandRecord r;
  try {
    r.participant_id = j.at("participant_id").get<std::string>();
    r.timestamp = timeutil::parse_rfc3339(j.at("timestamp").get<std::string>());
    r.text = j.at("text").is_null() ? std::string{}
                                    : j.at("text").get<std::string>();
    if (j.contains("acoustic_ref") && !j["acoustic_ref"].is_null()) {
      r.acoustic_ref = j["acoustic_ref"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("bad command record: {}", e.what()));
  }
  return r;
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IngestionError(fmt::format("{}:{}: {}", path.string(), lineno,
                                       e.what()));
    }
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw IngestionError(fmt::format("{}:{}: {}", path.string(), lineno,
                                       e.what()));
    }
  }
}

json read_json_file(const std::filesystem::path& path) {
  auto content = read_text_file(path);
  try {
    return json::parse(content);
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << content;
  if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace json_io

namespace preprocess {

using json_io::json;

const std::set<std::string>& default_error_phrases() {
  static const std::set<std::string> kPhrases = {
      "audio could not be understood",
      "audio was not intended for this device",
  };
  return kPhrases;
}

const std::set<std::string>& default_wake_lexicon() {
  static const std::set<std::string> kLexicon = {"alexa", "computer", "echo",
                                                 "ziggy"};
  return kLexicon;
}

FilterResult filter_error_records(const std::vector<CommandRecord>& records,
                                  const std::set<std::string>& error_phrases) {
  FilterResult out;
  std::set<std::string> folded;
  for (const auto& p : error_phrases) folded.insert(text::normalize(p));
  for (const auto& r : records) {
    auto n = text::normalize(r.text);
    if (n.empty()) {
      out.dropped.push_back({r, "empty"});
    } else if (folded.count(n) != 0) {
      out.dropped.push_back({r, "error_phrase:" + n});
    } else {
      out.kept.push_back(r);
    }
  }
  return out;
}

std::set<std::string> detect_wake_words(
    const std::vector<CommandRecord>& records, int k,
    const std::set<std::string>& lexicon) {
  if (k < 1) throw ConfigError("wake-word top-k must be >= 1");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& r : records) {
    auto tok = text::first_token(r.text);
    if (!tok.empty()) ++freq[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(),
                                                          freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> folded_lexicon;
  for (const auto& w : lexicon) folded_lexicon.insert(text::to_lower_ascii(w));
  std::set<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k);
       ++i) {
    if (folded_lexicon.count(ranked[i].first) != 0) out.insert(ranked[i].first);
  }
  return out;
}

CommandRecord strip_wake_word(const CommandRecord& record,
                              const std::set<std::string>& wake_words) {
  if (record.wake_word_stripped) return record;
  const std::string& s = record.text;
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  std::size_t e = b;
  while (e < s.size() && !std::isspace(static_cast<unsigned char>(s[e]))) ++e;
  auto token = text::to_lower_ascii(text::strip_edge_punct(
      std::string_view(s).substr(b, e - b)));
  if (token.empty() || wake_words.count(token) == 0) return record;
  CommandRecord out = record;
  std::size_t cut = e;
  if (cut < s.size()) ++cut;  // one separator
  out.text = s.substr(cut);
  out.wake_word_stripped = true;
  return out;
}

std::vector<MonthlyTranscript> group_monthly(
    const std::vector<CommandRecord>& records, Date study_start, int months) {
  if (months < 1) throw ConfigError("number of study months must be >= 1");
  std::vector<MonthlyTranscript> out(static_cast<std::size_t>(months));
  std::string pid = records.empty() ? std::string{} : records.front().participant_id;
  for (int m = 0; m < months; ++m) {
    out[m].participant_id = pid;
    out[m].month_index = m + 1;
  }
  for (const auto& r : records) {
    if (r.participant_id != pid) {
      throw ContractError(fmt::format(
          "group_monthly expects one participant, saw '{}' and '{}'", pid,
          r.participant_id));
    }
    int m = timeutil::months_since(study_start, r.timestamp);
    if (m < 0 || m >= months) {
      throw WindowingError(fmt::format(
          "record of '{}' at {} ('{}') lies outside the {}-month window "
          "starting {}",
          r.participant_id, timeutil::format_rfc3339(r.timestamp), r.text,
          months, timeutil::format_date(study_start)));
    }
    out[m].commands.push_back(r);
  }
  for (auto& t : out) {
    std::stable_sort(t.commands.begin(), t.commands.end(),
                     [](const CommandRecord& a, const CommandRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
  }
  return out;
}

CohortTranscripts preprocess_cohort(const std::vector<CommandRecord>& records,
                                    const Options& options) {
  CohortTranscripts out;
  auto filtered = filter_error_records(records, options.error_phrases);
  out.drop_log = std::move(filtered.dropped);

  std::map<std::string, std::vector<CommandRecord>> per;
  for (auto& r : filtered.kept) per[r.participant_id].push_back(r);

  std::set<std::string> pooled;
  if (options.pooled_wake_words) {
    pooled = detect_wake_words(filtered.kept, options.wake_top_k,
                               options.wake_lexicon);
  }
  for (auto& [pid, recs] : per) {
    auto wake = options.pooled_wake_words
                    ? pooled
                    : detect_wake_words(recs, options.wake_top_k,
                                        options.wake_lexicon);
    std::vector<CommandRecord> stripped;
    stripped.reserve(recs.size());
    for (const auto& r : recs) {
      auto s = strip_wake_word(r, wake);
      // A record that was only a wake word carries no command.
      if (text::trim(s.text).empty()) {
        out.drop_log.push_back({r, "empty"});
        continue;
      }
      stripped.push_back(std::move(s));
    }
    out.wake_words[pid] = wake;
    out.by_participant[pid] =
        group_monthly(stripped, options.study_start, options.months);
  }
  return out;
}

std::vector<CommandRecord> read_cohort_jsonl(const std::filesystem::path& path) {
  std::vector<CommandRecord> out;
  json_io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    out.push_back(json_io::command_from_json(j));
  });
  return out;
}

void write_cohort_jsonl(const std::filesystem::path& path,
                        const std::vector<CommandRecord>& records) {
  std::string buf;
  for (const auto& r : records) {
    buf += json_io::to_json(r).dump();
    buf.push_back('\n');
  }
  json_io::write_text_file(path, buf);
}

std::vector<CohortLabel> read_labels_jsonl(const std::filesystem::path& path) {
  std::vector<CohortLabel> out;
  json_io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    CohortLabel l;
    l.participant_id = j.at("participant_id").get<std::string>();
    l.label = parse_label_name(j.at("label").get<std::string>());
    if (j.contains("moca_score") && !j["moca_score"].is_null()) {
      l.moca_score = j["moca_score"].get<int>();
    }
    validate(l);
    out.push_back(std::move(l));
  });
  return out;
}

void write_labels_jsonl(const std::filesystem::path& path,
                        const std::vector<CohortLabel>& labels) {
  std::string buf;
  for (const auto& l : labels) {
    json j;
    j["participant_id"] = l.participant_id;
    j["label"] = std::string(to_string(l.label));
    j["moca_score"] = l.moca_score ? json(*l.moca_score) : json(nullptr);
    buf += j.dump();
    buf.push_back('\n');
  }
  json_io::write_text_file(path, buf);
}

void write_drop_log_jsonl(const std::filesystem::path& path,
                          const std::vector<DropEntry>& entries) {
  std::string buf;
  for (const auto& e : entries) {
    json j;
    j["record"] = json_io::to_json(e.record);
    j["reason"] = e.reason;
    buf += j.dump();
    buf.push_back('\n');
  }
  json_io::write_text_file(path, buf);
}

void write_transcripts_jsonl(const std::filesystem::path& path,
                             const CohortTranscripts& cohort) {
  std::string buf;
  for (const auto& [pid, months] : cohort.by_participant) {
    for (const auto& t : months) {
      json j;
      j["participant_id"] = pid;
      j["month_index"] = t.month_index;
      json cmds = json::array();
      for (const auto& c : t.commands) cmds.push_back(json_io::to_json(c));
      j["commands"] = std::move(cmds);
      buf += j.dump();
      buf.push_back('\n');
    }
  }
  json_io::write_text_file(path, buf);
}

std::map<std::string, std::vector<MonthlyTranscript>> read_transcripts_jsonl(
    const std::filesystem::path& path) {
  std::map<std::string, std::vector<MonthlyTranscript>> out;
  json_io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    MonthlyTranscript t;
    t.participant_id = j.at("participant_id").get<std::string>();
    t.month_index = j.at("month_index").get<int>();
    for (const auto& c : j.at("commands")) {
      auto r = json_io::command_from_json(c);
      r.wake_word_stripped = true;
      t.commands.push_back(std::move(r));
    }
    out[t.participant_id].push_back(std::move(t));
  });
  for (auto& [pid, months] : out) {
    std::sort(months.begin(), months.end(),
              [](const auto& a, const auto& b) {
                return a.month_index < b.month_index;
              });
  }
  return out;
}

std::map<std::string, Label> label_map(const std::vector<CohortLabel>& labels) {
  std::map<std::string, Label> out;
  for (const auto& l : labels) out[l.participant_id] = l.label;
  return out;
}

}  // namespace preprocess
}  // namespace cogtipro
