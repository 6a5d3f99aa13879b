// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/markers.hpp"

#include <algorithm>
#include <chrono>
#include <unordered_set>

#include "cogtipro/text.hpp"

namespace cogtipro::markers {

std::string_view directive_name(Category c) {
  switch (c) {
    case Category::kWordFinding:
      return "placeholder";
    case Category::kCoherence:
      return "topic_jump";
    case Category::kSelfCorrection:
      return "self_correction";
    case Category::kGrammar:
      return "imperative";
    case Category::kRepetition:
      return "repetition";
    case Category::kPragmatic:
      return "lexical";
    case Category::kDisfluency:
      return "filler";
  }
  return "";
}

std::optional<Category> category_from_name(std::string_view name) {
  auto n = text::to_lower_ascii(name);
  for (auto c : kAllCategories) {
    if (directive_name(c) == n) return c;
  }
  return std::nullopt;
}

std::string_view to_string(Intent i) {
  switch (i) {
    case Intent::kMusic:
      return "music";
    case Intent::kAlarm:
      return "alarm";
    case Intent::kLights:
      return "lights";
    case Intent::kWeather:
      return "weather";
    case Intent::kQA:
      return "qa";
    case Intent::kMath:
      return "math";
    case Intent::kLists:
      return "lists";
    case Intent::kSmalltalk:
      return "smalltalk";
  }
  return "qa";
}

Intent classify_intent(std::string_view command_text) {
  // Checked in order; the first family with a keyword hit wins.
  static const std::vector<std::pair<Intent, std::unordered_set<std::string>>>
      kRules = {
          {Intent::kMath,
           {"plus", "minus", "times", "divide", "divided", "multiply",
            "multiplied", "calculate", "sqrt"}},
          {Intent::kAlarm,
           {"alarm", "alarms", "timer", "timers", "wake", "snooze", "remind",
            "reminder"}},
          {Intent::kLights,
           {"light", "lights", "lamp", "lamps", "brightness", "dim"}},
          {Intent::kWeather,
           {"weather", "rain", "raining", "forecast", "temperature", "snow",
            "umbrella", "sunny", "windy"}},
          {Intent::kLists, {"list", "lists", "shopping", "to-do", "todo"}},
          {Intent::kMusic,
           {"play", "music", "song", "songs", "radio", "volume", "pause",
            "resume", "album", "playlist", "skip", "louder", "quieter",
            "stop", "sings"}},
          {Intent::kSmalltalk,
           {"joke", "jokes", "hello", "hi", "thanks", "thank", "morning",
            "night", "goodnight", "goodbye"}},
      };
  auto toks = text::tokenize(command_text);
  for (const auto& [intent, words] : kRules) {
    for (const auto& t : toks) {
      if (words.count(t) != 0) return intent;
    }
  }
  return Intent::kQA;
}

const MarkerRules& default_rules() {
  static const MarkerRules kRules{};
  return kRules;
}

namespace {

std::vector<std::vector<std::string>> tokenize_all(
    const std::vector<std::string>& phrases) {
  std::vector<std::vector<std::string>> out;
  out.reserve(phrases.size());
  for (const auto& p : phrases) out.push_back(text::tokenize(p));
  return out;
}

}  // namespace

MarkerStats marker_statistics(const MonthlyTranscript& transcript,
                              const MarkerRules& rules) {
  MarkerStats s;
  const auto& cmds = transcript.commands;
  if (cmds.empty()) return s;

  const auto placeholder_toks = tokenize_all(rules.placeholders);
  const auto correction_toks = tokenize_all(rules.corrections);
  const std::unordered_set<std::string> fillers(rules.fillers.begin(),
                                                rules.fillers.end());
  const std::unordered_set<std::string> imperatives(rules.imperatives.begin(),
                                                    rules.imperatives.end());

  std::size_t total_tokens = 0;
  std::unordered_set<std::string> vocab;
  std::size_t filler_count = 0;
  std::size_t placeholder_count = 0;
  std::size_t imperative_count = 0;
  std::size_t correction_count = 0;
  std::vector<std::string> canon;
  std::vector<Intent> intents;
  canon.reserve(cmds.size());
  intents.reserve(cmds.size());

  for (const auto& c : cmds) {
    auto toks = text::tokenize(c.text);
    total_tokens += toks.size();
    for (const auto& t : toks) {
      vocab.insert(t);
      if (fillers.count(t) != 0) ++filler_count;
    }
    for (const auto& p : placeholder_toks) {
      placeholder_count += text::count_phrase(toks, p);
    }
    for (const auto& p : correction_toks) {
      correction_count += text::count_phrase(toks, p);
    }
    if (!toks.empty() && imperatives.count(toks.front()) != 0) {
      ++imperative_count;
    }
    std::string joined;
    for (const auto& t : toks) {
      if (!joined.empty()) joined.push_back(' ');
      joined += t;
    }
    canon.push_back(std::move(joined));
    intents.push_back(classify_intent(c.text));
  }

  const double n = static_cast<double>(cmds.size());
  s.type_token_ratio =
      total_tokens == 0 ? 1.0
                        : static_cast<double>(vocab.size()) /
                              static_cast<double>(total_tokens);
  s.filler_rate = static_cast<double>(filler_count) / n;
  s.vague_placeholder_rate = static_cast<double>(placeholder_count) / n;
  s.imperative_fraction = static_cast<double>(imperative_count) / n;
  s.self_correction_abandon_count = static_cast<int>(correction_count);

  // Runs of identical commands, all within the window of the run's first.
  const auto window = std::chrono::seconds{rules.burst_window_seconds};
  std::size_t i = 0;
  while (i < cmds.size()) {
    std::size_t j = i + 1;
    while (j < cmds.size() && canon[j] == canon[i] &&
           cmds[j].timestamp - cmds[i].timestamp < window) {
      ++j;
    }
    if (static_cast<int>(j - i) >= rules.burst_min_length) {
      ++s.repetition_burst_count;
    }
    i = j;
  }

  if (cmds.size() >= 2) {
    const auto jump = std::chrono::seconds{rules.topic_jump_seconds};
    std::size_t jumps = 0;
    for (std::size_t k = 1; k < cmds.size(); ++k) {
      if (intents[k] != intents[k - 1] &&
          cmds[k].timestamp - cmds[k - 1].timestamp < jump) {
        ++jumps;
      }
    }
    s.topic_jump_rate =
        static_cast<double>(jumps) / static_cast<double>(cmds.size() - 1);
  }
  return s;
}

double marker_value(const MarkerStats& stats, Category c) {
  switch (c) {
    case Category::kWordFinding:
      return stats.vague_placeholder_rate;
    case Category::kCoherence:
      return stats.topic_jump_rate;
    case Category::kSelfCorrection:
      return stats.self_correction_abandon_count;
    case Category::kGrammar:
      return stats.imperative_fraction;
    case Category::kRepetition:
      return stats.repetition_burst_count;
    case Category::kPragmatic:
      return 1.0 - stats.type_token_ratio;
    case Category::kDisfluency:
      return stats.filler_rate;
  }
  return 0.0;
}

}  // namespace cogtipro::markers
