// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/synth.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/hash.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/rng.hpp"
#include "cogtipro/text.hpp"

namespace cogtipro::synth {

using markers::Category;
using markers::Intent;
using nlohmann::json;

int mci_count(const SynthConfig& c) {
  return static_cast<int>(std::lround(c.n_participants * c.mci_fraction));
}

void SynthConfig::validate() const {
  if (n_participants < 2) {
    throw ConfigError("synthetic cohort needs at least 2 participants");
  }
  if (!(mci_fraction >= 0.0 && mci_fraction <= 1.0)) {
    throw ConfigError("mci_fraction must lie in [0, 1]");
  }
  int m = mci_count(*this);
  if (m == 0 || m == n_participants) {
    throw ConfigError(fmt::format(
        "mci_fraction {} yields a single-class cohort of {} participants",
        mci_fraction, n_participants));
  }
  if (months < 1) throw ConfigError("months must be >= 1");
  if (!(commands_per_week > 0.0)) {
    throw ConfigError("commands_per_week must be positive");
  }
  for (double s : marker_strength) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ConfigError("marker strengths must lie in [0, 1]");
    }
  }
  if (acoustic_dim < 1) throw ConfigError("acoustic_dim must be >= 1");
  if (!(acoustic_shift >= 0.0)) throw ConfigError("acoustic_shift must be >= 0");
  if (!(empty_month_probability >= 0.0 && empty_month_probability < 1.0)) {
    throw ConfigError("empty_month_probability must lie in [0, 1)");
  }
  if (!(error_record_rate >= 0.0 && error_record_rate < 1.0)) {
    throw ConfigError("error_record_rate must lie in [0, 1)");
  }
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  try {
    c.n_participants = j.value("n_participants", c.n_participants);
    c.mci_fraction = j.value("mci_fraction", c.mci_fraction);
    c.months = j.value("months", c.months);
    c.commands_per_week = j.value("commands_per_week", c.commands_per_week);
    c.acoustic_dim = j.value("acoustic_dim", c.acoustic_dim);
    c.acoustic_shift = j.value("acoustic_shift", c.acoustic_shift);
    c.seed = j.value("seed", c.seed);
    c.empty_month_probability =
        j.value("empty_month_probability", c.empty_month_probability);
    c.error_record_rate = j.value("error_record_rate", c.error_record_rate);
    if (j.contains("study_start")) {
      c.study_start =
          timeutil::parse_date(j["study_start"].get<std::string>());
    }
    if (j.contains("marker_strength")) {
      const auto& ms = j["marker_strength"];
      if (ms.is_number()) {
        c.set_all_strengths(ms.get<double>());
      } else {
        for (const auto& [name, value] : ms.items()) {
          auto cat = markers::category_from_name(name);
          if (!cat) {
            throw ConfigError(fmt::format("unknown marker category '{}'", name));
          }
          c.marker_strength[markers::index_of(*cat)] = value.get<double>();
        }
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad synth config: {}", e.what()));
  }
  c.validate();
  return c;
}

json to_json(const SynthConfig& c) {
  json ms = json::object();
  for (auto cat : markers::kAllCategories) {
    ms[std::string(markers::directive_name(cat))] =
        c.marker_strength[markers::index_of(cat)];
  }
  return json{{"n_participants", c.n_participants},
              {"mci_fraction", c.mci_fraction},
              {"months", c.months},
              {"commands_per_week", c.commands_per_week},
              {"marker_strength", ms},
              {"acoustic_dim", c.acoustic_dim},
              {"acoustic_shift", c.acoustic_shift},
              {"seed", c.seed},
              {"study_start", timeutil::format_date(c.study_start)},
              {"empty_month_probability", c.empty_month_probability},
              {"error_record_rate", c.error_record_rate}};
}

namespace {

// ---- command bank -----------------------------------------------------------

const std::vector<std::string> kSongs = {
    "moon river", "yesterday", "blue suede shoes", "hotel california",
    "dancing queen", "fly me to the moon", "let it be", "stand by me",
    "sweet caroline", "respect", "hey jude", "imagine", "piano man",
    "jolene", "take five", "autumn leaves"};
const std::vector<std::string> kGenres = {"jazz", "classical", "country",
                                          "gospel", "blues", "swing", "folk",
                                          "oldies"};
const std::vector<std::string> kStations = {"npr", "bbc", "kexp", "classic fm",
                                            "wqxr"};
const std::vector<std::string> kTimes = {
    "six am", "seven am", "seven thirty", "eight am", "nine fifteen",
    "noon", "two pm", "five thirty pm", "ten pm"};
const std::vector<std::string> kRooms = {"kitchen", "bedroom", "living room",
                                         "hallway", "porch", "bathroom"};
const std::vector<std::string> kCities = {"boston", "chicago", "denver",
                                          "seattle", "miami", "phoenix",
                                          "portland", "atlanta"};
const std::vector<std::string> kPeople = {
    "abraham lincoln", "marie curie", "frank sinatra", "amelia earhart",
    "mark twain", "eleanor roosevelt", "johnny cash", "jane austen"};
const std::vector<std::string> kItems = {"milk", "eggs", "bread", "coffee",
                                         "apples", "butter", "rice", "tea",
                                         "bananas", "soap"};
const std::vector<std::string> kTopics = {
    "the civil war", "photosynthesis", "the moon landing", "volcanoes",
    "the roman empire", "honey bees", "the olympics", "glaciers"};
const std::vector<std::string> kWords = {"necessary", "rhythm", "accommodate",
                                         "ephemeral", "serendipity",
                                         "conscientious"};

std::string num(Rng& r, int lo, int hi) { return std::to_string(r.integer(lo, hi)); }

using Template = std::string (*)(Rng&);

std::string fill_music(Rng& r) {
  switch (r.index(9)) {
    case 0: return "play " + r.pick(kSongs);
    case 1: return "play some " + r.pick(kGenres) + " music";
    case 2: return "what song is this";
    case 3: return "turn the volume up";
    case 4: return "volume " + num(r, 2, 9);
    case 5: return "stop the music";
    case 6: return "skip this song";
    case 7: return "play " + r.pick(kStations) + " radio";
    default: return "who sings " + r.pick(kSongs);
  }
}

std::string fill_alarm(Rng& r) {
  switch (r.index(7)) {
    case 0: return "set an alarm for " + r.pick(kTimes);
    case 1: return "set a timer for " + num(r, 2, 45) + " minutes";
    case 2: return "cancel my alarm";
    case 3: return "when is my next alarm";
    case 4: return "wake me up at " + r.pick(kTimes);
    case 5: return "how much time is left on the timer";
    default: return "remind me to take my pills at " + r.pick(kTimes);
  }
}

std::string fill_lights(Rng& r) {
  switch (r.index(5)) {
    case 0: return "turn on the " + r.pick(kRooms) + " lights";
    case 1: return "turn off the " + r.pick(kRooms) + " light";
    case 2: return "dim the lights to " + num(r, 10, 90);
    case 3: return "set the lamp brightness to " + num(r, 10, 100);
    default: return "are the " + r.pick(kRooms) + " lights on";
  }
}

std::string fill_weather(Rng& r) {
  switch (r.index(6)) {
    case 0: return "what's the weather today";
    case 1: return "will it rain tomorrow";
    case 2: return "what is the temperature in " + r.pick(kCities);
    case 3: return "what's the forecast for this weekend";
    case 4: return "do i need an umbrella";
    default: return "is it going to snow in " + r.pick(kCities);
  }
}

std::string fill_qa(Rng& r) {
  switch (r.index(6)) {
    case 0: return "who was " + r.pick(kPeople);
    case 1: return "tell me about " + r.pick(kTopics);
    case 2: return "how do you spell " + r.pick(kWords);
    case 3: return "what does " + r.pick(kWords) + " mean";
    case 4: return "when did " + r.pick(kPeople) + " die";
    default: return "how far is " + r.pick(kCities) + " from " + r.pick(kCities);
  }
}

std::string fill_math(Rng& r) {
  switch (r.index(5)) {
    case 0: return "what is " + num(r, 2, 99) + " plus " + num(r, 2, 99);
    case 1: return "what is " + num(r, 2, 30) + " times " + num(r, 2, 30);
    case 2: return "divide " + num(r, 10, 99) + "." + num(r, 1, 9) + " by " + num(r, 2, 20) + "." + num(r, 1, 9);
    case 3: return "what is " + num(r, 20, 99) + " minus " + num(r, 2, 19);
    default: return "calculate " + num(r, 2, 50) + " times " + num(r, 2, 12);
  }
}

std::string fill_lists(Rng& r) {
  switch (r.index(4)) {
    case 0: return "add " + r.pick(kItems) + " to my shopping list";
    case 1: return "what's on my to-do list";
    case 2: return "remove " + r.pick(kItems) + " from my list";
    default: return "read my shopping list";
  }
}

std::string fill_smalltalk(Rng& r) {
  switch (r.index(5)) {
    case 0: return "tell me a joke";
    case 1: return "good morning";
    case 2: return "thank you";
    case 3: return "hello there";
    default: return "good night";
  }
}

constexpr std::array<Template, markers::kNumIntents> kFill = {
    fill_music, fill_alarm,  fill_lights, fill_weather,
    fill_qa,    fill_math,   fill_lists,  fill_smalltalk};

Intent random_intent(Rng& r) {
  return static_cast<Intent>(r.index(markers::kNumIntents));
}

std::string base_command(Rng& r, Intent i) {
  return kFill[static_cast<std::size_t>(i)](r);
}

const std::vector<std::string> kPlaceholderCommands = {
    "turn on that thing", "play the thing", "what is whatever it is",
    "where is that thing", "set the thing for " /* + time */,
    "turn off the thing in the " /* + room */};

const std::vector<std::string> kFragments = {
    "play music", "stop", "volume up", "volume down", "turn light off",
    "set alarm seven", "play song", "turn lights on", "stop alarm",
    "volume five"};

const std::vector<std::string> kFillerPrefixes = {"um", "uh", "um uh", "er",
                                                  "hmm", "uh um"};

// ---- per-participant generation -------------------------------------------

struct PendingCommand {
  Instant ts;
  std::string text;
};

struct Planter {
  const SynthConfig& cfg;
  bool mci;
  double strength(Category c) const {
    const double planted = mci ? cfg.marker_strength[markers::index_of(c)] : 0.0;
    return std::min(1.0, planted + background(c));
  }
  /// Everyone hesitates, gropes for a word or corrects themselves now and
  /// then.
  static double background(Category c) {
    switch (c) {
      case Category::kWordFinding:
      case Category::kSelfCorrection:
      case Category::kDisfluency:
        return 0.05;
      default:
        return 0.0;
    }
  }
};

std::string make_placeholder(Rng& r) {
  std::size_t k = r.index(kPlaceholderCommands.size());
  std::string s = kPlaceholderCommands[k];
  if (k == 4) s += r.pick(kTimes);
  if (k == 5) s += r.pick(kRooms);
  return s;
}

/// Applies per-command text planting.
std::string plant_command_text(Rng& r, const Planter& p, std::string cmd,
                               std::vector<std::string>& repertoire) {
  if (r.bernoulli(0.5 * p.strength(Category::kPragmatic)) && !repertoire.empty()) {
    cmd = r.pick(repertoire);
  }
  if (r.bernoulli(0.5 * p.strength(Category::kGrammar))) {
    cmd = r.pick(kFragments);
  }
  if (r.bernoulli(0.3 * p.strength(Category::kWordFinding))) {
    cmd = make_placeholder(r);
  }
  if (r.bernoulli(0.25 * p.strength(Category::kSelfCorrection))) {
    switch (r.index(3)) {
      case 0: cmd = "wake me at " + num(r, 5, 9) + " uh " + num(r, 5, 9) + " no wait " + num(r, 5, 9); break;
      case 1: cmd += " no wait"; break;
      default: cmd += " never mind"; break;
    }
  }
  if (r.bernoulli(0.4 * p.strength(Category::kDisfluency))) {
    cmd = r.pick(kFillerPrefixes) + " " + cmd;
  }
  return cmd;
}

std::vector<PendingCommand> generate_month(Rng& r, const Planter& p,
                                           Instant month_start,
                                           Instant month_end,
                                           double weekly_rate,
                                           std::vector<std::string>& repertoire) {
  std::vector<PendingCommand> out;
  const double days =
      std::chrono::duration<double>(month_end - month_start).count() / 86400.0;
  int budget = r.poisson(weekly_rate * days / 7.0);
  const auto span_sec = static_cast<long long>(
      std::chrono::duration_cast<std::chrono::seconds>(month_end - month_start)
          .count());

  while (static_cast<int>(out.size()) < budget) {
    // Sessions start at a random second of the month, leaving an hour of
    // headroom so a session never spills into the next month.
    auto start = month_start + std::chrono::seconds{static_cast<long long>(
                                   r.uniform() * static_cast<double>(span_sec - 3600))};
    Instant t = start;
    auto advance = [&](int lo, int hi) { t += std::chrono::seconds{r.integer(lo, hi)}; };

    if (r.bernoulli(0.35 * p.strength(Category::kRepetition))) {
      std::string cmd = base_command(r, random_intent(r));
      int n = r.integer(3, 4);
      for (int k = 0; k < n; ++k) {
        out.push_back({t, cmd});
        advance(3, 8);
      }
      continue;
    }
    if (r.bernoulli(0.35 * p.strength(Category::kCoherence))) {
      Intent prev = random_intent(r);
      for (int k = 0; k < 3; ++k) {
        Intent next = prev;
        while (next == prev) next = random_intent(r);
        // classify_intent() on planted text must differ too; base bank
        // commands classify to their own intent.
        out.push_back({t, base_command(r, next)});
        prev = next;
        advance(2, 7);
      }
      continue;
    }

    int len = r.integer(1, 3);
    std::string last;
    for (int k = 0; k < len; ++k) {
      std::string cmd;
      if (!last.empty() && r.bernoulli(0.08)) {
        cmd = last;  // user repeats a misunderstood request
      } else {
        cmd = plant_command_text(r, p, base_command(r, random_intent(r)),
                                 repertoire);
      }
      out.push_back({t, cmd});
      last = cmd;
      advance(6, 60);
    }
  }
  return out;
}

}  // namespace

SyntheticCohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticCohort cohort;
  const int n = cfg.n_participants;
  const int n_mci = mci_count(cfg);

  Rng label_rng(hash::derive_seed(cfg.seed, 0xC0407));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  label_rng.shuffle(order);
  std::vector<bool> is_mci(n, false);
  for (int k = 0; k < n_mci; ++k) is_mci[order[k]] = true;

  const int width = n >= 100 ? 3 : 2;
  for (int i = 0; i < n; ++i) {
    std::string pid = fmt::format("P{:0{}d}", i + 1, width);
    Rng r(hash::derive_seed(cfg.seed, 0x5EED, static_cast<std::uint64_t>(i)));
    const bool mci = is_mci[i];

    CohortLabel label{pid, mci ? Label::MCI : Label::HC, std::nullopt};
    label.moca_score = mci ? r.integer(18, 25) : r.integer(26, 30);
    cohort.labels.push_back(label);

    // Participant 2 uses the alternate activation words.
    std::vector<std::string> wake = {"Alexa"};
    if (i == 1 && n >= 3) wake = {"Computer", "Echo", "Ziggy"};

    const double weekly = cfg.commands_per_week * r.uniform(0.7, 1.3);
    Planter planter{cfg, mci};
    std::vector<std::string> repertoire;
    for (int k = 0; k < 5; ++k) {
      repertoire.push_back(base_command(r, random_intent(r)));
    }

    Rng acoustic_rng(
        hash::derive_seed(cfg.seed, 0xAC0, static_cast<std::uint64_t>(i)));
    for (int m = 0; m < cfg.months; ++m) {
      auto ms = std::chrono::time_point_cast<std::chrono::seconds>(
          timeutil::add_months(cfg.study_start, m));
      auto me = std::chrono::time_point_cast<std::chrono::seconds>(
          timeutil::add_months(cfg.study_start, m + 1));
      if (r.bernoulli(cfg.empty_month_probability)) continue;

      auto cmds = generate_month(r, planter, ms, me, weekly, repertoire);
      std::sort(cmds.begin(), cmds.end(),
                [](const auto& a, const auto& b) { return a.ts < b.ts; });
      const std::string ref = fmt::format("synth:{}:{}", pid, m + 1);
      for (auto& c : cmds) {
        CommandRecord rec;
        rec.participant_id = pid;
        rec.timestamp = c.ts;
        if (r.bernoulli(cfg.error_record_rate)) {
          // Device error strings replace the transcript entirely.
          switch (r.index(3)) {
            case 0: rec.text = "audio could not be understood"; break;
            case 1: rec.text = "Audio was not intended for this device"; break;
            default: rec.text = ""; break;
          }
        } else {
          rec.text = r.pick(wake) + " " + c.text;
          rec.acoustic_ref = ref;
        }
        cohort.records.push_back(std::move(rec));
      }
      if (!cmds.empty()) {
        AcousticRow row{pid, m + 1, std::vector<double>(cfg.acoustic_dim)};
        for (int d = 0; d < cfg.acoustic_dim; ++d) {
          double v = acoustic_rng.normal();
          if (mci && d < 8) v += cfg.acoustic_shift;
          row.vector[d] = v;
        }
        cohort.acoustic.push_back(std::move(row));
      }
    }
  }
  return cohort;
}

void write_cohort(const std::filesystem::path& dir,
                  const SyntheticCohort& cohort) {
  std::filesystem::create_directories(dir);
  std::string buf;
  for (const auto& r : cohort.records) {
    buf += json_io::to_json(r).dump();
    buf.push_back('\n');
  }
  json_io::write_text_file(dir / "cohort.jsonl", buf);

  buf.clear();
  for (const auto& l : cohort.labels) {
    json j{{"participant_id", l.participant_id},
           {"label", std::string(to_string(l.label))},
           {"moca_score", l.moca_score ? json(*l.moca_score) : json(nullptr)}};
    buf += j.dump();
    buf.push_back('\n');
  }
  json_io::write_text_file(dir / "labels.jsonl", buf);

  buf.clear();
  for (const auto& a : cohort.acoustic) {
    json j{{"participant_id", a.participant_id},
           {"month_index", a.month_index},
           {"vector", a.vector}};
    buf += j.dump();
    buf.push_back('\n');
  }
  json_io::write_text_file(dir / "acoustic.jsonl", buf);
}

}  // namespace cogtipro::synth
