// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "cogtipro/error.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/markers.hpp"
#include "cogtipro/preprocess.hpp"
#include "cogtipro/rule_backend.hpp"
#include "cogtipro/synth.hpp"
#include "cogtipro/text.hpp"
#include "test_support.hpp"

namespace cogtipro {
namespace {

using markers::Category;
using testing::month_of;

// ---- marker_statistics ------------------------------------------------------

TEST(MarkerStatistics, SpecExamples) {
  auto burst = markers::marker_statistics(
      month_of({{0, "play music"}, {5, "play music"}, {10, "play music"}}));
  EXPECT_EQ(burst.repetition_burst_count, 1);

  auto filler = markers::marker_statistics(month_of({{0, "um uh stop alarm"}}));
  EXPECT_DOUBLE_EQ(filler.filler_rate, 2.0);

  auto ttr = markers::marker_statistics(month_of({{0, "play play play"}}));
  EXPECT_DOUBLE_EQ(ttr.type_token_ratio, 1.0 / 3.0);
}

TEST(MarkerStatistics, EmptyTranscriptConventions) {
  auto s = markers::marker_statistics(month_of({}));
  EXPECT_EQ(s, markers::MarkerStats{});
  EXPECT_DOUBLE_EQ(s.type_token_ratio, 1.0);
}

TEST(MarkerStatistics, BurstWindowIsStrict) {
  // The third repeat lands exactly 30 s after the first: not a burst.
  EXPECT_EQ(markers::marker_statistics(month_of({{0, "stop"}, {15, "stop"}, {30, "stop"}}))
                .repetition_burst_count,
            0);
  EXPECT_EQ(markers::marker_statistics(month_of({{0, "stop"}, {15, "Stop!"}, {29, "STOP"}}))
                .repetition_burst_count,
            1);
  // A maximal run of six is one burst; an interruption starts a new run.
  EXPECT_EQ(markers::marker_statistics(month_of({{0, "a b"}, {1, "a b"}, {2, "a b"}, {3, "a b"},
                                                 {4, "a b"}, {5, "a b"}}))
                .repetition_burst_count,
            1);
  EXPECT_EQ(markers::marker_statistics(month_of({{0, "x"}, {1, "x"}, {2, "x"}, {3, "y"},
                                                 {4, "x"}, {5, "x"}, {6, "x"}}))
                .repetition_burst_count,
            2);
}

TEST(MarkerStatistics, TopicJumpsAndOtherRates) {
  // music -> math -> lights within seconds, then a slow change.
  auto s = markers::marker_statistics(month_of({{0, "play some jazz"},
                                                {4, "what is five plus three"},
                                                {8, "turn on the kitchen lights"},
                                                {100, "what is the weather"}}));
  EXPECT_DOUBLE_EQ(s.topic_jump_rate, 2.0 / 3.0);

  auto p = markers::marker_statistics(
      month_of({{0, "play that thing"}, {60, "never mind, no wait, whatever it is"},
                {120, "set the thing the thing"}}));
  EXPECT_DOUBLE_EQ(p.vague_placeholder_rate, 4.0 / 3.0);
  EXPECT_EQ(p.self_correction_abandon_count, 2);
  EXPECT_DOUBLE_EQ(p.imperative_fraction, 2.0 / 3.0);
}

TEST(Intent, CommandBankFamilies) {
  using markers::Intent;
  EXPECT_EQ(markers::classify_intent("play music"), Intent::kMusic);
  EXPECT_EQ(markers::classify_intent("what is five plus three"), Intent::kMath);
  EXPECT_EQ(markers::classify_intent("turn on the lights"), Intent::kLights);
  EXPECT_EQ(markers::classify_intent("set an alarm for seven am"), Intent::kAlarm);
  EXPECT_EQ(markers::classify_intent("will it rain in boston"), Intent::kWeather);
  EXPECT_EQ(markers::classify_intent("add milk to my shopping list"), Intent::kLists);
  EXPECT_EQ(markers::classify_intent("tell me a joke"), Intent::kSmalltalk);
  EXPECT_EQ(markers::classify_intent("who was the first president"), Intent::kQA);
}

// Independent re-statement of the counting rules.
markers::MarkerStats stats_oracle(const MonthlyTranscript& t) {
  markers::MarkerStats s;
  const auto& c = t.commands;
  if (c.empty()) return s;
  const std::set<std::string> fillers = {"um", "uh", "er", "hmm"};
  const std::set<std::string> imperative = {"play", "stop", "turn", "set", "volume"};
  const std::vector<std::vector<std::string>> places = {
      {"that", "thing"}, {"the", "thing"}, {"whatever", "it", "is"}};
  const std::vector<std::vector<std::string>> fixes = {{"never", "mind"}, {"no", "wait"}};
  std::set<std::string> vocab;
  double total = 0, fill = 0, place = 0, imp = 0, fix = 0;
  std::vector<std::vector<std::string>> toks;
  for (const auto& r : c) {
    auto tk = text::tokenize(r.text);
    for (std::size_t i = 0; i < tk.size(); ++i) {
      vocab.insert(tk[i]);
      total += 1;
      if (fillers.count(tk[i])) fill += 1;
      for (const auto& ph : places) {
        if (i + ph.size() <= tk.size() && std::equal(ph.begin(), ph.end(), tk.begin() + i)) place += 1;
      }
      for (const auto& ph : fixes) {
        if (i + ph.size() <= tk.size() && std::equal(ph.begin(), ph.end(), tk.begin() + i)) fix += 1;
      }
    }
    if (!tk.empty() && imperative.count(tk[0])) imp += 1;
    toks.push_back(tk);
  }
  const double n = static_cast<double>(c.size());
  s.type_token_ratio = total == 0 ? 1.0 : static_cast<double>(vocab.size()) / total;
  s.filler_rate = fill / n;
  s.vague_placeholder_rate = place / n;
  s.imperative_fraction = imp / n;
  s.self_correction_abandon_count = static_cast<int>(fix);
  std::size_t i = 0;
  while (i < c.size()) {
    std::size_t j = i;
    while (j + 1 < c.size() && toks[j + 1] == toks[i] &&
           (c[j + 1].timestamp - c[i].timestamp).count() < 30) {
      ++j;
    }
    if (j - i + 1 >= 3) ++s.repetition_burst_count;
    i = j + 1;
  }
  if (c.size() > 1) {
    double jumps = 0;
    for (std::size_t k = 1; k < c.size(); ++k) {
      if (markers::classify_intent(c[k].text) != markers::classify_intent(c[k - 1].text) &&
          (c[k].timestamp - c[k - 1].timestamp).count() < 10) {
        jumps += 1;
      }
    }
    s.topic_jump_rate = jumps / (n - 1);
  }
  return s;
}

TEST(MarkerStatistics, MatchesOracleOnRandomTranscripts) {
  const std::vector<std::string> bank = {
      "play jazz", "um play jazz", "stop", "turn on the lights", "that thing please",
      "never mind", "what is two plus two", "no wait set a timer", "whatever it is",
      "hmm what's the weather", "", "volume up", "Play, jazz!", "uh er the thing"};
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::pair<int, std::string>> cmds;
    int t = 0;
    const int n = rng.integer(0, 30);
    for (int i = 0; i < n; ++i) {
      t += rng.integer(0, 20);
      cmds.push_back({t, rng.pick(bank)});
    }
    const auto m = month_of(cmds);
    const auto got = markers::marker_statistics(m);
    const auto want = stats_oracle(m);
    EXPECT_EQ(got.repetition_burst_count, want.repetition_burst_count);
    EXPECT_EQ(got.self_correction_abandon_count, want.self_correction_abandon_count);
    EXPECT_DOUBLE_EQ(got.type_token_ratio, want.type_token_ratio);
    EXPECT_DOUBLE_EQ(got.filler_rate, want.filler_rate);
    EXPECT_DOUBLE_EQ(got.vague_placeholder_rate, want.vague_placeholder_rate);
    EXPECT_DOUBLE_EQ(got.imperative_fraction, want.imperative_fraction);
    EXPECT_DOUBLE_EQ(got.topic_jump_rate, want.topic_jump_rate);
    EXPECT_EQ(markers::marker_statistics(m), got);
  }
}

// ---- generate_cohort --------------------------------------------------------

synth::SynthConfig small_config(std::uint64_t seed) {
  synth::SynthConfig c;
  c.n_participants = 8;
  c.months = 3;
  c.acoustic_dim = 12;
  c.seed = seed;
  return c;
}

TEST(GenerateCohort, SameSeedIsByteIdentical) {
  auto c = small_config(4);
  c.set_all_strengths(0.5);
  c.acoustic_shift = 1.0;
  testing::TempDir a("synA"), b("synB");
  synth::write_cohort(a.path(), synth::generate_cohort(c));
  synth::write_cohort(b.path(), synth::generate_cohort(c));
  for (const char* f : {"cohort.jsonl", "labels.jsonl", "acoustic.jsonl"}) {
    EXPECT_EQ(json_io::read_text_file(a.path() / f), json_io::read_text_file(b.path() / f)) << f;
  }
  c.seed = 5;
  testing::TempDir d("synC");
  synth::write_cohort(d.path(), synth::generate_cohort(c));
  EXPECT_NE(json_io::read_text_file(a.path() / "cohort.jsonl"),
            json_io::read_text_file(d.path() / "cohort.jsonl"));
}

TEST(GenerateCohort, LabelCountsFollowRounding) {
  auto c = small_config(1);
  auto cohort = synth::generate_cohort(c);
  int mci = 0;
  for (const auto& l : cohort.labels) {
    mci += l.label == Label::MCI;
    EXPECT_NO_THROW(validate(l));
  }
  EXPECT_EQ(mci, 4);
  c.n_participants = 7;
  c.mci_fraction = 0.3;
  EXPECT_EQ(synth::mci_count(c), 2);
}

TEST(GenerateCohort, RejectsDegenerateConfigs) {
  auto c = small_config(1);
  c.n_participants = 1;
  EXPECT_THROW(synth::generate_cohort(c), ConfigError);
  c = small_config(1);
  c.mci_fraction = 0.0;
  EXPECT_THROW(synth::generate_cohort(c), ConfigError);
  c = small_config(1);
  c.mci_fraction = 1.0;
  EXPECT_THROW(synth::generate_cohort(c), ConfigError);
  c = small_config(1);
  c.marker_strength[0] = 1.5;
  EXPECT_THROW(synth::generate_cohort(c), ConfigError);
  c = small_config(1);
  c.commands_per_week = 0;
  EXPECT_THROW(synth::generate_cohort(c), ConfigError);
}

TEST(GenerateCohort, ConfigJsonRoundTrip) {
  auto c = small_config(77);
  c.marker_strength[markers::index_of(Category::kRepetition)] = 0.9;
  c.acoustic_shift = 0.5;
  auto back = synth::config_from_json(synth::to_json(c));
  EXPECT_EQ(synth::to_json(back), synth::to_json(c));
  EXPECT_DOUBLE_EQ(back.marker_strength[markers::index_of(Category::kRepetition)], 0.9);
  EXPECT_THROW(synth::config_from_json(nlohmann::json::parse(R"({"marker_strength":{"nope":1}})")),
               ConfigError);
}

TEST(GenerateCohort, RecordsSurvivePreprocessingAndStayInWindow) {
  auto c = small_config(3);
  auto cohort = synth::generate_cohort(c);
  preprocess::Options o;
  o.study_start = c.study_start;
  o.months = c.months;
  auto cleaned = preprocess::preprocess_cohort(cohort.records, o);
  EXPECT_EQ(cleaned.by_participant.size(), 8u);
  std::size_t kept = 0;
  for (const auto& [pid, ms] : cleaned.by_participant) {
    for (const auto& m : ms) kept += m.commands.size();
  }
  EXPECT_EQ(kept + cleaned.drop_log.size(), cohort.records.size());
  const double drop_share = static_cast<double>(cleaned.drop_log.size()) /
                            static_cast<double>(cohort.records.size());
  EXPECT_GT(drop_share, 0.005);
  EXPECT_LT(drop_share, 0.05);
  // Weekly usage sits around the configured level.
  const double weeks = 3 * 30.4 / 7.0;
  const double per_week = static_cast<double>(cohort.records.size()) / 8.0 / weeks;
  EXPECT_GT(per_week, 47.0 * 0.6);
  EXPECT_LT(per_week, 47.0 * 1.4);
}

TEST(GenerateCohort, AcousticShiftOnFirstEightDims) {
  auto c = small_config(8);
  c.n_participants = 20;
  c.months = 12;
  c.acoustic_dim = 16;
  c.acoustic_shift = 1.0;
  auto cohort = synth::generate_cohort(c);
  auto labels = preprocess::label_map(cohort.labels);
  std::array<std::array<double, 16>, 2> sum{};
  std::array<int, 2> n{};
  for (const auto& row : cohort.acoustic) {
    ASSERT_EQ(row.vector.size(), 16u);
    const int k = labels.at(row.participant_id) == Label::MCI;
    ++n[k];
    for (int d = 0; d < 16; ++d) sum[k][d] += row.vector[d];
  }
  for (int d = 0; d < 16; ++d) {
    const double gap = sum[1][d] / n[1] - sum[0][d] / n[0];
    // About 110 rows per class: standard error of the gap is ~0.13.
    if (d < 8) {
      EXPECT_NEAR(gap, 1.0, 0.45) << d;
    } else {
      EXPECT_NEAR(gap, 0.0, 0.45) << d;
    }
  }
}

struct GroupMeans {
  std::array<double, markers::kNumCategories> mci{};
  std::array<double, markers::kNumCategories> hc{};
};

/// Month-level marker means per class over `replicates` cohorts.
GroupMeans group_means(synth::SynthConfig c, int replicates) {
  GroupMeans g;
  std::array<double, 2> n{};
  for (int r = 0; r < replicates; ++r) {
    c.seed = 1000 + static_cast<std::uint64_t>(r);
    auto cohort = synth::generate_cohort(c);
    preprocess::Options o;
    o.study_start = c.study_start;
    o.months = c.months;
    auto cleaned = preprocess::preprocess_cohort(cohort.records, o);
    auto labels = preprocess::label_map(cohort.labels);
    for (const auto& [pid, ms] : cleaned.by_participant) {
      const bool mci = labels.at(pid) == Label::MCI;
      for (const auto& m : ms) {
        if (m.empty()) continue;
        auto s = markers::marker_statistics(m);
        n[mci] += 1;
        for (auto cat : markers::kAllCategories) {
          (mci ? g.mci : g.hc)[markers::index_of(cat)] += markers::marker_value(s, cat);
        }
      }
    }
  }
  for (std::size_t k = 0; k < markers::kNumCategories; ++k) {
    g.mci[k] /= n[1];
    g.hc[k] /= n[0];
  }
  return g;
}

TEST(GenerateCohort, RepetitionStrengthRaisesBursts) {
  auto c = small_config(0);
  c.n_participants = 4;
  c.months = 2;
  const auto k = markers::index_of(Category::kRepetition);
  const auto none = group_means(c, 20);
  c.marker_strength[k] = 0.8;
  const auto planted = group_means(c, 20);
  EXPECT_GT(planted.mci[k], none.mci[k]);
}

TEST(GenerateCohort, MarkerRatesMonotoneInStrength) {
  auto c = small_config(0);
  c.n_participants = 6;
  c.months = 2;
  for (auto cat : markers::kAllCategories) {
    const auto k = markers::index_of(cat);
    double prev = -1.0;
    for (double s : {0.0, 0.3, 0.6, 0.9}) {
      c.marker_strength.fill(0.0);
      c.marker_strength[k] = s;
      const double v = group_means(c, 6).mci[k];
      EXPECT_GE(v, prev) << markers::directive_name(cat) << " at strength " << s;
      prev = v;
    }
  }
}

// Two-sided Mann-Whitney U test, normal approximation with tie correction.
bool rank_test_rejects(const std::vector<double>& a, const std::vector<double>& b,
                       double z_crit) {
  std::vector<std::pair<double, int>> all;
  for (double x : a) all.push_back({x, 0});
  for (double x : b) all.push_back({x, 1});
  std::sort(all.begin(), all.end());
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  double r1 = 0, tie_term = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double rank = (static_cast<double>(i + j) + 1.0) / 2.0;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 0) r1 += rank;
    }
    i = j;
  }
  const double u = r1 - n1 * (n1 + 1) / 2;
  const double var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)));
  if (var <= 0) return false;
  return std::abs(u - n1 * n2 / 2) / std::sqrt(var) > z_crit;
}

TEST(GenerateCohort, NullCohortHasNoClassSignal) {
  // Participant-level means per marker; 50 cohorts x 7 markers at alpha 0.01
  // give 3.5 expected rejections. P(Binomial(350, 0.01) > 10) < 0.001.
  synth::SynthConfig c;
  c.n_participants = 20;
  c.months = 3;
  c.acoustic_dim = 4;
  int rejections = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    c.seed = 5000 + seed;
    auto cohort = synth::generate_cohort(c);
    preprocess::Options o;
    o.study_start = c.study_start;
    o.months = c.months;
    auto cleaned = preprocess::preprocess_cohort(cohort.records, o);
    auto labels = preprocess::label_map(cohort.labels);
    for (auto cat : markers::kAllCategories) {
      std::vector<double> groups[2];
      for (const auto& [pid, ms] : cleaned.by_participant) {
        double sum = 0;
        int n = 0;
        for (const auto& m : ms) {
          if (m.empty()) continue;
          sum += markers::marker_value(markers::marker_statistics(m), cat);
          ++n;
        }
        if (n > 0) groups[labels.at(pid) == Label::MCI].push_back(sum / n);
      }
      rejections += rank_test_rejects(groups[0], groups[1], 2.5758);
    }
  }
  EXPECT_LE(rejections, 10);
}

TEST(GenerateCohort, NotableLevelsSeparateBaseAndPlantedMonths) {
  // Reference levels of the rule backend against the generator at the
  // default usage rate: above most unplanted months, below most months
  // planted at strength 0.9.
  synth::SynthConfig c;
  c.n_participants = 20;
  c.months = 6;
  c.acoustic_dim = 4;
  c.seed = 3;
  c.set_all_strengths(0.9);
  auto cohort = synth::generate_cohort(c);
  preprocess::Options o;
  o.study_start = c.study_start;
  o.months = c.months;
  auto cleaned = preprocess::preprocess_cohort(cohort.records, o);
  auto labels = preprocess::label_map(cohort.labels);
  for (auto cat : markers::kAllCategories) {
    std::vector<double> v[2];
    for (const auto& [pid, ms] : cleaned.by_participant) {
      for (const auto& m : ms) {
        if (m.empty()) continue;
        v[labels.at(pid) == Label::MCI].push_back(
            markers::marker_value(markers::marker_statistics(m), cat));
      }
    }
    for (auto& x : v) std::sort(x.begin(), x.end());
    auto q = [](const std::vector<double>& x, double p) {
      return x[static_cast<std::size_t>(p * static_cast<double>(x.size() - 1))];
    };
    const double level = llm::rule::notable_level(cat);
    const bool weak = cat == Category::kGrammar || cat == Category::kPragmatic;
    const double lo = weak ? 0.5 : 0.9, hi = weak ? 0.5 : 0.1;
    EXPECT_LT(q(v[0], lo), level) << markers::directive_name(cat);
    EXPECT_GT(q(v[1], hi), level) << markers::directive_name(cat);
  }
}

}  // namespace
}  // namespace cogtipro
