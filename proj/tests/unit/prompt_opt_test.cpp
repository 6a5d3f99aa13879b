// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "cogtipro/error.hpp"
#include "cogtipro/llm_gateway.hpp"
#include "cogtipro/markers.hpp"
#include "cogtipro/prompt_opt.hpp"
#include "cogtipro/rule_backend.hpp"
#include "test_support.hpp"

namespace cogtipro {
namespace {

using llm::FixtureEntry;
using llm::Role;
using prompt::LabeledTranscript;
using testing::month_of;

prompt::PromptTemplate simple_prompt(std::string instruction = "Count markers.") {
  return prompt::PromptTemplate::make("Markers of MCI.", std::move(instruction),
                                      {{"play jazz | stop", Label::MCI}, {"what time is it", Label::HC}});
}

std::shared_ptr<llm::FixtureBackend> fixture(std::vector<FixtureEntry> e) {
  return std::make_shared<llm::FixtureBackend>(std::move(e));
}

LabeledTranscript item(const std::string& pid, int month, Label l, std::string text = "play jazz") {
  return {month_of({{0, std::move(text)}}, pid, month), l};
}

TEST(PromptTemplate, ConstructionAndRenderOrder) {
  EXPECT_THROW(prompt::PromptTemplate::make("", "i", {{"x", Label::HC}}), ConfigError);
  EXPECT_THROW(prompt::PromptTemplate::make("c", " \n", {{"x", Label::HC}}), ConfigError);
  EXPECT_THROW(prompt::PromptTemplate::make("c", "i", {}), ConfigError);
  const auto r = simple_prompt().render();
  const auto c = r.find("CONTEXT:"), i = r.find("INSTRUCTION:"), e = r.find("EXEMPLARS:");
  ASSERT_NE(c, std::string::npos);
  EXPECT_LT(c, i);
  EXPECT_LT(i, e);
  EXPECT_NE(r.find("- [MCI] play jazz | stop\n"), std::string::npos);
  EXPECT_NE(r.find("- [HC] what time is it\n"), std::string::npos);
}

TEST(PromptTemplate, JsonRoundTrip) {
  auto p = simple_prompt("line one\nWEIGHTS: filler:1 threshold:2");
  EXPECT_EQ(prompt::template_from_json(prompt::to_json(p)), p);
  EXPECT_THROW(prompt::template_from_json(nlohmann::json::parse(R"({"context":"c"})")), IngestionError);
}

TEST(ExtractFeatures, SpecExamples) {
  llm::Gateway rule(std::make_shared<llm::RuleBackend>());
  std::vector<std::pair<int, std::string>> cmds;
  for (int b = 0; b < 2; ++b) {
    for (int k = 0; k < 3; ++k) cmds.push_back({b * 900 + 4 * k, "volume up"});
  }
  auto s = prompt::extract_features(month_of(cmds, "P03", 2),
                                    simple_prompt("Count.\nWEIGHTS: repetition:1 threshold:1"),
                                    rule, 2);
  EXPECT_NE(s.text.find("repetition_bursts: 2"), std::string::npos) << s.text;
  EXPECT_EQ(s.participant_id, "P03");
  EXPECT_EQ(s.month_index, 2);
  EXPECT_EQ(s.prompt_iteration, 2);

  const auto before = rule.calls();
  auto empty = prompt::extract_features(month_of({}, "P03", 5), simple_prompt(), rule);
  EXPECT_TRUE(empty.no_data());
  EXPECT_EQ(empty.text, "NO DATA");
  EXPECT_EQ(rule.calls(), before);

  llm::Gateway fx(fixture({{Role::kExtractor, "reduced lexical diversity; frequent fillers"}}));
  EXPECT_EQ(prompt::extract_features(month_of({{0, "x"}}), simple_prompt(), fx).text,
            "reduced lexical diversity; frequent fillers");
}

TEST(ClassifyWithPrompt, SpecExamples) {
  llm::Gateway fx(fixture({{Role::kClassifier, "Prediction: MCI"}}));
  prompt::LinguisticSummary s{"some summary", "P01", 1, 1};
  EXPECT_EQ(prompt::classify_with_prompt(s, simple_prompt(), fx), Prediction::MCI);

  prompt::LinguisticSummary none{"NO DATA", "P01", 2, 1};
  EXPECT_EQ(prompt::classify_with_prompt(none, simple_prompt(), fx), Prediction::Abstain);
  EXPECT_EQ(fx.calls(), 1u);

  llm::Gateway rule(std::make_shared<llm::RuleBackend>());
  const auto p = simple_prompt("Count.\nWEIGHTS: filler:1 threshold:1");
  auto filled = prompt::extract_features(
      month_of({{0, "um play jazz"}, {60, "uh stop"}, {120, "what time is it"}}), p, rule);
  EXPECT_EQ(prompt::classify_with_prompt(filled, p, rule), Prediction::MCI);
  auto clean = prompt::extract_features(
      month_of({{0, "play jazz"}, {60, "stop"}, {120, "what time is it"}}), p, rule);
  EXPECT_EQ(prompt::classify_with_prompt(clean, p, rule), Prediction::HC);
}

TEST(F1Score, Conventions) {
  using P = Prediction;
  using L = Label;
  EXPECT_DOUBLE_EQ(prompt::f1_score({P::MCI, P::MCI, P::HC, P::HC}, {L::MCI, L::MCI, L::HC, L::HC}), 1.0);
  // TP=2, FP=1, FN=1.
  EXPECT_DOUBLE_EQ(prompt::f1_score({P::MCI, P::MCI, P::MCI, P::HC, P::HC},
                                    {L::MCI, L::MCI, L::HC, L::MCI, L::HC}),
                   2.0 / 3.0);
  EXPECT_DOUBLE_EQ(prompt::f1_score({P::Abstain, P::Abstain}, {L::MCI, L::HC}), 0.0);
  // Abstain on an HC item is never a false positive.
  EXPECT_DOUBLE_EQ(prompt::f1_score({P::MCI, P::Abstain}, {L::MCI, L::HC}), 1.0);
  EXPECT_DOUBLE_EQ(prompt::f1_score({P::HC, P::HC}, {L::HC, L::HC}), 0.0);
  EXPECT_THROW(prompt::f1_score({P::HC}, {}), ContractError);
}

TEST(EvaluatePrompt, SpecExamples) {
  std::vector<LabeledTranscript> val = {item("A", 1, Label::MCI), item("B", 1, Label::MCI),
                                        item("C", 1, Label::HC), item("D", 1, Label::HC)};
  std::vector<FixtureEntry> perfect;
  for (int i = 0; i < 4; ++i) perfect.push_back({Role::kExtractor, "s"});
  for (auto v : {"MCI", "MCI", "HC", "HC"}) perfect.push_back({Role::kClassifier, v});
  llm::Gateway g1(fixture(perfect));
  EXPECT_DOUBLE_EQ(prompt::evaluate_prompt(simple_prompt(), val, g1), 1.0);

  // MCI, MCI, HC, MCI, HC labels; predictions give TP=2, FP=1, FN=1.
  std::vector<LabeledTranscript> v2 = {item("A", 1, Label::MCI), item("B", 1, Label::MCI),
                                       item("C", 1, Label::HC), item("D", 1, Label::MCI),
                                       item("E", 1, Label::HC)};
  std::vector<FixtureEntry> f3;
  for (int i = 0; i < 5; ++i) f3.push_back({Role::kExtractor, "s"});
  for (auto v : {"MCI", "MCI", "MCI", "HC", "HC"}) f3.push_back({Role::kClassifier, v});
  llm::Gateway g3(fixture(f3));
  EXPECT_DOUBLE_EQ(prompt::evaluate_prompt(simple_prompt(), v2, g3), 2.0 / 3.0);

  std::vector<LabeledTranscript> empties = {{month_of({}, "A", 1), Label::MCI},
                                            {month_of({}, "B", 1), Label::HC}};
  llm::Gateway g4(fixture({}));
  EXPECT_DOUBLE_EQ(prompt::evaluate_prompt(simple_prompt(), empties, g4), 0.0);
  EXPECT_THROW(prompt::evaluate_prompt(simple_prompt(), {}, g4), ConfigError);
}

prompt::ErrorCase error(Label actual, std::string summary, std::string pid = "P01") {
  return {pid, 1, actual == Label::MCI ? Prediction::HC : Prediction::MCI, actual,
          std::move(summary), ""};
}

TEST(AnalyzeErrors, SpecExamples) {
  EXPECT_EQ(prompt::analyze_errors({}), "NO ERRORS");

  auto d = prompt::analyze_errors({error(Label::MCI, "notable: repetition filler"),
                                   error(Label::MCI, "notable: repetition")});
  EXPECT_NE(d.find("errors_actual_mci: 2\n"), std::string::npos) << d;
  EXPECT_NE(d.find("errors_actual_hc: 0\n"), std::string::npos) << d;
  EXPECT_NE(d.find("top_terms: repetition, filler\n"), std::string::npos) << d;

  auto one = prompt::analyze_errors({error(Label::HC, "UNIQUE-SUMMARY-TEXT")});
  std::size_t hits = 0;
  for (auto p = one.find("UNIQUE-SUMMARY-TEXT"); p != std::string::npos;
       p = one.find("UNIQUE-SUMMARY-TEXT", p + 1)) {
    ++hits;
  }
  EXPECT_EQ(hits, 1u);
  EXPECT_NE(one.find("top_terms: none"), std::string::npos);
}

TEST(AnalyzeErrors, CapsCasesAndTruncatesSummaries) {
  std::vector<prompt::ErrorCase> errs;
  for (int i = 0; i < 5; ++i) errs.push_back(error(Label::MCI, std::string(800, 'a'), "M" + std::to_string(i)));
  for (int i = 0; i < 5; ++i) errs.push_back(error(Label::HC, "hc summary", "H" + std::to_string(i)));
  auto d = prompt::analyze_errors(errs);
  std::size_t cases = 0;
  for (auto p = d.find("\ncase "); p != std::string::npos; p = d.find("\ncase ", p + 1)) ++cases;
  EXPECT_EQ(cases, 2 * prompt::kDigestCasesPerClass);
  EXPECT_EQ(d.find(std::string(501, 'a')), std::string::npos);
  EXPECT_NE(d.find(std::string(500, 'a')), std::string::npos);
  EXPECT_EQ(d, prompt::analyze_errors(errs));
}

TEST(Refine, SpecExamples) {
  const auto p = simple_prompt();
  llm::Gateway fx(fixture({{Role::kRefiner, "NOTE: n\nINSTRUCTION: also count repetition bursts"}}));
  auto r = prompt::refine(p, "ERROR ANALYSIS\nerrors_actual_mci: 1\n", fx);
  EXPECT_EQ(r.instruction, "also count repetition bursts");
  EXPECT_EQ(r.context, p.context);
  EXPECT_EQ(r.exemplars, p.exemplars);

  llm::Gateway none(fixture({}));
  EXPECT_EQ(prompt::refine(p, "NO ERRORS", none), p);
  EXPECT_EQ(none.calls(), 0u);

  llm::Gateway rule(std::make_shared<llm::RuleBackend>());
  std::vector<prompt::ErrorCase> errs;
  for (int i = 0; i < 3; ++i) {
    auto t = month_of({{0, "um play jazz"}, {200, "uh stop"}, {400, "hmm what time is it"}},
                      "P0" + std::to_string(i), 1);
    errs.push_back({t.participant_id, 1, Prediction::HC, Label::MCI,
                    "MARKER SUMMARY\nnotable: none\n", llm::rule::render_transcript(t)});
  }
  auto refined = prompt::refine(simple_prompt("Count.\nWEIGHTS: threshold:1"),
                                prompt::analyze_errors(errs), rule);
  EXPECT_GT(llm::rule::parse_directives(refined.instruction).weight(markers::Category::kDisfluency), 0.0)
      << refined.instruction;
}

TEST(Refine, BlockParsing) {
  const auto p = simple_prompt();
  llm::Gateway bad(fixture({{Role::kRefiner, "I would change the wording."}}));
  EXPECT_THROW(prompt::refine(p, "ERROR ANALYSIS", bad), RefinementParseError);

  llm::Gateway full(fixture({{Role::kRefiner,
                              "CONTEXT:\nnew context\nINSTRUCTION:\nnew instruction\n"
                              "EXEMPLARS:\n- [HC] a | b\n- [MCI] c\nNOTE: swapped all"}}));
  auto r = prompt::refine_with_note(p, "ERROR ANALYSIS", full);
  EXPECT_EQ(r.prompt.context, "new context");
  EXPECT_EQ(r.prompt.instruction, "new instruction");
  ASSERT_EQ(r.prompt.exemplars.size(), 2u);
  EXPECT_EQ(r.prompt.exemplars[0], (prompt::Exemplar{"a | b", Label::HC}));
  EXPECT_EQ(r.note, "swapped all");
}

// ---- optimize ---------------------------------------------------------------

/// Train and val items; val holds 10 MCI and 10 HC months.
prompt::MinibatchSplit fixed_split() {
  prompt::MinibatchSplit s;
  for (int i = 0; i < 4; ++i) s.train.push_back(item("T" + std::to_string(i), 1, i % 2 ? Label::MCI : Label::HC));
  for (int i = 0; i < 20; ++i) s.val.push_back(item("V" + std::to_string(i), 1, i < 10 ? Label::MCI : Label::HC));
  return s;
}

/// Classifier verdicts on the 20 val months giving `tp` true positives and
/// `fp` false positives.
std::vector<std::string> val_verdicts(int tp, int fp) {
  std::vector<std::string> v;
  for (int i = 0; i < 10; ++i) v.push_back(i < tp ? "MCI" : "HC");
  for (int i = 0; i < 10; ++i) v.push_back(i < fp ? "MCI" : "HC");
  return v;
}

/// One scripted iteration: extractor replies, the train verdicts with one
/// miss, the val verdicts, then a refiner reply unless it is the last.
void script_iteration(std::vector<FixtureEntry>& e, int iteration, int tp, int fp, bool refine,
                      const std::string& refiner_reply = "") {
  for (int i = 0; i < 24; ++i) e.push_back({Role::kExtractor, "summary " + std::to_string(iteration)});
  for (auto v : {"MCI", "MCI", "HC", "MCI"}) e.push_back({Role::kClassifier, v});
  for (const auto& v : val_verdicts(tp, fp)) e.push_back({Role::kClassifier, "Prediction: " + v});
  if (refine) {
    e.push_back({Role::kRefiner, refiner_reply.empty()
                                     ? "INSTRUCTION: iteration " + std::to_string(iteration + 1)
                                     : refiner_reply});
  }
}

double f1_of(int tp, int fp) { return 2.0 * tp / (2.0 * tp + fp + (10 - tp)); }

TEST(Optimize, ScriptedSelectorExamples) {
  {
    // 0.6 = (tp 6, fp 4), 0.8 = (8, 2), 0.7 = (7, 3).
    std::vector<FixtureEntry> e;
    script_iteration(e, 1, 6, 4, true);
    script_iteration(e, 2, 8, 2, true);
    script_iteration(e, 3, 7, 3, false);
    auto fx = fixture(e);
    llm::Gateway g(fx);
    auto r = prompt::optimize(simple_prompt(), fixed_split(), g, 3);
    ASSERT_EQ(r.lineage.size(), 3u);
    EXPECT_DOUBLE_EQ(*r.lineage[0].val_f1, 0.6);
    EXPECT_DOUBLE_EQ(*r.lineage[1].val_f1, 0.8);
    EXPECT_DOUBLE_EQ(*r.lineage[2].val_f1, 0.7);
    EXPECT_EQ(r.best.iteration, 2);
    EXPECT_DOUBLE_EQ(*r.best.val_f1, 0.8);
    EXPECT_EQ(r.best.prompt.instruction, "iteration 2");
    EXPECT_EQ(r.lineage[1].parent_iteration, 1);
    EXPECT_EQ(fx->remaining(Role::kRefiner), 0u);
    EXPECT_EQ(fx->remaining(Role::kClassifier), 0u);
  }
  {
    std::vector<FixtureEntry> e;
    for (int j = 1; j <= 3; ++j) script_iteration(e, j, 5, 5, j < 3);
    llm::Gateway g(fixture(e));
    auto r = prompt::optimize(simple_prompt(), fixed_split(), g, 3);
    EXPECT_DOUBLE_EQ(*r.lineage[0].val_f1, 0.5);
    EXPECT_EQ(r.best.iteration, 1);
    EXPECT_EQ(r.best.prompt, simple_prompt());
  }
  {
    std::vector<FixtureEntry> e;
    script_iteration(e, 1, 9, 1, false);
    llm::Gateway g(fixture(e));
    auto r = prompt::optimize(simple_prompt(), fixed_split(), g, 1);
    EXPECT_EQ(r.lineage.size(), 1u);
    EXPECT_EQ(r.best.prompt, simple_prompt());
    EXPECT_FALSE(r.lineage[0].parent_iteration.has_value());
  }
}

TEST(Optimize, RandomizedSelectorProperties) {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const int max_iter = rng.integer(1, 5);
    std::vector<FixtureEntry> e;
    std::vector<double> f1s;
    for (int j = 1; j <= max_iter; ++j) {
      const int tp = rng.integer(0, 10), fp = rng.integer(0, 10);
      f1s.push_back(f1_of(tp, fp));
      script_iteration(e, j, tp, fp, j < max_iter);
    }
    llm::Gateway g(fixture(e));
    auto r = prompt::optimize(simple_prompt(), fixed_split(), g, max_iter);
    ASSERT_EQ(static_cast<int>(r.lineage.size()), max_iter);
    double best = 0;
    int best_iter = 1;
    for (int j = 0; j < max_iter; ++j) {
      EXPECT_DOUBLE_EQ(*r.lineage[j].val_f1, f1s[j]);
      EXPECT_EQ(r.lineage[j].iteration, j + 1);
      if (f1s[j] > best) {
        best = f1s[j];
        best_iter = j + 1;
      }
    }
    EXPECT_DOUBLE_EQ(*r.best.val_f1, *std::max_element(f1s.begin(), f1s.end()));
    EXPECT_GE(*r.best.val_f1, *r.lineage[0].val_f1);
    EXPECT_EQ(r.best.iteration, best_iter);
  }
}

TEST(Optimize, RefinementFailureIsRecordedAndPromptCarried) {
  std::vector<FixtureEntry> e;
  script_iteration(e, 1, 5, 5, true, "no blocks at all");
  script_iteration(e, 2, 6, 5, false);
  llm::Gateway g(fixture(e));
  auto r = prompt::optimize(simple_prompt(), fixed_split(), g, 2);
  ASSERT_TRUE(r.lineage[0].refine_error.has_value());
  EXPECT_EQ(r.lineage[1].prompt, simple_prompt());
  EXPECT_EQ(r.best.iteration, 2);
  EXPECT_EQ(r.lineage[0].train_errors, 1);
}

TEST(Optimize, Preconditions) {
  llm::Gateway g(fixture({}));
  EXPECT_THROW(prompt::optimize(simple_prompt(), fixed_split(), g, 0), ConfigError);
  auto s = fixed_split();
  s.val.clear();
  EXPECT_THROW(prompt::optimize(simple_prompt(), s, g, 3), ConfigError);
}

/// Months of a planted synthetic cohort, labelled by participant.
std::vector<LabeledTranscript> planted_pool(std::uint64_t seed) {
  synth::SynthConfig c;
  c.n_participants = 10;
  c.months = 6;
  c.acoustic_dim = 4;
  c.seed = seed;
  for (auto cat : {markers::Category::kRepetition, markers::Category::kCoherence,
                   markers::Category::kDisfluency}) {
    c.marker_strength[markers::index_of(cat)] = 0.9;
  }
  testing::SyntheticBench bench(c, 8);
  std::vector<LabeledTranscript> pool;
  for (const auto& [pid, months] : bench.data.transcripts) {
    for (const auto& m : months) pool.push_back({m, bench.data.labels.at(pid)});
  }
  return pool;
}

TEST(Optimize, RuleBackendImprovesOnPlantedSplit) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto split = prompt::make_minibatch(planted_pool(seed), seed);
    llm::Gateway g(std::make_shared<llm::RuleBackend>());
    auto r = prompt::optimize(prompt::default_initial_prompt(split.train, seed), split, g, 3);
    for (std::size_t j = 1; j < r.lineage.size(); ++j) {
      EXPECT_GE(*r.lineage[j].val_f1, *r.lineage[j - 1].val_f1) << "seed " << seed << " iter " << j;
    }
    EXPECT_GT(*r.best.val_f1, *r.lineage[0].val_f1) << "seed " << seed;

    llm::Gateway again(std::make_shared<llm::RuleBackend>());
    auto r2 = prompt::optimize(prompt::default_initial_prompt(split.train, seed), split, again, 3);
    EXPECT_EQ(prompt::lineage_to_json(r, split).dump(), prompt::lineage_to_json(r2, split).dump());

    auto back = prompt::lineage_from_json(prompt::lineage_to_json(r, split));
    EXPECT_EQ(back.best.iteration, r.best.iteration);
    EXPECT_EQ(back.best.prompt, r.best.prompt);
    ASSERT_EQ(back.lineage.size(), r.lineage.size());
    EXPECT_EQ(back.lineage[1].feedback_applied, r.lineage[1].feedback_applied);
  }
}

// ---- minibatch and exemplars -----------------------------------------------

std::vector<LabeledTranscript> labelled_pool(int n_mci, int n_hc, int empty = 0) {
  std::vector<LabeledTranscript> pool;
  for (int i = 0; i < n_mci; ++i) pool.push_back(item("M" + std::to_string(i / 10), i % 10 + 1, Label::MCI, "m" + std::to_string(i)));
  for (int i = 0; i < n_hc; ++i) pool.push_back(item("H" + std::to_string(i / 10), i % 10 + 1, Label::HC, "h" + std::to_string(i)));
  for (int i = 0; i < empty; ++i) pool.push_back({month_of({}, "E", i + 1), Label::MCI});
  return pool;
}

std::set<std::pair<std::string, int>> keys(const std::vector<LabeledTranscript>& v) {
  std::set<std::pair<std::string, int>> k;
  for (const auto& x : v) k.insert({x.transcript.participant_id, x.transcript.month_index});
  return k;
}

TEST(Minibatch, FullSizeSplit) {
  auto s = prompt::make_minibatch(labelled_pool(60, 60, 10), 7);
  EXPECT_EQ(s.train.size(), 51u);
  EXPECT_EQ(s.val.size(), 13u);
  auto kt = keys(s.train), kv = keys(s.val);
  EXPECT_EQ(kt.size(), 51u);
  for (const auto& k : kv) EXPECT_FALSE(kt.count(k));
  for (const auto& x : s.train) EXPECT_FALSE(x.transcript.empty());
  int vm = 0;
  for (const auto& x : s.val) vm += x.label == Label::MCI;
  EXPECT_GE(vm, 4);
  EXPECT_LE(vm, 9);
  auto again = prompt::make_minibatch(labelled_pool(60, 60, 10), 7);
  EXPECT_EQ(keys(again.val), kv);
  EXPECT_NE(keys(prompt::make_minibatch(labelled_pool(60, 60, 10), 8).val), kv);
}

TEST(Minibatch, SmallPoolSplitsEightyTwentyPerClass) {
  auto s = prompt::make_minibatch(labelled_pool(20, 10), 3);
  int vm = 0, vh = 0;
  for (const auto& x : s.val) (x.label == Label::MCI ? vm : vh)++;
  EXPECT_EQ(vm, 4);
  EXPECT_EQ(vh, 2);
  EXPECT_EQ(s.train.size(), 24u);
  EXPECT_THROW(prompt::make_minibatch(labelled_pool(1, 0, 5), 3), ConfigError);
}

TEST(Exemplars, TwoPerClassFromTrain) {
  auto pool = labelled_pool(5, 5, 3);
  auto ex = prompt::select_exemplars(pool, 11);
  ASSERT_EQ(ex.size(), 4u);
  int m = 0;
  for (const auto& e : ex) {
    m += e.label == Label::MCI;
    EXPECT_EQ(e.excerpt.front(), e.label == Label::MCI ? 'm' : 'h');
  }
  EXPECT_EQ(m, 2);
  EXPECT_EQ(prompt::select_exemplars(pool, 11), ex);
  auto p = prompt::default_initial_prompt(pool, 11);
  EXPECT_EQ(llm::rule::parse_directives(p.instruction), llm::rule::Directives{});
}

}  // namespace
}  // namespace cogtipro
