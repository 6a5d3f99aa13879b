// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/prompt_opt.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/markers.hpp"
#include "cogtipro/rng.hpp"
#include "cogtipro/rule_backend.hpp"
#include "cogtipro/text.hpp"

namespace cogtipro::prompt {

using nlohmann::json;

namespace {

const std::vector<std::string_view> kBlockMarkers = {
    "CONTEXT:", "INSTRUCTION:", "EXEMPLARS:", "NOTE:", "FEEDBACK:",
    "CURRENT PROMPT:", "TASK:"};

constexpr std::string_view kDefaultContext =
    "Mild cognitive impairment often shows first in everyday language. "
    "Relevant markers in voice-assistant commands include reduced lexical "
    "complexity and word-finding trouble (vague placeholders, re-used "
    "phrases), simplified syntactic structure (imperative fragments, few "
    "questions), disfluency (filler pauses, abandoned self-corrections) and "
    "weak semantic coherence (abrupt topic jumps, repeated identical requests "
    "within seconds).";

constexpr std::string_view kDefaultInstruction =
    "Using what you know about language changes in cognitive decline, "
    "identify the linguistic features and command-usage patterns in this "
    "month of voice commands. Report each feature you observe with the "
    "counts that support it.";

constexpr std::string_view kExtractorTask =
    "TASK: Summarize the linguistic features of the following month of "
    "voice-assistant commands.";

constexpr std::string_view kClassifierTask =
    "TASK: Acting as a classifier, decide from the feature summary whether "
    "the speaker has mild cognitive impairment (MCI) or is a healthy control "
    "(HC). Answer with 'Prediction: MCI' or 'Prediction: HC'.";

constexpr std::string_view kRefinerTask =
    "You improve prompts that extract linguistic markers of cognitive decline "
    "from voice-assistant commands. Study the misclassified cases in the "
    "feedback and propose explicit edits that would avoid similar errors. "
    "Reply with the revised prompt parts, each introduced by its marker on "
    "its own line: INSTRUCTION (required), optionally CONTEXT and EXEMPLARS.";

std::string excerpt_of(const MonthlyTranscript& t, std::size_t max_commands = 6,
                       std::size_t max_chars = 300) {
  std::string out;
  for (std::size_t i = 0; i < t.commands.size() && i < max_commands; ++i) {
    if (!out.empty()) out += " | ";
    out += std::string(text::trim(t.commands[i].text));
  }
  if (out.size() > max_chars) out.resize(max_chars);
  return out;
}

std::vector<Exemplar> parse_exemplars(std::string_view block) {
  std::vector<Exemplar> out;
  for (const auto& raw : text::split_lines(block)) {
    auto line = text::trim(raw);
    if (!line.empty() && line.front() == '-') line = text::trim(line.substr(1));
    Label l;
    if (text::starts_with_ci(line, "[MCI]")) {
      l = Label::MCI;
      line = text::trim(line.substr(5));
    } else if (text::starts_with_ci(line, "[HC]")) {
      l = Label::HC;
      line = text::trim(line.substr(4));
    } else {
      continue;
    }
    out.push_back({std::string(line), l});
  }
  return out;
}

/// Splits `items` into (rest, val) with `n_val` val items spread over the
/// classes in proportion.
void stratified_split(const std::vector<LabeledTranscript>& items, int n_val,
                      bool at_least_one_per_class,
                      std::vector<LabeledTranscript>& train,
                      std::vector<LabeledTranscript>& val) {
  std::vector<const LabeledTranscript*> mci, hc;
  for (const auto& it : items) (it.label == Label::MCI ? mci : hc).push_back(&it);
  const double total = static_cast<double>(items.size());
  int v_mci = n_val < 0 ? static_cast<int>(std::lround(0.2 * mci.size()))
                        : static_cast<int>(std::lround(n_val * mci.size() / total));
  int v_hc = n_val < 0 ? static_cast<int>(std::lround(0.2 * hc.size()))
                       : n_val - v_mci;
  if (at_least_one_per_class) {
    if (v_mci == 0 && mci.size() >= 2) v_mci = 1;
    if (v_hc == 0 && hc.size() >= 2) v_hc = 1;
  }
  v_mci = std::clamp(v_mci, 0, static_cast<int>(mci.size()));
  v_hc = std::clamp(v_hc, 0, static_cast<int>(hc.size()));
  int cm = 0, ch = 0;
  for (const auto& it : items) {
    bool to_val = it.label == Label::MCI ? cm++ < v_mci : ch++ < v_hc;
    (to_val ? val : train).push_back(it);
  }
}

std::string prediction_name(Prediction p) { return std::string(to_string(p)); }

}  // namespace

PromptTemplate PromptTemplate::make(std::string context, std::string instruction,
                                    std::vector<Exemplar> exemplars) {
  if (text::trim(context).empty()) {
    throw ConfigError("prompt context must be non-empty");
  }
  if (text::trim(instruction).empty()) {
    throw ConfigError("prompt instruction must be non-empty");
  }
  if (exemplars.empty()) {
    throw ConfigError("prompt needs at least one exemplar");
  }
  return PromptTemplate{std::move(context), std::move(instruction),
                        std::move(exemplars)};
}

std::string PromptTemplate::render() const {
  std::string out = "CONTEXT:\n" + context + "\nINSTRUCTION:\n" + instruction +
                    "\nEXEMPLARS:\n";
  for (const auto& e : exemplars) {
    out += fmt::format("- [{}] {}\n", to_string(e.label), e.excerpt);
  }
  return out;
}

MinibatchSplit make_minibatch(const std::vector<LabeledTranscript>& pool,
                              std::uint64_t seed, int size, int val_size) {
  std::vector<LabeledTranscript> items;
  for (const auto& it : pool) {
    if (!it.transcript.empty()) items.push_back(it);
  }
  if (items.size() < 2) {
    throw ConfigError("prompt optimization needs at least two non-empty months");
  }
  Rng rng(seed);
  rng.shuffle(items);
  MinibatchSplit split;
  if (static_cast<int>(items.size()) >= size) {
    items.resize(static_cast<std::size_t>(size));
    stratified_split(items, val_size, true, split.train, split.val);
  } else {
    stratified_split(items, -1, true, split.train, split.val);
  }
  if (split.val.empty()) {
    split.val.push_back(split.train.back());
    split.train.pop_back();
  }
  return split;
}

std::vector<Exemplar> select_exemplars(const std::vector<LabeledTranscript>& train,
                                       std::uint64_t seed, int per_class) {
  std::vector<std::size_t> mci, hc;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].transcript.empty()) continue;
    (train[i].label == Label::MCI ? mci : hc).push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(mci);
  rng.shuffle(hc);
  std::vector<Exemplar> out;
  for (int k = 0; k < per_class; ++k) {
    if (k < static_cast<int>(mci.size())) {
      out.push_back({excerpt_of(train[mci[k]].transcript), Label::MCI});
    }
    if (k < static_cast<int>(hc.size())) {
      out.push_back({excerpt_of(train[hc[k]].transcript), Label::HC});
    }
  }
  return out;
}

PromptTemplate default_initial_prompt(const std::vector<LabeledTranscript>& train,
                                      std::uint64_t seed) {
  std::string instruction(kDefaultInstruction);
  instruction += "\n" + llm::rule::render_directives(llm::rule::Directives{});
  return PromptTemplate::make(std::string(kDefaultContext), instruction,
                              select_exemplars(train, seed));
}

namespace {

llm::CompletionRequest extractor_request(const MonthlyTranscript& t,
                                         const PromptTemplate& p) {
  llm::CompletionRequest r;
  r.role = llm::Role::kExtractor;
  r.prompt_text = p.render() + std::string(kExtractorTask);
  r.input_text = llm::rule::render_transcript(t);
  return r;
}

llm::CompletionRequest classifier_request(const LinguisticSummary& s,
                                          const PromptTemplate& p) {
  llm::CompletionRequest r;
  r.role = llm::Role::kClassifier;
  r.prompt_text = p.render() + std::string(kClassifierTask);
  r.input_text = s.text;
  r.max_tokens = 64;
  return r;
}

}  // namespace

LinguisticSummary extract_features(const MonthlyTranscript& transcript,
                                   const PromptTemplate& prompt,
                                   llm::Gateway& gateway, int iteration) {
  return extract_batch({&transcript}, prompt, gateway, iteration).front();
}

std::vector<LinguisticSummary> extract_batch(
    const std::vector<const MonthlyTranscript*>& transcripts,
    const PromptTemplate& prompt, llm::Gateway& gateway, int iteration) {
  std::vector<LinguisticSummary> out(transcripts.size());
  std::vector<llm::CompletionRequest> reqs;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    const auto& t = *transcripts[i];
    out[i].participant_id = t.participant_id;
    out[i].month_index = t.month_index;
    out[i].prompt_iteration = iteration;
    if (t.empty()) {
      out[i].text = std::string(kNoData);
    } else {
      reqs.push_back(extractor_request(t, prompt));
      where.push_back(i);
    }
  }
  auto resps = gateway.complete_batch(reqs);
  for (std::size_t k = 0; k < resps.size(); ++k) {
    out[where[k]].text = std::move(resps[k].text);
  }
  return out;
}

Prediction classify_with_prompt(const LinguisticSummary& summary,
                                const PromptTemplate& prompt,
                                llm::Gateway& gateway) {
  return classify_batch({summary}, prompt, gateway).front();
}

std::vector<Prediction> classify_batch(
    const std::vector<LinguisticSummary>& summaries,
    const PromptTemplate& prompt, llm::Gateway& gateway) {
  std::vector<Prediction> out(summaries.size(), Prediction::Abstain);
  std::vector<llm::CompletionRequest> reqs;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    if (summaries[i].no_data()) continue;
    reqs.push_back(classifier_request(summaries[i], prompt));
    where.push_back(i);
  }
  auto resps = gateway.complete_batch(reqs);
  for (std::size_t k = 0; k < resps.size(); ++k) {
    out[where[k]] = llm::parse_label(resps[k].text);
  }
  return out;
}

double f1_score(const std::vector<Prediction>& predicted,
                const std::vector<Label>& actual) {
  if (predicted.size() != actual.size()) {
    throw ContractError("prediction and label counts differ");
  }
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    bool pos = predicted[i] == Prediction::MCI;
    if (actual[i] == Label::MCI) {
      pos ? ++tp : ++fn;
    } else if (pos) {
      ++fp;
    }
  }
  long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

double evaluate_prompt(const PromptTemplate& prompt,
                       const std::vector<LabeledTranscript>& val,
                       llm::Gateway& gateway) {
  if (val.empty()) throw ConfigError("validation set is empty");
  std::vector<const MonthlyTranscript*> ts;
  std::vector<Label> labels;
  for (const auto& v : val) {
    ts.push_back(&v.transcript);
    labels.push_back(v.label);
  }
  auto summaries = extract_batch(ts, prompt, gateway);
  return f1_score(classify_batch(summaries, prompt, gateway), labels);
}

std::string analyze_errors(const std::vector<ErrorCase>& errors) {
  if (errors.empty()) return std::string(kNoErrors);
  int on_mci = 0, on_hc = 0;
  std::map<std::string, int> term_counts;
  for (const auto& e : errors) {
    (e.actual == Label::MCI ? on_mci : on_hc)++;
    for (const auto& tok : text::tokenize(e.summary)) {
      if (markers::category_from_name(tok)) ++term_counts[tok];
    }
  }
  std::vector<std::pair<std::string, int>> ranked(term_counts.begin(),
                                                  term_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  std::string out = "ERROR ANALYSIS\n";
  out += fmt::format("errors_actual_mci: {}\n", on_mci);
  out += fmt::format("errors_actual_hc: {}\n", on_hc);
  out += "top_terms:";
  if (ranked.empty()) out += " none";
  for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) {
    out += (i == 0 ? " " : ", ") + ranked[i].first;
  }
  out.push_back('\n');
  std::size_t shown[2] = {0, 0};
  std::size_t k = 0;
  for (const auto& e : errors) {
    auto& n = shown[e.actual == Label::MCI];
    if (n == kDigestCasesPerClass) continue;
    ++n;
    std::string s = e.summary.substr(0, kDigestSummaryChars);
    out += fmt::format("case {} ({} month {}, predicted {}, actual {}):\n{}\n", ++k,
                       e.participant_id, e.month_index, prediction_name(e.predicted),
                       to_string(e.actual), text::trim(s));
    if (!e.transcript.empty()) out += e.transcript;
    if (!out.empty() && out.back() != '\n') out.push_back('\n');
  }
  return out;
}

RefineResult refine_with_note(const PromptTemplate& prompt,
                              const std::string& feedback,
                              llm::Gateway& gateway) {
  if (text::trim(feedback) == kNoErrors) return {prompt, "no errors; unchanged"};
  llm::CompletionRequest req;
  req.role = llm::Role::kRefiner;
  req.prompt_text =
      std::string(kRefinerTask) + "\nCURRENT PROMPT:\n" + prompt.render();
  req.input_text = feedback;
  auto resp = gateway.complete(req);

  auto instruction = text::marker_block(resp.text, "INSTRUCTION:", kBlockMarkers);
  if (!instruction || instruction->empty()) {
    throw RefinementParseError(fmt::format(
        "refiner reply has no INSTRUCTION block: '{}'",
        resp.text.substr(0, 200)));
  }
  RefineResult out{prompt, ""};
  out.prompt.instruction = *instruction;
  if (auto ctx = text::marker_block(resp.text, "CONTEXT:", kBlockMarkers);
      ctx && !ctx->empty()) {
    out.prompt.context = *ctx;
  }
  if (auto ex = text::marker_block(resp.text, "EXEMPLARS:", kBlockMarkers)) {
    auto parsed = parse_exemplars(*ex);
    if (!parsed.empty()) out.prompt.exemplars = std::move(parsed);
  }
  if (auto note = text::marker_block(resp.text, "NOTE:", kBlockMarkers)) {
    out.note = *note;
  } else {
    out.note = "refined instruction";
  }
  return out;
}

PromptTemplate refine(const PromptTemplate& prompt, const std::string& feedback,
                      llm::Gateway& gateway) {
  return refine_with_note(prompt, feedback, gateway).prompt;
}

OptimizeResult optimize(const PromptTemplate& p_init, const MinibatchSplit& split,
                        llm::Gateway& gateway, int max_iter) {
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (split.val.empty()) throw ConfigError("validation minibatch is empty");

  std::vector<const MonthlyTranscript*> items;
  std::vector<Label> labels;
  for (const auto& t : split.train) {
    items.push_back(&t.transcript);
    labels.push_back(t.label);
  }
  for (const auto& v : split.val) {
    items.push_back(&v.transcript);
    labels.push_back(v.label);
  }
  const std::size_t n_train = split.train.size();
  const std::vector<Label> val_labels(labels.begin() + static_cast<long>(n_train),
                                      labels.end());

  OptimizeResult result;
  PromptTemplate current = p_init;
  std::string applied = "initial prompt";
  double best_f1 = 0.0;
  std::size_t best_index = 0;

  for (int j = 1; j <= max_iter; ++j) {
    PromptCandidate cand;
    cand.prompt = current;
    cand.iteration = j;
    if (j > 1) cand.parent_iteration = j - 1;
    cand.feedback_applied = applied;

    auto summaries = extract_batch(items, current, gateway, j);
    auto preds = classify_batch(summaries, current, gateway);

    std::vector<Prediction> val_preds(preds.begin() + static_cast<long>(n_train),
                                      preds.end());
    double f1 = f1_score(val_preds, val_labels);
    cand.val_f1 = f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_index = result.lineage.size();
    }

    std::vector<ErrorCase> errors;
    for (std::size_t i = 0; i < n_train; ++i) {
      if (preds[i] != as_prediction(labels[i])) {
        MonthlyTranscript excerpt = *items[i];
        if (excerpt.commands.size() > kDigestCommands) excerpt.commands.resize(kDigestCommands);
        errors.push_back({summaries[i].participant_id, summaries[i].month_index,
                          preds[i], labels[i], summaries[i].text,
                          llm::rule::render_transcript(excerpt)});
      }
    }
    cand.train_errors = static_cast<int>(errors.size());
    cand.feedback_digest = analyze_errors(errors);

    if (j < max_iter) {
      try {
        auto refined = refine_with_note(current, cand.feedback_digest, gateway);
        current = std::move(refined.prompt);
        applied = refined.note;
      } catch (const RefinementParseError& e) {
        cand.refine_error = e.what();
        applied = "refinement failed; prompt carried over";
      }
    }
    result.lineage.push_back(std::move(cand));
  }
  result.best = result.lineage[best_index];
  return result;
}

json to_json(const PromptTemplate& p) {
  json ex = json::array();
  for (const auto& e : p.exemplars) {
    ex.push_back({{"excerpt", e.excerpt}, {"label", std::string(to_string(e.label))}});
  }
  return {{"context", p.context}, {"instruction", p.instruction}, {"exemplars", ex}};
}

PromptTemplate template_from_json(const json& j) {
  PromptTemplate p;
  try {
    p.context = j.at("context").get<std::string>();
    p.instruction = j.at("instruction").get<std::string>();
    for (const auto& e : j.at("exemplars")) {
      p.exemplars.push_back({e.at("excerpt").get<std::string>(),
                             parse_label_name(e.at("label").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("bad prompt template: {}", e.what()));
  }
  return p;
}

namespace {
json candidate_json(const PromptCandidate& c) {
  json j{{"iteration", c.iteration},
         {"val_f1", c.val_f1 ? json(*c.val_f1) : json(nullptr)},
         {"parent_iteration",
          c.parent_iteration ? json(*c.parent_iteration) : json(nullptr)},
         {"feedback_applied", c.feedback_applied},
         {"feedback_digest", c.feedback_digest},
         {"train_errors", c.train_errors},
         {"refine_error", c.refine_error ? json(*c.refine_error) : json(nullptr)},
         {"template", to_json(c.prompt)}};
  return j;
}

PromptCandidate candidate_from_json(const json& j) {
  PromptCandidate c;
  c.iteration = j.at("iteration").get<int>();
  if (!j.at("val_f1").is_null()) c.val_f1 = j["val_f1"].get<double>();
  if (!j.at("parent_iteration").is_null()) {
    c.parent_iteration = j["parent_iteration"].get<int>();
  }
  c.feedback_applied = j.value("feedback_applied", "");
  c.feedback_digest = j.value("feedback_digest", "");
  c.train_errors = j.value("train_errors", 0);
  if (j.contains("refine_error") && !j["refine_error"].is_null()) {
    c.refine_error = j["refine_error"].get<std::string>();
  }
  c.prompt = template_from_json(j.at("template"));
  return c;
}

json keys_json(const std::vector<LabeledTranscript>& items) {
  json a = json::array();
  for (const auto& it : items) {
    a.push_back({{"participant_id", it.transcript.participant_id},
                 {"month_index", it.transcript.month_index},
                 {"label", std::string(to_string(it.label))}});
  }
  return a;
}
}  // namespace

json lineage_to_json(const OptimizeResult& result, const MinibatchSplit& split) {
  json lineage = json::array();
  for (const auto& c : result.lineage) lineage.push_back(candidate_json(c));
  return {{"best_iteration", result.best.iteration},
          {"best_val_f1", result.best.val_f1 ? json(*result.best.val_f1) : json(nullptr)},
          {"best_template", to_json(result.best.prompt)},
          {"lineage", lineage},
          {"minibatch", {{"train", keys_json(split.train)}, {"val", keys_json(split.val)}}}};
}

OptimizeResult lineage_from_json(const json& j) {
  OptimizeResult r;
  try {
    for (const auto& c : j.at("lineage")) r.lineage.push_back(candidate_from_json(c));
    int best = j.at("best_iteration").get<int>();
    auto it = std::find_if(r.lineage.begin(), r.lineage.end(),
                           [&](const auto& c) { return c.iteration == best; });
    if (it == r.lineage.end()) {
      throw IngestionError("lineage best_iteration not present in lineage");
    }
    r.best = *it;
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("bad lineage document: {}", e.what()));
  }
  return r;
}

}  // namespace cogtipro::prompt
