// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/harness.hpp"

#include <algorithm>
#include <atomic>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/hash.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/rng.hpp"

namespace cogtipro::harness {

using nlohmann::json;

std::vector<Fold> loso_split(const std::vector<std::string>& participants) {
  if (participants.size() < 2) {
    throw ConfigError(fmt::format("LOSO needs at least 2 participants, got {}",
                                  participants.size()));
  }
  std::set<std::string> seen;
  for (const auto& p : participants) {
    if (!seen.insert(p).second) throw ConfigError(fmt::format("duplicate participant {}", p));
  }
  std::vector<Fold> folds;
  for (const auto& test : participants) {
    Fold f{test, {}};
    for (const auto& p : participants) {
      if (p != test) f.train.push_back(p);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

Metrics compute_metrics(const std::vector<FoldResult>& results) {
  if (results.empty()) throw ConfigError("no fold results to score");
  Metrics m;
  for (const auto& r : results) {
    const bool actual_mci = r.label == Label::MCI;
    // Abstain is scored as the opposite of the true label.
    const bool said_mci = r.prediction == Prediction::Abstain ? !actual_mci
                                                              : r.prediction == Prediction::MCI;
    if (actual_mci) {
      said_mci ? ++m.confusion.tp : ++m.confusion.fn;
    } else {
      said_mci ? ++m.confusion.fp : ++m.confusion.tn;
    }
  }
  const auto& c = m.confusion;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(results.size());
  const long denom = 2 * c.tp + c.fp + c.fn;
  m.f1 = denom == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
  return m;
}

void PipelineConfig::validate() const {
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (minibatch_size < 2 || minibatch_val < 1 || minibatch_val >= minibatch_size) {
    throw ConfigError("minibatch sizes are inconsistent");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (truncate_months < 0) throw ConfigError("truncate_months must be >= 0");
  if (window_mode && window_min_months < 1) throw ConfigError("window_min_months must be >= 1");
  train.validate();
}

json to_json(const PipelineConfig& c) {
  return {{"name", c.name},
          {"optimize_prompt", c.optimize_prompt},
          {"max_iter", c.max_iter},
          {"minibatch_size", c.minibatch_size},
          {"minibatch_val", c.minibatch_val},
          {"model", ts::to_json(c.model)},
          {"train", ts::to_json(c.train)},
          {"drop_acoustic", c.sequence.drop_acoustic},
          {"drop_linguistic", c.sequence.drop_linguistic},
          {"val_fraction", c.val_fraction},
          {"seeds", c.seeds},
          {"global_seed", c.global_seed},
          {"workers", c.workers},
          {"truncate_months", c.truncate_months},
          {"window_mode", c.window_mode},
          {"window_min_months", c.window_min_months}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  try {
    c.name = j.value("name", c.name);
    c.optimize_prompt = j.value("optimize_prompt", c.optimize_prompt);
    c.max_iter = j.value("max_iter", c.max_iter);
    c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
    c.minibatch_val = j.value("minibatch_val", c.minibatch_val);
    if (j.contains("model")) c.model = ts::model_config_from_json(j["model"]);
    if (j.contains("train")) c.train = ts::train_config_from_json(j["train"]);
    c.sequence.drop_acoustic = j.value("drop_acoustic", false);
    c.sequence.drop_linguistic = j.value("drop_linguistic", false);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.global_seed = j.value("global_seed", c.global_seed);
    c.workers = j.value("workers", c.workers);
    c.truncate_months = j.value("truncate_months", c.truncate_months);
    c.window_mode = j.value("window_mode", c.window_mode);
    c.window_min_months = j.value("window_min_months", c.window_min_months);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad pipeline config: {}", e.what()));
  }
  c.validate();
  return c;
}

void Dataset::validate() const {
  if (participants.size() < 2) throw ConfigError("dataset needs at least 2 participants");
  if (months < 1) throw ConfigError("dataset needs at least one month");
  for (const auto& p : participants) {
    if (!labels.count(p)) throw ConfigError(fmt::format("participant {} has no label", p));
    auto it = transcripts.find(p);
    if (it == transcripts.end() || static_cast<int>(it->second.size()) != months) {
      throw ConfigError(fmt::format("participant {} lacks {} monthly transcripts", p, months));
    }
    for (int t = 0; t < months; ++t) {
      if (it->second[t].month_index != t + 1 || it->second[t].participant_id != p) {
        throw ConfigError(fmt::format("transcripts of {} are out of order", p));
      }
    }
  }
}

Dataset make_dataset(std::map<std::string, std::vector<MonthlyTranscript>> transcripts,
                     const std::map<std::string, Label>& labels, std::string hash) {
  Dataset d;
  for (const auto& [pid, months] : transcripts) {
    d.participants.push_back(pid);
    d.months = std::max(d.months, static_cast<int>(months.size()));
    auto it = labels.find(pid);
    if (it == labels.end()) throw ConfigError(fmt::format("participant {} has no label", pid));
    d.labels[pid] = it->second;
  }
  d.transcripts = std::move(transcripts);
  d.cohort_hash = std::move(hash);
  d.validate();
  return d;
}

std::string cohort_hash(const std::vector<CommandRecord>& records,
                        const std::vector<CohortLabel>& labels) {
  std::string canon;
  for (const auto& r : records) canon += json_io::to_json(r).dump() + "\n";
  canon += "--\n";
  for (const auto& l : labels) {
    json j{{"participant_id", l.participant_id}, {"label", std::string(to_string(l.label))}};
    if (l.moca_score) j["moca_score"] = *l.moca_score;
    canon += j.dump() + "\n";
  }
  return hash::sha256_hex(canon);
}

// ---------------------------------------------------------------------------

std::optional<PromptCache::Entry> PromptCache::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void PromptCache::put(const std::string& key, Entry entry) {
  std::lock_guard lock(mu_);
  entries_.emplace(key, std::move(entry));
}

std::size_t PromptCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

namespace {

struct JobOutput {
  std::vector<FoldResult> results;
  FoldProvenance provenance;
  json lineage;
};

std::vector<std::string> unique_participants(const std::vector<prompt::LabeledTranscript>& a,
                                             const std::vector<prompt::LabeledTranscript>& b) {
  std::set<std::string> s;
  for (const auto& x : a) s.insert(x.transcript.participant_id);
  for (const auto& x : b) s.insert(x.transcript.participant_id);
  return {s.begin(), s.end()};
}

PromptCache::Entry optimize_for_fold(const PipelineConfig& config, const Dataset& data,
                                     const Fold& fold, std::uint64_t run_seed,
                                     llm::Gateway& gateway) {
  std::vector<prompt::LabeledTranscript> pool;
  for (const auto& pid : fold.train) {
    for (const auto& t : data.transcripts.at(pid)) {
      if (!t.empty()) pool.push_back({t, data.labels.at(pid)});
    }
  }
  const auto split = prompt::make_minibatch(pool, hash::derive_seed(run_seed, 1),
                                            config.minibatch_size, config.minibatch_val);
  const auto p_init =
      prompt::default_initial_prompt(split.train, hash::derive_seed(run_seed, 2));

  prompt::OptimizeResult opt;
  if (config.optimize_prompt) {
    opt = prompt::optimize(p_init, split, gateway, config.max_iter);
  } else {
    prompt::PromptCandidate only;
    only.prompt = p_init;
    only.iteration = 1;
    only.feedback_applied = "initial prompt";
    opt.lineage.push_back(only);
    opt.best = only;
  }

  PromptCache::Entry e;
  e.lineage = prompt::lineage_to_json(opt, split);
  e.best = opt.best.prompt;
  e.best_iteration = opt.best.iteration;
  e.best_val_f1 = opt.best.val_f1;
  e.minibatch_participants = unique_participants(split.train, split.val);

  // Summaries for every participant under P*; the held-out participant is
  // only read here, at inference.
  std::vector<const MonthlyTranscript*> all;
  for (const auto& pid : data.participants) {
    for (const auto& t : data.transcripts.at(pid)) all.push_back(&t);
  }
  auto summaries = prompt::extract_batch(all, e.best, gateway, e.best_iteration);
  std::size_t k = 0;
  for (const auto& pid : data.participants) {
    auto& v = e.summaries[pid];
    for (int t = 0; t < data.months; ++t) v.push_back(std::move(summaries[k++]));
  }
  return e;
}

void split_train_val(const std::vector<std::string>& train, const Dataset& data,
                     double val_fraction, std::uint64_t seed, std::vector<std::string>& fit,
                     std::vector<std::string>& val) {
  std::vector<std::string> by_class[2];
  for (const auto& p : train) by_class[data.labels.at(p) == Label::MCI].push_back(p);
  Rng rng(seed);
  for (auto& members : by_class) {
    rng.shuffle(members);
    int n_val = static_cast<int>(std::lround(val_fraction * static_cast<double>(members.size())));
    if (n_val == 0 && members.size() >= 2) n_val = 1;
    if (n_val >= static_cast<int>(members.size())) n_val = static_cast<int>(members.size()) - 1;
    for (std::size_t i = 0; i < members.size(); ++i) {
      (static_cast<int>(i) < n_val ? val : fit).push_back(members[i]);
    }
  }
  if (val.empty()) {
    val.push_back(fit.back());
    fit.pop_back();
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());
}

embed::MultimodalSequence window_of(const embed::MultimodalSequence& s, int t) {
  embed::MultimodalSequence w = s;
  for (int r = t; r < w.months(); ++r) {
    w.matrix.row(r).setZero();
    w.mask[r] = false;
  }
  return w;
}

JobOutput run_fold(const PipelineConfig& config, const Dataset& data, const Providers& providers,
                   llm::Gateway& gateway, PromptCache* cache, const Fold& fold,
                   std::size_t fold_index, std::uint64_t seed) {
  JobOutput out;
  auto& prov = out.provenance;
  prov.fold_id = fold.test;
  prov.seed = seed;
  const std::uint64_t run_seed = hash::derive_seed(config.global_seed, seed, fold_index);
  std::string stage = "optimize";
  try {
    const std::string key = fmt::format("{}/{}/{}/{}/{}", seed, fold.test,
                                        config.optimize_prompt, config.max_iter,
                                        config.minibatch_size);
    std::optional<PromptCache::Entry> entry = cache ? cache->find(key) : std::nullopt;
    if (!entry) {
      entry = optimize_for_fold(config, data, fold, run_seed, gateway);
      if (cache) cache->put(key, *entry);
    }
    out.lineage = entry->lineage;
    prov.minibatch_participants = entry->minibatch_participants;
    prov.prompt_lineage_sha256 = hash::sha256_hex(entry->lineage.dump());
    prov.best_iteration = entry->best_iteration;
    prov.best_val_f1 = entry->best_val_f1;

    stage = "embed";
    const int T = config.truncate_months > 0 ? std::min(config.truncate_months, data.months)
                                             : data.months;
    std::map<std::string, embed::MultimodalSequence> seqs;
    for (const auto& pid : data.participants) {
      auto s = embed::build_sequence(pid, entry->summaries.at(pid), *providers.acoustic,
                                     *providers.linguistic, config.sequence);
      seqs.emplace(pid, T < s.months() ? s.truncated(T) : std::move(s));
    }

    stage = "train";
    std::vector<std::string> fit, val;
    split_train_val(fold.train, data, config.val_fraction, hash::derive_seed(run_seed, 3), fit,
                    val);
    prov.train_participants = fit;
    prov.val_participants = val;
    std::vector<ts::LabeledSequence> train_set, val_set;
    for (const auto& p : fit) train_set.push_back({seqs.at(p), data.labels.at(p)});
    for (const auto& p : val) val_set.push_back({seqs.at(p), data.labels.at(p)});

    ts::ModelConfig mc = config.model;
    mc.months = T;
    mc.variates = providers.acoustic->dim() + providers.linguistic->dim();
    mc.seed = hash::derive_seed(run_seed, 4);
    ts::TrainConfig tc = config.train;
    tc.seed = hash::derive_seed(run_seed, 5);
    const auto model = ts::train(mc, tc, train_set, val_set);
    prov.best_epoch = model.best_epoch;

    stage = "predict";
    const auto& test = seqs.at(fold.test);
    const Label truth = data.labels.at(fold.test);
    auto emit = [&](const embed::MultimodalSequence& z, int window) {
      const auto r = ts::predict(model, z);
      out.results.push_back(
          {fold.test, seed, as_prediction(r.label), r.probability, truth, window});
    };
    if (config.window_mode) {
      for (int t = std::min(config.window_min_months, T); t <= T; ++t) emit(window_of(test, t), t);
    } else {
      emit(test, T);
    }
  } catch (const std::exception& e) {
    prov.failure = fmt::format("{}: {}", stage, e.what());
    out.results.clear();
  }
  return out;
}

}  // namespace

ExperimentReport run_pipeline(const PipelineConfig& config, const Dataset& data,
                              const Providers& providers, llm::Gateway& gateway,
                              PromptCache* cache) {
  config.validate();
  data.validate();
  if (!providers.acoustic || !providers.linguistic) {
    throw ConfigError("both embedding providers are required");
  }
  const auto folds = loso_split(data.participants);

  struct Job {
    std::size_t seed_index;
    std::size_t fold_index;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    for (std::size_t f = 0; f < folds.size(); ++f) jobs.push_back({s, f});
  }
  std::vector<JobOutput> outputs(jobs.size());
  auto run_job = [&](std::size_t i) {
    const auto& j = jobs[i];
    outputs[i] = run_fold(config, data, providers, gateway, cache, folds[j.fold_index],
                          j.fold_index, config.seeds[j.seed_index]);
  };
  const int workers = gateway.backend().order_independent() ? config.workers : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  ExperimentReport report;
  report.name = config.name;
  report.cohort_hash = data.cohort_hash;
  ts::ModelConfig mc = config.model;
  mc.months = config.truncate_months > 0 ? std::min(config.truncate_months, data.months)
                                         : data.months;
  mc.variates = providers.acoustic->dim() + providers.linguistic->dim();
  report.model_config = ts::to_json(mc);
  report.model_config.erase("seed");
  report.train_config = ts::to_json(config.train);
  report.train_config.erase("seed");

  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    SeedMetrics sm;
    sm.seed = config.seeds[s];
    std::vector<FoldResult> seed_results;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].seed_index != s) continue;
      auto& o = outputs[i];
      if (o.provenance.failure) ++sm.failed_folds;
      seed_results.insert(seed_results.end(), o.results.begin(), o.results.end());
    }
    if (!seed_results.empty()) sm.metrics = compute_metrics(seed_results);
    if (sm.failed_folds > 0) report.partial = true;
    report.results.insert(report.results.end(), seed_results.begin(), seed_results.end());
    report.per_seed.push_back(sm);
  }
  for (auto& o : outputs) {
    if (!o.lineage.is_null()) {
      report.lineages[fmt::format("seed{}/{}", o.provenance.seed, o.provenance.fold_id)] =
          std::move(o.lineage);
    }
    report.provenance.push_back(std::move(o.provenance));
  }
  double acc = 0.0, f1 = 0.0;
  for (const auto& sm : report.per_seed) {
    acc += sm.metrics.accuracy;
    f1 += sm.metrics.f1;
    report.mean.confusion.tp += sm.metrics.confusion.tp;
    report.mean.confusion.fp += sm.metrics.confusion.fp;
    report.mean.confusion.fn += sm.metrics.confusion.fn;
    report.mean.confusion.tn += sm.metrics.confusion.tn;
  }
  report.mean.accuracy = acc / static_cast<double>(report.per_seed.size());
  report.mean.f1 = f1 / static_cast<double>(report.per_seed.size());
  return report;
}

std::vector<PipelineConfig> ablation_grid(const PipelineConfig& base) {
  PipelineConfig full = base;
  full.name = std::string(kFull);
  PipelineConfig no_prompt = full;
  no_prompt.name = std::string(kWithoutPrompt);
  no_prompt.optimize_prompt = false;
  PipelineConfig no_temporal = full;
  no_temporal.name = std::string(kWithoutTemporal);
  no_temporal.model.architecture = ts::Architecture::MeanPool;
  PipelineConfig no_acoustic = full;
  no_acoustic.name = std::string(kWithoutAcoustic);
  no_acoustic.sequence.drop_acoustic = true;
  return {full, no_prompt, no_temporal, no_acoustic};
}

std::vector<ExperimentReport> run_ablations(const PipelineConfig& base, const Dataset& data,
                                            const Providers& providers,
                                            llm::Gateway& gateway) {
  PromptCache cache;
  std::vector<ExperimentReport> reports;
  for (const auto& c : ablation_grid(base)) {
    reports.push_back(run_pipeline(c, data, providers, gateway, &cache));
  }
  return reports;
}

AuditResult audit_leakage(const ExperimentReport& report) {
  AuditResult a;
  for (const auto& p : report.provenance) {
    ++a.checked_folds;
    auto check = [&](const std::vector<std::string>& members, std::string_view stage) {
      if (std::find(members.begin(), members.end(), p.fold_id) != members.end()) {
        a.violations.push_back(fmt::format("{} seed {}: held-out participant in {}",
                                           p.fold_id, p.seed, stage));
      }
    };
    check(p.minibatch_participants, "prompt minibatch");
    check(p.train_participants, "training set");
    check(p.val_participants, "validation set");
    check(p.embedding_fit_participants, "embedding fit");
  }
  return a;
}

}  // namespace cogtipro::harness
