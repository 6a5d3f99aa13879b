// SPDX-License-Identifier: Apache-2.0
// Command-line front end: synth, preprocess, optimize, embed, train,
// evaluate, ablate, report.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "cogtipro/embed.hpp"
#include "cogtipro/error.hpp"
#include "cogtipro/harness.hpp"
#include "cogtipro/hash.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/llm_gateway.hpp"
#include "cogtipro/preprocess.hpp"
#include "cogtipro/prompt_opt.hpp"
#include "cogtipro/synth.hpp"
#include "cogtipro/timeutil.hpp"
#include "cogtipro/tsmodel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cogtipro;

namespace {

struct Globals {
  std::string config_path;
  std::string backend;  // overrides config.backend.kind
  std::string seeds;
  std::string out = "out";
};

json section(const json& cfg, const char* name) {
  return cfg.contains(name) ? cfg[name] : json::object();
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("bad seed '{}'", item));
    }
  }
  if (out.empty()) throw ConfigError("--seeds needs at least one value");
  return out;
}

class App {
 public:
  explicit App(const Globals& g) : g_(g) {
    if (!g.config_path.empty()) cfg_ = json_io::read_json_file(g.config_path);
    if (!cfg_.is_object()) throw ConfigError("config must be a JSON object");
  }

  fs::path out() const { return g_.out; }
  const json& cfg() const { return cfg_; }

  synth::SynthConfig synth_config() const { return synth::config_from_json(section(cfg_, "synth")); }

  preprocess::Options preprocess_options() const {
    const json p = section(cfg_, "preprocess");
    const auto s = synth_config();
    preprocess::Options o;
    o.study_start = p.contains("study_start")
                        ? timeutil::parse_date(p["study_start"].get<std::string>())
                        : s.study_start;
    o.months = p.value("months", s.months);
    o.wake_top_k = p.value("wake_top_k", o.wake_top_k);
    o.pooled_wake_words = p.value("pooled_wake_words", false);
    return o;
  }

  harness::PipelineConfig pipeline() const {
    auto c = harness::pipeline_config_from_json(section(cfg_, "pipeline"));
    if (!g_.seeds.empty()) c.seeds = parse_seeds(g_.seeds);
    return c;
  }

  llm::Gateway& gateway() {
    if (gateway_) return *gateway_;
    const json b = section(cfg_, "backend");
    const std::string kind = g_.backend.empty() ? b.value("kind", std::string("rule")) : g_.backend;
    std::shared_ptr<llm::Backend> backend;
    if (kind == "rule") {
      backend = std::make_shared<llm::RuleBackend>();
    } else if (kind == "fixture") {
      if (!b.contains("fixture")) throw ConfigError("fixture backend needs backend.fixture");
      backend = llm::FixtureBackend::from_file(b["fixture"].get<std::string>());
    } else if (kind == "http") {
      llm::HttpOptions o;
      o.url = b.value("url", std::string());
      if (o.url.empty()) throw ConfigError("http backend needs backend.url");
      o.model = b.value("model", o.model);
      o.api_key_env = b.value("api_key_env", o.api_key_env);
      o.max_attempts = b.value("max_attempts", o.max_attempts);
      backend = std::make_shared<llm::HttpBackend>(o);
    } else {
      throw ConfigError(fmt::format("unknown backend '{}'", kind));
    }
    llm::GatewayOptions go;
    go.parallelism = b.value("parallelism", 1);
    if (b.contains("replay_log")) go.replay_log = b["replay_log"].get<std::string>();
    gateway_ = std::make_unique<llm::Gateway>(backend, go);
    return *gateway_;
  }

  /// Acoustic provider: embed.acoustic.kind in {file, remote}; default is the
  /// acoustic.jsonl next to the cohort.
  std::unique_ptr<embed::AcousticProvider> acoustic(const fs::path& data_dir) const {
    const json a = section(section(cfg_, "embed"), "acoustic");
    const int dim = a.value("dim", synth_config().acoustic_dim);
    const std::string kind = a.value("kind", std::string("file"));
    if (kind == "remote") {
      return std::make_unique<embed::RemoteAcousticProvider>(a.at("url").get<std::string>(), dim);
    }
    if (kind != "file") throw ConfigError(fmt::format("unknown acoustic provider '{}'", kind));
    const fs::path path = a.contains("path") ? fs::path(a["path"].get<std::string>())
                                             : data_dir / "acoustic.jsonl";
    return std::make_unique<embed::VectorTable>(embed::VectorTable::from_file(path, dim));
  }

  std::unique_ptr<embed::LinguisticProvider> linguistic() const {
    const json l = section(section(cfg_, "embed"), "linguistic");
    const int dim = l.value("dim", embed::kDefaultLinguisticDim);
    const std::string kind = l.value("kind", std::string("hashing"));
    if (kind == "remote") {
      return std::make_unique<embed::RemoteLinguisticProvider>(l.at("url").get<std::string>(), dim);
    }
    if (kind != "hashing") throw ConfigError(fmt::format("unknown linguistic provider '{}'", kind));
    return std::make_unique<embed::HashingEmbedder>(dim);
  }

  /// Reads cohort.jsonl + labels.jsonl from `dir` and preprocesses them.
  harness::Dataset dataset(const fs::path& dir, const std::string& labels_path = "") const {
    const auto records = preprocess::read_cohort_jsonl(dir / "cohort.jsonl");
    const auto labels = preprocess::read_labels_jsonl(
        labels_path.empty() ? dir / "labels.jsonl" : fs::path(labels_path));
    auto cleaned = preprocess::preprocess_cohort(records, preprocess_options());
    return harness::make_dataset(std::move(cleaned.by_participant),
                                 preprocess::label_map(labels),
                                 harness::cohort_hash(records, labels));
  }

  /// Already-preprocessed transcripts, hashed as stored.
  harness::Dataset dataset_from_transcripts(const fs::path& dir, const fs::path& labels_path) const {
    const fs::path path = dir / "transcripts.jsonl";
    auto transcripts = preprocess::read_transcripts_jsonl(path);
    const auto labels = preprocess::read_labels_jsonl(labels_path);
    return harness::make_dataset(std::move(transcripts), preprocess::label_map(labels),
                                 hash::sha256_hex(json_io::read_text_file(path)));
  }

 private:
  Globals g_;
  json cfg_ = json::object();
  std::unique_ptr<llm::Gateway> gateway_;
};

std::vector<prompt::LabeledTranscript> labeled_pool(const harness::Dataset& d,
                                                    const std::string& exclude) {
  std::vector<prompt::LabeledTranscript> pool;
  for (const auto& pid : d.participants) {
    if (pid == exclude) continue;
    for (const auto& t : d.transcripts.at(pid)) {
      if (!t.empty()) pool.push_back({t, d.labels.at(pid)});
    }
  }
  return pool;
}

/// sha256sum-style listing of every file under `dir`.
void write_manifest(const fs::path& dir) {
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "MANIFEST.sha256") {
      files.push_back(fs::relative(e.path(), dir));
    }
  }
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) {
    out += fmt::format("{}  {}\n", hash::sha256_hex(json_io::read_text_file(dir / f)),
                       f.generic_string());
  }
  json_io::write_text_file(dir / "MANIFEST.sha256", out);
}

void print_table(const json& doc) {
  std::cout << fmt::format("{:<14} {:>8} {:>8}\n", "Configuration", "Acc(%)", "F1(%)");
  for (const auto& r : doc.at("reports")) {
    std::cout << fmt::format("{:<14} {:>8} {:>8}\n", r.at("configuration").get<std::string>(),
                             r.at("mean").at("accuracy_pct").get<std::string>(),
                             r.at("mean").at("f1_pct").get<std::string>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Voice-command cognitive screening pipeline"};
  cli.require_subcommand(1);
  cli.fallthrough();
  Globals g;
  cli.add_option("--config", g.config_path, "JSON configuration file");
  cli.add_option("--backend", g.backend, "LLM backend")
      ->check(CLI::IsMember({"http", "fixture", "rule"}));
  cli.add_option("--seeds", g.seeds, "Comma-separated run seeds, e.g. 0,1,2,3,4");
  cli.add_option("--out", g.out, "Output directory");

  std::string data_dir = ".";
  std::string exclude;
  std::string prompt_path;
  std::string sequences_dir;
  std::string report_path;

  auto* synth_cmd = cli.add_subcommand("synth", "Generate a synthetic cohort");
  std::string cohort_path, labels_path, study_start, train_dir;
  int months = 0, max_iter = 0;
  auto* pre_cmd = cli.add_subcommand("preprocess", "Clean a cohort into monthly transcripts");
  pre_cmd->add_option("--data", data_dir, "Directory with cohort.jsonl and labels.jsonl");
  pre_cmd->add_option("--cohort", cohort_path, "Cohort JSON-lines (default: <data>/cohort.jsonl)");
  pre_cmd->add_option("--labels", labels_path, "Labels JSON-lines, validated and copied to <out>");
  pre_cmd->add_option("--study-start", study_start, "First study day, YYYY-MM-DD");
  pre_cmd->add_option("--months", months, "Study length in months");
  auto* opt_cmd = cli.add_subcommand("optimize", "Refine the extraction prompt");
  opt_cmd->add_option("--data", data_dir, "Cohort directory");
  opt_cmd->add_option("--train", train_dir, "Directory with transcripts.jsonl from `preprocess`");
  opt_cmd->add_option("--labels", labels_path, "Labels JSON-lines (default: <data>/labels.jsonl)");
  opt_cmd->add_option("--max-iter", max_iter, "Refinement iterations");
  opt_cmd->add_option("--exclude", exclude, "Participant kept out of the minibatch");
  auto* emb_cmd = cli.add_subcommand("embed", "Extract summaries and build sequences");
  emb_cmd->add_option("--data", data_dir, "Cohort directory");
  emb_cmd->add_option("--prompt", prompt_path, "Prompt template JSON (default: initial prompt)");
  auto* train_cmd = cli.add_subcommand("train", "Train a sequence classifier");
  train_cmd->add_option("--data", data_dir, "Cohort directory (for labels.jsonl)");
  train_cmd->add_option("--sequences", sequences_dir, "Directory written by `embed`")->required();
  auto* eval_cmd = cli.add_subcommand("evaluate", "LOSO evaluation of the full pipeline");
  eval_cmd->add_option("--data", data_dir, "Cohort directory");
  auto* abl_cmd = cli.add_subcommand("ablate", "LOSO evaluation of the ablation grid");
  abl_cmd->add_option("--data", data_dir, "Cohort directory");
  auto* rep_cmd = cli.add_subcommand("report", "Print a report table");
  rep_cmd->add_option("--input", report_path, "report.json (default: <out>/report.json)");

  CLI11_PARSE(cli, argc, argv);

  try {
    App app(g);
    const fs::path data(data_dir);

    if (*synth_cmd) {
      auto config = app.synth_config();
      const auto cohort = synth::generate_cohort(config);
      synth::write_cohort(app.out(), cohort);
      json_io::write_text_file(app.out() / "synth_config.json",
                               synth::to_json(config).dump(2) + "\n");
      std::cout << fmt::format("wrote {} records for {} participants to {}\n",
                               cohort.records.size(), cohort.labels.size(), app.out().string());
    } else if (*pre_cmd) {
      const auto records = preprocess::read_cohort_jsonl(
          cohort_path.empty() ? data / "cohort.jsonl" : fs::path(cohort_path));
      auto options = app.preprocess_options();
      if (!study_start.empty()) options.study_start = timeutil::parse_date(study_start);
      if (months > 0) options.months = months;
      const auto cleaned = preprocess::preprocess_cohort(records, options);
      if (!labels_path.empty()) {
        preprocess::write_labels_jsonl(app.out() / "labels.jsonl",
                                       preprocess::read_labels_jsonl(labels_path));
      }
      preprocess::write_transcripts_jsonl(app.out() / "transcripts.jsonl", cleaned);
      preprocess::write_drop_log_jsonl(app.out() / "drop_log.jsonl", cleaned.drop_log);
      json wake = json::object();
      for (const auto& [pid, words] : cleaned.wake_words) wake[pid] = words;
      json_io::write_text_file(app.out() / "wake_words.json", wake.dump(2) + "\n");
      std::cout << fmt::format("{} participants, {} records dropped\n",
                               cleaned.by_participant.size(), cleaned.drop_log.size());
    } else if (*opt_cmd) {
      const auto d = train_dir.empty()
                         ? app.dataset(data, labels_path)
                         : app.dataset_from_transcripts(train_dir, labels_path.empty()
                                                                       ? data / "labels.jsonl"
                                                                       : fs::path(labels_path));
      auto pc = app.pipeline();
      if (max_iter > 0) pc.max_iter = max_iter;
      const auto split = prompt::make_minibatch(labeled_pool(d, exclude), pc.global_seed,
                                                pc.minibatch_size, pc.minibatch_val);
      const auto p_init = prompt::default_initial_prompt(split.train, pc.global_seed);
      const auto result = prompt::optimize(p_init, split, app.gateway(), pc.max_iter);
      // --out may name the lineage file itself.
      fs::path lineage_file = app.out() / "lineage.json";
      fs::path prompt_file = app.out() / "best_prompt.json";
      if (app.out().extension() == ".json") {
        lineage_file = app.out();
        prompt_file = app.out();
        prompt_file.replace_extension(".best_prompt.json");
      }
      json_io::write_text_file(lineage_file,
                               prompt::lineage_to_json(result, split).dump(2) + "\n");
      json_io::write_text_file(prompt_file,
                               prompt::to_json(result.best.prompt).dump(2) + "\n");
      for (const auto& c : result.lineage) {
        std::cout << fmt::format("iteration {}: val F1 {}\n", c.iteration,
                                 c.val_f1 ? fmt::format("{:.4f}", *c.val_f1) : "n/a");
      }
      std::cout << fmt::format("best iteration {}\n", result.best.iteration);
    } else if (*emb_cmd) {
      const auto d = app.dataset(data);
      const auto pc = app.pipeline();
      prompt::PromptTemplate p =
          prompt_path.empty()
              ? prompt::default_initial_prompt(labeled_pool(d, ""), pc.global_seed)
              : prompt::template_from_json(json_io::read_json_file(prompt_path));
      auto acoustic = app.acoustic(data);
      auto linguistic = app.linguistic();
      std::string summaries_jsonl;
      for (const auto& pid : d.participants) {
        std::vector<const MonthlyTranscript*> months;
        for (const auto& t : d.transcripts.at(pid)) months.push_back(&t);
        auto sums = prompt::extract_batch(months, p, app.gateway());
        for (const auto& s : sums) {
          summaries_jsonl += json{{"participant_id", s.participant_id},
                                  {"month_index", s.month_index},
                                  {"text", s.text}}.dump() + "\n";
        }
        const auto seq = embed::build_sequence(pid, sums, *acoustic, *linguistic, pc.sequence);
        embed::write_sequence(app.out() / "sequences", seq);
      }
      json_io::write_text_file(app.out() / "summaries.jsonl", summaries_jsonl);
      std::cout << fmt::format("wrote {} sequences\n", d.participants.size());
    } else if (*train_cmd) {
      const auto labels = preprocess::label_map(preprocess::read_labels_jsonl(data / "labels.jsonl"));
      const auto pc = app.pipeline();
      // Accept either the `embed` output directory or its sequences/ child.
      fs::path seq_dir(sequences_dir);
      if (fs::is_directory(seq_dir / "sequences")) seq_dir /= "sequences";
      std::vector<ts::LabeledSequence> all;
      for (const auto& [pid, label] : labels) {
        all.push_back({embed::read_sequence(seq_dir, pid), label});
      }
      if (all.size() < 2) throw ConfigError("need at least two sequences to train");
      // Every fifth participant validates.
      std::vector<ts::LabeledSequence> fit, val;
      for (std::size_t i = 0; i < all.size(); ++i) (i % 5 == 4 ? val : fit).push_back(all[i]);
      if (val.empty()) {
        val.push_back(fit.back());
        fit.pop_back();
      }
      ts::ModelConfig mc = pc.model;
      mc.months = all.front().sequence.months();
      mc.variates = all.front().sequence.width();
      const auto model = ts::train(mc, pc.train, fit, val);
      ts::save_checkpoint(app.out() / "model", model);
      ts::write_curve_csv(app.out() / "curve.csv", model);
      std::cout << fmt::format("trained {} epochs, best epoch {}\n", model.curve.size(),
                               model.best_epoch);
    } else if (*eval_cmd || *abl_cmd) {
      const auto d = app.dataset(data);
      auto acoustic = app.acoustic(data);
      auto linguistic = app.linguistic();
      const harness::Providers providers{acoustic.get(), linguistic.get()};
      std::vector<harness::ExperimentReport> reports;
      if (*eval_cmd) {
        reports.push_back(harness::run_pipeline(app.pipeline(), d, providers, app.gateway()));
      } else {
        reports = harness::run_ablations(app.pipeline(), d, providers, app.gateway());
      }
      harness::emit_report(reports, app.out());
      for (const auto& r : reports) {
        const auto audit = harness::audit_leakage(r);
        if (!audit.clean()) {
          for (const auto& v : audit.violations) std::cerr << "leakage: " << v << "\n";
          return 3;
        }
      }
      print_table(json_io::read_json_file(app.out() / "report.json"));
    } else if (*rep_cmd) {
      const fs::path in = report_path.empty() ? app.out() / "report.json" : fs::path(report_path);
      print_table(json_io::read_json_file(in));
    }
    if (!*rep_cmd) write_manifest(g.out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
