// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/harness.hpp"
#include "cogtipro/hash.hpp"
#include "cogtipro/json_io.hpp"

namespace cogtipro::harness {

using nlohmann::json;

std::string percent(double fraction) { return fmt::format("{:.2f}", 100.0 * fraction); }

namespace {

std::string slug(std::string_view name) {
  std::string out;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (c == ' ' && !out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  return out.empty() ? "config" : out;
}

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},
          {"f1", m.f1},
          {"accuracy_pct", percent(m.accuracy)},
          {"f1_pct", percent(m.f1)},
          {"confusion",
           {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn},
            {"tn", m.confusion.tn}}}};
}

std::string lineage_path(const ExperimentReport& r, const std::string& key) {
  std::string file = key;
  std::replace(file.begin(), file.end(), '/', '_');
  return fmt::format("lineages/{}/{}.json", slug(r.name), file);
}

}  // namespace

json report_to_json(const ExperimentReport& r) {
  json per_seed = json::array();
  for (const auto& s : r.per_seed) {
    json j = metrics_json(s.metrics);
    j["seed"] = s.seed;
    j["failed_folds"] = s.failed_folds;
    per_seed.push_back(j);
  }
  json results = json::array();
  for (const auto& f : r.results) {
    results.push_back({{"fold_id", f.fold_id},
                       {"seed", f.seed},
                       {"prediction", std::string(to_string(f.prediction))},
                       {"probability", f.probability},
                       {"label", std::string(to_string(f.label))},
                       {"window", f.window}});
  }
  json folds = json::array();
  for (const auto& p : r.provenance) {
    json j{{"fold_id", p.fold_id},
           {"seed", p.seed},
           {"minibatch_participants", p.minibatch_participants},
           {"train_participants", p.train_participants},
           {"val_participants", p.val_participants},
           {"embedding_fit_participants", p.embedding_fit_participants},
           {"prompt_lineage_sha256", p.prompt_lineage_sha256},
           {"best_iteration", p.best_iteration},
           {"best_val_f1", p.best_val_f1 ? json(*p.best_val_f1) : json(nullptr)},
           {"best_epoch", p.best_epoch},
           {"failure", p.failure ? json(*p.failure) : json(nullptr)}};
    folds.push_back(j);
  }
  json refs = json::object();
  for (const auto& [key, doc] : r.lineages) {
    refs[key] = {{"path", lineage_path(r, key)}, {"sha256", hash::sha256_hex(doc.dump())}};
  }
  return {{"configuration", r.name},
          {"mean", metrics_json(r.mean)},
          {"per_seed", per_seed},
          {"partial", r.partial},
          {"results", results},
          {"provenance",
           {{"cohort_sha256", r.cohort_hash},
            {"model_config", r.model_config},
            {"train_config", r.train_config},
            {"prompt_lineages", refs},
            {"folds", folds}}}};
}

void emit_report(const std::vector<ExperimentReport>& reports,
                 const std::filesystem::path& dir) {
  if (reports.empty()) throw ConfigError("no reports to emit");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError(fmt::format("cannot create report directory {}", dir.string()));
  }

  json doc{{"reports", json::array()}};
  for (const auto& r : reports) doc["reports"].push_back(report_to_json(r));
  json_io::write_text_file(dir / "report.json", doc.dump(2) + "\n");

  std::string md = "| Configuration | Acc (%) | F1 (%) |\n|---|---:|---:|\n";
  std::string csv = "configuration,acc_pct,f1_pct,n_seeds,partial\n";
  for (const auto& r : reports) {
    md += fmt::format("| {} | {} | {} |\n", r.name, percent(r.mean.accuracy),
                      percent(r.mean.f1));
    csv += fmt::format("{},{},{},{},{}\n", r.name, percent(r.mean.accuracy), percent(r.mean.f1),
                       r.per_seed.size(), r.partial ? "true" : "false");
  }
  md += "\n";
  for (const auto& r : reports) {
    md += fmt::format("- {}: {} seed(s){}; cohort sha256 `{}`\n", r.name, r.per_seed.size(),
                      r.partial ? ", PARTIAL (some folds failed)" : "", r.cohort_hash);
  }
  json_io::write_text_file(dir / "report.md", md);
  json_io::write_text_file(dir / "report.csv", csv);

  for (const auto& r : reports) {
    for (const auto& [key, lineage] : r.lineages) {
      json_io::write_text_file(dir / lineage_path(r, key), lineage.dump(2) + "\n");
    }
  }
}

}  // namespace cogtipro::harness
