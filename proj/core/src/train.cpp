// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/hash.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/tape.hpp"
#include "cogtipro/tsmodel.hpp"

namespace cogtipro::ts {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad train config: {}", e.what()));
  }
  return c;
}

double lr_at(int step, const TrainConfig& c, int total_steps) {
  if (step < 0) throw ConfigError("step must be >= 0");
  if (step < c.warmup_steps) {
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  if (total_steps <= c.warmup_steps) return c.lr;
  const double span = static_cast<double>(total_steps - c.warmup_steps);
  const double progress = static_cast<double>(step - c.warmup_steps) / span;
  return std::max(0.0, c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

int total_steps_for(const TrainConfig& c, std::size_t n_train) {
  const auto per_epoch = (n_train + static_cast<std::size_t>(c.batch_size) - 1) /
                         static_cast<std::size_t>(c.batch_size);
  return c.max_epochs * static_cast<int>(per_epoch);
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epochs_;
  improved_ = epochs_ == 1 || val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    wait_ = 0;
  } else {
    ++wait_;
  }
  return wait_ >= patience_;
}

namespace {

double mean_loss(const ModelConfig& mc, const std::vector<double>& params,
                 const std::vector<LabeledSequence>& set) {
  std::vector<const embed::MultimodalSequence*> batch;
  for (const auto& s : set) batch.push_back(&s.sequence);
  const auto logits = forward_batch(mc, params, batch);
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    total += bce_loss(logits(static_cast<Eigen::Index>(i)), set[i].label == Label::MCI);
  }
  return total / static_cast<double>(set.size());
}

}  // namespace

TrainedModel train(const ModelConfig& mc, const TrainConfig& tc,
                   const std::vector<LabeledSequence>& train_set,
                   const std::vector<LabeledSequence>& val_set, const TrainHooks& hooks) {
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (val_set.empty()) throw ConfigError("validation set is empty");
  mc.validate();
  tc.validate();

  const ParamLayout layout(mc);
  std::vector<double> params = init_params(mc);
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0), g;
  std::vector<char> decay(params.size(), 0);
  for (const auto& b : layout.blocks()) {
    if (!b.decay) continue;
    std::fill(decay.begin() + static_cast<long>(b.offset),
              decay.begin() + static_cast<long>(b.offset + static_cast<std::size_t>(b.rows) * b.cols),
              1);
  }

  Rng order_rng(hash::derive_seed(tc.seed, 1));
  Rng dropout_rng(hash::derive_seed(tc.seed, 2));
  const int total_steps = total_steps_for(tc, train_set.size());

  TrainedModel out;
  out.config = mc;
  out.parameters = params;
  EarlyStopping stopper(tc.patience);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  int step = 0;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    double last_lr = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<const embed::MultimodalSequence*> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&train_set[order[i]].sequence);
        labels.push_back(train_set[order[i]].label == Label::MCI ? 1 : 0);
      }
      const double loss =
          loss_and_grad(mc, params, batch, labels, &g, ForwardMode{true, &dropout_rng});
      loss_sum += loss * static_cast<double>(batch.size());

      const double lr = lr_at(step, tc, total_steps);
      last_lr = lr;
      ++step;
      const double bc1 = 1.0 - std::pow(tc.beta1, step);
      const double bc2 = 1.0 - std::pow(tc.beta2, step);
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g[i];
        v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g[i] * g[i];
        if (decay[i]) params[i] -= lr * tc.weight_decay * params[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + tc.eps);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_loss = mean_loss(mc, params, val_set);
    if (hooks.val_loss) rec.val_loss = hooks.val_loss(epoch, rec.val_loss);
    rec.lr = last_lr;
    out.curve.push_back(rec);
    out.val_loss_history.push_back(rec.val_loss);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    const bool stop = stopper.update(rec.val_loss);
    if (stopper.improved()) out.parameters = params;
    if (stop) break;
  }
  out.best_epoch = stopper.best_epoch();
  return out;
}

PredictResult predict(const TrainedModel& model, const embed::MultimodalSequence& z) {
  const double p = sigmoid(forward(model.config, model.parameters, z));
  return {p >= 0.5 ? Label::MCI : Label::HC, p};
}

namespace {
constexpr char kMagic[8] = {'C', 'T', 'P', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::filesystem::path& stem, const TrainedModel& model) {
  auto bin = stem;
  bin += ".bin";
  auto meta = stem;
  meta += ".json";
  if (stem.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(stem.parent_path(), ec);
  }
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", bin.string()));
  const std::uint64_t n = model.parameters.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(model.parameters.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw IoError(fmt::format("short write to {}", bin.string()));

  const ParamLayout param_layout(model.config);
  json layout = json::array();
  for (const auto& b : param_layout.blocks()) {
    layout.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols},
                      {"offset", b.offset}});
  }
  json curve = json::array();
  for (const auto& r : model.curve) {
    curve.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss},
                     {"val_loss", r.val_loss}, {"lr", r.lr}});
  }
  json side{{"config", to_json(model.config)},
            {"best_epoch", model.best_epoch},
            {"n_parameters", n},
            {"layout", layout},
            {"curve", curve}};
  json_io::write_text_file(meta, side.dump(2) + "\n");
}

TrainedModel load_checkpoint(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto meta = stem;
  meta += ".json";
  const json side = json_io::read_json_file(meta);
  TrainedModel model;
  try {
    model.config = model_config_from_json(side.at("config"));
    model.best_epoch = side.at("best_epoch").get<int>();
    for (const auto& r : side.at("curve")) {
      EpochRecord rec{r.at("epoch").get<int>(), r.at("train_loss").get<double>(),
                      r.at("val_loss").get<double>(), r.at("lr").get<double>()};
      model.curve.push_back(rec);
      model.val_loss_history.push_back(rec.val_loss);
    }
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("bad checkpoint sidecar {}: {}", meta.string(), e.what()));
  }
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", bin.string()));
  char magic[8];
  std::uint64_t n = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IngestionError(fmt::format("{} is not a checkpoint", bin.string()));
  }
  if (n != ParamLayout(model.config).total()) {
    throw IngestionError(fmt::format("{} holds {} parameters, config needs {}", bin.string(),
                                     n, ParamLayout(model.config).total()));
  }
  model.parameters.resize(n);
  in.read(reinterpret_cast<char*>(model.parameters.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IngestionError(fmt::format("{} is truncated", bin.string()));
  return model;
}

void write_curve_csv(const std::filesystem::path& path, const TrainedModel& model) {
  std::string s = "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : model.curve) {
    s += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", r.epoch, r.train_loss, r.val_loss, r.lr);
  }
  json_io::write_text_file(path, s);
}

}  // namespace cogtipro::ts
