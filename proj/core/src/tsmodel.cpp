// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/tsmodel.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/tape.hpp"
#include "cogtipro/text.hpp"

namespace cogtipro::ts {

using nlohmann::json;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::ITransformer: return "itransformer";
    case Architecture::PatchTST: return "patchtst";
    case Architecture::MeanPool: return "meanpool";
  }
  return "?";
}

Architecture architecture_from_string(std::string_view s) {
  const auto t = text::to_lower_ascii(text::trim(s));
  if (t == "itransformer") return Architecture::ITransformer;
  if (t == "patchtst") return Architecture::PatchTST;
  if (t == "meanpool") return Architecture::MeanPool;
  throw ConfigError(fmt::format("unknown architecture '{}'", s));
}

int ModelConfig::n_patches() const {
  if (patch_len > months || stride < 1) return 0;
  return (months - patch_len) / stride + 1;
}

void ModelConfig::validate() const {
  if (months < 1 || variates < 1) {
    throw ConfigError(fmt::format("input dims must be positive, got T={} V={}", months,
                                  variates));
  }
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError(fmt::format("d_model {} must be a positive multiple of n_heads {}",
                                  d_model, n_heads));
  }
  if (n_layers < 0) throw ConfigError("n_layers must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (architecture == Architecture::PatchTST) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (patch_len < 1 || patch_len > months) {
      throw ConfigError(fmt::format("patch_len {} exceeds T={}", patch_len, months));
    }
  }
}

json to_json(const ModelConfig& c) {
  return {{"architecture", std::string(to_string(c.architecture))},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},
          {"patch_len", c.patch_len},
          {"stride", c.stride},
          {"dropout", c.dropout},
          {"months", c.months},
          {"variates", c.variates},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("architecture")) {
      c.architecture = architecture_from_string(j["architecture"].get<std::string>());
    }
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.patch_len = j.value("patch_len", c.patch_len);
    c.stride = j.value("stride", c.stride);
    c.dropout = j.value("dropout", c.dropout);
    c.months = j.value("months", c.months);
    c.variates = j.value("variates", c.variates);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad model config: {}", e.what()));
  }
  return c;
}

// ---------------------------------------------------------------------------

void ParamLayout::add(std::string name, int rows, int cols, bool decay) {
  blocks_.push_back({std::move(name), rows, cols, total_, decay});
  total_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
}

ParamLayout::ParamLayout(const ModelConfig& c) {
  c.validate();
  const int d = c.d_model;
  if (c.architecture == Architecture::MeanPool) {
    add("hidden.w", c.variates, d, true);
    add("hidden.b", 1, d, false);
    add("head.w", d, 1, true);
    add("head.b", 1, 1, false);
    return;
  }
  if (c.architecture == Architecture::ITransformer) {
    add("embed.w", c.months, d, true);
    add("embed.b", 1, d, false);
  } else {
    add("embed.w", c.patch_len, d, true);
    add("embed.b", 1, d, false);
    add("pos", c.n_patches(), d, false);
  }
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = fmt::format("layer{}.", l);
    add(p + "ln1.g", 1, d, false);
    add(p + "ln1.b", 1, d, false);
    add(p + "attn.wq", d, d, true);
    add(p + "attn.wk", d, d, true);
    add(p + "attn.wv", d, d, true);
    add(p + "attn.wo", d, d, true);
    add(p + "attn.bo", 1, d, false);
    add(p + "ln2.g", 1, d, false);
    add(p + "ln2.b", 1, d, false);
    add(p + "ffn.w1", d, c.d_ff(), true);
    add(p + "ffn.b1", 1, c.d_ff(), false);
    add(p + "ffn.w2", c.d_ff(), d, true);
    add(p + "ffn.b2", 1, d, false);
  }
  add("final_ln.g", 1, d, false);
  add("final_ln.b", 1, d, false);
  add("head.w", d, 1, true);
  add("head.b", 1, 1, false);
}

const ParamBlock& ParamLayout::find(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw ContractError(fmt::format("no parameter block named '{}'", name));
}

Eigen::Map<const RowMajor> param_view(const std::vector<double>& params,
                                      const ParamBlock& b) {
  return Eigen::Map<const RowMajor>(params.data() + b.offset, b.rows, b.cols);
}

Eigen::Map<RowMajor> param_view(std::vector<double>& params, const ParamBlock& b) {
  return Eigen::Map<RowMajor>(params.data() + b.offset, b.rows, b.cols);
}

std::vector<double> init_params(const ModelConfig& config) {
  ParamLayout layout(config);
  std::vector<double> p(layout.total(), 0.0);
  Rng rng(config.seed);
  for (const auto& b : layout.blocks()) {
    auto view = param_view(p, b);
    const bool gain = b.name.size() > 2 && b.name.compare(b.name.size() - 2, 2, ".g") == 0;
    if (gain) {
      view.setOnes();
    } else if (b.decay || b.name == "pos") {
      const double limit = std::sqrt(6.0 / (b.rows + b.cols));
      for (int r = 0; r < b.rows; ++r) {
        for (int c = 0; c < b.cols; ++c) view(r, c) = rng.uniform(-limit, limit);
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

void check_shape(const ModelConfig& c, const embed::MultimodalSequence& z) {
  if (z.months() != c.months || z.width() != c.variates ||
      static_cast<int>(z.mask.size()) != z.months()) {
    throw ContractError(fmt::format(
        "sequence {} has shape {}x{} (mask {}), model expects {}x{}", z.participant_id,
        z.months(), z.width(), z.mask.size(), c.months, c.variates));
  }
}

struct Graph {
  const ModelConfig& config;
  const ParamLayout& layout;
  Tape& tape;
  ForwardMode mode;
  std::vector<Tape::Id> leaves;

  Tape::Id p(const std::string& name) const {
    const auto& blocks = layout.blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i].name == name) return leaves[i];
    }
    throw ContractError(fmt::format("no parameter block named '{}'", name));
  }

  Tape::Id affine(Tape::Id x, const std::string& w, const std::string& b) {
    return tape.add_row(tape.matmul(x, p(w)), p(b));
  }

  Tape::Id dropout(Tape::Id x) {
    if (!mode.training || mode.dropout_rng == nullptr || config.dropout <= 0.0) return x;
    const auto& v = tape.value(x);
    const double keep = 1.0 - config.dropout;
    Matrix m(v.rows(), v.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        m(r, c) = mode.dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
      }
    }
    return tape.mul_const(x, m);
  }

  Tape::Id encoder(Tape::Id h, int group_size) {
    for (int l = 0; l < config.n_layers; ++l) {
      const std::string pre = fmt::format("layer{}.", l);
      tape.set_scope(pre + "attn");
      auto a = tape.layernorm(h, p(pre + "ln1.g"), p(pre + "ln1.b"));
      auto q = tape.matmul(a, p(pre + "attn.wq"));
      auto k = tape.matmul(a, p(pre + "attn.wk"));
      auto v = tape.matmul(a, p(pre + "attn.wv"));
      auto o = tape.attention(q, k, v, group_size, config.n_heads);
      o = dropout(affine(o, pre + "attn.wo", pre + "attn.bo"));
      h = tape.add(h, o);
      tape.set_scope(pre + "ffn");
      auto f = tape.layernorm(h, p(pre + "ln2.g"), p(pre + "ln2.b"));
      f = tape.gelu(affine(f, pre + "ffn.w1", pre + "ffn.b1"));
      f = dropout(affine(f, pre + "ffn.w2", pre + "ffn.b2"));
      h = tape.add(h, f);
    }
    tape.set_scope("final_ln");
    return tape.layernorm(h, p("final_ln.g"), p("final_ln.b"));
  }

  Tape::Id logits(const std::vector<const embed::MultimodalSequence*>& batch) {
    const int B = static_cast<int>(batch.size());
    const int T = config.months, V = config.variates;
    switch (config.architecture) {
      case Architecture::ITransformer: {
        Matrix x(static_cast<Eigen::Index>(B) * V, T);
        for (int b = 0; b < B; ++b) x.middleRows(b * V, V) = batch[b]->matrix.transpose();
        tape.set_scope("embed");
        auto h = dropout(affine(tape.leaf(std::move(x)), "embed.w", "embed.b"));
        h = encoder(h, V);
        tape.set_scope("head");
        return affine(tape.segment_mean(h, V), "head.w", "head.b");
      }
      case Architecture::PatchTST: {
        const int P = config.n_patches(), L = config.patch_len;
        Matrix x(static_cast<Eigen::Index>(B) * V * P, L);
        for (int b = 0; b < B; ++b) {
          for (int v = 0; v < V; ++v) {
            for (int q = 0; q < P; ++q) {
              x.row((static_cast<Eigen::Index>(b) * V + v) * P + q) =
                  batch[b]->matrix.block(q * config.stride, v, L, 1).transpose();
            }
          }
        }
        tape.set_scope("embed");
        auto h = affine(tape.leaf(std::move(x)), "embed.w", "embed.b");
        h = dropout(tape.add_tiled(h, p("pos")));
        h = encoder(h, P);
        tape.set_scope("head");
        auto pooled = tape.segment_mean(tape.segment_mean(h, P), V);
        return affine(pooled, "head.w", "head.b");
      }
      case Architecture::MeanPool: {
        Matrix x = Matrix::Zero(B, V);
        for (int b = 0; b < B; ++b) {
          int n = 0;
          for (int t = 0; t < T; ++t) {
            if (!batch[b]->mask[t]) continue;
            x.row(b) += batch[b]->matrix.row(t);
            ++n;
          }
          if (n > 0) x.row(b) /= n;
        }
        tape.set_scope("hidden");
        auto h = dropout(tape.gelu(affine(tape.leaf(std::move(x)), "hidden.w", "hidden.b")));
        tape.set_scope("head");
        return affine(h, "head.w", "head.b");
      }
    }
    throw ContractError("unknown architecture");
  }
};

Tape::Id build(Tape& tape, Graph& g, const std::vector<double>& params, bool trainable,
               const std::vector<const embed::MultimodalSequence*>& batch) {
  for (const auto* z : batch) check_shape(g.config, *z);
  tape.set_scope("params");
  for (const auto& b : g.layout.blocks()) {
    g.leaves.push_back(tape.leaf(Matrix(param_view(params, b)), trainable));
  }
  return g.logits(batch);
}

}  // namespace

Eigen::VectorXd forward_batch(const ModelConfig& config, const std::vector<double>& params,
                              const std::vector<const embed::MultimodalSequence*>& batch,
                              ForwardMode mode) {
  ParamLayout layout(config);
  if (params.size() != layout.total()) {
    throw ContractError(fmt::format("parameter vector has {} entries, layout needs {}",
                                    params.size(), layout.total()));
  }
  if (batch.empty()) return Eigen::VectorXd();
  Tape tape;
  Graph g{config, layout, tape, mode, {}};
  const auto out = build(tape, g, params, false, batch);
  return tape.value(out).col(0);
}

double forward(const ModelConfig& config, const std::vector<double>& params,
               const embed::MultimodalSequence& z) {
  return forward_batch(config, params, {&z})(0);
}

namespace {
double forward_as(Architecture a, const embed::MultimodalSequence& z,
                  const std::vector<double>& params, const ModelConfig& config) {
  if (config.architecture != a) {
    throw ContractError(fmt::format("config is for {}, not {}", to_string(config.architecture),
                                    to_string(a)));
  }
  return forward(config, params, z);
}
}  // namespace

double forward_itransformer(const embed::MultimodalSequence& z,
                            const std::vector<double>& params, const ModelConfig& config) {
  return forward_as(Architecture::ITransformer, z, params, config);
}
double forward_patchtst(const embed::MultimodalSequence& z,
                        const std::vector<double>& params, const ModelConfig& config) {
  return forward_as(Architecture::PatchTST, z, params, config);
}
double forward_meanpool(const embed::MultimodalSequence& z,
                        const std::vector<double>& params, const ModelConfig& config) {
  return forward_as(Architecture::MeanPool, z, params, config);
}

double bce_loss(double logit, int label) {
  const double s = label == 1 ? 1.0 : -1.0;
  return softplus(-s * logit);
}

double loss_and_grad(const ModelConfig& config, const std::vector<double>& params,
                     const std::vector<const embed::MultimodalSequence*>& batch,
                     const std::vector<int>& labels, std::vector<double>* grad_out,
                     ForwardMode mode) {
  if (batch.empty() || batch.size() != labels.size()) {
    throw ContractError("batch and labels must be non-empty and of equal length");
  }
  ParamLayout layout(config);
  if (params.size() != layout.total()) {
    throw ContractError(fmt::format("parameter vector has {} entries, layout needs {}",
                                    params.size(), layout.total()));
  }
  Tape tape;
  Graph g{config, layout, tape, mode, {}};
  const auto logits = build(tape, g, params, grad_out != nullptr, batch);
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i)) = labels[i];
  tape.set_scope("loss");
  const auto loss = tape.bce_mean(logits, y);
  const double value = tape.value(loss)(0, 0);
  if (grad_out) {
    tape.backward(loss);
    grad_out->assign(layout.total(), 0.0);
    const auto& blocks = layout.blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& gm = tape.grad(g.leaves[i]);
      if (gm.size() == 0) continue;
      if (!gm.allFinite()) {
        throw NumericError(fmt::format("non-finite gradient for '{}'", blocks[i].name));
      }
      param_view(*grad_out, blocks[i]) = gm;
    }
  }
  return value;
}

std::vector<double> grad(const std::vector<double>& params,
                         const std::vector<const embed::MultimodalSequence*>& batch,
                         const std::vector<int>& labels, const ModelConfig& config) {
  std::vector<double> g;
  loss_and_grad(config, params, batch, labels, &g);
  return g;
}

}  // namespace cogtipro::ts
