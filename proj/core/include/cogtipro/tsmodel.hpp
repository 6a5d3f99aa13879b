// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cogtipro/embed.hpp"
#include "cogtipro/records.hpp"
#include "cogtipro/rng.hpp"

namespace cogtipro::ts {

enum class Architecture { ITransformer, PatchTST, MeanPool };
std::string_view to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);

struct ModelConfig {
  Architecture architecture = Architecture::ITransformer;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int patch_len = 6;
  int stride = 3;
  double dropout = 0.1;
  int months = 0;    // T
  int variates = 0;  // V = d + e
  std::uint64_t seed = 0;

  int d_ff() const { return 2 * d_model; }
  /// floor((T - patch_len) / stride) + 1.
  int n_patches() const;
  /// Throws ConfigError on any inconsistent field.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ParamBlock {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  /// Decoupled weight decay applies (weight matrices only).
  bool decay = false;
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& find(const std::string& name) const;
  std::size_t total() const { return total_; }

 private:
  void add(std::string name, int rows, int cols, bool decay);
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)) from config.seed,
/// biases zero, layer-norm gains one.
std::vector<double> init_params(const ModelConfig& config);

/// Dense-matrix view of a parameter block.
Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
param_view(const std::vector<double>& params, const ParamBlock& block);
Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
param_view(std::vector<double>& params, const ParamBlock& block);

/// Dropout is active only in training mode with a generator supplied.
struct ForwardMode {
  bool training = false;
  Rng* dropout_rng = nullptr;
};

/// Architecture-dispatched logits, one per sequence. Throws ContractError
/// when a sequence's shape differs from (config.months, config.variates).
Eigen::VectorXd forward_batch(const ModelConfig& config,
                              const std::vector<double>& params,
                              const std::vector<const embed::MultimodalSequence*>& batch,
                              ForwardMode mode = {});

double forward(const ModelConfig& config, const std::vector<double>& params,
               const embed::MultimodalSequence& z);
double forward_itransformer(const embed::MultimodalSequence& z,
                            const std::vector<double>& params, const ModelConfig& config);
double forward_patchtst(const embed::MultimodalSequence& z,
                        const std::vector<double>& params, const ModelConfig& config);
double forward_meanpool(const embed::MultimodalSequence& z,
                        const std::vector<double>& params, const ModelConfig& config);

/// log(1 + exp(-(2y-1) * logit)), label 1 = MCI.
double bce_loss(double logit, int label);

/// Mean batch BCE; fills `grad` (resized to the layout) when non-null.
double loss_and_grad(const ModelConfig& config, const std::vector<double>& params,
                     const std::vector<const embed::MultimodalSequence*>& batch,
                     const std::vector<int>& labels, std::vector<double>* grad,
                     ForwardMode mode = {});

/// Gradient of the mean batch BCE in evaluation mode.
std::vector<double> grad(const std::vector<double>& params,
                         const std::vector<const embed::MultimodalSequence*>& batch,
                         const std::vector<int>& labels, const ModelConfig& config);

struct TrainConfig {
  double lr = 1e-4;
  int warmup_steps = 100;
  int batch_size = 8;
  int max_epochs = 50;
  int patience = 10;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup to lr over warmup_steps, then cosine annealing to zero at
/// total_steps. When total_steps <= warmup_steps the schedule is warmup only.
double lr_at(int step, const TrainConfig& config, int total_steps);

/// max_epochs * ceil(n_train / batch_size).
int total_steps_for(const TrainConfig& config, std::size_t n_train);

/// Patience counter over strictly improving validation losses.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records one epoch; true when training should stop.
  bool update(double val_loss);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  int wait_ = 0;
  int epochs_ = 0;
  int best_epoch_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

struct LabeledSequence {
  embed::MultimodalSequence sequence;
  Label label = Label::HC;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainedModel {
  ModelConfig config;
  std::vector<double> parameters;
  int best_epoch = 0;
  std::vector<double> val_loss_history;
  std::vector<EpochRecord> curve;
};

struct TrainHooks {
  /// Replaces the computed validation loss of an epoch (1-based).
  std::function<double(int epoch, double computed)> val_loss;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Throws ConfigError on empty sets.
TrainedModel train(const ModelConfig& model_config, const TrainConfig& train_config,
                   const std::vector<LabeledSequence>& train_set,
                   const std::vector<LabeledSequence>& val_set,
                   const TrainHooks& hooks = {});

struct PredictResult {
  Label label = Label::HC;
  double probability = 0.0;
};

/// MCI iff sigmoid(logit) >= 0.5.
PredictResult predict(const TrainedModel& model, const embed::MultimodalSequence& z);

/// `<stem>.bin` holds the parameters, `<stem>.json` the config and history.
void save_checkpoint(const std::filesystem::path& stem, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& stem);
/// Rows "epoch,train_loss,val_loss,lr".
void write_curve_csv(const std::filesystem::path& path, const TrainedModel& model);

}  // namespace cogtipro::ts
