#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedsplit/datagen.hpp"

namespace fedsplit {

/// Affine layer: out = weight * in + bias. weight is (out_dim x in_dim).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  bool operator==(const DenseLayer& other) const;
};

/// Layer sizes. hidden_units == 0 gives softmax regression; otherwise one
/// tanh hidden layer sits in front of the classification layer.
struct Architecture {
  int input_dim = 0;
  int hidden_units = 0;
  int n_classes = 0;
};

class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(std::vector<DenseLayer> layers);

  /// Small random weights (scaled normal), zero biases.
  static ModelParams random_init(const Architecture& arch, std::uint64_t seed);
  static ModelParams zeros_like(const ModelParams& shape);

  std::span<DenseLayer> layers() { return layers_; }
  std::span<const DenseLayer> layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }

  DenseLayer& final_layer() { return layers_.back(); }
  const DenseLayer& final_layer() const { return layers_.back(); }

  int input_dim() const;
  int n_classes() const;
  std::size_t parameter_count() const;

  bool all_finite() const;
  bool same_shape(const ModelParams& other) const;

  /// this += scale * other (shapes must match).
  void add_scaled(const ModelParams& other, double scale);
  /// Sum of squared entries over every layer.
  double squared_norm() const;

  bool operator==(const ModelParams& other) const;

 private:
  std::vector<DenseLayer> layers_;
};

/// Final-layer parameter change over one local-training run:
/// delta = final_layer(global) - final_layer(local).
struct GradientUpdate {
  Eigen::MatrixXd delta_weight;
  Eigen::VectorXd delta_bias;
  double magnitude = 0.0;

  double weight_norm() const;
  double bias_norm() const;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  int epochs = 2;
  int batch_size = 64;
  double learning_rate = 0.001;
  double lr_decay = 0.5;
  int decay_every = 10;
  double mu = 0.0;
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 0;
};

/// sqrt(sum of squared entries). Throws NonFiniteInput on NaN/Inf.
double frobenius_norm(const Eigen::Ref<const Eigen::MatrixXd>& m);

/// sqrt(||dW||_F^2 + ||db||_F^2).
double update_magnitude(const Eigen::MatrixXd& delta_weight, const Eigen::VectorXd& delta_bias);
double update_magnitude(const GradientUpdate& update);

GradientUpdate final_layer_update(const ModelParams& global, const ModelParams& local);

/// Mean cross-entropy over the rows of `features`, plus (mu/2)||theta - anchor||^2
/// when an anchor is given, together with its gradient.
struct LossAndGradient {
  double loss = 0.0;
  ModelParams gradient;
};
LossAndGradient loss_and_gradient(const ModelParams& params, const Eigen::MatrixXd& features,
                                  std::span<const int> labels, const ModelParams* anchor = nullptr,
                                  double mu = 0.0);

/// Mean cross-entropy of `params` on a dataset (no proximal term).
double dataset_loss(const ModelParams& params, const LabeledDataset& data);

/// Row-wise class scores (pre-softmax).
Eigen::MatrixXd predict_logits(const ModelParams& params, const Eigen::MatrixXd& features);

struct LocalTrainResult {
  ModelParams local;
  /// Mean cross-entropy over the batches of the last epoch, sample-weighted.
  double avg_loss = 0.0;
  GradientUpdate update;
};

/// Mini-batch training from `global`. With cfg.mu > 0 the FedProx proximal
/// term anchors to `global`. Batch order comes from cfg.seed only.
LocalTrainResult local_train(const ModelParams& global, const LabeledDataset& data,
                             const TrainConfig& cfg);

/// Pooled accuracy: correct predictions over total samples across datasets.
double evaluate(const ModelParams& params, std::span<const LabeledDataset* const> tests);
double evaluate(const ModelParams& params, const LabeledDataset& test);

/// Little-endian checkpoint buffer:
///   u64 layer_count, then per layer u64 out_dim, u64 in_dim,
///   then per layer out_dim*in_dim f64 weights (row-major) followed by out_dim f64 biases.
std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(std::span<const std::uint8_t> buffer);

}  // namespace fedsplit
