#include "fedsplit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

#include "fedsplit/errors.hpp"
#include "fedsplit/rng.hpp"

namespace fedsplit {

bool DenseLayer::operator==(const DenseLayer& other) const {
  return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
         bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
}

ModelParams::ModelParams(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) {
    throw ShapeMismatch("ModelParams: at least one layer is required");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.rows() != layers_[l].bias.size()) {
      throw ShapeMismatch("ModelParams: layer " + std::to_string(l) + " bias does not match weight rows");
    }
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
      throw ShapeMismatch("ModelParams: layer " + std::to_string(l) + " does not chain");
    }
  }
}

ModelParams ModelParams::random_init(const Architecture& arch, std::uint64_t seed) {
  if (arch.input_dim <= 0 || arch.n_classes < 2 || arch.hidden_units < 0) {
    throw InvalidArgument("random_init: invalid architecture");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto make = [&](int out, int in) {
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) {
        layer.weight(i, j) = 0.1 * scale * normal(rng);
      }
    }
    return layer;
  };
  std::vector<DenseLayer> layers;
  if (arch.hidden_units > 0) {
    layers.push_back(make(arch.hidden_units, arch.input_dim));
    layers.push_back(make(arch.n_classes, arch.hidden_units));
  } else {
    layers.push_back(make(arch.n_classes, arch.input_dim));
  }
  return ModelParams(std::move(layers));
}

ModelParams ModelParams::zeros_like(const ModelParams& shape) {
  std::vector<DenseLayer> layers;
  for (const auto& l : shape.layers_) {
    layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                      Eigen::VectorXd::Zero(l.bias.size())});
  }
  return ModelParams(std::move(layers));
}

int ModelParams::input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
int ModelParams::n_classes() const { return static_cast<int>(layers_.back().weight.rows()); }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

bool ModelParams::same_shape(const ModelParams& other) const {
  if (layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.rows() != other.layers_[l].weight.rows() ||
        layers_[l].weight.cols() != other.layers_[l].weight.cols()) {
      return false;
    }
  }
  return true;
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  if (!same_shape(other)) {
    throw ShapeMismatch("add_scaled: parameter shapes differ");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight += scale * other.layers_[l].weight;
    layers_[l].bias += scale * other.layers_[l].bias;
  }
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers_) {
    s += l.weight.squaredNorm() + l.bias.squaredNorm();
  }
  return s;
}

bool ModelParams::operator==(const ModelParams& other) const { return layers_ == other.layers_; }

double GradientUpdate::weight_norm() const { return frobenius_norm(delta_weight); }
double GradientUpdate::bias_norm() const { return frobenius_norm(delta_bias); }

double frobenius_norm(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (!m.allFinite()) {
    throw NonFiniteInput("frobenius_norm: matrix has non-finite entries");
  }
  return m.size() == 0 ? 0.0 : std::sqrt(m.squaredNorm());
}

double update_magnitude(const Eigen::MatrixXd& delta_weight, const Eigen::VectorXd& delta_bias) {
  if (delta_weight.rows() != delta_bias.size()) {
    throw ShapeMismatch("update_magnitude: bias delta does not match weight delta rows");
  }
  const double w = frobenius_norm(delta_weight);
  const double b = frobenius_norm(delta_bias);
  return std::sqrt(w * w + b * b);
}

double update_magnitude(const GradientUpdate& update) {
  return update_magnitude(update.delta_weight, update.delta_bias);
}

GradientUpdate final_layer_update(const ModelParams& global, const ModelParams& local) {
  if (!global.same_shape(local)) {
    throw ShapeMismatch("final_layer_update: global and local shapes differ");
  }
  GradientUpdate update;
  update.delta_weight = global.final_layer().weight - local.final_layer().weight;
  update.delta_bias = global.final_layer().bias - local.final_layer().bias;
  update.magnitude = update_magnitude(update);
  return update;
}

namespace {

// Per-layer inputs; activations[0] is the data, activations[l] feeds layer l.
struct Forward {
  std::vector<Eigen::MatrixXd> activations;
  Eigen::MatrixXd logits;
};

Forward forward(const ModelParams& params, const Eigen::MatrixXd& features) {
  if (features.cols() != params.input_dim()) {
    throw ShapeMismatch("forward: feature dimension " + std::to_string(features.cols()) +
                        " does not match model input " + std::to_string(params.input_dim()));
  }
  Forward f;
  const auto layers = params.layers();
  f.activations.reserve(layers.size());
  f.activations.push_back(features);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = f.activations.back() * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    if (l + 1 == layers.size()) {
      f.logits = std::move(z);
    } else {
      f.activations.push_back(z.array().tanh().matrix());
    }
  }
  return f;
}

// Returns row-wise softmax probabilities; adds the mean cross-entropy to `loss`.
Eigen::MatrixXd softmax_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                      double& loss) {
  const Eigen::Index n = logits.rows();
  Eigen::MatrixXd probs(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd shifted = logits.row(i).array() - top;
    const double log_z = std::log(shifted.array().exp().sum());
    probs.row(i) = (shifted.array() - log_z).exp().matrix();
    total += log_z - shifted(labels[static_cast<std::size_t>(i)]);
  }
  loss += total / static_cast<double>(n);
  return probs;
}

}  // namespace

Eigen::MatrixXd predict_logits(const ModelParams& params, const Eigen::MatrixXd& features) {
  return forward(params, features).logits;
}

LossAndGradient loss_and_gradient(const ModelParams& params, const Eigen::MatrixXd& features,
                                  std::span<const int> labels, const ModelParams* anchor,
                                  double mu) {
  if (features.rows() == 0 || static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidArgument("loss_and_gradient: need a non-empty batch with one label per row");
  }
  const Forward f = forward(params, features);
  LossAndGradient out;
  out.gradient = ModelParams::zeros_like(params);
  Eigen::MatrixXd delta = softmax_cross_entropy(f.logits, labels, out.loss);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    delta(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  }
  delta /= static_cast<double>(labels.size());

  const auto layers = params.layers();
  auto grads = out.gradient.layers();
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads[l].weight = delta.transpose() * f.activations[l];
    grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = (delta * layers[l].weight).cwiseProduct(
          (1.0 - f.activations[l].array().square()).matrix());
    }
  }

  if (anchor != nullptr && mu != 0.0) {
    if (!anchor->same_shape(params)) {
      throw ShapeMismatch("loss_and_gradient: anchor shape differs from params");
    }
    ModelParams diff = params;
    diff.add_scaled(*anchor, -1.0);
    out.loss += 0.5 * mu * diff.squared_norm();
    out.gradient.add_scaled(diff, mu);
  }
  return out;
}

double dataset_loss(const ModelParams& params, const LabeledDataset& data) {
  if (data.empty()) {
    throw InvalidArgument("dataset_loss: empty dataset");
  }
  double loss = 0.0;
  softmax_cross_entropy(predict_logits(params, data.features), data.labels, loss);
  return loss;
}

LocalTrainResult local_train(const ModelParams& global, const LabeledDataset& data,
                             const TrainConfig& cfg) {
  if (data.empty()) {
    throw InvalidArgument("local_train: empty training data");
  }
  if (!global.all_finite()) {
    throw NonFiniteInput("local_train: global parameters are not finite");
  }
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || cfg.learning_rate < 0.0 || cfg.mu < 0.0) {
    throw InvalidArgument("local_train: invalid training configuration");
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEpsilon = 1e-8;

  ModelParams params = global;
  const ModelParams* anchor = cfg.mu > 0.0 ? &global : nullptr;
  ModelParams adam_m;
  ModelParams adam_v;
  if (cfg.optimizer == Optimizer::adam) {
    adam_m = ModelParams::zeros_like(global);
    adam_v = ModelParams::zeros_like(global);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  std::size_t step = 0;
  double last_epoch_loss = 0.0;
  Eigen::MatrixXd xb;
  std::vector<int> yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      xb.resize(static_cast<Eigen::Index>(end - start), data.features.cols());
      yb.resize(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) =
            data.features.row(static_cast<Eigen::Index>(order[i]));
        yb[i - start] = data.labels[order[i]];
      }
      LossAndGradient lg = loss_and_gradient(params, xb, yb, anchor, cfg.mu);
      if (!std::isfinite(lg.loss) || !lg.gradient.all_finite()) {
        throw TrainingDiverged(step);
      }
      if (anchor != nullptr) {
        // Report the data term only.
        ModelParams diff = params;
        diff.add_scaled(global, -1.0);
        lg.loss -= 0.5 * cfg.mu * diff.squared_norm();
      }
      epoch_loss += lg.loss * static_cast<double>(end - start);

      if (cfg.optimizer == Optimizer::sgd) {
        params.add_scaled(lg.gradient, -cfg.learning_rate);
      } else {
        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(kBeta1, t);
        const double c2 = 1.0 - std::pow(kBeta2, t);
        auto p = params.layers();
        auto g = lg.gradient.layers();
        auto m = adam_m.layers();
        auto v = adam_v.layers();
        for (std::size_t l = 0; l < p.size(); ++l) {
          m[l].weight = kBeta1 * m[l].weight + (1.0 - kBeta1) * g[l].weight;
          m[l].bias = kBeta1 * m[l].bias + (1.0 - kBeta1) * g[l].bias;
          v[l].weight = kBeta2 * v[l].weight + (1.0 - kBeta2) * g[l].weight.cwiseAbs2();
          v[l].bias = kBeta2 * v[l].bias + (1.0 - kBeta2) * g[l].bias.cwiseAbs2();
          p[l].weight.array() -= cfg.learning_rate * (m[l].weight.array() / c1) /
                                 ((v[l].weight.array() / c2).sqrt() + kEpsilon);
          p[l].bias.array() -= cfg.learning_rate * (m[l].bias.array() / c1) /
                               ((v[l].bias.array() / c2).sqrt() + kEpsilon);
        }
      }
      if (!params.all_finite()) {
        throw TrainingDiverged(step);
      }
      ++step;
    }
    last_epoch_loss = epoch_loss / static_cast<double>(order.size());
  }

  LocalTrainResult result;
  result.update = final_layer_update(global, params);
  // Re-derive the final layer from the delta so that
  // global - delta reproduces the local final layer bit for bit.
  params.final_layer().weight = global.final_layer().weight - result.update.delta_weight;
  params.final_layer().bias = global.final_layer().bias - result.update.delta_bias;
  result.local = std::move(params);
  result.avg_loss = last_epoch_loss;
  return result;
}

double evaluate(const ModelParams& params, std::span<const LabeledDataset* const> tests) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const LabeledDataset* test : tests) {
    if (test == nullptr || test->empty()) {
      continue;
    }
    const Eigen::MatrixXd logits = predict_logits(params, test->features);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      if (best == test->labels[static_cast<std::size_t>(i)]) {
        ++correct;
      }
    }
    total += test->size();
  }
  if (total == 0) {
    throw EmptyTestSet("evaluate: no test samples across the given datasets");
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate(const ModelParams& params, const LabeledDataset& test) {
  const LabeledDataset* one[] = {&test};
  return evaluate(params, one);
}

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + 8 > in.size()) {
    throw ShapeMismatch("deserialize_params: buffer truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(in[pos + static_cast<std::size_t>(i)]) << (8 * i);
  }
  pos += 8;
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 16 * params.layer_count() + 8 * params.parameter_count());
  put_u64(out, params.layer_count());
  for (const auto& l : params.layers()) {
    put_u64(out, static_cast<std::uint64_t>(l.weight.rows()));
    put_u64(out, static_cast<std::uint64_t>(l.weight.cols()));
  }
  for (const auto& l : params.layers()) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
        put_u64(out, std::bit_cast<std::uint64_t>(l.weight(i, j)));
      }
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      put_u64(out, std::bit_cast<std::uint64_t>(l.bias(i)));
    }
  }
  return out;
}

ModelParams deserialize_params(std::span<const std::uint8_t> buffer) {
  std::size_t pos = 0;
  const std::uint64_t count = get_u64(buffer, pos);
  if (count == 0 || count > 1024) {
    throw ShapeMismatch("deserialize_params: implausible layer count");
  }
  std::vector<DenseLayer> layers(count);
  for (auto& l : layers) {
    const auto rows = get_u64(buffer, pos);
    const auto cols = get_u64(buffer, pos);
    if (rows == 0 || cols == 0 || rows * cols > buffer.size()) {
      throw ShapeMismatch("deserialize_params: implausible layer dims");
    }
    l.weight.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    l.bias.resize(static_cast<Eigen::Index>(rows));
  }
  for (auto& l : layers) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
        l.weight(i, j) = std::bit_cast<double>(get_u64(buffer, pos));
      }
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      l.bias(i) = std::bit_cast<double>(get_u64(buffer, pos));
    }
  }
  if (pos != buffer.size()) {
    throw ShapeMismatch("deserialize_params: trailing bytes");
  }
  return ModelParams(std::move(layers));
}

}  // namespace fedsplit
