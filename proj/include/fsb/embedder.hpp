#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fsb/binary_io.hpp"
#include "fsb/datasets.hpp"
#include "fsb/errors.hpp"
#include "fsb/numerics.hpp"

namespace fsb {

enum class HeadKind : std::uint32_t {
  multi_way = 1,   // softmax over all merged classes
  one_vs_all = 2,  // independent sigmoid per class
};

struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths{128, 64};
  std::size_t num_train_classes = 0;

  void validate() const {
    if (input_dim < 1) throw InvalidInput("mlp config: input_dim must be >= 1");
    if (hidden_widths.empty()) throw InvalidInput("mlp config: hidden_widths must be non-empty");
    for (auto w : hidden_widths) {
      if (w < 1) throw InvalidInput("mlp config: hidden widths must be >= 1");
    }
    if (num_train_classes < 1) throw InvalidInput("mlp config: num_train_classes must be >= 1");
  }

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Affine map y = x W + b with W stored input-major (rows = fan-in).
struct DenseLayer {
  DenseMatrix weights;
  std::vector<double> bias;

  std::size_t fan_in() const noexcept { return weights.rows(); }
  std::size_t fan_out() const noexcept { return weights.cols(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// ReLU trunk followed by a linear classification head (the last layer).
struct EmbeddingModel {
  std::vector<DenseLayer> layers;
  HeadKind head = HeadKind::multi_way;

  std::size_t input_dim() const { return layers.front().fan_in(); }
  std::size_t feature_dim() const { return layers.back().fan_in(); }
  std::size_t num_classes() const { return layers.back().fan_out(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  MlpConfig config() const {
    MlpConfig c;
    c.input_dim = input_dim();
    c.hidden_widths.clear();
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) c.hidden_widths.push_back(layers[i].fan_out());
    c.num_train_classes = num_classes();
    return c;
  }

  /// FNV-1a over every parameter's bit pattern, layer by layer.
  std::uint64_t checksum() const {
    Checksum h;
    h.add_u64(static_cast<std::uint64_t>(head));
    for (const auto& l : layers) {
      h.add(l.weights.data());
      h.add(l.bias);
    }
    return h.value();
  }

  friend bool operator==(const EmbeddingModel&, const EmbeddingModel&) = default;
};

/// He-normal weights (variance 2 / fan_in), zero biases.
inline EmbeddingModel init_model(const MlpConfig& config, std::uint64_t seed, HeadKind head = HeadKind::multi_way) {
  config.validate();
  SeededRng rng(seed);
  EmbeddingModel m;
  m.head = head;
  std::size_t in = config.input_dim;
  std::vector<std::size_t> widths = config.hidden_widths;
  widths.push_back(config.num_train_classes);
  for (std::size_t out : widths) {
    DenseLayer l{DenseMatrix(in, out), std::vector<double>(out, 0.0)};
    const double sigma = std::sqrt(2.0 / static_cast<double>(in));
    for (double& w : l.weights.data()) w = rng.normal(0.0, sigma);
    m.layers.push_back(std::move(l));
    in = out;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline DenseMatrix affine(const DenseMatrix& x, const DenseLayer& layer) {
  const std::size_t n = x.rows(), in = layer.fan_in(), out = layer.fan_out();
  DenseMatrix y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = y.row(i).data();
    std::copy(layer.bias.begin(), layer.bias.end(), yr);
    const double* xr = x.row(i).data();
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xr[k];
      if (a == 0.0) continue;
      const double* wr = layer.weights.row(k).data();
      for (std::size_t j = 0; j < out; ++j) yr[j] += a * wr[j];
    }
  }
  return y;
}

inline void relu_inplace(DenseMatrix& m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

inline void require_input_dim(const EmbeddingModel& model, const DenseMatrix& batch) {
  if (model.layers.empty()) throw InvalidInput("model has no layers");
  if (batch.cols() != model.input_dim()) {
    throw InvalidInput("batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                       std::to_string(model.input_dim()));
  }
}

}  // namespace detail

/// Post-activation outputs of every trunk layer; activations[0] is the input.
struct ForwardCache {
  std::vector<DenseMatrix> activations;
};

struct ForwardResult {
  DenseMatrix logits;
  ForwardCache cache;
};

inline ForwardResult forward(const EmbeddingModel& model, const DenseMatrix& batch) {
  detail::require_input_dim(model, batch);
  ForwardResult r;
  r.cache.activations.reserve(model.layers.size());
  r.cache.activations.push_back(batch);
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    DenseMatrix h = detail::affine(r.cache.activations.back(), model.layers[l]);
    detail::relu_inplace(h);
    r.cache.activations.push_back(std::move(h));
  }
  r.logits = detail::affine(r.cache.activations.back(), model.layers.back());
  return r;
}

/// Penultimate-layer output (after the last ReLU). The head is not evaluated.
inline DenseMatrix features(const EmbeddingModel& model, const DenseMatrix& batch) {
  detail::require_input_dim(model, batch);
  DenseMatrix h = batch;
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    h = detail::affine(h, model.layers[l]);
    detail::relu_inplace(h);
  }
  return h;
}

inline DenseMatrix logits(const EmbeddingModel& model, const DenseMatrix& batch) {
  return forward(model, batch).logits;
}

/// Gradient set with the same shapes as the model's parameters.
struct Gradients {
  std::vector<DenseMatrix> weights;
  std::vector<std::vector<double>> bias;
};

/// Backpropagates d(loss)/d(logits) through the network.
inline Gradients backward_from_logit_grad(const EmbeddingModel& model, const ForwardCache& cache,
                                          DenseMatrix dlogits) {
  const std::size_t num_layers = model.layers.size();
  if (cache.activations.size() != num_layers) throw InvalidInput("backward: stale cache (layer count)");
  const std::size_t n = dlogits.rows();
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& a = cache.activations[l];
    if (a.rows() != n || a.cols() != model.layers[l].fan_in()) {
      throw InvalidInput("backward: stale cache (shape mismatch at layer " + std::to_string(l) + ")");
    }
  }
  if (dlogits.cols() != model.num_classes()) throw InvalidInput("backward: logit gradient has wrong width");

  Gradients g;
  g.weights.resize(num_layers);
  g.bias.resize(num_layers);
  DenseMatrix delta = std::move(dlogits);
  for (std::size_t l = num_layers; l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& a = cache.activations[l];
    const std::size_t in = layer.fan_in(), out = layer.fan_out();
    DenseMatrix gw(in, out);
    std::vector<double> gb(out, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* dr = delta.row(i).data();
      const double* ar = a.row(i).data();
      for (std::size_t j = 0; j < out; ++j) gb[j] += dr[j];
      for (std::size_t k = 0; k < in; ++k) {
        const double av = ar[k];
        if (av == 0.0) continue;
        double* gr = gw.row(k).data();
        for (std::size_t j = 0; j < out; ++j) gr[j] += av * dr[j];
      }
    }
    g.weights[l] = std::move(gw);
    g.bias[l] = std::move(gb);
    if (l == 0) break;
    // Propagate into the previous post-ReLU activation; the ReLU mask is a > 0.
    DenseMatrix prev(n, in);
    for (std::size_t i = 0; i < n; ++i) {
      const double* dr = delta.row(i).data();
      const double* ar = a.row(i).data();
      double* pr = prev.row(i).data();
      for (std::size_t k = 0; k < in; ++k) {
        if (ar[k] <= 0.0) continue;
        const double* wr = layer.weights.row(k).data();
        double s = 0.0;
        for (std::size_t j = 0; j < out; ++j) s += wr[j] * dr[j];
        pr[k] = s;
      }
    }
    delta = std::move(prev);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Losses on a batch of logits. Each returns the batch-mean loss and its
// gradient with respect to the logits.
// ---------------------------------------------------------------------------

struct BatchLoss {
  double loss = 0.0;
  DenseMatrix dlogits;
};

inline BatchLoss softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw InvalidInput("cross entropy: label count mismatch");
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  BatchLoss r{0.0, DenseMatrix(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    r.loss += cross_entropy(z, labels[i]);
    auto p = softmax(z);
    p[labels[i]] -= 1.0;
    auto d = r.dlogits.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) d[j] = p[j] * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// One-vs-all binary cross-entropy, averaged over heads and batch rows.
inline BatchLoss one_vs_all_bce(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw InvalidInput("bce: label count mismatch");
  const std::size_t c = logits.cols();
  for (std::size_t y : labels) {
    if (y >= c) throw InvalidInput("bce: label out of range");
  }
  const double scale = 1.0 / static_cast<double>(logits.rows() * c);
  BatchLoss r{0.0, DenseMatrix(logits.rows(), c)};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double z = logits(i, j);
      const double t = labels[i] == j ? 1.0 : 0.0;
      r.loss += softplus(z) - t * z;
      r.dlogits(i, j) = (sigmoid(z) - t) * scale;
    }
  }
  r.loss *= scale;
  return r;
}

/// Loss of the model's own head type.
inline BatchLoss head_loss(const EmbeddingModel& model, const DenseMatrix& logits, std::span<const std::size_t> labels) {
  return model.head == HeadKind::one_vs_all ? one_vs_all_bce(logits, labels) : softmax_cross_entropy(logits, labels);
}

/// Gradient of the mean cross-entropy (or one-vs-all BCE for one-vs-all heads)
/// over the batch with respect to every parameter.
inline Gradients backward(const EmbeddingModel& model, const ForwardCache& cache, const DenseMatrix& logits,
                          std::span<const std::size_t> labels) {
  if (logits.rows() != labels.size()) throw InvalidInput("backward: label count mismatch");
  return backward_from_logit_grad(model, cache, head_loss(model, logits, labels).dlogits);
}

/// Flattened parameter / gradient views in layer order: W then b per layer.
inline std::vector<double> flatten(const EmbeddingModel& m) {
  std::vector<double> out;
  out.reserve(m.parameter_count());
  for (const auto& l : m.layers) {
    out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

inline void unflatten(EmbeddingModel& m, std::span<const double> params) {
  if (params.size() != m.parameter_count()) throw InvalidInput("unflatten: parameter count mismatch");
  std::size_t k = 0;
  for (auto& l : m.layers) {
    for (double& w : l.weights.data()) w = params[k++];
    for (double& b : l.bias) b = params[k++];
  }
}

inline std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.insert(out.end(), g.weights[l].data().begin(), g.weights[l].data().end());
    out.insert(out.end(), g.bias[l].begin(), g.bias[l].end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  std::vector<std::size_t> decay_epochs{15, 22, 27};
  double decay_factor = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    // lr = 0 is accepted and freezes the parameters.
    if (!(learning_rate >= 0.0)) throw InvalidInput("train config: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("train config: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidInput("train config: weight_decay must be >= 0");
    if (batch_size < 1) throw InvalidInput("train config: batch_size must be >= 1");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) {
        throw InvalidInput("train config: decay_epochs must be strictly increasing");
      }
      if (decay_epochs[i] >= epochs) throw InvalidInput("train config: decay_epochs must be < epochs");
    }
  }

  /// Learning rate in effect during `epoch` (0-based).
  double rate_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (std::size_t e : decay_epochs) {
      if (e <= epoch) lr *= decay_factor;
    }
    return lr;
  }
};

struct TrainReport {
  std::vector<double> epoch_losses;
  double final_train_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  EmbeddingModel model;
  TrainReport report;
};

/// Fraction of rows whose argmax logit equals the label.
inline double training_accuracy(const EmbeddingModel& model, const MergedTask& task) {
  if (task.size() == 0) return 0.0;
  const DenseMatrix z = logits(model, task.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < task.size(); ++i) correct += argmax(z.row(i)) == task.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(task.size());
}

/// Mini-batch SGD with momentum and coupled weight decay:
///   v ← μ v − lr (g + λ p),  p ← p + v.
/// `loss_fn(logits, row_indices)` returns the batch-mean loss and its logit
/// gradient; row_indices index into `task`. Batches follow a per-epoch
/// Fisher–Yates permutation drawn from `config.seed`; the last short batch is kept.
template <typename LossFn>
TrainResult run_sgd(EmbeddingModel model, const MergedTask& task, const TrainConfig& config, LossFn&& loss_fn) {
  config.validate();
  if (task.num_classes() != model.num_classes()) {
    throw InvalidInput("train: task has " + std::to_string(task.num_classes()) + " classes, head has " +
                       std::to_string(model.num_classes()));
  }
  if (task.features.cols() != model.input_dim()) throw InvalidInput("train: task dimension does not match model");
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  std::vector<DenseLayer> velocity;
  for (const auto& l : model.layers) {
    velocity.push_back({DenseMatrix(l.fan_in(), l.fan_out()), std::vector<double>(l.fan_out(), 0.0)});
  }
  SeededRng rng(config.seed);
  std::vector<std::size_t> order(task.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = config.rate_at(epoch);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      ForwardResult f = forward(model, task.features.gather_rows(rows));
      if (!f.logits.all_finite()) {
        throw DivergedTraining("training diverged: non-finite logits in epoch " + std::to_string(epoch), static_cast<int>(epoch));
      }
      BatchLoss bl = loss_fn(f.logits, rows);
      if (!std::isfinite(bl.loss)) {
        throw DivergedTraining("training diverged: non-finite loss in epoch " + std::to_string(epoch), static_cast<int>(epoch));
      }
      loss_sum += bl.loss * static_cast<double>(rows.size());
      Gradients g = backward_from_logit_grad(model, f.cache, std::move(bl.dlogits));
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto p = model.layers[l].weights.data();
        auto v = velocity[l].weights.data();
        auto gw = g.weights[l].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
          v[k] = config.momentum * v[k] - lr * (gw[k] + config.weight_decay * p[k]);
          p[k] += v[k];
        }
        auto& pb = model.layers[l].bias;
        auto& vb = velocity[l].bias;
        for (std::size_t k = 0; k < pb.size(); ++k) {
          vb[k] = config.momentum * vb[k] - lr * (g.bias[l][k] + config.weight_decay * pb[k]);
          pb[k] += vb[k];
        }
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(order.size(), 1));
    if (!std::isfinite(mean_loss)) {
      throw DivergedTraining("training diverged: non-finite loss in epoch " + std::to_string(epoch), static_cast<int>(epoch));
    }
    result.report.epoch_losses.push_back(mean_loss);
  }
  result.report.final_train_accuracy = training_accuracy(model, task);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.model = std::move(model);
  return result;
}

/// Multi-way classification on the merged task (softmax + cross-entropy).
inline TrainResult train_classifier(EmbeddingModel model, const MergedTask& task, const TrainConfig& config) {
  if (model.head != HeadKind::multi_way) throw InvalidInput("train_classifier: model head is not multi-way");
  return run_sgd(std::move(model), task, config, [&](const DenseMatrix& z, std::span<const std::size_t> rows) {
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = task.labels[rows[i]];
    return softmax_cross_entropy(z, y);
  });
}

/// Shared trunk with one sigmoid head per merged class (one-vs-all BCE).
inline TrainResult train_multitask(const MlpConfig& mlp, std::uint64_t init_seed, const MergedTask& task,
                                   const TrainConfig& config) {
  EmbeddingModel model = init_model(mlp, init_seed, HeadKind::one_vs_all);
  return run_sgd(std::move(model), task, config, [&](const DenseMatrix& z, std::span<const std::size_t> rows) {
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = task.labels[rows[i]];
    return one_vs_all_bce(z, y);
  });
}

// ---------------------------------------------------------------------------
// FSM1 checkpoint: magic, u32 version (= head kind: 1 multi-way, 2 one-vs-all),
// u32 layer count, then per layer [u32 rows, u32 cols, rows×cols f32 weights,
// cols f32 biases]. The final layer is the head.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_model(const EmbeddingModel& m) {
  io::ByteWriter w;
  w.magic("FSM1");
  w.u32(static_cast<std::uint32_t>(m.head));
  w.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    w.u32(static_cast<std::uint32_t>(l.fan_in()));
    w.u32(static_cast<std::uint32_t>(l.fan_out()));
    for (double v : l.weights.data()) w.f32(v);
    for (double v : l.bias) w.f32(v);
  }
  return w.bytes();
}

inline EmbeddingModel decode_model(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("FSM1");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != 1 && version != 2) throw FormatError("unsupported version " + std::to_string(version), version_at);
  EmbeddingModel m;
  m.head = static_cast<HeadKind>(version);
  const std::size_t count_at = r.offset();
  const std::size_t count = r.u32("layer count");
  if (count < 2) throw FormatError("checkpoint needs at least one hidden layer and a head", count_at);
  for (std::size_t l = 0; l < count; ++l) {
    const std::size_t at = r.offset();
    const std::size_t rows = r.u32("layer rows");
    const std::size_t cols = r.u32("layer cols");
    if (rows == 0 || cols == 0) throw FormatError("empty layer", at);
    if (l > 0 && rows != m.layers.back().fan_out()) throw FormatError("layer shapes do not chain", at);
    r.need(4 * (rows * cols + cols), "layer parameters");
    DenseLayer layer{DenseMatrix(rows, cols), std::vector<double>(cols)};
    for (double& v : layer.weights.data()) v = r.f32("weights");
    for (double& v : layer.bias) v = r.f32("biases");
    m.layers.push_back(std::move(layer));
  }
  r.expect_end();
  return m;
}

inline void save_model(const EmbeddingModel& m, const std::filesystem::path& path) {
  io::write_file(path, encode_model(m));
}

inline EmbeddingModel load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

/// The model as it will be after a save/load round trip (parameters rounded to f32).
inline EmbeddingModel round_to_f32(EmbeddingModel m) {
  for (auto& l : m.layers) {
    for (double& v : l.weights.data()) v = static_cast<double>(static_cast<float>(v));
    for (double& v : l.bias) v = static_cast<double>(static_cast<float>(v));
  }
  return m;
}

}  // namespace fsb
