#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsb/datasets.hpp"
#include "fsb/embedder.hpp"
#include "fsb/errors.hpp"
#include "fsb/numerics.hpp"

namespace fsb {

/// Argument order of the distillation KL term.
enum class KlDirection {
  teacher_student,  // KL(teacher ‖ student), the usual KD convention
  student_teacher,  // KL(student ‖ teacher)
};

struct DistillConfig {
  double alpha = 0.5;
  double beta = 0.5;
  double temperature = 4.0;
  std::size_t generations = 2;
  KlDirection direction = KlDirection::teacher_student;
  TrainConfig train;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0)) {
      throw InvalidInput("distill config: need alpha >= 0, beta >= 0, alpha + beta > 0");
    }
    if (!(temperature > 0.0)) throw InvalidInput("distill config: temperature must be > 0");
    if (generations < 1) throw InvalidInput("distill config: generations must be >= 1");
    train.validate();
  }
};

/// Row i = softmax(teacher logits(x_i) / T).
inline DenseMatrix soft_targets(const EmbeddingModel& teacher, const MergedTask& task, double temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("soft_targets: temperature must be > 0");
  if (teacher.num_classes() != task.num_classes()) {
    throw InvalidInput("soft_targets: teacher head does not match task classes");
  }
  DenseMatrix z = logits(teacher, task.features);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto p = softmax_with_temperature(z.row(i), temperature);
    std::copy(p.begin(), p.end(), z.row(i).begin());
  }
  return z;
}

namespace detail {

inline double distill_kl(std::span<const double> teacher, std::span<const double> student, KlDirection dir) {
  return dir == KlDirection::teacher_student ? kl_divergence(teacher, student) : kl_divergence(student, teacher);
}

/// d KL / d u, where student = softmax(u).
inline void distill_kl_grad(std::span<const double> teacher, std::span<const double> student, KlDirection dir,
                            std::span<double> out) {
  const std::size_t c = teacher.size();
  if (dir == KlDirection::teacher_student) {
    for (std::size_t j = 0; j < c; ++j) out[j] = student[j] - teacher[j];
    return;
  }
  std::vector<double> r(c, 0.0);
  double mean = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    if (student[j] <= 0.0) continue;
    r[j] = std::log(student[j]) - std::log(std::max(teacher[j], kKlClamp));
    mean += student[j] * r[j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] = student[j] * (r[j] - mean);
}

}  // namespace detail

/// α·CE(z, y) + β·T²·KL(teacher, softmax(z / T)). The T² factor keeps the
/// gradient scale of the KL term independent of T.
inline double kd_loss(std::span<const double> student_logits, std::size_t label, std::span<const double> teacher_probs,
                      const DistillConfig& config) {
  config.validate();
  if (student_logits.size() != teacher_probs.size()) throw InvalidInput("kd_loss: dimension mismatch");
  double loss = config.alpha * cross_entropy(student_logits, label);
  if (config.beta != 0.0) {
    const auto q = softmax_with_temperature(student_logits, config.temperature);
    const double t = config.temperature;
    loss += config.beta * t * t * detail::distill_kl(teacher_probs, q, config.direction);
  }
  return loss;
}

/// Batch-mean kd_loss and its gradient with respect to the student logits.
/// `teacher_probs` holds one soft-target row per logit row.
inline BatchLoss kd_batch_loss(const DenseMatrix& student_logits, std::span<const std::size_t> labels,
                               const DenseMatrix& teacher_probs, const DistillConfig& config) {
  const std::size_t n = student_logits.rows(), c = student_logits.cols();
  if (labels.size() != n || teacher_probs.rows() != n || teacher_probs.cols() != c) {
    throw InvalidInput("kd loss: batch shapes disagree");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double t = config.temperature;
  BatchLoss r{0.0, DenseMatrix(n, c)};
  std::vector<double> kl_grad(c);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = student_logits.row(i);
    double loss = config.alpha * cross_entropy(z, labels[i]);
    auto p = softmax(z);
    p[labels[i]] -= 1.0;
    for (double& v : p) v *= config.alpha;
    if (config.beta != 0.0) {
      const auto q = softmax_with_temperature(z, t);
      loss += config.beta * t * t * detail::distill_kl(teacher_probs.row(i), q, config.direction);
      // d/dz of β T² KL(·, softmax(z/T)) = β T · dKL/du.
      detail::distill_kl_grad(teacher_probs.row(i), q, config.direction, kl_grad);
      for (std::size_t j = 0; j < c; ++j) p[j] += config.beta * t * kl_grad[j];
    }
    r.loss += loss;
    auto d = r.dlogits.row(i);
    for (std::size_t j = 0; j < c; ++j) d[j] = p[j] * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

/// Trains a freshly initialized student (seeded by `seed`) against the
/// teacher's fixed soft targets. The teacher is only read.
inline TrainResult distill_generation(const EmbeddingModel& teacher, const MergedTask& task, const MlpConfig& mlp,
                                      const DistillConfig& config, std::uint64_t seed) {
  config.validate();
  if (teacher.config() != mlp) throw InvalidInput("distill: teacher architecture does not match mlp config");
  const DenseMatrix targets = soft_targets(teacher, task, config.temperature);
  EmbeddingModel student = init_model(mlp, seed);
  return run_sgd(std::move(student), task, config.train, [&](const DenseMatrix& z, std::span<const std::size_t> rows) {
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = task.labels[rows[i]];
    return kd_batch_loss(z, y, targets.gather_rows(rows), config);
  });
}

/// Mean over the task of KL(teacher soft targets, student at temperature T).
inline double mean_distill_kl(const EmbeddingModel& student, const DenseMatrix& targets, const MergedTask& task,
                              const DistillConfig& config) {
  const DenseMatrix z = logits(student, task.features);
  double s = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    s += detail::distill_kl(targets.row(i), softmax_with_temperature(z.row(i), config.temperature), config.direction);
  }
  return s / static_cast<double>(std::max<std::size_t>(z.rows(), 1));
}

/// Generation 0 is the vanilla cross-entropy model; generation k is distilled from k−1.
struct GenerationChain {
  std::vector<EmbeddingModel> models;
  std::vector<TrainReport> reports;
  std::vector<double> val_accuracy;
  std::size_t selected_index = 0;

  const EmbeddingModel& selected() const { return models.at(selected_index); }
};

/// Seed used to initialize generation `k` of a chain rooted at `seed`.
inline std::uint64_t generation_seed(std::uint64_t seed, std::size_t k) { return derive_seed(seed, k); }

/// Argmax with ties resolved to the earliest index.
inline std::size_t select_generation(std::span<const double> val_accuracy) {
  if (val_accuracy.empty()) throw InvalidInput("select_generation: empty accuracy list");
  return argmax(val_accuracy);
}

/// Born-again chain. `val_accuracy(model)` scores a finished generation on
/// meta-validation episodes. When `generation0` is given it is used as the
/// root instead of training one.
template <typename ValFn>
GenerationChain sequential_distill(const MergedTask& task, const MlpConfig& mlp, const DistillConfig& config,
                                   std::uint64_t seed, ValFn&& val_accuracy,
                                   std::optional<EmbeddingModel> generation0 = std::nullopt) {
  config.validate();
  GenerationChain chain;
  if (generation0) {
    if (generation0->config() != mlp) throw InvalidInput("distill: generation 0 architecture does not match config");
    chain.models.push_back(std::move(*generation0));
    chain.reports.emplace_back();
  } else {
    try {
      auto r = train_classifier(init_model(mlp, generation_seed(seed, 0)), task, config.train);
      chain.models.push_back(std::move(r.model));
      chain.reports.push_back(std::move(r.report));
    } catch (const DivergedTraining& e) {
      throw DivergedTraining(std::string("generation 0: ") + e.what(), e.epoch(), 0);
    }
  }
  chain.val_accuracy.push_back(val_accuracy(chain.models.back()));
  for (std::size_t k = 1; k <= config.generations; ++k) {
    try {
      auto r = distill_generation(chain.models.back(), task, mlp, config, generation_seed(seed, k));
      chain.models.push_back(std::move(r.model));
      chain.reports.push_back(std::move(r.report));
    } catch (const DivergedTraining& e) {
      throw DivergedTraining("generation " + std::to_string(k) + ": " + e.what(), e.epoch(), static_cast<int>(k));
    }
    chain.val_accuracy.push_back(val_accuracy(chain.models.back()));
  }
  chain.selected_index = select_generation(chain.val_accuracy);
  return chain;
}

}  // namespace fsb
