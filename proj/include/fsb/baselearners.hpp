#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fsb/embedder.hpp"
#include "fsb/episodes.hpp"
#include "fsb/errors.hpp"
#include "fsb/numerics.hpp"

namespace fsb {

enum class LearnerKind { logistic_regression, linear_svm, nearest_centroid_l2, nearest_centroid_cosine };

struct BaseLearnerConfig {
  LearnerKind kind = LearnerKind::logistic_regression;
  bool normalize = false;
  std::size_t augment_copies = 0;
  double augment_sigma_scale = 0.1;
  double lambda = 1.0;
  double solver_tol = 1e-6;
  std::size_t solver_max_iters = 1000;
  bool regularize_bias = false;

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidInput("base learner: lambda must be >= 0");
    if (!(solver_tol > 0.0)) throw InvalidInput("base learner: solver_tol must be > 0");
    if (!(augment_sigma_scale >= 0.0)) throw InvalidInput("base learner: augment_sigma_scale must be >= 0");
  }

  friend bool operator==(const BaseLearnerConfig&, const BaseLearnerConfig&) = default;
};

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

template <typename E>
concept FeatureExtractor = requires(const E& e, const DenseMatrix& x) {
  { e.features(x) } -> std::convertible_to<DenseMatrix>;
};

/// Frozen embedding: penultimate-layer features of a trained model.
struct ModelFeatures {
  const EmbeddingModel* model;
  DenseMatrix features(const DenseMatrix& x) const { return fsb::features(*model, x); }
};

/// Inputs are already features (e.g. rows of an embedding cache).
struct IdentityFeatures {
  DenseMatrix features(const DenseMatrix& x) const { return x; }
};

struct SupportSet {
  DenseMatrix features;
  std::vector<std::size_t> labels;
};

/// Support features for the base learner. With augment_copies = m, every
/// support input is followed by m copies perturbed with Gaussian noise whose
/// per-dimension σ is augment_sigma_scale × the support set's per-dimension
/// standard deviation; features are extracted from the perturbed inputs.
template <FeatureExtractor E>
SupportSet preprocess_support(const Episode& episode, const E& extractor, const BaseLearnerConfig& config,
                              SeededRng& rng) {
  const DenseMatrix& x = episode.support_features;
  SupportSet s;
  if (config.augment_copies == 0) {
    s.features = extractor.features(x);
    s.labels = episode.support_labels;
  } else {
    const std::size_t n = x.rows(), d = x.cols(), m = config.augment_copies;
    std::vector<double> sigma(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
      sigma[j] = config.augment_sigma_scale * std::sqrt(var / static_cast<double>(n));
    }
    DenseMatrix expanded(n * (1 + m), d);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t copy = 0; copy <= m; ++copy, ++r) {
        for (std::size_t j = 0; j < d; ++j) expanded(r, j) = copy == 0 ? x(i, j) : rng.normal(x(i, j), sigma[j]);
        s.labels.push_back(episode.support_labels[i]);
      }
    }
    s.features = extractor.features(expanded);
  }
  if (config.normalize) l2_normalize_rows(s.features);
  return s;
}

/// Query features: normalization only, never augmentation.
template <FeatureExtractor E>
DenseMatrix prepare_queries(const Episode& episode, const E& extractor, const BaseLearnerConfig& config) {
  DenseMatrix q = extractor.features(episode.query_features);
  if (config.normalize) l2_normalize_rows(q);
  return q;
}

// ---------------------------------------------------------------------------
// Convex solver
// ---------------------------------------------------------------------------

struct DescentResult {
  std::vector<double> x;
  double objective = 0.0;
  double grad_inf_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Full-batch gradient descent with monotone Armijo backtracking. `objective`
/// must provide value(x) and value_grad(x, grad). The first trial step of each
/// line search is the Barzilai–Borwein step s·s / s·y (twice the previous
/// accepted step when curvature is not positive). Stops when ‖∇‖∞ < tol.
template <typename Objective>
DescentResult minimize_gradient_descent(const Objective& objective, std::vector<double> x, double tol,
                                        std::size_t max_iters) {
  constexpr double kArmijo = 1e-4;
  constexpr double kMinStep = 1e-20;
  std::vector<double> grad(x.size()), trial(x.size()), prev_grad(x.size());
  DescentResult r;
  double f = objective.value_grad(x, grad);
  double step = 0.5;
  double bb_step = 0.0;
  auto inf_norm = [](std::span<const double> g) {
    double m = 0.0;
    for (double v : g) m = std::max(m, std::abs(v));
    return m;
  };
  r.grad_inf_norm = inf_norm(grad);
  while (r.grad_inf_norm >= tol && r.iterations < max_iters) {
    double g2 = 0.0;
    for (double v : grad) g2 += v * v;
    step = bb_step > 0.0 ? std::clamp(bb_step, 1e-10, 1e10) : std::min(step * 2.0, 1e10);
    double f_trial = 0.0;
    for (;;) {
      for (std::size_t k = 0; k < x.size(); ++k) trial[k] = x[k] - step * grad[k];
      f_trial = objective.value(trial);
      if (f_trial <= f - kArmijo * step * g2 || step < kMinStep) break;
      step *= 0.5;
    }
    if (step < kMinStep) break;
    x.swap(trial);
    prev_grad.swap(grad);
    f = objective.value_grad(x, grad);
    // s = x_new − x_old = −step · g_old, y = g_new − g_old.
    double ss = 0.0, sy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double sk = -step * prev_grad[k];
      ss += sk * sk;
      sy += sk * (grad[k] - prev_grad[k]);
    }
    bb_step = sy > 0.0 ? ss / sy : 0.0;
    r.grad_inf_norm = inf_norm(grad);
    ++r.iterations;
  }
  r.converged = r.grad_inf_norm < tol;
  r.objective = f;
  r.x = std::move(x);
  return r;
}

/// Linear scores W f + b. `diagnostics` describes the solve that produced it.
struct LinearClassifier {
  DenseMatrix weights;  // n_way × feature_dim
  std::vector<double> bias;
  DescentResult diagnostics;  // x is left empty
};

namespace detail {

inline std::size_t count_classes(std::span<const std::size_t> labels, const char* who) {
  if (labels.empty()) throw InvalidInput(std::string(who) + ": empty support set");
  const std::size_t n_way = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<bool> seen(n_way, false);
  for (std::size_t y : labels) seen[y] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw InvalidInput(std::string(who) + ": support set has a single class");
  }
  return n_way;
}

inline void require_finite_features(const DenseMatrix& x, std::span<const std::size_t> labels, const char* who) {
  if (x.rows() != labels.size()) throw InvalidInput(std::string(who) + ": feature/label count mismatch");
  if (!x.all_finite()) throw InvalidInput(std::string(who) + ": non-finite features");
}

/// Mean multinomial cross-entropy + (λ/2)‖W‖² (+ (λ/2)‖b‖² if regularize_bias).
/// Parameter layout: W row-major (n_way × d), then b.
struct LogisticObjective {
  const DenseMatrix& x;
  std::span<const std::size_t> labels;
  std::size_t n_way;
  double lambda;
  bool regularize_bias;

  std::size_t dim() const { return x.cols(); }

  double value(std::span<const double> p) const { return evaluate(p, nullptr); }
  double value_grad(std::span<const double> p, std::span<double> g) const { return evaluate(p, &g); }

  double evaluate(std::span<const double> p, std::span<double>* g) const {
    const std::size_t d = dim(), n = x.rows();
    const double* w = p.data();
    const double* b = p.data() + n_way * d;
    if (g) std::fill(g->begin(), g->end(), 0.0);
    std::vector<double> z(n_way);
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.row(i).data();
      for (std::size_t c = 0; c < n_way; ++c) {
        double s = b[c];
        const double* wc = w + c * d;
        for (std::size_t j = 0; j < d; ++j) s += wc[j] * xi[j];
        z[c] = s;
      }
      const double lse = log_sum_exp(z);
      loss += lse - z[labels[i]];
      if (g) {
        for (std::size_t c = 0; c < n_way; ++c) {
          const double r = (std::exp(z[c] - lse) - (labels[i] == c ? 1.0 : 0.0)) * inv_n;
          double* gc = g->data() + c * d;
          for (std::size_t j = 0; j < d; ++j) gc[j] += r * xi[j];
          (*g)[n_way * d + c] += r;
        }
      }
    }
    loss *= inv_n;
    double reg = 0.0;
    for (std::size_t k = 0; k < n_way * d; ++k) reg += w[k] * w[k];
    if (regularize_bias) {
      for (std::size_t c = 0; c < n_way; ++c) reg += b[c] * b[c];
    }
    if (g) {
      for (std::size_t k = 0; k < n_way * d; ++k) (*g)[k] += lambda * w[k];
      if (regularize_bias) {
        for (std::size_t c = 0; c < n_way; ++c) (*g)[n_way * d + c] += lambda * b[c];
      }
    }
    return loss + 0.5 * lambda * reg;
  }
};

/// One-vs-rest squared hinge for a single class: parameters (w, b).
struct SquaredHingeObjective {
  const DenseMatrix& x;
  std::vector<double> sign;  // +1 for members of the class, −1 otherwise
  double lambda;
  bool regularize_bias;

  double value(std::span<const double> p) const { return evaluate(p, nullptr); }
  double value_grad(std::span<const double> p, std::span<double> g) const { return evaluate(p, &g); }

  double evaluate(std::span<const double> p, std::span<double>* g) const {
    const std::size_t d = x.cols(), n = x.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    if (g) std::fill(g->begin(), g->end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.row(i).data();
      double s = p[d];
      for (std::size_t j = 0; j < d; ++j) s += p[j] * xi[j];
      const double slack = 1.0 - sign[i] * s;
      if (slack <= 0.0) continue;
      loss += slack * slack;
      if (g) {
        const double r = -2.0 * slack * sign[i] * inv_n;
        for (std::size_t j = 0; j < d; ++j) (*g)[j] += r * xi[j];
        (*g)[d] += r;
      }
    }
    loss *= inv_n;
    double reg = 0.0;
    for (std::size_t j = 0; j < d; ++j) reg += p[j] * p[j];
    if (regularize_bias) reg += p[d] * p[d];
    if (g) {
      for (std::size_t j = 0; j < d; ++j) (*g)[j] += lambda * p[j];
      if (regularize_bias) (*g)[d] += lambda * p[d];
    }
    return loss + 0.5 * lambda * reg;
  }
};

}  // namespace detail

/// Value of the logistic-regression training objective at `clf`.
inline double logistic_objective(const LinearClassifier& clf, const DenseMatrix& x, std::span<const std::size_t> labels,
                                 const BaseLearnerConfig& config) {
  const std::size_t n_way = clf.weights.rows();
  detail::LogisticObjective obj{x, labels, n_way, config.lambda, config.regularize_bias};
  std::vector<double> p(clf.weights.data().begin(), clf.weights.data().end());
  p.insert(p.end(), clf.bias.begin(), clf.bias.end());
  return obj.value(p);
}

/// Multinomial logistic regression from zero initialization.
inline LinearClassifier fit_logistic_regression(const DenseMatrix& x, std::span<const std::size_t> labels,
                                                const BaseLearnerConfig& config) {
  config.validate();
  detail::require_finite_features(x, labels, "logistic regression");
  const std::size_t n_way = detail::count_classes(labels, "logistic regression");
  const std::size_t d = x.cols();
  detail::LogisticObjective obj{x, labels, n_way, config.lambda, config.regularize_bias};
  DescentResult r = minimize_gradient_descent(obj, std::vector<double>(n_way * d + n_way, 0.0), config.solver_tol,
                                              config.solver_max_iters);
  LinearClassifier clf{DenseMatrix(n_way, d, std::vector<double>(r.x.begin(), r.x.begin() + n_way * d)),
                       std::vector<double>(r.x.begin() + n_way * d, r.x.end()), {}};
  r.x.clear();
  clf.diagnostics = std::move(r);
  return clf;
}

/// Σ over classes of the one-vs-rest squared-hinge objectives at `clf`.
inline double svm_objective(const LinearClassifier& clf, const DenseMatrix& x, std::span<const std::size_t> labels,
                            const BaseLearnerConfig& config) {
  double total = 0.0;
  const std::size_t d = x.cols();
  for (std::size_t c = 0; c < clf.weights.rows(); ++c) {
    detail::SquaredHingeObjective obj{x, {}, config.lambda, config.regularize_bias};
    for (std::size_t y : labels) obj.sign.push_back(y == c ? 1.0 : -1.0);
    std::vector<double> p(clf.weights.row(c).begin(), clf.weights.row(c).end());
    p.push_back(clf.bias[c]);
    total += obj.value(std::span<const double>(p.data(), d + 1));
  }
  return total;
}

/// One-vs-rest linear SVM with squared hinge loss, one descent per class.
/// Diagnostics aggregate the per-class solves (summed objective, worst gradient,
/// total iterations).
inline LinearClassifier fit_linear_svm(const DenseMatrix& x, std::span<const std::size_t> labels,
                                       const BaseLearnerConfig& config) {
  config.validate();
  detail::require_finite_features(x, labels, "linear svm");
  const std::size_t n_way = detail::count_classes(labels, "linear svm");
  const std::size_t d = x.cols();
  LinearClassifier clf{DenseMatrix(n_way, d), std::vector<double>(n_way, 0.0), {}};
  clf.diagnostics.converged = true;
  for (std::size_t c = 0; c < n_way; ++c) {
    detail::SquaredHingeObjective obj{x, {}, config.lambda, config.regularize_bias};
    for (std::size_t y : labels) obj.sign.push_back(y == c ? 1.0 : -1.0);
    DescentResult r = minimize_gradient_descent(obj, std::vector<double>(d + 1, 0.0), config.solver_tol,
                                                config.solver_max_iters);
    std::copy(r.x.begin(), r.x.begin() + d, clf.weights.row(c).begin());
    clf.bias[c] = r.x[d];
    clf.diagnostics.objective += r.objective;
    clf.diagnostics.grad_inf_norm = std::max(clf.diagnostics.grad_inf_norm, r.grad_inf_norm);
    clf.diagnostics.iterations += r.iterations;
    clf.diagnostics.converged = clf.diagnostics.converged && r.converged;
  }
  return clf;
}

enum class CentroidMetric { l2, cosine };

struct CentroidSet {
  DenseMatrix centroids;  // one row per episode label
  CentroidMetric metric = CentroidMetric::l2;
};

/// Class means of the support features; cosine centroids are unit-normalized.
inline CentroidSet fit_nearest_centroid(const DenseMatrix& x, std::span<const std::size_t> labels,
                                        CentroidMetric metric) {
  detail::require_finite_features(x, labels, "nearest centroid");
  if (labels.empty()) throw InvalidInput("nearest centroid: empty support set");
  const std::size_t n_way = *std::max_element(labels.begin(), labels.end()) + 1;
  CentroidSet cs{DenseMatrix(n_way, x.cols()), metric};
  std::vector<std::size_t> counts(n_way, 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    ++counts[labels[i]];
    auto c = cs.centroids.row(labels[i]);
    auto xi = x.row(i);
    for (std::size_t j = 0; j < xi.size(); ++j) c[j] += xi[j];
  }
  for (std::size_t c = 0; c < n_way; ++c) {
    if (counts[c] == 0) throw InvalidInput("nearest centroid: label " + std::to_string(c) + " has no support sample");
    for (double& v : cs.centroids.row(c)) v /= static_cast<double>(counts[c]);
  }
  if (metric == CentroidMetric::cosine) l2_normalize_rows(cs.centroids);
  return cs;
}

/// argmax(W f + b); ties go to the lowest label.
inline std::vector<std::size_t> predict(const LinearClassifier& clf, const DenseMatrix& queries) {
  if (queries.cols() != clf.weights.cols()) throw InvalidInput("predict: feature dimension mismatch");
  std::vector<std::size_t> out(queries.rows());
  std::vector<double> s(clf.weights.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto q = queries.row(i);
    for (std::size_t c = 0; c < s.size(); ++c) {
      double v = clf.bias[c];
      auto w = clf.weights.row(c);
      for (std::size_t j = 0; j < q.size(); ++j) v += w[j] * q[j];
      s[c] = v;
    }
    out[i] = argmax(s);
  }
  return out;
}

/// L2: nearest centroid by Euclidean distance. Cosine: largest dot product
/// with the normalized centroid. Ties go to the lowest label.
inline std::vector<std::size_t> predict(const CentroidSet& cs, const DenseMatrix& queries) {
  if (queries.cols() != cs.centroids.cols()) throw InvalidInput("predict: feature dimension mismatch");
  std::vector<std::size_t> out(queries.rows());
  std::vector<double> s(cs.centroids.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto q = queries.row(i);
    for (std::size_t c = 0; c < s.size(); ++c) {
      auto m = cs.centroids.row(c);
      double v = 0.0;
      if (cs.metric == CentroidMetric::l2) {
        for (std::size_t j = 0; j < q.size(); ++j) v -= (q[j] - m[j]) * (q[j] - m[j]);
      } else {
        for (std::size_t j = 0; j < q.size(); ++j) v += q[j] * m[j];
      }
      s[c] = v;
    }
    out[i] = argmax(s);
  }
  return out;
}

using FittedLearner = std::variant<LinearClassifier, CentroidSet>;

inline FittedLearner fit(const DenseMatrix& x, std::span<const std::size_t> labels, const BaseLearnerConfig& config) {
  switch (config.kind) {
    case LearnerKind::logistic_regression: return fit_logistic_regression(x, labels, config);
    case LearnerKind::linear_svm: return fit_linear_svm(x, labels, config);
    case LearnerKind::nearest_centroid_l2: return fit_nearest_centroid(x, labels, CentroidMetric::l2);
    case LearnerKind::nearest_centroid_cosine: break;
  }
  return fit_nearest_centroid(x, labels, CentroidMetric::cosine);
}

inline std::vector<std::size_t> predict(const FittedLearner& learner, const DenseMatrix& queries) {
  return std::visit([&](const auto& l) { return predict(l, queries); }, learner);
}

/// Fits a fresh base learner on the episode's support set and returns the
/// fraction of queries classified correctly. The extractor is only read.
template <FeatureExtractor E>
double episode_accuracy(const Episode& episode, const E& extractor, const BaseLearnerConfig& config, SeededRng& rng) {
  config.validate();
  const SupportSet support = preprocess_support(episode, extractor, config, rng);
  const DenseMatrix queries = prepare_queries(episode, extractor, config);
  const auto predicted = predict(fit(support.features, support.labels, config), queries);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == episode.query_labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

}  // namespace fsb
