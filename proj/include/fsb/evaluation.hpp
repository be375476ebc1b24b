#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fsb/baselearners.hpp"
#include "fsb/datasets.hpp"
#include "fsb/distillation.hpp"
#include "fsb/embedder.hpp"
#include "fsb/episodes.hpp"
#include "fsb/errors.hpp"

namespace fsb {

struct EvalConfig {
  std::size_t episodes_per_run = 1000;
  std::size_t runs = 3;
  EpisodeSpec episode;
  BaseLearnerConfig learner;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = hardware concurrency; results do not depend on it

  void validate() const {
    if (episodes_per_run < 1) throw InvalidInput("eval config: episodes_per_run must be >= 1");
    if (runs < 1) throw InvalidInput("eval config: runs must be >= 1");
    episode.validate();
    learner.validate();
  }
};

struct RunSummary {
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t n = 0;
};

struct EvalReport {
  std::vector<RunSummary> runs;
  double reported_accuracy = 0.0;
  std::size_t reported_run = 0;
  std::vector<double> episode_accuracies;  // of the reported run
};

/// 1.96 × sample standard deviation (n − 1) / √n.
inline double confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw InvalidInput("confidence_interval: need at least 2 values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

/// Index of the median value; with an even count, the lower of the two
/// middle values. Ties keep the earliest index.
inline std::size_t median_index(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("median: empty input");
  std::vector<std::size_t> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return idx[(values.size() - 1) / 2];
}

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
/// exception (lowest index among those that failed first) is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::atomic<bool> failed{false};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Seed of evaluation run r.
inline std::uint64_t run_seed(std::uint64_t seed, std::size_t run) { return derive_seed(seed, run); }

/// Accuracies of every episode of one run, in episode order.
template <FeatureExtractor E>
std::vector<double> run_episodes(const E& extractor, const LabeledVectorDataset& dataset,
                                 std::span<const std::size_t> classes, const EvalConfig& config, std::size_t run) {
  const EpisodeStream stream(dataset, {classes.begin(), classes.end()}, config.episode, config.episodes_per_run,
                             run_seed(config.seed, run));
  std::vector<double> acc(config.episodes_per_run);
  detail::parallel_for(acc.size(), config.workers, [&](std::size_t i) {
    try {
      const Episode ep = stream.at(i);
      SeededRng aug_rng(derive_seed(stream.episode_seed(i), 1));
      acc[i] = episode_accuracy(ep, extractor, config.learner, aug_rng);
    } catch (const InfeasibleEpisode& e) {
      throw InfeasibleEpisode("run " + std::to_string(run) + ", episode " + std::to_string(i) + ": " + e.what());
    }
  });
  return acc;
}

/// Episodic evaluation: `runs` independent runs of `episodes_per_run`
/// episodes; the reported accuracy is the (lower) median of the run means.
template <FeatureExtractor E>
EvalReport evaluate(const E& extractor, const LabeledVectorDataset& dataset, const MetaSplit& split, SplitPart part,
                    const EvalConfig& config) {
  config.validate();
  const auto& classes = classes_of(split, part);
  EvalReport report;
  std::vector<std::vector<double>> per_run;
  std::vector<double> means;
  for (std::size_t r = 0; r < config.runs; ++r) {
    per_run.push_back(run_episodes(extractor, dataset, classes, config, r));
    const auto& acc = per_run.back();
    RunSummary s;
    s.n = acc.size();
    for (double a : acc) s.mean += a;
    s.mean /= static_cast<double>(s.n);
    s.ci95 = s.n >= 2 ? confidence_interval(acc) : 0.0;
    report.runs.push_back(s);
    means.push_back(s.mean);
  }
  report.reported_run = median_index(means);
  report.reported_accuracy = means[report.reported_run];
  report.episode_accuracies = std::move(per_run[report.reported_run]);
  return report;
}

inline EvalReport evaluate(const EmbeddingModel& model, const LabeledVectorDataset& dataset, const MetaSplit& split,
                           SplitPart part, const EvalConfig& config) {
  return evaluate(ModelFeatures{&model}, dataset, split, part, config);
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

struct AblationSetting {
  std::string name;
  BaseLearnerConfig learner;
  const EmbeddingModel* model = nullptr;
};

struct AblationCell {
  std::string setting;
  EpisodeSpec episode;
  std::optional<EvalReport> report;
  std::string error;  // set when report is empty
};

struct AblationTable {
  std::vector<AblationCell> cells;  // setting-major, in setting order

  std::size_t succeeded() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.report.has_value(); }));
  }

  const AblationCell* find(const std::string& setting, std::size_t k_shot) const {
    for (const auto& c : cells) {
      if (c.setting == setting && c.episode.k_shot == k_shot) return &c;
    }
    return nullptr;
  }
};

/// The ablation rows in their canonical order: NN, LR, +L2, +Aug, +Distill.
/// The distill row is omitted when `distilled` is null.
inline std::vector<AblationSetting> ablation_rows(const EmbeddingModel& vanilla, const EmbeddingModel* distilled,
                                                  const BaseLearnerConfig& base, std::size_t augment_copies = 5) {
  BaseLearnerConfig nn = base;
  nn.kind = LearnerKind::nearest_centroid_l2;
  nn.normalize = false;
  nn.augment_copies = 0;
  BaseLearnerConfig lr = base;
  lr.kind = LearnerKind::logistic_regression;
  lr.normalize = false;
  lr.augment_copies = 0;
  BaseLearnerConfig lr_l2 = lr;
  lr_l2.normalize = true;
  BaseLearnerConfig lr_aug = lr_l2;
  lr_aug.augment_copies = augment_copies;

  std::vector<AblationSetting> rows{
      {"NN", nn, &vanilla},
      {"LR", lr, &vanilla},
      {"LR+L2", lr_l2, &vanilla},
      {"LR+L2+Aug", lr_aug, &vanilla},
  };
  if (distilled) rows.push_back({"LR+L2+Aug+Distill", lr_aug, distilled});
  return rows;
}

/// One report per (setting, k_shot) cell. A failing cell records its error
/// and the remaining cells still run.
inline AblationTable ablation_grid(std::span<const AblationSetting> settings, std::span<const std::size_t> shots,
                                   const LabeledVectorDataset& dataset, const MetaSplit& split, SplitPart part,
                                   const EvalConfig& base) {
  AblationTable table;
  for (const auto& s : settings) {
    for (std::size_t k : shots) {
      AblationCell cell{s.name, base.episode, std::nullopt, {}};
      cell.episode.k_shot = k;
      try {
        if (!s.model) throw InvalidInput("ablation: setting '" + s.name + "' has no model");
        EvalConfig cfg = base;
        cfg.episode = cell.episode;
        cfg.learner = s.learner;
        cell.report = evaluate(*s.model, dataset, split, part, cfg);
      } catch (const Error& e) {
        cell.error = e.what();
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Generation sweep
// ---------------------------------------------------------------------------

enum class SweepKind { lr, lr_norm, nn, nn_norm };

inline const char* sweep_kind_name(SweepKind k) {
  switch (k) {
    case SweepKind::lr: return "LR";
    case SweepKind::lr_norm: return "LR+Norm";
    case SweepKind::nn: return "NN";
    case SweepKind::nn_norm: break;
  }
  return "NN+Norm";
}

/// NN+Norm is the cosine classifier on normalized features.
inline BaseLearnerConfig sweep_learner(SweepKind kind, BaseLearnerConfig base) {
  base.augment_copies = 0;
  switch (kind) {
    case SweepKind::lr:
      base.kind = LearnerKind::logistic_regression;
      base.normalize = false;
      break;
    case SweepKind::lr_norm:
      base.kind = LearnerKind::logistic_regression;
      base.normalize = true;
      break;
    case SweepKind::nn:
      base.kind = LearnerKind::nearest_centroid_l2;
      base.normalize = false;
      break;
    case SweepKind::nn_norm:
      base.kind = LearnerKind::nearest_centroid_cosine;
      base.normalize = true;
      break;
  }
  return base;
}

inline constexpr SweepKind kAllSweepKinds[] = {SweepKind::lr, SweepKind::lr_norm, SweepKind::nn, SweepKind::nn_norm};

struct SweepCell {
  std::size_t generation = 0;
  SweepKind kind = SweepKind::lr;
  EvalReport report;
};

struct SweepTable {
  std::vector<SweepCell> cells;  // generation-major

  /// Reported accuracy per generation for one kind.
  std::vector<double> curve(SweepKind kind) const {
    std::vector<double> out;
    for (const auto& c : cells) {
      if (c.kind == kind) out.push_back(c.report.reported_accuracy);
    }
    return out;
  }
};

inline SweepTable generation_sweep(std::span<const EmbeddingModel> generations, const LabeledVectorDataset& dataset,
                                   const MetaSplit& split, SplitPart part, const EvalConfig& config,
                                   std::span<const SweepKind> kinds) {
  if (generations.empty()) throw InvalidInput("generation_sweep: empty chain");
  SweepTable table;
  for (std::size_t g = 0; g < generations.size(); ++g) {
    for (SweepKind k : kinds) {
      EvalConfig cfg = config;
      cfg.learner = sweep_learner(k, config.learner);
      table.cells.push_back({g, k, evaluate(generations[g], dataset, split, part, cfg)});
    }
  }
  return table;
}

inline SweepTable generation_sweep(const GenerationChain& chain, const LabeledVectorDataset& dataset,
                                   const MetaSplit& split, SplitPart part, const EvalConfig& config,
                                   std::span<const SweepKind> kinds) {
  return generation_sweep(std::span<const EmbeddingModel>(chain.models), dataset, split, part, config, kinds);
}

}  // namespace fsb
