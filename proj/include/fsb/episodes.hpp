#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fsb/datasets.hpp"
#include "fsb/errors.hpp"
#include "fsb/numerics.hpp"

namespace fsb {

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_queries = 15;  // per class

  void validate() const {
    if (n_way < 2) throw InvalidInput("episode spec: n_way must be >= 2");
    if (k_shot < 1) throw InvalidInput("episode spec: k_shot must be >= 1");
    if (q_queries < 1) throw InvalidInput("episode spec: q_queries must be >= 1");
  }

  friend bool operator==(const EpisodeSpec&, const EpisodeSpec&) = default;
};

/// One N-way K-shot task. Labels are episode-local (0..n_way-1); the
/// *_rows fields record the dataset rows each sample came from.
struct Episode {
  DenseMatrix support_features;
  std::vector<std::size_t> support_labels;
  DenseMatrix query_features;
  std::vector<std::size_t> query_labels;
  std::vector<std::size_t> class_map;  // episode label -> original class id
  std::vector<std::size_t> support_rows;
  std::vector<std::size_t> query_rows;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Draws n_way classes without replacement, then k_shot + q_queries rows per
/// class without replacement; the first k_shot rows of each class go to the
/// support set. Support rows are grouped by episode label in class order.
inline Episode sample_episode(const LabeledVectorDataset& dataset, std::span<const std::size_t> class_subset,
                              const EpisodeSpec& spec, SeededRng& rng) {
  spec.validate();
  if (class_subset.size() < spec.n_way) {
    throw InfeasibleEpisode("episode needs " + std::to_string(spec.n_way) + " classes, subset has " +
                            std::to_string(class_subset.size()));
  }
  const std::size_t per_class = spec.k_shot + spec.q_queries;
  for (std::size_t c : class_subset) {
    if (c >= dataset.num_classes()) throw InvalidInput("episode: class " + std::to_string(c) + " not in dataset");
    if (dataset.rows_of_class(c).size() < per_class) {
      throw InfeasibleEpisode("class " + std::to_string(c) + " has " + std::to_string(dataset.rows_of_class(c).size()) +
                              " samples, episode needs k_shot + q_queries = " + std::to_string(per_class));
    }
  }

  std::vector<std::size_t> pool(class_subset.begin(), class_subset.end());
  Episode ep;
  ep.class_map.reserve(spec.n_way);
  for (std::size_t i = 0; i < spec.n_way; ++i) {
    const std::size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
    ep.class_map.push_back(pool[i]);
  }

  for (std::size_t label = 0; label < spec.n_way; ++label) {
    auto rows = dataset.rows_of_class(ep.class_map[label]);
    std::vector<std::size_t> picked(rows.begin(), rows.end());
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t j = i + rng.uniform_index(picked.size() - i);
      std::swap(picked[i], picked[j]);
    }
    for (std::size_t i = 0; i < per_class; ++i) {
      if (i < spec.k_shot) {
        ep.support_rows.push_back(picked[i]);
        ep.support_labels.push_back(label);
      } else {
        ep.query_rows.push_back(picked[i]);
        ep.query_labels.push_back(label);
      }
    }
  }
  ep.support_features = dataset.features().gather_rows(ep.support_rows);
  ep.query_features = dataset.features().gather_rows(ep.query_rows);
  return ep;
}

/// Index-addressable episode sequence: episode i is drawn from the child
/// generator derive_seed(seed, i), so any index can be materialized alone.
class EpisodeStream {
 public:
  EpisodeStream(const LabeledVectorDataset& dataset, std::vector<std::size_t> class_subset, EpisodeSpec spec,
                std::size_t count, std::uint64_t seed)
      : dataset_(&dataset), classes_(std::move(class_subset)), spec_(spec), count_(count), seed_(seed) {
    if (count_ < 1) throw InvalidInput("episode stream: count must be >= 1");
    spec_.validate();
  }

  std::size_t size() const noexcept { return count_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const EpisodeSpec& spec() const noexcept { return spec_; }

  /// Seed of episode i's private generator.
  std::uint64_t episode_seed(std::size_t i) const noexcept { return derive_seed(seed_, i); }

  Episode at(std::size_t i) const {
    if (i >= count_) throw InvalidInput("episode stream: index out of range");
    SeededRng rng(episode_seed(i));
    return sample_episode(*dataset_, classes_, spec_, rng);
  }

  std::vector<Episode> materialize() const {
    std::vector<Episode> out;
    out.reserve(count_);
    for (std::size_t i = 0; i < count_; ++i) out.push_back(at(i));
    return out;
  }

 private:
  const LabeledVectorDataset* dataset_;
  std::vector<std::size_t> classes_;
  EpisodeSpec spec_;
  std::size_t count_;
  std::uint64_t seed_;
};

inline std::vector<Episode> episode_stream(const LabeledVectorDataset& dataset, std::span<const std::size_t> classes,
                                           const EpisodeSpec& spec, std::size_t count, std::uint64_t seed) {
  return EpisodeStream(dataset, {classes.begin(), classes.end()}, spec, count, seed).materialize();
}

}  // namespace fsb
