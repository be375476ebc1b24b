#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fsb/binary_io.hpp"
#include "fsb/errors.hpp"
#include "fsb/numerics.hpp"

namespace fsb {

/// n feature vectors with integer class labels. Immutable after construction;
/// keeps a per-class row index for episode sampling.
class LabeledVectorDataset {
 public:
  LabeledVectorDataset() = default;

  LabeledVectorDataset(DenseMatrix features, std::vector<std::size_t> labels, std::size_t num_classes)
      : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
    if (labels_.size() != features_.rows()) {
      throw InvalidInput("dataset: " + std::to_string(labels_.size()) + " labels for " +
                         std::to_string(features_.rows()) + " rows");
    }
    if (!features_.all_finite()) throw InvalidInput("dataset: non-finite feature value");
    by_class_.assign(num_classes_, {});
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] >= num_classes_) {
        throw InvalidInput("dataset: label " + std::to_string(labels_[i]) + " at row " + std::to_string(i) +
                           " is not < num_classes " + std::to_string(num_classes_));
      }
      by_class_[labels_[i]].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes_; ++c) {
      if (by_class_[c].empty()) throw InvalidInput("dataset: class " + std::to_string(c) + " has no samples");
    }
  }

  const DenseMatrix& features() const noexcept { return features_; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return features_.cols(); }

  /// Row indices of class `c`, ascending.
  std::span<const std::size_t> rows_of_class(std::size_t c) const { return by_class_.at(c); }

  friend bool operator==(const LabeledVectorDataset& a, const LabeledVectorDataset& b) {
    return a.num_classes_ == b.num_classes_ && a.labels_ == b.labels_ && a.features_ == b.features_;
  }

 private:
  DenseMatrix features_;
  std::vector<std::size_t> labels_;
  std::size_t num_classes_ = 0;
  std::vector<std::vector<std::size_t>> by_class_;
};

/// Disjoint partition of class ids; each list is sorted ascending.
struct MetaSplit {
  std::vector<std::size_t> train_classes;
  std::vector<std::size_t> val_classes;
  std::vector<std::size_t> test_classes;

  void validate(std::size_t num_classes) const {
    std::vector<int> owner(num_classes, -1);
    const std::array<const std::vector<std::size_t>*, 3> parts{&train_classes, &val_classes, &test_classes};
    for (int p = 0; p < 3; ++p) {
      if (parts[p]->empty()) throw InvalidInput("meta split: empty class set");
      for (std::size_t c : *parts[p]) {
        if (c >= num_classes) throw InvalidInput("meta split: class " + std::to_string(c) + " out of range");
        if (owner[c] != -1) throw InvalidInput("meta split: class " + std::to_string(c) + " appears twice");
        owner[c] = p;
      }
    }
  }

  friend bool operator==(const MetaSplit&, const MetaSplit&) = default;
};

enum class SplitPart { train, val, test };

inline const std::vector<std::size_t>& classes_of(const MetaSplit& split, SplitPart part) {
  switch (part) {
    case SplitPart::train: return split.train_classes;
    case SplitPart::val: return split.val_classes;
    case SplitPart::test: break;
  }
  return split.test_classes;
}

/// Meta-training classes merged into one multi-way problem.
struct MergedTask {
  DenseMatrix features;
  std::vector<std::size_t> labels;          // 0..num_classes()-1
  std::map<std::size_t, std::size_t> label_map;  // original id -> merged id
  std::vector<std::size_t> original_ids;    // merged id -> original id

  std::size_t num_classes() const noexcept { return original_ids.size(); }
  std::size_t size() const noexcept { return labels.size(); }
};

struct SyntheticSpec {
  std::size_t num_classes = 100;
  std::size_t dim = 32;
  std::size_t samples_per_class = 60;
  double between_class_sigma = 1.0;
  double within_class_sigma = 1.0;

  void validate() const {
    if (num_classes < 1 || dim < 1 || samples_per_class < 1) {
      throw InvalidInput("synthetic spec: counts must be >= 1");
    }
    if (!(between_class_sigma > 0.0) || !(within_class_sigma > 0.0)) {
      throw InvalidInput("synthetic spec: sigmas must be > 0");
    }
  }
};

/// Isotropic Gaussian classes: μ_c ~ N(0, σ_b² I), x ~ N(μ_c, σ_w² I).
/// All class means are drawn first, then samples in class-major order.
inline LabeledVectorDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SeededRng rng(seed);
  DenseMatrix means(spec.num_classes, spec.dim);
  for (double& v : means.data()) v = rng.normal(0.0, spec.between_class_sigma);

  const std::size_t n = spec.num_classes * spec.samples_per_class;
  DenseMatrix x(n, spec.dim);
  std::vector<std::size_t> labels(n);
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
      labels[r] = c;
      for (std::size_t j = 0; j < spec.dim; ++j) x(r, j) = rng.normal(means(c, j), spec.within_class_sigma);
    }
  }
  return {std::move(x), std::move(labels), spec.num_classes};
}

struct SplitFractions {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

/// Shuffles class ids by seed, then partitions them. Sizes: val = ⌊f_val·C⌋,
/// test = round(f_test·C) (half up), train takes the remainder; each set is
/// bumped to at least one class.
inline MetaSplit make_meta_split(std::size_t num_classes, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw InvalidInput("meta split: fractions must be positive and sum to 1");
  }
  if (num_classes < 3) {
    throw InvalidInput("meta split: need at least 3 classes, got " + std::to_string(num_classes));
  }
  const double c = static_cast<double>(num_classes);
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f.val * c + 1e-9)));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f.test * c + 0.5)));
  while (n_val + n_test >= num_classes) {
    if (n_test >= n_val && n_test > 1) {
      --n_test;
    } else if (n_val > 1) {
      --n_val;
    } else {
      break;
    }
  }
  std::vector<std::size_t> ids(num_classes);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  SeededRng rng(seed);
  rng.shuffle(std::span<std::size_t>(ids));

  MetaSplit split;
  const std::size_t n_train = num_classes - n_val - n_test;
  split.train_classes.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val_classes.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                           ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test_classes.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  for (auto* part : {&split.train_classes, &split.val_classes, &split.test_classes}) {
    std::sort(part->begin(), part->end());
  }
  return split;
}

inline MetaSplit make_meta_split(const LabeledVectorDataset& dataset, const SplitFractions& f, std::uint64_t seed) {
  return make_meta_split(dataset.num_classes(), f, seed);
}

/// Keeps the rows of the meta-training classes (dataset order) and relabels
/// them contiguously in ascending original-id order.
inline MergedTask merge_meta_train(const LabeledVectorDataset& dataset, const MetaSplit& split) {
  if (split.train_classes.empty()) throw InvalidInput("merge_meta_train: empty train_classes");
  MergedTask task;
  task.original_ids = split.train_classes;
  std::sort(task.original_ids.begin(), task.original_ids.end());
  for (std::size_t i = 0; i < task.original_ids.size(); ++i) {
    if (task.original_ids[i] >= dataset.num_classes()) {
      throw InvalidInput("merge_meta_train: class " + std::to_string(task.original_ids[i]) + " not in dataset");
    }
    task.label_map[task.original_ids[i]] = i;
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto it = task.label_map.find(dataset.labels()[i]);
    if (it == task.label_map.end()) continue;
    rows.push_back(i);
    task.labels.push_back(it->second);
  }
  task.features = dataset.features().gather_rows(rows);
  return task;
}

// ---------------------------------------------------------------------------
// FSD1 / FSE1 files: magic, u32 version=1, u32 n, u32 d, u32 num_classes,
// then n × [u32 label, d × f32]. Little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint8_t> encode_labeled_vectors(const LabeledVectorDataset& ds, std::string_view magic) {
  io::ByteWriter w;
  w.magic(magic);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  w.u32(static_cast<std::uint32_t>(ds.num_classes()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(ds.labels()[i]));
    for (double v : ds.features().row(i)) w.f32(v);
  }
  return w.bytes();
}

inline LabeledVectorDataset decode_labeled_vectors(const std::vector<std::uint8_t>& bytes, std::string_view magic) {
  io::ByteReader r(bytes);
  r.expect_magic(magic);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != 1) throw FormatError("unsupported version", version_at);
  const std::size_t n = r.u32("n");
  const std::size_t d = r.u32("d");
  const std::size_t num_classes = r.u32("num_classes");
  const std::size_t record = 4 * (1 + d);
  if (r.remaining() < n * record) {
    throw FormatError("truncated payload: header declares " + std::to_string(n) + " records, file holds " +
                          std::to_string(r.remaining() / record),
                      r.offset() + (r.remaining() / record) * record);
  }
  DenseMatrix x(n, d);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    labels[i] = r.u32("label");
    if (labels[i] >= num_classes) {
      throw FormatError("label " + std::to_string(labels[i]) + " >= num_classes " + std::to_string(num_classes), at);
    }
    for (std::size_t j = 0; j < d; ++j) x(i, j) = r.f32("feature");
  }
  r.expect_end();
  try {
    return {std::move(x), std::move(labels), num_classes};
  } catch (const InvalidInput& e) {
    throw FormatError(e.what(), 0);
  }
}

}  // namespace detail

inline void save_dataset(const LabeledVectorDataset& ds, const std::filesystem::path& path) {
  io::write_file(path, detail::encode_labeled_vectors(ds, "FSD1"));
}

inline LabeledVectorDataset load_dataset(const std::filesystem::path& path) {
  return detail::decode_labeled_vectors(io::read_file(path), "FSD1");
}

inline std::vector<std::uint8_t> encode_dataset(const LabeledVectorDataset& ds) {
  return detail::encode_labeled_vectors(ds, "FSD1");
}

inline LabeledVectorDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  return detail::decode_labeled_vectors(bytes, "FSD1");
}

}  // namespace fsb
