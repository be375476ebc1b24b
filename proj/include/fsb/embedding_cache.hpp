#pragma once

#include <filesystem>
#include <vector>

#include "fsb/binary_io.hpp"
#include "fsb/datasets.hpp"
#include "fsb/embedder.hpp"

namespace fsb {

/// Penultimate features of every dataset row, stored in FSE1 format (same
/// record layout as FSD1 with d = feature dimension). In memory a cache is a
/// LabeledVectorDataset whose rows are already features.
using EmbeddingCache = LabeledVectorDataset;

/// Features are extracted in fixed-size blocks; the values do not depend on
/// the block size.
inline EmbeddingCache extract_cache(const EmbeddingModel& model, const LabeledVectorDataset& dataset) {
  if (dataset.dim() != model.input_dim()) {
    throw InvalidInput("extract: dataset dimension " + std::to_string(dataset.dim()) + " does not match model input " +
                       std::to_string(model.input_dim()));
  }
  DenseMatrix out(dataset.size(), model.feature_dim());
  constexpr std::size_t kBlock = 512;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < dataset.size(); begin += kBlock) {
    const std::size_t end = std::min(dataset.size(), begin + kBlock);
    rows.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) rows[i - begin] = i;
    const DenseMatrix f = features(model, dataset.features().gather_rows(rows));
    for (std::size_t i = begin; i < end; ++i) {
      std::copy(f.row(i - begin).begin(), f.row(i - begin).end(), out.row(i).begin());
    }
  }
  return {std::move(out), dataset.labels(), dataset.num_classes()};
}

inline std::vector<std::uint8_t> encode_cache(const EmbeddingCache& cache) {
  return detail::encode_labeled_vectors(cache, "FSE1");
}

inline EmbeddingCache decode_cache(const std::vector<std::uint8_t>& bytes) {
  return detail::decode_labeled_vectors(bytes, "FSE1");
}

inline void save_cache(const EmbeddingCache& cache, const std::filesystem::path& path) {
  io::write_file(path, encode_cache(cache));
}

inline EmbeddingCache load_cache(const std::filesystem::path& path) { return decode_cache(io::read_file(path)); }

}  // namespace fsb
