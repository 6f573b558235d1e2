#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mtg/feature_store.hpp"

namespace mtg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// d x q feature matrix, one row per flattened grid position (row-major over h, w).
struct FeatureMatrix {
  RowMatrix values;
  std::uint32_t grid_height = 0;
  std::uint32_t grid_width = 0;
  bool normalized = false;
  /// Rows that were all-zero when normalization was requested (left as zero rows).
  std::vector<std::uint8_t> zero_rows;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(values.cols()); }
  bool has_degenerate_rows() const noexcept;
};

/// values(i, j) = <a_i, b_j>; rows index image a, columns image b.
struct SimilarityMatrix {
  RowMatrix values;
  std::uint32_t height_a = 0, width_a = 0;
  std::uint32_t height_b = 0, width_b = 0;
};

/// L2-normalizes every row in place; zero rows stay zero and are flagged.
void normalize_rows(FeatureMatrix& m);

FeatureMatrix flatten_layer(const FeatureStack& stack, std::uint32_t layer_id, bool normalize);

SimilarityMatrix similarity(const FeatureMatrix& a, const FeatureMatrix& b);

/// For every set position of `mask_a`, the best-scoring position of `mask_b`
/// (ties go to the smallest flattened index). Skewness is filled per point
/// over the `mask_b` candidates (0 when fewer than three candidates).
CorrespondenceSet argmax_match(const SimilarityMatrix& d, const Mask& mask_a, const Mask& mask_b);

struct Skewness {
  double value = 0.0;
  bool flat = false;  // sample standard deviation was zero
};

/// Adjusted Fisher-Pearson skewness of row `row` restricted to `candidates`.
Skewness row_skewness(const SimilarityMatrix& d, std::size_t row, const Mask& candidates);
/// Same statistic on a plain sample; throws Error(empty_input) when n < 3.
Skewness sample_skewness(std::span<const double> xs);

/// Row-wise maxima over `mask_b` columns, one entry per set position of `mask_a`.
std::vector<double> best_match_scores(const SimilarityMatrix& d, const Mask& mask_a, const Mask& mask_b);

/// Full mask of the given grid.
Mask full_mask(std::uint32_t height, std::uint32_t width);

}  // namespace mtg
