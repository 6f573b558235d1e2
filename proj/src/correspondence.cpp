#include "mtg/correspondence.hpp"

#include <algorithm>
#include <cmath>

#include "mtg/error.hpp"

namespace mtg {

bool FeatureMatrix::has_degenerate_rows() const noexcept {
  return std::any_of(zero_rows.begin(), zero_rows.end(), [](std::uint8_t z) { return z != 0; });
}

void normalize_rows(FeatureMatrix& m) {
  m.zero_rows.assign(m.rows(), 0);
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    const double n = m.values.row(i).norm();
    if (n > 0.0) {
      m.values.row(i) /= n;
    } else {
      m.values.row(i).setZero();
      m.zero_rows[static_cast<std::size_t>(i)] = 1;
    }
  }
  m.normalized = true;
}

FeatureMatrix flatten_layer(const FeatureStack& stack, std::uint32_t layer_id, bool normalize) {
  const auto& layer = stack.layer(layer_id);
  FeatureMatrix m;
  m.grid_height = layer.height;
  m.grid_width = layer.width;
  m.values.resize(static_cast<Eigen::Index>(layer.positions()), layer.channels);
  for (std::size_t p = 0; p < layer.positions(); ++p) {
    for (std::uint32_t c = 0; c < layer.channels; ++c) {
      m.values(static_cast<Eigen::Index>(p), c) = layer.values[p * layer.channels + c];
    }
  }
  m.zero_rows.assign(m.rows(), 0);
  if (normalize) normalize_rows(m);
  return m;
}

SimilarityMatrix similarity(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::dimension_mismatch, "similarity: feature widths differ (" + std::to_string(a.cols()) + " vs " +
                                            std::to_string(b.cols()) + ")");
  }
  SimilarityMatrix d;
  d.values.noalias() = a.values * b.values.transpose();
  d.height_a = a.grid_height;
  d.width_a = a.grid_width;
  d.height_b = b.grid_height;
  d.width_b = b.grid_width;
  return d;
}

namespace {

void check_masks(const SimilarityMatrix& d, const Mask& mask_a, const Mask& mask_b) {
  if (mask_a.size() != static_cast<std::size_t>(d.values.rows()) ||
      mask_b.size() != static_cast<std::size_t>(d.values.cols())) {
    fail(ErrorCode::dimension_mismatch, "mask grids do not match the similarity matrix");
  }
}

GridPoint to_point(std::size_t index, std::uint32_t width) {
  return GridPoint{static_cast<std::uint32_t>(index % width), static_cast<std::uint32_t>(index / width)};
}

}  // namespace

Skewness sample_skewness(std::span<const double> xs) {
  const auto n = xs.size();
  if (n < 3) fail(ErrorCode::empty_input, "skewness needs at least 3 values, got " + std::to_string(n));
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return Skewness{0.0, true};
  double cubes = 0.0;
  for (double x : xs) {
    const double z = (x - mean) / sd;
    cubes += z * z * z;
  }
  const double nn = static_cast<double>(n);
  return Skewness{nn / ((nn - 1.0) * (nn - 2.0)) * cubes, false};
}

Skewness row_skewness(const SimilarityMatrix& d, std::size_t row, const Mask& candidates) {
  if (candidates.size() != static_cast<std::size_t>(d.values.cols())) {
    fail(ErrorCode::dimension_mismatch, "candidate mask does not match the similarity matrix");
  }
  if (row >= static_cast<std::size_t>(d.values.rows())) fail(ErrorCode::invariant, "skewness row out of range");
  std::vector<double> xs;
  xs.reserve(candidates.count());
  const auto r = d.values.row(static_cast<Eigen::Index>(row));
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (candidates.test(j)) xs.push_back(r(static_cast<Eigen::Index>(j)));
  }
  return sample_skewness(xs);
}

CorrespondenceSet argmax_match(const SimilarityMatrix& d, const Mask& mask_a, const Mask& mask_b) {
  check_masks(d, mask_a, mask_b);
  const auto targets = mask_b.indices();
  if (targets.empty()) fail(ErrorCode::empty_input, "argmax_match: no candidate targets");
  CorrespondenceSet out;
  std::vector<double> row_vals(targets.size());
  for (std::size_t i = 0; i < mask_a.size(); ++i) {
    if (!mask_a.test(i)) continue;
    const auto row = d.values.row(static_cast<Eigen::Index>(i));
    std::size_t best = targets.front();
    double best_score = row(static_cast<Eigen::Index>(best));
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const double s = row(static_cast<Eigen::Index>(targets[t]));
      row_vals[t] = s;
      if (s > best_score) {
        best_score = s;
        best = targets[t];
      }
    }
    out.points_a.push_back(to_point(i, mask_a.width));
    out.points_b.push_back(to_point(best, mask_b.width));
    out.scores.push_back(best_score);
    out.skewness.push_back(targets.size() >= 3 ? sample_skewness(row_vals).value : 0.0);
  }
  return out;
}

std::vector<double> best_match_scores(const SimilarityMatrix& d, const Mask& mask_a, const Mask& mask_b) {
  check_masks(d, mask_a, mask_b);
  const auto targets = mask_b.indices();
  if (targets.empty()) fail(ErrorCode::empty_input, "best_match_scores: no candidate targets");
  std::vector<double> out;
  for (std::size_t i = 0; i < mask_a.size(); ++i) {
    if (!mask_a.test(i)) continue;
    const auto row = d.values.row(static_cast<Eigen::Index>(i));
    double best = row(static_cast<Eigen::Index>(targets.front()));
    for (auto t : targets) best = std::max(best, row(static_cast<Eigen::Index>(t)));
    out.push_back(best);
  }
  return out;
}

Mask full_mask(std::uint32_t height, std::uint32_t width) { return Mask(height, width, 1); }

}  // namespace mtg
