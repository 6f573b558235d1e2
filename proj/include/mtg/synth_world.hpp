#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtg/feature_store.hpp"

namespace mtg {

/// Parameters of a two-view synthetic subject.
///
/// Each subject cell carries a semantic code (part code plus a per-cell code)
/// and an appearance code (part colour plus per-cell texture). View 2 shows the
/// same subject under a dihedral transform and translation. Every backbone
/// layer is a fixed random linear mixture of the gain-weighted base field,
/// shared across views and across worlds that share `mixing_seed`.
struct SynthWorldConfig {
  std::uint32_t grid = 48;
  std::uint32_t subject_min = 14;
  std::uint32_t subject_max = 22;
  std::uint32_t part_count = 6;
  bool textured = true;
  /// When >= 0 only this part is textured; every other part is a flat shared material.
  int planted_part = -1;
  std::string warp = "affine";  // "affine" or "identity"
  std::vector<std::uint32_t> layer_ids = {4, 5, 6, 7};
  std::uint32_t channels = 48;
  std::uint32_t semantic_dim = 48;
  std::uint32_t appearance_dim = 48;
  /// Per-layer gains on the semantic / appearance halves; empty uses a built-in table.
  std::vector<double> semantic_gains;
  std::vector<double> appearance_gains;
  double part_weight = 0.3;
  /// Gaussian blur width (cells) of the per-cell codes; 0 leaves them independent.
  double smoothness = 1.5;
  double noise_scale = 0.15;
  std::uint64_t layout_seed = 1;
  std::uint64_t semantic_seed = 2;
  std::uint64_t appearance_seed = 3;
  std::uint64_t noise_seed = 4;
  std::uint64_t mixing_seed = 5;

  void validate() const;
  std::uint32_t base_dim() const noexcept { return semantic_dim + appearance_dim; }
  double semantic_gain(std::size_t layer_index) const;
  double appearance_gain(std::size_t layer_index) const;
};

nlohmann::json to_json(const SynthWorldConfig& cfg);
SynthWorldConfig synth_world_config_from_json(const nlohmann::json& j);

/// Two rendered views plus the ground truth needed by the synthetic ports.
class SynthWorld {
 public:
  explicit SynthWorld(SynthWorldConfig cfg);

  const SynthWorldConfig& config() const noexcept { return cfg_; }
  const FeatureStack& stack(int view) const { return views_.at(view).stack; }
  const Mask& subject(int view) const { return views_.at(view).subject; }
  /// Part index per flattened cell, -1 on background.
  const std::vector<int>& part_labels(int view) const { return views_.at(view).labels; }
  /// For every cell of view 1, the flattened index of its counterpart in view 2 (-1 off-subject).
  const std::vector<std::int64_t>& ground_truth() const noexcept { return ground_truth_; }

  std::uint32_t part_count() const noexcept { return cfg_.part_count; }
  Mask part_mask(int view, int part) const;
  /// Parts sharing an edge with `part` in the canonical layout.
  std::vector<int> adjacent_parts(int part) const;

  /// Copy of the view's stack where the appearance inside `region` is blended
  /// towards freshly drawn codes: a' = (1 - strength) a + strength a_fresh.
  /// Cells outside `region` are bitwise unchanged.
  FeatureStack inpaint(int view, const Mask& region, std::uint64_t seed, double strength) const;

 private:
  struct View {
    FeatureStack stack;
    Mask subject;
    std::vector<int> labels;
    std::vector<double> semantic;    // d x semantic_dim
    std::vector<double> appearance;  // d x appearance_dim
    std::vector<double> noise;       // d x base_dim
  };

  void render_cell(const View& view, std::size_t cell, const double* appearance, FeatureStack& out) const;

  SynthWorldConfig cfg_;
  std::uint32_t subject_h_ = 0, subject_w_ = 0;
  std::uint32_t part_rows_ = 1, part_cols_ = 1;
  std::vector<int> canonical_labels_;  // subject_h x subject_w
  std::vector<std::vector<double>> mixing_;  // per layer: channels x base_dim
  std::array<View, 2> views_;
  std::vector<std::int64_t> ground_truth_;
};

}  // namespace mtg
