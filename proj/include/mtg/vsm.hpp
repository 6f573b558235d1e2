#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtg/correspondence.hpp"
#include "mtg/feature_store.hpp"
#include "mtg/model.hpp"

namespace mtg {

enum class VsmDirection { forward, reverse, symmetric };

std::string_view to_string(VsmDirection d) noexcept;
VsmDirection vsm_direction_from_string(std::string_view s);

struct VsmConfig {
  double semantic_threshold = 0.7;  // T_s
  double visual_threshold = 0.6;    // T_v
  VsmDirection direction = VsmDirection::forward;
  /// Restrict queries and candidates to the subject masks when they are supplied.
  bool restrict_to_subject = true;

  void validate() const;
};

nlohmann::json to_json(const VsmConfig& cfg);
VsmConfig vsm_config_from_json(const nlohmann::json& j);

struct DisentangledFeatures {
  FeatureMatrix semantic;
  FeatureMatrix visual;
};

DisentangledFeatures extract_features(const FeatureStack& stack, const AggregatorParams& params);

/// One direction: queries from image a, candidates from image b.
struct VsmPass {
  std::optional<double> vsm;               // empty when no query passes T_s
  std::vector<std::size_t> query_positions;  // flattened indices in image a
  std::vector<double> semantic_scores;     // aligned with query_positions
  std::vector<double> visual_scores;
  std::vector<std::size_t> matched;        // J_s, flattened indices in image a
  std::vector<float> map;                  // grid of image a
  std::uint32_t grid_height = 0, grid_width = 0;
};

struct VsmReport {
  std::optional<double> vsm;  // empty means "no semantic overlap"
  VsmPass forward;
  std::optional<VsmPass> reverse;
  VsmConfig config;

  bool no_semantic_overlap() const noexcept { return !vsm.has_value(); }
  /// Map of the reference image (the query side of the forward pass, or of the
  /// reverse pass in reverse mode).
  const VsmPass& primary() const noexcept {
    return config.direction == VsmDirection::reverse && reverse ? *reverse : forward;
  }
};

/// Fraction of scores strictly above the threshold; empty input gives nullopt.
std::optional<double> vsm_score(std::span<const double> visual_scores_at_matches, double visual_threshold);

/// max(0, T_v - v) / (T_v + 1) at matched positions, 0 elsewhere.
std::vector<float> inconsistency_map(std::uint32_t height, std::uint32_t width, std::span<const std::size_t> matched,
                                     std::span<const double> visual_scores_at_matches, double visual_threshold);

VsmPass vsm_pass(const DisentangledFeatures& a, const DisentangledFeatures& b, const Mask* mask_a, const Mask* mask_b,
                 const VsmConfig& cfg);

VsmReport vsm_from_features(const DisentangledFeatures& f1, const DisentangledFeatures& f2, const Mask* mask_1,
                            const Mask* mask_2, const VsmConfig& cfg);

/// Aggregates both branches for both stacks and scores the pair.
VsmReport vsm(const FeatureStack& stack_1, const FeatureStack& stack_2, const AggregatorParams& params,
              const Mask* mask_1, const Mask* mask_2, const VsmConfig& cfg);

/// Score, |J_s|, status and config echo.
nlohmann::json to_json(const VsmReport& report);

/// Raw little-endian float32 grid, row-major.
void write_map_raw(std::span<const float> map, const std::filesystem::path& path);
/// 8-bit binary PGM, value round(255 * m) clamped to [0, 255].
void write_map_pgm(std::span<const float> map, std::uint32_t height, std::uint32_t width,
                   const std::filesystem::path& path);

}  // namespace mtg
