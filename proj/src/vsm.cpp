#include "mtg/vsm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "mtg/error.hpp"

namespace mtg {

namespace {

std::vector<std::size_t> positions(const Mask* mask, bool restrict, std::uint32_t h, std::uint32_t w) {
  if (mask == nullptr || !restrict) {
    std::vector<std::size_t> all(std::size_t{h} * w);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  if (mask->height == h && mask->width == w) return mask->indices();
  return resample_mask(*mask, h, w).indices();
}

RowMatrix gather(const RowMatrix& m, const std::vector<std::size_t>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<double> row_max(const RowMatrix& q, const RowMatrix& k) {
  const RowMatrix s = q * k.transpose();
  std::vector<double> out(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index r = 0; r < s.rows(); ++r) out[static_cast<std::size_t>(r)] = s.row(r).maxCoeff();
  return out;
}

}  // namespace

std::string_view to_string(VsmDirection d) noexcept {
  switch (d) {
    case VsmDirection::forward: return "forward";
    case VsmDirection::reverse: return "reverse";
    case VsmDirection::symmetric: return "symmetric";
  }
  return "?";
}

VsmDirection vsm_direction_from_string(std::string_view s) {
  if (s == "forward" || s == "1to2") return VsmDirection::forward;
  if (s == "reverse" || s == "2to1") return VsmDirection::reverse;
  if (s == "symmetric") return VsmDirection::symmetric;
  fail(ErrorCode::usage, "unknown VSM direction '" + std::string(s) + "'");
}

void VsmConfig::validate() const {
  for (double t : {semantic_threshold, visual_threshold}) {
    if (!(t > -1.0 && t < 1.0)) fail(ErrorCode::invariant, "VSM thresholds must lie in (-1, 1)");
  }
}

nlohmann::json to_json(const VsmConfig& cfg) {
  return {{"semantic_threshold", cfg.semantic_threshold},
          {"visual_threshold", cfg.visual_threshold},
          {"direction", std::string(to_string(cfg.direction))},
          {"restrict_to_subject", cfg.restrict_to_subject}};
}

VsmConfig vsm_config_from_json(const nlohmann::json& j) {
  VsmConfig c;
  c.semantic_threshold = j.value("semantic_threshold", c.semantic_threshold);
  c.visual_threshold = j.value("visual_threshold", c.visual_threshold);
  if (j.contains("direction")) c.direction = vsm_direction_from_string(j["direction"].get<std::string>());
  c.restrict_to_subject = j.value("restrict_to_subject", c.restrict_to_subject);
  c.validate();
  return c;
}

DisentangledFeatures extract_features(const FeatureStack& stack, const AggregatorParams& params) {
  const auto grid = kModelGrid;
  const auto inputs = prepare_inputs(stack, params.semantic.layer_ids, grid);
  return {aggregate(inputs, params.semantic), aggregate(inputs, params.visual)};
}

std::optional<double> vsm_score(std::span<const double> visual_scores_at_matches, double visual_threshold) {
  if (visual_scores_at_matches.empty()) return std::nullopt;
  const auto hits = std::count_if(visual_scores_at_matches.begin(), visual_scores_at_matches.end(),
                                  [&](double v) { return v > visual_threshold; });
  return static_cast<double>(hits) / static_cast<double>(visual_scores_at_matches.size());
}

std::vector<float> inconsistency_map(std::uint32_t height, std::uint32_t width, std::span<const std::size_t> matched,
                                     std::span<const double> visual_scores_at_matches, double visual_threshold) {
  if (matched.size() != visual_scores_at_matches.size()) {
    fail(ErrorCode::dimension_mismatch, "matched positions and scores differ in length");
  }
  std::vector<float> map(std::size_t{height} * width, 0.0f);
  for (std::size_t k = 0; k < matched.size(); ++k) {
    if (matched[k] >= map.size()) fail(ErrorCode::dimension_mismatch, "matched position outside the grid");
    const double v = std::max(0.0, visual_threshold - visual_scores_at_matches[k]) / (visual_threshold + 1.0);
    map[matched[k]] = static_cast<float>(v);
  }
  return map;
}

VsmPass vsm_pass(const DisentangledFeatures& a, const DisentangledFeatures& b, const Mask* mask_a, const Mask* mask_b,
                 const VsmConfig& cfg) {
  cfg.validate();
  if (a.semantic.cols() != b.semantic.cols() || a.visual.cols() != b.visual.cols()) {
    fail(ErrorCode::dimension_mismatch, "feature widths differ between images");
  }
  VsmPass p;
  p.grid_height = a.semantic.grid_height;
  p.grid_width = a.semantic.grid_width;
  p.query_positions = positions(mask_a, cfg.restrict_to_subject, a.semantic.grid_height, a.semantic.grid_width);
  const auto candidates = positions(mask_b, cfg.restrict_to_subject, b.semantic.grid_height, b.semantic.grid_width);
  if (candidates.empty() || p.query_positions.empty()) {
    p.map.assign(std::size_t{p.grid_height} * p.grid_width, 0.0f);
    return p;
  }
  p.semantic_scores = row_max(gather(a.semantic.values, p.query_positions), gather(b.semantic.values, candidates));
  p.visual_scores = row_max(gather(a.visual.values, p.query_positions), gather(b.visual.values, candidates));
  std::vector<double> matched_visual;
  for (std::size_t k = 0; k < p.query_positions.size(); ++k) {
    if (p.semantic_scores[k] > cfg.semantic_threshold) {
      p.matched.push_back(p.query_positions[k]);
      matched_visual.push_back(p.visual_scores[k]);
    }
  }
  p.vsm = vsm_score(matched_visual, cfg.visual_threshold);
  p.map = inconsistency_map(p.grid_height, p.grid_width, p.matched, matched_visual, cfg.visual_threshold);
  return p;
}

VsmReport vsm_from_features(const DisentangledFeatures& f1, const DisentangledFeatures& f2, const Mask* mask_1,
                            const Mask* mask_2, const VsmConfig& cfg) {
  VsmReport r;
  r.config = cfg;
  r.forward = vsm_pass(f1, f2, mask_1, mask_2, cfg);
  switch (cfg.direction) {
    case VsmDirection::forward:
      r.vsm = r.forward.vsm;
      break;
    case VsmDirection::reverse:
      r.reverse = vsm_pass(f2, f1, mask_2, mask_1, cfg);
      r.vsm = r.reverse->vsm;
      break;
    case VsmDirection::symmetric: {
      r.reverse = vsm_pass(f2, f1, mask_2, mask_1, cfg);
      const auto& a = r.forward.vsm;
      const auto& b = r.reverse->vsm;
      if (a && b) {
        r.vsm = 0.5 * (*a + *b);
      } else if (a) {
        r.vsm = a;
      } else {
        r.vsm = b;
      }
      break;
    }
  }
  return r;
}

VsmReport vsm(const FeatureStack& stack_1, const FeatureStack& stack_2, const AggregatorParams& params,
              const Mask* mask_1, const Mask* mask_2, const VsmConfig& cfg) {
  if (stack_1.layer_ids() != stack_2.layer_ids()) {
    fail(ErrorCode::dimension_mismatch, "stacks do not share a layer set");
  }
  const auto f1 = extract_features(stack_1, params);
  const auto f2 = extract_features(stack_2, params);
  return vsm_from_features(f1, f2, mask_1, mask_2, cfg);
}

nlohmann::json to_json(const VsmReport& report) {
  nlohmann::json j;
  j["status"] = report.no_semantic_overlap() ? "no_semantic_overlap" : "ok";
  j["vsm"] = report.vsm ? nlohmann::json(*report.vsm) : nlohmann::json(nullptr);
  auto pass_json = [](const VsmPass& p) {
    return nlohmann::json{{"vsm", p.vsm ? nlohmann::json(*p.vsm) : nlohmann::json(nullptr)},
                          {"matched", p.matched.size()},
                          {"queries", p.query_positions.size()}};
  };
  j["forward"] = pass_json(report.forward);
  if (report.reverse) j["reverse"] = pass_json(*report.reverse);
  j["matched"] = report.primary().matched.size();
  j["grid"] = {report.primary().grid_height, report.primary().grid_width};
  j["config"] = to_json(report.config);
  return j;
}

void write_map_raw(std::span<const float> map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  detail::LeWriter w(out);
  w.f32_array(map.data(), map.size());
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

void write_map_pgm(std::span<const float> map, std::uint32_t height, std::uint32_t width,
                   const std::filesystem::path& path) {
  if (map.size() != std::size_t{height} * width) fail(ErrorCode::dimension_mismatch, "map size does not match grid");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  for (float v : map) {
    const auto b = static_cast<unsigned char>(std::clamp(std::lround(255.0 * v), 0L, 255L));
    out.put(static_cast<char>(b));
  }
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

}  // namespace mtg
