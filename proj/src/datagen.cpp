#include "mtg/datagen.hpp"

#include <algorithm>
#include <cmath>

#include "mtg/error.hpp"

namespace mtg {

// --- config ---------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (!(region_frac_min > 0.0 && region_frac_min < region_frac_max && region_frac_max <= 1.0)) {
    fail(ErrorCode::invariant, "pipeline config: need 0 < region_frac_min < region_frac_max <= 1");
  }
  if (!(aspect_min > 0.0 && aspect_max > 0.0) || std::abs(aspect_min * aspect_max - 1.0) > 1e-9) {
    fail(ErrorCode::invariant, "pipeline config: aspect_min must equal 1 / aspect_max");
  }
  if (!(pad_frac >= 0.0) || !(perceptual_min >= 0.0)) {
    fail(ErrorCode::invariant, "pipeline config: pad_frac and perceptual_min must be non-negative");
  }
}

nlohmann::json to_json(const PipelineConfig& c) {
  return nlohmann::json{{"skewness_min", c.skewness_min},
                        {"region_frac_min", c.region_frac_min},
                        {"region_frac_max", c.region_frac_max},
                        {"aspect_min", c.aspect_min},
                        {"aspect_max", c.aspect_max},
                        {"perceptual_min", c.perceptual_min},
                        {"pad_frac", c.pad_frac},
                        {"anchor_score_min", c.anchor_score_min},
                        {"correspondence_layer", c.correspondence_layer},
                        {"seed", c.seed}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.skewness_min = j.value("skewness_min", c.skewness_min);
  c.region_frac_min = j.value("region_frac_min", c.region_frac_min);
  c.region_frac_max = j.value("region_frac_max", c.region_frac_max);
  c.aspect_min = j.value("aspect_min", c.aspect_min);
  c.aspect_max = j.value("aspect_max", c.aspect_max);
  c.perceptual_min = j.value("perceptual_min", c.perceptual_min);
  c.pad_frac = j.value("pad_frac", c.pad_frac);
  c.anchor_score_min = j.value("anchor_score_min", c.anchor_score_min);
  c.correspondence_layer = j.value("correspondence_layer", c.correspondence_layer);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string_view to_string(Rejection r) noexcept {
  switch (r) {
    case Rejection::low_similarity: return "low_similarity";
    case Rejection::ambiguous_matches: return "ambiguous_matches";
    case Rejection::segmentation_failed: return "segmentation_failed";
    case Rejection::too_small: return "too_small";
    case Rejection::too_large: return "too_large";
    case Rejection::bad_aspect: return "bad_aspect";
    case Rejection::outside_subject: return "outside_subject";
    case Rejection::low_perceptual: return "low_perceptual";
  }
  return "unknown";
}

RegionCandidate RegionCandidate::from_mask(Mask mask) {
  RegionCandidate c;
  c.area = mask.count();
  c.bbox = bounding_box(mask).value_or(BoundingBox{});
  c.mask = std::move(mask);
  return c;
}

// --- stages ---------------------------------------------------------------------

std::variant<std::size_t, Rejection> sample_anchor(const CorrespondenceSet& corr, const PipelineConfig& cfg,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> similar;
  std::vector<std::size_t> qualifying;
  for (std::size_t j = 0; j < corr.size(); ++j) {
    if (corr.scores[j] < cfg.anchor_score_min) continue;
    similar.push_back(j);
    if (corr.skewness[j] >= cfg.skewness_min) qualifying.push_back(j);
  }
  if (similar.empty()) return Rejection::low_similarity;
  if (qualifying.empty()) return Rejection::ambiguous_matches;
  std::uniform_int_distribution<std::size_t> pick(0, qualifying.size() - 1);
  return qualifying[pick(rng)];
}

const RegionCandidate& select_region(std::span<const RegionCandidate> candidates) {
  if (candidates.empty()) fail(ErrorCode::empty_input, "select_region: no candidate masks");
  const RegionCandidate* best = &candidates.front();
  for (const auto& c : candidates) {
    if (c.area < best->area) best = &c;
  }
  return *best;
}

std::optional<Rejection> validate_regions(const Mask& r1, const Mask& r2, const Mask& o1, const Mask& o2,
                                          const PipelineConfig& cfg) {
  const std::pair<const Mask*, const Mask*> pairs[] = {{&r1, &o1}, {&r2, &o2}};
  for (const auto& [region, subject] : pairs) {
    if (region->height != subject->height || region->width != subject->width) {
      fail(ErrorCode::dimension_mismatch, "validate_regions: region and subject grids differ");
    }
    const auto subject_area = subject->count();
    if (subject_area == 0) fail(ErrorCode::empty_input, "validate_regions: empty subject mask");
    const double frac = static_cast<double>(region->count()) / static_cast<double>(subject_area);
    if (frac < cfg.region_frac_min) return Rejection::too_small;
    if (frac > cfg.region_frac_max) return Rejection::too_large;
    const auto box = bounding_box(*region);
    const double aspect = static_cast<double>(box->width()) / static_cast<double>(box->height());
    if (aspect < cfg.aspect_min || aspect > cfg.aspect_max) return Rejection::bad_aspect;
    if (!region->subset_of(*subject)) return Rejection::outside_subject;
  }
  return std::nullopt;
}

BoundingBox crop_with_padding(const BoundingBox& box, double pad_frac, std::uint32_t height, std::uint32_t width) {
  const auto side = std::max(box.width(), box.height());
  // Subtract a hair before ceil so that e.g. 0.25 * 12 stays exactly 3.
  const auto pad = static_cast<std::int64_t>(std::ceil(pad_frac * static_cast<double>(side) - 1e-9));
  return BoundingBox{std::max<std::int64_t>(box.x0 - pad, 0), std::max<std::int64_t>(box.y0 - pad, 0),
                     std::min<std::int64_t>(box.x1 + pad, width), std::min<std::int64_t>(box.y1 + pad, height)};
}

bool perceptual_keep(double distance, const PipelineConfig& cfg) noexcept { return distance >= cfg.perceptual_min; }

double feature_perceptual_distance(const FeatureStack& before, const FeatureStack& after, const Mask& region) {
  if (before.layers.size() != after.layers.size()) {
    fail(ErrorCode::dimension_mismatch, "perceptual distance: stacks have different layer sets");
  }
  for (std::size_t k = 0; k < before.layers.size(); ++k) {
    const auto& a = before.layers[k];
    const auto& b = after.layers[k];
    if (a.layer_id != b.layer_id || a.channels != b.channels || a.height != region.height ||
        a.width != region.width || b.height != region.height || b.width != region.width) {
      fail(ErrorCode::dimension_mismatch, "perceptual distance: layer shapes differ from the region grid");
    }
  }
  const auto cells = region.indices();
  if (cells.empty()) return 0.0;
  double total = 0.0;
  for (auto cell : cells) {
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t k = 0; k < before.layers.size(); ++k) {
      const auto ch = before.layers[k].channels;
      const float* x = before.layers[k].values.data() + cell * ch;
      const float* y = after.layers[k].values.data() + cell * ch;
      for (std::uint32_t c = 0; c < ch; ++c) {
        na += double{x[c]} * x[c];
        nb += double{y[c]} * y[c];
        dot += double{x[c]} * y[c];
      }
    }
    if (na == 0.0 && nb == 0.0) continue;
    if (na == 0.0 || nb == 0.0) {
      total += 1.0;
      continue;
    }
    const double cos = dot / std::sqrt(na * nb);
    total += std::sqrt(std::max(0.0, 2.0 - 2.0 * cos));
  }
  return total / static_cast<double>(cells.size());
}

InconsistentPair make_inconsistent_pair(const PairInput& input, const Mask& r1, const Mask& r2, InpainterPort& inpainter,
                                        const PipelineConfig& cfg, std::mt19937_64& rng) {
  auto request = [&](const std::string& id, const Mask& region) {
    const auto box = bounding_box(region);
    if (!box) fail(ErrorCode::empty_input, "make_inconsistent_pair: empty region for '" + id + "'");
    InpaintRequest req;
    req.image_id = id;
    req.region = region;
    req.crop = crop_with_padding(*box, cfg.pad_frac, region.height, region.width);
    req.prompt = input.target_prompt;
    req.seed = rng();
    return req;
  };
  auto run = [&](const InpaintRequest& req) {
    try {
      return inpainter.inpaint(req);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::port_failure) throw;
      fail(ErrorCode::port_failure, "inpainting '" + req.image_id + "' failed: " + e.what());
    }
  };
  const auto req1 = request(input.image_id_1, r1);
  const auto req2 = request(input.image_id_2, r2);
  return InconsistentPair{run(req1), run(req2)};
}

GeneratedSample generate_sample(const PairInput& input, Ports& ports, const PipelineConfig& cfg,
                                std::uint64_t sample_seed) {
  std::mt19937_64 rng(sample_seed);
  GeneratedSample out;
  if (input.subject_1.count() == 0 || input.subject_2.count() == 0) {
    fail(ErrorCode::empty_input, "generate_sample: empty subject mask");
  }
  const auto f1 = flatten_layer(input.stack_1, cfg.correspondence_layer, true);
  const auto f2 = flatten_layer(input.stack_2, cfg.correspondence_layer, true);
  const auto d = similarity(f1, f2);
  out.correspondences = argmax_match(d, input.subject_1, input.subject_2);

  const auto anchor = sample_anchor(out.correspondences, cfg, rng);
  if (const auto* rej = std::get_if<Rejection>(&anchor)) {
    out.rejection = *rej;
    return out;
  }
  const auto k = std::get<std::size_t>(anchor);
  out.anchor = k;
  out.anchor_score = out.correspondences.scores[k];
  out.anchor_skewness = out.correspondences.skewness[k];

  const auto c1 = ports.segmenter.segment(input.image_id_1, out.correspondences.points_a[k]);
  const auto c2 = ports.segmenter.segment(input.image_id_2, out.correspondences.points_b[k]);
  if (c1.empty() || c2.empty()) {
    out.rejection = Rejection::segmentation_failed;
    return out;
  }
  out.region_1 = select_region(c1).mask;
  out.region_2 = select_region(c2).mask;
  if (auto rej = validate_regions(out.region_1, out.region_2, input.subject_1, input.subject_2, cfg)) {
    out.rejection = *rej;
    return out;
  }

  out.inconsistent = make_inconsistent_pair(input, out.region_1, out.region_2, ports.inpainter, cfg, rng);
  out.perceptual[0] = ports.perceptual.distance(input.stack_1, out.inconsistent->first.stack, out.region_1);
  out.perceptual[1] = ports.perceptual.distance(input.stack_2, out.inconsistent->second.stack, out.region_2);
  if (!perceptual_keep(out.perceptual[0], cfg) || !perceptual_keep(out.perceptual[1], cfg)) {
    out.rejection = Rejection::low_perceptual;
  }
  return out;
}

// --- synthetic ports -----------------------------------------------------------

namespace {

int view_of(const std::array<std::string, 2>& ids, const std::string& image_id) {
  if (image_id == ids[0]) return 0;
  if (image_id == ids[1]) return 1;
  fail(ErrorCode::port_failure, "synthetic port: unknown image '" + image_id + "'");
}

}  // namespace

SyntheticSegmenter::SyntheticSegmenter(const SynthWorld& world, std::string image_id_1, std::string image_id_2)
    : world_(world), ids_{std::move(image_id_1), std::move(image_id_2)} {}

std::vector<RegionCandidate> SyntheticSegmenter::segment(const std::string& image_id, GridPoint point) {
  const int view = view_of(ids_, image_id);
  const auto g = world_.config().grid;
  if (point.x >= g || point.y >= g) fail(ErrorCode::port_failure, "synthetic segmenter: point outside grid");
  const int part = world_.part_labels(view)[std::size_t{point.y} * g + point.x];
  if (part < 0) return {};
  Mask neighbourhood = world_.part_mask(view, part);
  for (int adj : world_.adjacent_parts(part)) {
    const auto m = world_.part_mask(view, adj);
    for (std::size_t i = 0; i < m.size(); ++i) neighbourhood.bits[i] |= m.bits[i];
  }
  std::vector<RegionCandidate> out;
  out.push_back(RegionCandidate::from_mask(world_.subject(view)));
  out.push_back(RegionCandidate::from_mask(std::move(neighbourhood)));
  out.push_back(RegionCandidate::from_mask(world_.part_mask(view, part)));
  return out;
}

SyntheticInpainter::SyntheticInpainter(const SynthWorld& world, std::string image_id_1, std::string image_id_2,
                                       double strength_min, double strength_max)
    : world_(world), ids_{std::move(image_id_1), std::move(image_id_2)}, strength_min_(strength_min),
      strength_max_(strength_max) {}

InpaintResult SyntheticInpainter::inpaint(const InpaintRequest& request) {
  const int view = view_of(ids_, request.image_id);
  if (request.region.count() == 0) fail(ErrorCode::port_failure, "synthetic inpainter: zero-area region");
  std::mt19937_64 rng(request.seed);
  std::uniform_real_distribution<double> strength(strength_min_, strength_max_);
  const double s = strength(rng);
  InpaintResult out;
  out.image_id = request.image_id + "_inpainted";
  out.stack = world_.inpaint(view, request.region, rng(), s);
  out.stack.image_id = out.image_id;
  return out;
}

// --- validator -----------------------------------------------------------------

std::vector<std::string> check_accepted_record(const SampleRecord& record, const std::filesystem::path& base_dir,
                                               const PipelineConfig& cfg) {
  std::vector<std::string> issues;
  auto issue = [&](const std::string& what) { issues.push_back(record.sample_id + ": " + what); };
  if (!record.has_inconsistent_pair()) {
    issue("record has no inconsistent pair");
    return issues;
  }
  const Mask o1 = load_mask(resolve(base_dir, record.subject_mask_1));
  const Mask o2 = load_mask(resolve(base_dir, record.subject_mask_2));
  const Mask r1 = load_mask(resolve(base_dir, *record.region_mask_1));
  const Mask r2 = load_mask(resolve(base_dir, *record.region_mask_2));
  const std::pair<const Mask*, const Mask*> regions[] = {{&r1, &o1}, {&r2, &o2}};
  int i = 1;
  for (const auto& [r, o] : regions) {
    const auto tag = std::to_string(i++);
    if (r->height != o->height || r->width != o->width || !r->subset_of(*o)) {
      issue("R" + tag + " not inside O" + tag);
      continue;
    }
    const double frac = static_cast<double>(r->count()) / static_cast<double>(std::max<std::size_t>(o->count(), 1));
    if (frac < cfg.region_frac_min || frac > cfg.region_frac_max) {
      issue("region fraction " + std::to_string(frac) + " outside bounds for R" + tag);
    }
    if (const auto box = bounding_box(*r)) {
      const double aspect = static_cast<double>(box->width()) / static_cast<double>(box->height());
      if (aspect < cfg.aspect_min || aspect > cfg.aspect_max) issue("aspect ratio out of bounds for R" + tag);
    }
  }

  const auto s1 = load_stack(resolve(base_dir, record.consistent_1.stack_path));
  const auto s2 = load_stack(resolve(base_dir, record.consistent_2.stack_path));
  if (!record.correspondences || !record.provenance.anchor_index ||
      *record.provenance.anchor_index >= record.correspondences->size()) {
    issue("missing anchor correspondence");
  } else {
    const auto& corr = *record.correspondences;
    const auto k = *record.provenance.anchor_index;
    const auto d = similarity(flatten_layer(s1, cfg.correspondence_layer, true),
                              flatten_layer(s2, cfg.correspondence_layer, true));
    const auto row = std::size_t{corr.points_a[k].y} * o1.width + corr.points_a[k].x;
    const auto col = std::size_t{corr.points_b[k].y} * o2.width + corr.points_b[k].x;
    const double skew = row_skewness(d, row, o2).value;
    if (skew < cfg.skewness_min) issue("anchor skewness " + std::to_string(skew) + " below minimum");
    if (d.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) < cfg.anchor_score_min) {
      issue("anchor similarity below minimum");
    }
  }

  const auto t1 = load_stack(resolve(base_dir, record.inconsistent_1->stack_path));
  const auto t2 = load_stack(resolve(base_dir, record.inconsistent_2->stack_path));
  const double p1 = feature_perceptual_distance(s1, t1, r1);
  const double p2 = feature_perceptual_distance(s2, t2, r2);
  if (p1 < cfg.perceptual_min) issue("perceptual distance " + std::to_string(p1) + " below minimum for image 1");
  if (p2 < cfg.perceptual_min) issue("perceptual distance " + std::to_string(p2) + " below minimum for image 2");
  return issues;
}

}  // namespace mtg
