#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mtg/correspondence.hpp"
#include "mtg/feature_store.hpp"
#include "mtg/manifest.hpp"
#include "mtg/synth_world.hpp"

namespace mtg {

struct PipelineConfig {
  double skewness_min = 1.3;
  double region_frac_min = 0.05;
  double region_frac_max = 0.60;
  double aspect_min = 0.25;
  double aspect_max = 4.0;
  double perceptual_min = 0.15;
  double pad_frac = 0.25;
  double anchor_score_min = 0.7;
  std::uint32_t correspondence_layer = 6;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Why a candidate sample was filtered out. Filtering is data, not an error.
enum class Rejection {
  low_similarity,
  ambiguous_matches,
  segmentation_failed,
  too_small,
  too_large,
  bad_aspect,
  outside_subject,
  low_perceptual,
};

std::string_view to_string(Rejection r) noexcept;
inline constexpr std::array<Rejection, 8> kAllRejections = {
    Rejection::low_similarity, Rejection::ambiguous_matches, Rejection::segmentation_failed, Rejection::too_small,
    Rejection::too_large,      Rejection::bad_aspect,        Rejection::outside_subject,     Rejection::low_perceptual};

struct RegionCandidate {
  Mask mask;
  std::size_t area = 0;
  BoundingBox bbox;

  /// Computes area and tight box; an empty mask gets a zero box.
  static RegionCandidate from_mask(Mask mask);
};

// --- ports -------------------------------------------------------------------------

/// Point-prompted segmentation returning several candidate masks.
class SegmenterPort {
 public:
  virtual ~SegmenterPort() = default;
  virtual std::vector<RegionCandidate> segment(const std::string& image_id, GridPoint point) = 0;
};

struct InpaintRequest {
  std::string image_id;
  Mask region;
  BoundingBox crop;  // padded patch handed to the inpainter
  std::string prompt;
  std::uint64_t seed = 0;
};

struct InpaintResult {
  std::string image_id;
  FeatureStack stack;
};

class InpainterPort {
 public:
  virtual ~InpainterPort() = default;
  virtual InpaintResult inpaint(const InpaintRequest& request) = 0;
};

/// Distance >= 0 between a region before and after inpainting.
class PerceptualPort {
 public:
  virtual ~PerceptualPort() = default;
  virtual double distance(const FeatureStack& before, const FeatureStack& after, const Mask& region) = 0;
};

// --- pipeline stages -----------------------------------------------------------------

/// Uniform draw among points with score >= anchor_score_min and skewness >= skewness_min.
std::variant<std::size_t, Rejection> sample_anchor(const CorrespondenceSet& corr, const PipelineConfig& cfg,
                                                   std::mt19937_64& rng);

/// Smallest-area candidate, first one on ties. Throws Error(empty_input) on an empty list.
const RegionCandidate& select_region(std::span<const RegionCandidate> candidates);

/// nullopt when both regions pass the size, aspect and containment checks.
std::optional<Rejection> validate_regions(const Mask& r1, const Mask& r2, const Mask& o1, const Mask& o2,
                                          const PipelineConfig& cfg);

/// Expands the box by ceil(pad_frac * longer side) on every side, clamped to [0, width] x [0, height].
BoundingBox crop_with_padding(const BoundingBox& box, double pad_frac, std::uint32_t height, std::uint32_t width);

bool perceptual_keep(double distance, const PipelineConfig& cfg) noexcept;

/// Mean over region cells of the distance between L2-normalized feature vectors
/// (all layers concatenated) before and after.
double feature_perceptual_distance(const FeatureStack& before, const FeatureStack& after, const Mask& region);

struct Ports {
  SegmenterPort& segmenter;
  InpainterPort& inpainter;
  PerceptualPort& perceptual;
};

struct PairInput {
  std::string image_id_1;
  std::string image_id_2;
  const FeatureStack& stack_1;
  const FeatureStack& stack_2;
  const Mask& subject_1;
  const Mask& subject_2;
  std::string target_prompt;
};

struct InconsistentPair {
  InpaintResult first;
  InpaintResult second;
};

/// Inpaints each image independently on its padded crop.
InconsistentPair make_inconsistent_pair(const PairInput& input, const Mask& r1, const Mask& r2, InpainterPort& inpainter,
                                        const PipelineConfig& cfg, std::mt19937_64& rng);

struct GeneratedSample {
  std::optional<Rejection> rejection;
  CorrespondenceSet correspondences;
  std::optional<std::size_t> anchor;
  double anchor_score = 0.0;
  double anchor_skewness = 0.0;
  Mask region_1;
  Mask region_2;
  std::optional<InconsistentPair> inconsistent;
  std::array<double, 2> perceptual{0.0, 0.0};

  bool accepted() const noexcept { return !rejection.has_value(); }
};

/// The full candidate-to-record chain; any stage may reject.
GeneratedSample generate_sample(const PairInput& input, Ports& ports, const PipelineConfig& cfg,
                                std::uint64_t sample_seed);

// --- synthetic ports ---------------------------------------------------------------

/// Returns {whole subject, part plus adjacent parts, part} for the part under the point.
class SyntheticSegmenter : public SegmenterPort {
 public:
  SyntheticSegmenter(const SynthWorld& world, std::string image_id_1, std::string image_id_2);
  std::vector<RegionCandidate> segment(const std::string& image_id, GridPoint point) override;

 private:
  const SynthWorld& world_;
  std::array<std::string, 2> ids_;
};

/// Replaces appearance codes inside the region with fresh draws; blend strength is
/// drawn uniformly from [strength_min, strength_max] per request.
class SyntheticInpainter : public InpainterPort {
 public:
  SyntheticInpainter(const SynthWorld& world, std::string image_id_1, std::string image_id_2,
                     double strength_min = 0.6, double strength_max = 1.0);
  InpaintResult inpaint(const InpaintRequest& request) override;

 private:
  const SynthWorld& world_;
  std::array<std::string, 2> ids_;
  double strength_min_;
  double strength_max_;
};

class FeaturePerceptual : public PerceptualPort {
 public:
  double distance(const FeatureStack& before, const FeatureStack& after, const Mask& region) override {
    return feature_perceptual_distance(before, after, region);
  }
};

// --- independent re-check --------------------------------------------------------

/// Re-derives every filter quantity of an accepted record from its files and
/// returns one message per violated threshold (empty when the record is clean).
std::vector<std::string> check_accepted_record(const SampleRecord& record, const std::filesystem::path& base_dir,
                                               const PipelineConfig& cfg);

}  // namespace mtg
