#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtg/feature_store.hpp"

namespace mtg {

/// A feature stack referenced from a manifest; paths are relative to the manifest directory.
struct ArtifactRef {
  std::string image_id;
  std::string stack_path;
  bool operator==(const ArtifactRef&) const = default;
};

struct Provenance {
  std::string source = "synthetic";
  std::uint64_t seed = 0;
  /// Generator parameters for synthetic records (enough to rebuild the world).
  nlohmann::json world;
  std::optional<std::uint64_t> anchor_index;
  std::optional<double> anchor_score;
  std::optional<double> anchor_skewness;
  std::vector<double> perceptual_distances;
  std::optional<std::string> rejection;
  bool operator==(const Provenance&) const = default;
};

/// One dataset element. Stage-0 records (consistent pairs only) leave the
/// inconsistent stacks, region masks and correspondences empty.
struct SampleRecord {
  std::string sample_id;
  ArtifactRef consistent_1;
  ArtifactRef consistent_2;
  std::optional<ArtifactRef> inconsistent_1;
  std::optional<ArtifactRef> inconsistent_2;
  std::string subject_mask_1;
  std::string subject_mask_2;
  std::optional<std::string> region_mask_1;
  std::optional<std::string> region_mask_2;
  std::optional<CorrespondenceSet> correspondences;
  std::string subject_prompt;
  std::string target_prompt;
  Provenance provenance;

  bool has_inconsistent_pair() const noexcept { return inconsistent_1 && inconsistent_2 && region_mask_1 && region_mask_2; }
  bool operator==(const SampleRecord&) const = default;
};

nlohmann::json to_json(const SampleRecord& record);
SampleRecord record_from_json(const nlohmann::json& j);

/// Appends one JSON line.
void append_sample(std::ostream& manifest, const SampleRecord& record);

struct ManifestCheck {
  bool resolve_files = true;   // referenced stacks/masks must exist
  bool check_regions = true;   // R_i must lie inside O_i
};

/// Parses a JSON Lines manifest. With checks enabled, paths are resolved
/// against `base_dir` and mask containment is verified; violations raise
/// Error(integrity) naming the record.
std::vector<SampleRecord> read_manifest(std::istream& in, const std::filesystem::path& base_dir,
                                        const ManifestCheck& check = {});
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path, const ManifestCheck& check = {});

/// Resolves a manifest-relative path.
std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& relative);

}  // namespace mtg
