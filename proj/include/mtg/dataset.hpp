#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtg/datagen.hpp"
#include "mtg/manifest.hpp"
#include "mtg/synth_world.hpp"

namespace mtg {

/// splitmix64 of (base ^ index) mixed with a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t stream);

struct SynthGenConfig {
  std::size_t count = 100;
  /// Template for every world; seeds and part count are set per sample.
  SynthWorldConfig world;
  std::vector<std::uint32_t> part_counts = {4, 6, 9};
  /// Probability that a sample's subject is one flat material (no texture).
  double untextured_fraction = 0.1;
  std::uint64_t seed = 0;
  std::string prefix = "s";

  void validate() const;
};

nlohmann::json to_json(const SynthGenConfig& cfg);
SynthGenConfig synth_gen_config_from_json(const nlohmann::json& j);

/// World parameters for sample `index`. The mixing seed stays shared so all
/// worlds live in the same feature space.
SynthWorldConfig world_for_sample(const SynthGenConfig& cfg, std::size_t index);

/// Writes stacks/, masks/ and manifest.jsonl of consistent pairs into `out_dir`.
std::vector<SampleRecord> synth_generate(const SynthGenConfig& cfg, const std::filesystem::path& out_dir);

// Weak blends barely change a region yet still count fully in the oracle,
// so the default stays close to a full regeneration.
struct InpaintStrength {
  double min = 0.6;
  double max = 1.0;
};

struct PipelineStats {
  std::size_t candidates = 0;
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> rejections;

  nlohmann::json to_json() const;
};

/// Runs the inconsistency pipeline over every stage-0 record of a synthetic
/// manifest. Writes the accepted records to out_dir/manifest.jsonl, one line
/// per rejected candidate to out_dir/rejections.jsonl, and out_dir/stats.json.
PipelineStats run_pipeline(const std::filesystem::path& input_manifest, const PipelineConfig& cfg,
                           const std::filesystem::path& out_dir, const InpaintStrength& strength = {},
                           std::optional<std::size_t> max_accepted = std::nullopt);

}  // namespace mtg
