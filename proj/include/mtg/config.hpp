#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "mtg/dataset.hpp"
#include "mtg/datagen.hpp"
#include "mtg/trainer.hpp"
#include "mtg/vsm.hpp"

namespace mtg {

/// Defaults overridden by the optional sections "synth", "pipeline", "train"
/// and "vsm" of one JSON file. Unknown top-level sections are an error.
struct RunConfig {
  SynthGenConfig synth;
  PipelineConfig pipeline;
  InpaintStrength inpaint;
  TrainConfig train;
  VsmConfig vsm;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::optional<std::filesystem::path>& path);

}  // namespace mtg
