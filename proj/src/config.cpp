#include "mtg/config.hpp"

#include <fstream>

#include "mtg/error.hpp"

namespace mtg {

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::usage, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "synth" && key != "pipeline" && key != "train" && key != "vsm") {
      fail(ErrorCode::usage, "unknown config section '" + key + "'");
    }
  }
  RunConfig c;
  try {
    if (j.contains("synth")) c.synth = synth_gen_config_from_json(j["synth"]);
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      c.pipeline = pipeline_config_from_json(p);
      c.inpaint.min = p.value("inpaint_strength_min", c.inpaint.min);
      c.inpaint.max = p.value("inpaint_strength_max", c.inpaint.max);
      if (!(c.inpaint.min >= 0.0 && c.inpaint.min <= c.inpaint.max && c.inpaint.max <= 1.0)) {
        fail(ErrorCode::usage, "inpaint strength range must satisfy 0 <= min <= max <= 1");
      }
    }
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("vsm")) c.vsm = vsm_config_from_json(j["vsm"]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return {};
  std::ifstream in(*path);
  if (!in) fail(ErrorCode::io, "cannot open config " + path->string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, "config " + path->string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mtg
