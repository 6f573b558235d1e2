#include <doctest.h>

#include <fstream>

#include "mtg/config.hpp"
#include "mtg/error.hpp"
#include "support.hpp"

using namespace mtg;

TEST_CASE("sections override defaults") {
  const auto j = nlohmann::json::parse(R"({
    "synth": {"world": {"grid": 32, "subject_min": 10, "subject_max": 14}},
    "pipeline": {"inpaint_strength_min": 0.2, "inpaint_strength_max": 0.8},
    "train": {"feature_dim": 16, "epochs": 20},
    "vsm": {"visual_threshold": 0.5}
  })");
  const auto c = run_config_from_json(j);
  CHECK(c.synth.world.grid == 32);
  CHECK(c.inpaint.min == 0.2);
  CHECK(c.inpaint.max == 0.8);
  CHECK(c.train.feature_dim == 16);
  CHECK(c.train.epochs == 20);
  CHECK(c.vsm.visual_threshold == 0.5);
  CHECK(c.vsm.semantic_threshold == VsmConfig{}.semantic_threshold);
}

TEST_CASE("empty object keeps every default") {
  const auto c = run_config_from_json(nlohmann::json::object());
  CHECK(to_json(c.train) == to_json(TrainConfig{}));
  CHECK(to_json(c.vsm) == to_json(VsmConfig{}));
  CHECK(c.inpaint.min == InpaintStrength{}.min);
}

TEST_CASE("bad configs are usage errors") {
  auto usage = [](const nlohmann::json& j) {
    try {
      run_config_from_json(j);
    } catch (const Error& e) {
      return e.code() == ErrorCode::usage;
    }
    return false;
  };
  CHECK(usage(nlohmann::json::parse(R"({"trian": {}})")));
  CHECK(usage(nlohmann::json::array()));
  CHECK(usage(nlohmann::json::parse(R"({"pipeline": {"inpaint_strength_min": 0.9, "inpaint_strength_max": 0.5}})")));
  CHECK(usage(nlohmann::json::parse(R"({"train": {"epochs": "many"}})")));
}

TEST_CASE("shipped config loads") {
  const auto c = load_run_config(std::filesystem::path(MTG_SOURCE_DIR) / "configs" / "synthetic.json");
  CHECK(c.train.feature_dim == 32);
  CHECK(c.train.epochs == 30);
  CHECK(c.synth.world.channels == 48);
  CHECK(load_run_config(std::nullopt).train.epochs == TrainConfig{}.epochs);
  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), Error);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), Error);
}
