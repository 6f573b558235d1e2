#include <doctest.h>

#include <fstream>
#include <sstream>

#include "gradcheck.hpp"
#include "mtg/checkpoint.hpp"
#include "mtg/dataset.hpp"
#include "mtg/error.hpp"
#include "mtg/trainer.hpp"

using namespace mtg;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small synthetic dataset on a 24 x 24 grid, built once per process.
const std::filesystem::path& small_dataset() {
  static const std::filesystem::path dir = [] {
    auto d = testing::scratch_dir("trainer_data");
    SynthGenConfig gen;
    gen.count = 80;
    gen.seed = 21;
    gen.world.grid = 24;
    gen.world.subject_min = 12;
    gen.world.subject_max = 18;
    synth_generate(gen, d / "gen");
    PipelineConfig cfg;
    cfg.seed = 5;
    run_pipeline(d / "gen" / "manifest.jsonl", cfg, d / "acc", {}, 50);
    return d;
  }();
  return dir;
}

ManifestSource small_source() {
  auto records = load_manifest(small_dataset() / "acc" / "manifest.jsonl");
  return ManifestSource(std::move(records), small_dataset() / "acc", true, 24);
}

MemorySource toy_source() {
  std::vector<TrainingSample> samples;
  ModelConfig cfg;
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto t = testing::make_toy_sample(40 + s);
    cfg = t.params.config();
    samples.push_back(std::move(t.sample));
  }
  return MemorySource(std::move(samples), cfg);
}

}  // namespace

TEST_CASE("train config validation and json") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 25;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.seed = 99;
  c.max_steps = 7;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("fifty samples and a hundred steps lower the loss") {
  const auto source = small_source();
  REQUIRE(source.size() == 50);
  TrainConfig cfg;
  cfg.feature_dim = 16;
  cfg.batch_size = 2;
  cfg.epochs = 10;
  cfg.max_steps = 100;
  cfg.seed = 3;
  const auto r = train(source, cfg);
  REQUIRE(r.step_losses.size() == 100);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += r.step_losses[static_cast<std::size_t>(i)].total;
    last += r.step_losses[static_cast<std::size_t>(90 + i)].total;
  }
  CHECK(last < first);
}

TEST_CASE("history carries the schedule") {
  TrainConfig cfg;
  cfg.feature_dim = 4;
  cfg.batch_size = 3;
  cfg.seed = 1;
  const auto r = train(toy_source(), cfg);
  REQUIRE(r.history.size() == 30);
  CHECK(r.history[9].lr == doctest::Approx(1e-3));
  CHECK(r.history[10].lr == doctest::Approx(1e-4));
  CHECK(r.history[20].lr == doctest::Approx(1e-5));
  const auto csv = history_csv(r.history);
  CHECK(csv.rfind("epoch,L_s,L_v_in,L_v_out,L_total,lr\n", 0) == 0);
}

TEST_CASE("same seed gives identical checkpoints") {
  const auto dir = testing::scratch_dir("trainer_det");
  TrainConfig cfg;
  cfg.feature_dim = 8;
  cfg.batch_size = 2;
  cfg.epochs = 10;
  cfg.max_steps = 6;
  cfg.seed = 17;
  const auto source = small_source();
  train(source, cfg, {dir / "a"});
  train(source, cfg, {dir / "b"});
  cfg.threads = 2;
  train(source, cfg, {dir / "c"});
  for (const auto* f : {"model.mtgp", "epoch_000.mtgp", "history.csv"}) {
    INFO(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(slurp(dir / "a" / f) == slurp(dir / "c" / f));
  }
  cfg.threads = 1;
  cfg.seed = 18;
  train(source, cfg, {dir / "d"});
  CHECK(slurp(dir / "a" / "model.mtgp") != slurp(dir / "d" / "model.mtgp"));
  const auto ck = load_checkpoint(dir / "a" / "model.mtgp");
  CHECK(ck.metadata["train"]["seed"] == 17);
  CHECK(ck.params.feature_dim() == 8);
}

TEST_CASE("manifest source needs inconsistent records") {
  auto records = load_manifest(small_dataset() / "gen" / "manifest.jsonl");
  CHECK_THROWS_AS(ManifestSource(records, small_dataset() / "gen", true, 24), Error);
}
