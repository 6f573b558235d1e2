#include <doctest.h>

#include <sstream>

#include "mtg/checkpoint.hpp"
#include "mtg/error.hpp"
#include "mtg/model.hpp"
#include "support.hpp"

using namespace mtg;

namespace {

ModelConfig small_config(std::uint32_t layers = 2, std::uint32_t q = 5, std::uint32_t grid = 4) {
  ModelConfig c;
  for (std::uint32_t l = 0; l < layers; ++l) {
    c.layer_ids.push_back(4 + l);
    c.in_channels.push_back(3 + l);
  }
  c.feature_dim = q;
  c.grid = grid;
  return c;
}

FeatureStack stack_for(const ModelConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<float> n;
  FeatureStack s;
  for (std::size_t l = 0; l < c.layer_ids.size(); ++l) {
    LayerBlock b{c.layer_ids[l], c.in_channels[l], c.grid, c.grid, {}};
    b.values.resize(std::size_t{c.grid} * c.grid * b.channels);
    for (auto& v : b.values) v = n(rng);
    s.layers.push_back(b);
  }
  return s;
}

}  // namespace

TEST_CASE("initialization contract") {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 1);
  CHECK(p.tau == doctest::Approx(0.07));
  for (const auto* b : {&p.semantic, &p.visual}) {
    REQUIRE(b->blocks.size() == 2);
    for (const auto& blk : b->blocks) {
      CHECK(blk.weight == doctest::Approx(0.5));
      CHECK(blk.w_out.isZero());
      CHECK(blk.b_in.isZero());
      CHECK(blk.b_out.isZero());
      CHECK_FALSE(blk.w_in.isZero());
      CHECK_FALSE(blk.w_hidden.isZero());
    }
  }
  CHECK(p.semantic.blocks[0].w_in.rows() == 5);
  CHECK(p.semantic.blocks[1].w_in.cols() == 4);
  CHECK_FALSE(p.semantic.blocks[0].w_in.isApprox(p.visual.blocks[0].w_in));
  const auto again = init_params(cfg, 1);
  CHECK(again.visual.blocks[1].w_hidden == p.visual.blocks[1].w_hidden);
}

TEST_CASE("zero initialized output reduces to the input projection") {
  std::mt19937_64 rng(2);
  const auto cfg = small_config();
  auto p = init_params(cfg, 3);
  const auto s = stack_for(cfg, rng);
  const auto out = aggregate(s, p.semantic, cfg.grid);
  const auto in = prepare_inputs(s, cfg.layer_ids, cfg.grid);
  RowMatrix expect = RowMatrix::Zero(16, 5);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& b = p.semantic.blocks[l];
    expect += b.weight * (in.layers[l] * b.w_in.transpose());
  }
  expect.rowwise().normalize();
  CHECK(out.values.isApprox(expect, 1e-12));
  CHECK(out.normalized);
}

TEST_CASE("zero layer weight gives degenerate rows") {
  std::mt19937_64 rng(4);
  const auto cfg = small_config(1);
  auto p = init_params(cfg, 5);
  p.visual.blocks[0].weight = 0.0;
  const auto out = aggregate(stack_for(cfg, rng), p.visual, cfg.grid);
  CHECK(out.values.isZero());
  CHECK(out.has_degenerate_rows());
}

TEST_CASE("outputs are unit rows on random input") {
  std::mt19937_64 rng(6);
  const auto cfg = small_config(3, 7, 5);
  auto p = init_params(cfg, 7);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& v : param_views(p, false))
    for (std::size_t i = 0; i < v.size; ++i) v.data[i] += n(rng);
  const auto out = aggregate(stack_for(cfg, rng), p.semantic, cfg.grid);
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) CHECK(out.values.row(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("aggregation is invariant to layer storage order") {
  std::mt19937_64 rng(8);
  const auto cfg = small_config(3, 4, 4);
  auto p = init_params(cfg, 9);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& v : param_views(p, false))
    for (std::size_t i = 0; i < v.size; ++i) v.data[i] += n(rng);
  const auto s = stack_for(cfg, rng);
  auto inputs = prepare_inputs(s, cfg.layer_ids, cfg.grid);
  auto branch = p.visual;
  const auto a = aggregate(inputs, branch);
  std::swap(inputs.layers[0], inputs.layers[2]);
  std::swap(branch.blocks[0], branch.blocks[2]);
  std::swap(branch.layer_ids[0], branch.layer_ids[2]);
  const auto b = aggregate(inputs, branch);
  CHECK(a.values.isApprox(b.values, 1e-12));
}

TEST_CASE("stacks on another grid are resampled first") {
  std::mt19937_64 rng(10);
  auto cfg = small_config(1, 3, 2);
  const auto small = stack_for(cfg, rng);
  const auto in = prepare_inputs(small, cfg.layer_ids, 4);
  CHECK(in.layers[0].rows() == 16);
  CHECK(in.layers[0](0, 0) == doctest::Approx(small.layers[0].values[0]));
  CHECK_THROWS_AS(prepare_inputs(small, {9}, 4), Error);
}

TEST_CASE("parameter views cover every tensor once") {
  const auto cfg = small_config();
  auto p = init_params(cfg, 11);
  const auto views = param_views(p, true);
  std::size_t total = 0;
  for (const auto& v : views) total += v.size;
  // per block: q*c + q + q*q + q + q*q + q + 1
  const std::size_t per_branch = (5 * 3 + 5 + 25 + 5 + 25 + 5 + 1) + (5 * 4 + 5 + 25 + 5 + 25 + 5 + 1);
  CHECK(total == 2 * per_branch + 1);
  CHECK(views.back().name == "tau");
  CHECK_FALSE(views.back().decay);
  CHECK(views.front().name == "semantic.4.w_in");
}

TEST_CASE("non-finite parameters are named") {
  auto p = init_params(small_config(), 12);
  p.visual.blocks[1].b_hidden[2] = std::nan("");
  try {
    check_finite(p, "test");
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
    CHECK(std::string(e.what()).find("visual.5.b_hidden") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  auto p = init_params(small_config(), 13);
  p.tau = 0.11;
  Checkpoint ck{p, {{"epoch", 3}}};
  std::ostringstream out;
  write_checkpoint(ck, out);
  std::istringstream in(out.str());
  const auto back = read_checkpoint(in);
  std::ostringstream again;
  write_checkpoint(back, again);
  CHECK(again.str() == out.str());
  CHECK(back.metadata["epoch"] == 3);
  CHECK(back.params.tau == 0.11);
  CHECK(back.params.visual.blocks[1].w_in == p.visual.blocks[1].w_in);
  CHECK(out.str().substr(0, 4) == "MTGP");

  std::istringstream cut(out.str().substr(0, out.str().size() / 2));
  CHECK_THROWS_AS(read_checkpoint(cut), Error);
}

TEST_CASE("atomic checkpoint save leaves no temporary") {
  const auto dir = testing::scratch_dir("ckpt");
  Checkpoint ck{init_params(small_config(), 14), {}};
  save_checkpoint(ck, dir / "m.mtgp");
  CHECK(std::filesystem::exists(dir / "m.mtgp"));
  CHECK(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator{}) == 1);
  CHECK(load_checkpoint(dir / "m.mtgp").params.semantic.blocks[0].w_in == ck.params.semantic.blocks[0].w_in);
}
