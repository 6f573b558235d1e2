#include <doctest.h>

#include <cmath>
#include <fstream>

#include "mtg/error.hpp"
#include "mtg/eval.hpp"
#include "support.hpp"

using namespace mtg;

namespace {

using V = std::vector<double>;

Mask with_count(std::size_t n, std::uint32_t h = 20, std::uint32_t w = 20) {
  Mask m(h, w);
  for (std::size_t i = 0; i < n; ++i) m.bits[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("oracle examples") {
  const auto o = with_count(200);
  CHECK(oracle_score(with_count(50), o) == 0.75);
  CHECK(oracle_score(Mask(20, 20), o) == 1.0);
  CHECK(oracle_score(o, o) == 0.0);
  CHECK_THROWS_AS(oracle_score(Mask(20, 20), Mask(20, 20)), Error);
  CHECK_THROWS_AS(oracle_score(with_count(300), o), Error);
}

TEST_CASE("oracle stays in the unit interval") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto o = testing::random_mask(rng, 10, 10, 0.7);
    if (o.count() == 0) continue;
    Mask r = o;
    for (auto& b : r.bits) b = b && (rng() & 1);
    const double v = oracle_score(r, o);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("correlation examples") {
  CHECK(pearson(V{1, 2, 3}, V{2, 4, 6}).value == doctest::Approx(1.0));
  CHECK(spearman(V{1, 2, 3}, V{2, 4, 6}).value == doctest::Approx(1.0));
  CHECK(pearson(V{1, 2, 3}, V{6, 4, 2}).value == doctest::Approx(-1.0));
  CHECK(spearman(V{1, 2, 3}, V{6, 4, 2}).value == doctest::Approx(-1.0));
  CHECK(std::abs(spearman(V{1, 2, 3, 4}, V{1, 3, 2, 4}).value - 0.8) < 1e-9);
  CHECK_FALSE(pearson(V{1, 2}, V{1, 2}).defined);
  CHECK_FALSE(spearman(V{1, 1, 1}, V{1, 2, 3}).defined);
  CHECK_THROWS_AS(pearson(V{1, 2, 3}, V{1, 2}), Error);
}

TEST_CASE("average ranks share ties") {
  CHECK(average_ranks(V{10, 20, 20, 5}) == V{2, 3.5, 3.5, 1});
  CHECK(average_ranks(V{3, 3, 3}) == V{2, 2, 2});
}

TEST_CASE("rank and affine invariances") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int t = 0; t < 20; ++t) {
    V x(15), y(15);
    for (auto& v : x) v = n(rng);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + n(rng);
    V mono(15), affine(15);
    for (std::size_t i = 0; i < x.size(); ++i) {
      mono[i] = std::exp(2.0 * x[i]) + x[i] * x[i] * x[i];
      affine[i] = 3.0 * x[i] - 7.0;
    }
    CHECK(spearman(mono, y).value == doctest::Approx(spearman(x, y).value).epsilon(1e-12));
    CHECK(pearson(affine, y).value == doctest::Approx(pearson(x, y).value).epsilon(1e-12));
  }
}

TEST_CASE("cosine baseline") {
  CHECK(baseline_cosine(V{1, 2, 3}, V{1, 2, 3}) == doctest::Approx(1.0));
  CHECK(baseline_cosine(V{1, 0}, V{0, 1}) == 0.0);
  CHECK(baseline_cosine(V{1, 1}, V{1, 0}) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(baseline_cosine(V{0, 0}, V{1, 0}), Error);
}

TEST_CASE("mean pooled embedding concatenates layer means") {
  FeatureStack s;
  s.layers.push_back(LayerBlock{4, 2, 1, 2, {1, 2, 3, 4}});
  s.layers.push_back(LayerBlock{5, 1, 1, 2, {10, 20}});
  CHECK(mean_pooled_embedding(s) == V{2, 3, 15});
}

TEST_CASE("report against a perfect copy of the oracle") {
  OracleSeries o{{"a", "b", "c", "d"}, {0.9, 0.5, 0.7, 0.1}};
  MetricSeries copy{"copy", {"d", "c", "b", "a"}, {0.1, 0.7, 0.5, 0.9}};
  MetricSeries flipped{"flip", {"a", "b", "c", "d"}, {0.1, 0.5, 0.3, 0.9}};
  const std::vector<MetricSeries> series{copy, flipped};
  const auto r = correlation_report(series, o);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].pearson.value == doctest::Approx(1.0));
  CHECK(r.rows[0].spearman.value == doctest::Approx(1.0));
  CHECK(r.rows[1].spearman.value == doctest::Approx(-1.0));
  CHECK(r.to_text().find("copy") != std::string::npos);
  CHECK(r.to_json()["metrics"][0]["metric"] == "copy");

  MetricSeries missing{"m", {"a", "b", "c"}, {1, 2, 3}};
  CHECK_THROWS_AS(correlation_report(std::vector<MetricSeries>{missing}, o), Error);
  MetricSeries dup{"d", {"a", "a", "c", "d"}, {1, 2, 3, 4}};
  CHECK_THROWS_AS(correlation_report(std::vector<MetricSeries>{dup}, o), Error);
}

TEST_CASE("histogram bins") {
  const auto h = histogram(V{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 20);
  CHECK(h.counts.size() == 20);
  CHECK(h.lo == 0);
  CHECK(h.hi == 10);
  CHECK(h.counts.front() == 1);
  CHECK(h.counts.back() == 1);
  std::size_t total = 0;
  for (auto c : h.counts) total += c;
  CHECK(total == 11);
  const auto flat = histogram(V{2, 2, 2}, 20);
  CHECK(flat.counts[0] + flat.counts.back() == 3);
  CHECK(histogram_csv(h).rfind("bin,lo,hi,count\n", 0) == 0);
}

TEST_CASE("scores csv round trip") {
  const auto dir = testing::scratch_dir("eval_csv");
  MetricSeries s{"vsm", {"x1", "x2"}, {0.25, 0.125}};
  write_scores_csv(s, dir / "s.csv");
  const auto back = read_scores_csv(dir / "s.csv", "vsm");
  CHECK(back.ids == s.ids);
  CHECK(back.scores == s.scores);
  std::ofstream(dir / "bad.csv") << "sample_id,score\nx1;0.5\n";
  CHECK_THROWS_AS(read_scores_csv(dir / "bad.csv", "b"), Error);
  std::ofstream(dir / "e.csv") << "1.5, 2\n-3\n";
  CHECK(read_embedding_csv(dir / "e.csv") == V{1.5, 2, -3});
}
