#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mtg/correspondence.hpp"
#include "mtg/error.hpp"
#include "support.hpp"

using namespace mtg;

namespace {

FeatureMatrix matrix_from(std::initializer_list<std::initializer_list<double>> rows, bool normalize = false) {
  FeatureMatrix m;
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m.values(i, j++) = v;
    ++i;
  }
  m.grid_height = 1;
  m.grid_width = static_cast<std::uint32_t>(rows.size());
  if (normalize) normalize_rows(m);
  return m;
}

FeatureMatrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, bool normalize) {
  std::normal_distribution<double> n;
  FeatureMatrix m;
  m.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = n(rng);
  m.grid_height = 1;
  m.grid_width = static_cast<std::uint32_t>(rows);
  if (normalize) normalize_rows(m);
  return m;
}

SimilarityMatrix similarity_from(const RowMatrix& values, std::uint32_t h, std::uint32_t w) {
  SimilarityMatrix d;
  d.values = values;
  d.height_a = h;
  d.width_a = w;
  d.height_b = h;
  d.width_b = w;
  return d;
}

}  // namespace

TEST_CASE("flatten layer is position major") {
  FeatureStack s;
  s.layers.push_back(LayerBlock{6, 1, 2, 2, {1, 2, 3, 4}});
  const auto m = flatten_layer(s, 6, false);
  REQUIRE(m.values.rows() == 4);
  REQUIRE(m.values.cols() == 1);
  CHECK(m.values(2, 0) == 3);
  CHECK_THROWS_AS(flatten_layer(s, 7, false), Error);
}

TEST_CASE("row normalization") {
  auto m = matrix_from({{3, 4}, {0, 0}}, true);
  CHECK(m.values(0, 0) == doctest::Approx(0.6));
  CHECK(m.values(0, 1) == doctest::Approx(0.8));
  CHECK(m.values(1, 0) == 0.0);
  CHECK(m.zero_rows[1] == 1);
  CHECK(m.has_degenerate_rows());
}

TEST_CASE("similarity examples") {
  const auto eye = matrix_from({{1, 0}, {0, 1}});
  const auto d = similarity(eye, eye);
  CHECK(d.values.isApprox(RowMatrix::Identity(2, 2)));
  const auto row = similarity(matrix_from({{1, 0}}), eye);
  CHECK(row.values(0, 0) == 1.0);
  CHECK(row.values(0, 1) == 0.0);
  CHECK_THROWS_AS(similarity(eye, matrix_from({{1, 0, 0}})), Error);
}

TEST_CASE("similarity matches a triple loop") {
  std::mt19937_64 rng(11);
  const auto a = random_matrix(rng, 5, 3, false);
  const auto b = random_matrix(rng, 4, 3, false);
  const auto d = similarity(a, b);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.values(i, k) * b.values(j, k);
      CHECK(d.values(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  // similarity(A, B) = similarity(B, A)^T
  CHECK(similarity(b, a).values.isApprox(d.values.transpose(), 1e-14));
}

TEST_CASE("normalized similarities are bounded") {
  std::mt19937_64 rng(12);
  const auto a = random_matrix(rng, 30, 8, true);
  const auto b = random_matrix(rng, 40, 8, true);
  const auto d = similarity(a, b);
  CHECK(d.values.maxCoeff() <= 1.0 + 1e-5);
  CHECK(d.values.minCoeff() >= -1.0 - 1e-5);
  for (Eigen::Index i = 0; i < a.values.rows(); ++i) CHECK(a.values.row(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("self match is the identity") {
  std::mt19937_64 rng(13);
  const auto a = random_matrix(rng, 9, 5, true);
  auto d = similarity(a, a);
  d.height_a = d.height_b = 3;
  d.width_a = d.width_b = 3;
  const auto c = argmax_match(d, full_mask(3, 3), full_mask(3, 3));
  REQUIRE(c.size() == 9);
  for (std::size_t j = 0; j < 9; ++j) CHECK(c.points_a[j] == c.points_b[j]);
}

TEST_CASE("single candidate takes every point") {
  std::mt19937_64 rng(14);
  const auto a = random_matrix(rng, 4, 3, true);
  auto d = similarity(a, a);
  d.height_a = d.height_b = 2;
  d.width_a = d.width_b = 2;
  Mask b(2, 2);
  b.set(1, 0);
  const auto c = argmax_match(d, full_mask(2, 2), b);
  for (const auto& p : c.points_b) CHECK(p == GridPoint{0, 1});
  CHECK_THROWS_AS(argmax_match(d, full_mask(2, 2), Mask(2, 2)), Error);
}

TEST_CASE("argmax agrees with an exhaustive scan") {
  RowMatrix v(3, 3);
  v << 0.1, 0.9, 0.2,  //
      0.5, 0.5, 0.4,   //
      -0.3, -0.2, -0.1;
  const auto d = similarity_from(v, 1, 3);
  const auto c = argmax_match(d, full_mask(1, 3), full_mask(1, 3));
  for (int i = 0; i < 3; ++i) {
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (v(i, j) > v(i, best)) best = j;
    CHECK(c.points_b[static_cast<std::size_t>(i)].x == static_cast<std::uint32_t>(best));
    CHECK(c.scores[static_cast<std::size_t>(i)] == v(i, best));
  }
  // tie between columns 0 and 1 goes to the smaller index
  CHECK(c.points_b[1].x == 0);
}

TEST_CASE("argmax is permutation equivariant") {
  std::mt19937_64 rng(15);
  const auto a = random_matrix(rng, 16, 6, true);
  auto b = random_matrix(rng, 16, 6, true);
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  FeatureMatrix pb = b;
  for (std::size_t i = 0; i < 16; ++i) pb.values.row(static_cast<Eigen::Index>(perm[i])) = b.values.row(static_cast<Eigen::Index>(i));
  auto d = similarity(a, b);
  auto pd = similarity(a, pb);
  for (auto* m : {&d, &pd}) {
    m->height_a = m->height_b = 4;
    m->width_a = m->width_b = 4;
  }
  const auto c = argmax_match(d, full_mask(4, 4), full_mask(4, 4));
  const auto pc = argmax_match(pd, full_mask(4, 4), full_mask(4, 4));
  for (std::size_t j = 0; j < 16; ++j) {
    const auto idx = c.points_b[j].y * 4 + c.points_b[j].x;
    const auto pidx = pc.points_b[j].y * 4 + pc.points_b[j].x;
    CHECK(pidx == perm[idx]);
  }
}

TEST_CASE("skewness examples") {
  const std::vector<double> sym{1, 2, 3};
  CHECK(sample_skewness(sym).value == doctest::Approx(0.0));
  const std::vector<double> spike{0, 0, 0, 1};
  CHECK(std::abs(sample_skewness(spike).value - 2.0) < 1e-9);
  const std::vector<double> flat{5, 5, 5, 5};
  const auto f = sample_skewness(flat);
  CHECK(f.value == 0.0);
  CHECK(f.flat);
  const std::vector<double> two{1, 2};
  CHECK_THROWS_AS(sample_skewness(two), Error);
}

TEST_CASE("skewness is affine invariant and flips under negation") {
  std::mt19937_64 rng(16);
  std::gamma_distribution<double> g(2.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(25), y(25), z(25);
    for (auto& v : x) v = g(rng);
    const double a = 0.1 + trial, b = trial - 7.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = a * x[i] + b;
      z[i] = -a * x[i] + b;
    }
    const double s = sample_skewness(x).value;
    CHECK(sample_skewness(y).value == doctest::Approx(s).epsilon(1e-6));
    CHECK(sample_skewness(z).value == doctest::Approx(-s).epsilon(1e-6));
  }
}

TEST_CASE("row skewness respects the candidate mask") {
  RowMatrix v(1, 6);
  v << 0, 0, 0, 1, 100, -100;
  const auto d = similarity_from(v, 1, 6);
  Mask m(1, 6);
  for (int i = 0; i < 4; ++i) m.set(0, static_cast<std::size_t>(i));
  CHECK(std::abs(row_skewness(d, 0, m).value - 2.0) < 1e-9);
}

TEST_CASE("best match scores") {
  const auto eye = similarity_from(RowMatrix::Identity(4, 4), 2, 2);
  for (double s : best_match_scores(eye, full_mask(2, 2), full_mask(2, 2))) CHECK(s == 1.0);

  RowMatrix col(3, 1);
  col << 0.3, -0.2, 0.9;
  SimilarityMatrix d;
  d.values = col;
  d.height_a = 1;
  d.width_a = 3;
  d.height_b = 1;
  d.width_b = 1;
  const auto s = best_match_scores(d, full_mask(1, 3), full_mask(1, 1));
  CHECK(s == std::vector<double>{0.3, -0.2, 0.9});
}

TEST_CASE("best match scores agree with an exhaustive row max") {
  std::mt19937_64 rng(17);
  const auto a = random_matrix(rng, 36, 4, true);
  const auto b = random_matrix(rng, 36, 4, true);
  auto d = similarity(a, b);
  d.height_a = d.height_b = 6;
  d.width_a = d.width_b = 6;
  const auto ma = testing::random_mask(rng, 6, 6);
  const auto mb = testing::random_mask(rng, 6, 6);
  const auto scores = best_match_scores(d, ma, mb);
  std::size_t k = 0;
  for (std::size_t i = 0; i < 36; ++i) {
    if (!ma.test(i)) continue;
    double best = -2.0;
    for (std::size_t j = 0; j < 36; ++j)
      if (mb.test(j)) best = std::max(best, d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    CHECK(scores[k++] == best);
  }
  CHECK(k == scores.size());
}
