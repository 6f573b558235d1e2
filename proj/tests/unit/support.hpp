#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "mtg/feature_store.hpp"

namespace mtg::testing {

inline FeatureStack random_stack(std::mt19937_64& rng, std::uint32_t layers, std::uint32_t h, std::uint32_t w,
                                 std::uint32_t channels, std::uint32_t first_id = 4) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  FeatureStack s;
  s.image_id = "img";
  for (std::uint32_t l = 0; l < layers; ++l) {
    LayerBlock b;
    b.layer_id = first_id + l;
    b.channels = channels;
    b.height = h;
    b.width = w;
    b.values.resize(std::size_t{h} * w * channels);
    for (auto& v : b.values) v = n(rng);
    s.layers.push_back(std::move(b));
  }
  return s;
}

inline Mask random_mask(std::mt19937_64& rng, std::uint32_t h, std::uint32_t w, double p = 0.5) {
  std::bernoulli_distribution bit(p);
  Mask m(h, w);
  for (auto& b : m.bits) b = bit(rng) ? 1 : 0;
  return m;
}

inline Mask box_mask(std::uint32_t h, std::uint32_t w, std::uint32_t y0, std::uint32_t x0, std::uint32_t y1,
                     std::uint32_t x1) {
  Mask m(h, w);
  for (auto y = y0; y < y1; ++y)
    for (auto x = x0; x < x1; ++x) m.set(y, x);
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace mtg::testing
