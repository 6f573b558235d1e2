#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mtg {

/// One backbone layer's activations, stored row-major over (row, column, channel).
struct LayerBlock {
  std::uint32_t layer_id = 0;
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> values;

  std::size_t positions() const noexcept { return std::size_t{height} * width; }
  const float* at(std::size_t row, std::size_t col) const noexcept {
    return values.data() + (row * width + col) * channels;
  }
  float* at(std::size_t row, std::size_t col) noexcept { return values.data() + (row * width + col) * channels; }

  bool operator==(const LayerBlock&) const = default;
};

/// Multi-layer dense features for one image.
struct FeatureStack {
  std::string image_id;
  std::vector<LayerBlock> layers;

  /// Throws Error(invariant / non_finite) when a structural invariant is violated.
  void validate() const;
  const LayerBlock* find_layer(std::uint32_t layer_id) const noexcept;
  const LayerBlock& layer(std::uint32_t layer_id) const;
  std::vector<std::uint32_t> layer_ids() const;

  bool operator==(const FeatureStack&) const = default;
};

/// Binary mask on a height x width grid, row-major.
struct Mask {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::uint32_t h, std::uint32_t w, std::uint8_t fill = 0)
      : height(h), width(w), bits(std::size_t{h} * w, fill) {}

  std::size_t size() const noexcept { return bits.size(); }
  bool test(std::size_t row, std::size_t col) const noexcept { return bits[row * width + col] != 0; }
  bool test(std::size_t index) const noexcept { return bits[index] != 0; }
  void set(std::size_t row, std::size_t col, bool on = true) noexcept { bits[row * width + col] = on ? 1 : 0; }
  std::size_t count() const noexcept;
  /// Flattened indices of set bits in ascending order.
  std::vector<std::size_t> indices() const;
  bool subset_of(const Mask& other) const;
  void validate() const;

  bool operator==(const Mask&) const = default;
};

/// Half-open box [x0, x1) x [y0, y1) in grid cells.
struct BoundingBox {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t x1 = 0;
  std::int64_t y1 = 0;

  std::int64_t width() const noexcept { return x1 - x0; }
  std::int64_t height() const noexcept { return y1 - y0; }
  bool operator==(const BoundingBox&) const = default;
};

/// Tight box around the set bits; nullopt for an empty mask.
std::optional<BoundingBox> bounding_box(const Mask& mask);

struct GridPoint {
  std::uint32_t x = 0;  // column
  std::uint32_t y = 0;  // row
  bool operator==(const GridPoint&) const = default;
};

/// Paired correspondences between image a and image b.
struct CorrespondenceSet {
  std::vector<GridPoint> points_a;
  std::vector<GridPoint> points_b;
  std::vector<double> scores;
  std::vector<double> skewness;

  std::size_t size() const noexcept { return points_a.size(); }
  /// Checks list lengths and that every point lies in the given grids.
  void validate(std::uint32_t height_a, std::uint32_t width_a, std::uint32_t height_b, std::uint32_t width_b) const;

  bool operator==(const CorrespondenceSet&) const = default;
};

// --- binary containers -----------------------------------------------------

inline constexpr std::uint32_t kStackFormatVersion = 1;
inline constexpr std::uint32_t kMaskFormatVersion = 1;

/// Writes the "MTGF" container; returns the number of bytes emitted.
std::size_t write_stack(const FeatureStack& stack, std::ostream& out);
FeatureStack read_stack(std::istream& in, std::string image_id = {});
void save_stack(const FeatureStack& stack, const std::filesystem::path& path);
/// Loads a stack; the image id defaults to the file stem.
FeatureStack load_stack(const std::filesystem::path& path);

/// Writes the "MTGM" container (bits packed low-bit-first, row-major).
std::size_t write_mask(const Mask& mask, std::ostream& out);
Mask read_mask(std::istream& in);
void save_mask(const Mask& mask, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

// --- resampling ------------------------------------------------------------

/// Resamples a mask to (height, width). A target cell is set when at least half
/// of the source pixels whose centres fall inside it are set; cells containing
/// no source centre take the nearest source pixel.
Mask resample_mask(const Mask& mask, std::uint32_t height, std::uint32_t width);

/// Nearest-neighbour spatial resampling of one layer.
LayerBlock resample_layer(const LayerBlock& layer, std::uint32_t height, std::uint32_t width);

}  // namespace mtg
