#include "mtg/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "binary_io.hpp"
#include "mtg/error.hpp"

namespace mtg {

namespace {

constexpr std::uint64_t kMaxLayerValues = std::uint64_t{1} << 31;

void check_finite(const LayerBlock& layer, std::string_view context) {
  for (std::size_t i = 0; i < layer.values.size(); ++i) {
    if (!std::isfinite(layer.values[i])) {
      fail(ErrorCode::non_finite, std::string(context) + ": layer " + std::to_string(layer.layer_id) +
                                      " has a non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

// --- FeatureStack ----------------------------------------------------------

void FeatureStack::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (i > 0 && l.layer_id <= layers[i - 1].layer_id) {
      fail(ErrorCode::invariant, "feature stack '" + image_id + "': layer ids must be strictly increasing");
    }
    if (l.channels == 0 || l.height == 0 || l.width == 0) {
      fail(ErrorCode::invariant, "feature stack '" + image_id + "': layer " + std::to_string(l.layer_id) +
                                     " has a zero dimension");
    }
    const std::uint64_t expected = std::uint64_t{l.channels} * l.height * l.width;
    if (expected != l.values.size()) {
      fail(ErrorCode::invariant, "feature stack '" + image_id + "': layer " + std::to_string(l.layer_id) +
                                     " holds " + std::to_string(l.values.size()) + " values, expected " +
                                     std::to_string(expected));
    }
    check_finite(l, "feature stack '" + image_id + "'");
  }
}

const LayerBlock* FeatureStack::find_layer(std::uint32_t layer_id) const noexcept {
  for (const auto& l : layers) {
    if (l.layer_id == layer_id) return &l;
  }
  return nullptr;
}

const LayerBlock& FeatureStack::layer(std::uint32_t layer_id) const {
  const auto* l = find_layer(layer_id);
  if (l == nullptr) {
    fail(ErrorCode::missing_layer, "feature stack '" + image_id + "' has no layer " + std::to_string(layer_id));
  }
  return *l;
}

std::vector<std::uint32_t> FeatureStack::layer_ids() const {
  std::vector<std::uint32_t> ids;
  ids.reserve(layers.size());
  for (const auto& l : layers) ids.push_back(l.layer_id);
  return ids;
}

// --- Mask ------------------------------------------------------------------

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

std::vector<std::size_t> Mask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0) out.push_back(i);
  }
  return out;
}

bool Mask::subset_of(const Mask& other) const {
  if (height != other.height || width != other.width) {
    fail(ErrorCode::dimension_mismatch, "mask subset test on different grids");
  }
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0 && other.bits[i] == 0) return false;
  }
  return true;
}

void Mask::validate() const {
  if (height == 0 || width == 0) fail(ErrorCode::invariant, "mask has a zero dimension");
  if (bits.size() != std::size_t{height} * width) {
    fail(ErrorCode::dimension_mismatch, "mask holds " + std::to_string(bits.size()) + " bits for a " +
                                            std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  for (auto b : bits) {
    if (b > 1) fail(ErrorCode::invariant, "mask bits must be 0 or 1");
  }
}

std::optional<BoundingBox> bounding_box(const Mask& mask) {
  std::optional<BoundingBox> box;
  for (std::uint32_t r = 0; r < mask.height; ++r) {
    for (std::uint32_t c = 0; c < mask.width; ++c) {
      if (!mask.test(r, c)) continue;
      if (!box) {
        box = BoundingBox{c, r, c + 1, r + 1};
      } else {
        box->x0 = std::min<std::int64_t>(box->x0, c);
        box->y0 = std::min<std::int64_t>(box->y0, r);
        box->x1 = std::max<std::int64_t>(box->x1, c + 1);
        box->y1 = std::max<std::int64_t>(box->y1, r + 1);
      }
    }
  }
  return box;
}

// --- CorrespondenceSet ------------------------------------------------------

void CorrespondenceSet::validate(std::uint32_t height_a, std::uint32_t width_a, std::uint32_t height_b,
                                 std::uint32_t width_b) const {
  const auto n = points_a.size();
  if (points_b.size() != n || scores.size() != n || skewness.size() != n) {
    fail(ErrorCode::invariant, "correspondence lists have different lengths");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (points_a[j].x >= width_a || points_a[j].y >= height_a || points_b[j].x >= width_b ||
        points_b[j].y >= height_b) {
      fail(ErrorCode::invariant, "correspondence " + std::to_string(j) + " lies outside the grid");
    }
  }
}

// --- MTGF ------------------------------------------------------------------

std::size_t write_stack(const FeatureStack& stack, std::ostream& out) {
  stack.validate();
  detail::LeWriter w(out);
  w.magic("MTGF");
  w.u32(kStackFormatVersion);
  w.u32(static_cast<std::uint32_t>(stack.layers.size()));
  for (const auto& l : stack.layers) {
    w.u32(l.layer_id);
    w.u32(l.channels);
    w.u32(l.height);
    w.u32(l.width);
    w.f32_array(l.values.data(), l.values.size());
  }
  return w.written();
}

FeatureStack read_stack(std::istream& in, std::string image_id) {
  detail::LeReader r(in, "MTGF");
  r.expect_magic("MTGF");
  const auto version = r.u32();
  if (version != kStackFormatVersion) {
    fail(ErrorCode::unsupported_version, "MTGF: unsupported format version " + std::to_string(version));
  }
  FeatureStack stack;
  stack.image_id = std::move(image_id);
  const auto layer_count = r.u32();
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerBlock l;
    l.layer_id = r.u32();
    l.channels = r.u32();
    l.height = r.u32();
    l.width = r.u32();
    const std::uint64_t n = std::uint64_t{l.channels} * l.height * l.width;
    if (n > kMaxLayerValues) fail(ErrorCode::invariant, "MTGF: layer size exceeds limit");
    // Grow incrementally so a corrupt header cannot force a huge allocation.
    constexpr std::uint64_t kChunk = 1u << 20;
    for (std::uint64_t done = 0; done < n; done += kChunk) {
      const auto todo = std::min(kChunk, n - done);
      l.values.resize(static_cast<std::size_t>(done + todo));
      r.f32_array(l.values.data() + done, static_cast<std::size_t>(todo));
    }
    stack.layers.push_back(std::move(l));
  }
  if (!r.at_end()) fail(ErrorCode::invariant, "MTGF: trailing bytes after last layer");
  stack.validate();
  return stack;
}

void save_stack(const FeatureStack& stack, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  write_stack(stack, out);
  out.flush();
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

FeatureStack load_stack(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return read_stack(in, path.stem().string());
}

// --- MTGM ------------------------------------------------------------------

std::size_t write_mask(const Mask& mask, std::ostream& out) {
  mask.validate();
  detail::LeWriter w(out);
  w.magic("MTGM");
  w.u32(kMaskFormatVersion);
  w.u32(mask.height);
  w.u32(mask.width);
  const std::size_t n = mask.size();
  for (std::size_t base = 0; base < n; base += 8) {
    unsigned char byte = 0;
    for (std::size_t b = 0; b < 8 && base + b < n; ++b) {
      if (mask.bits[base + b] != 0) byte |= static_cast<unsigned char>(1u << b);
    }
    w.bytes(&byte, 1);
  }
  return w.written();
}

Mask read_mask(std::istream& in) {
  detail::LeReader r(in, "MTGM");
  r.expect_magic("MTGM");
  const auto version = r.u32();
  if (version != kMaskFormatVersion) {
    fail(ErrorCode::unsupported_version, "MTGM: unsupported format version " + std::to_string(version));
  }
  const auto h = r.u32();
  const auto w = r.u32();
  if (h == 0 || w == 0) fail(ErrorCode::invariant, "MTGM: zero mask dimension");
  if (std::uint64_t{h} * w > kMaxLayerValues) fail(ErrorCode::invariant, "MTGM: mask size exceeds limit");
  Mask mask(h, w);
  const std::size_t n = mask.size();
  for (std::size_t base = 0; base < n; base += 8) {
    unsigned char byte = 0;
    r.bytes(&byte, 1);
    for (std::size_t b = 0; b < 8; ++b) {
      const bool on = ((byte >> b) & 1u) != 0;
      if (base + b < n) {
        mask.bits[base + b] = on ? 1 : 0;
      } else if (on) {
        fail(ErrorCode::invariant, "MTGM: padding bits must be zero");
      }
    }
  }
  if (!r.at_end()) fail(ErrorCode::dimension_mismatch, "MTGM: payload longer than height x width bits");
  return mask;
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  write_mask(mask, out);
  out.flush();
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

Mask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return read_mask(in);
}

// --- resampling ------------------------------------------------------------

namespace {

// Source index nearest to the centre of target cell `t` when mapping n_src -> n_dst.
std::uint32_t nearest_source(std::uint32_t t, std::uint32_t n_src, std::uint32_t n_dst) {
  const double centre = (t + 0.5) * static_cast<double>(n_src) / n_dst;
  const auto idx = static_cast<std::int64_t>(std::floor(centre));
  return static_cast<std::uint32_t>(std::clamp<std::int64_t>(idx, 0, n_src - 1));
}

}  // namespace

Mask resample_mask(const Mask& mask, std::uint32_t height, std::uint32_t width) {
  mask.validate();
  if (height == 0 || width == 0) fail(ErrorCode::invariant, "resample target has a zero dimension");
  if (mask.height == height && mask.width == width) return mask;
  Mask out(height, width);
  const double sy = static_cast<double>(mask.height) / height;
  const double sx = static_cast<double>(mask.width) / width;
  for (std::uint32_t r = 0; r < height; ++r) {
    // Source rows whose centres (i + 0.5) lie in [r*sy, (r+1)*sy).
    const auto r0 = static_cast<std::int64_t>(std::ceil(r * sy - 0.5));
    const auto r1 = static_cast<std::int64_t>(std::ceil((r + 1) * sy - 0.5));
    for (std::uint32_t c = 0; c < width; ++c) {
      const auto c0 = static_cast<std::int64_t>(std::ceil(c * sx - 0.5));
      const auto c1 = static_cast<std::int64_t>(std::ceil((c + 1) * sx - 0.5));
      std::size_t covered = 0;
      std::size_t total = 0;
      for (auto i = std::max<std::int64_t>(r0, 0); i < std::min<std::int64_t>(r1, mask.height); ++i) {
        for (auto j = std::max<std::int64_t>(c0, 0); j < std::min<std::int64_t>(c1, mask.width); ++j) {
          ++total;
          covered += mask.test(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) ? 1 : 0;
        }
      }
      bool on;
      if (total == 0) {
        on = mask.test(nearest_source(r, mask.height, height), nearest_source(c, mask.width, width));
      } else {
        on = 2 * covered >= total;
      }
      out.set(r, c, on);
    }
  }
  return out;
}

LayerBlock resample_layer(const LayerBlock& layer, std::uint32_t height, std::uint32_t width) {
  if (layer.height == height && layer.width == width) return layer;
  LayerBlock out;
  out.layer_id = layer.layer_id;
  out.channels = layer.channels;
  out.height = height;
  out.width = width;
  out.values.resize(std::size_t{height} * width * layer.channels);
  for (std::uint32_t r = 0; r < height; ++r) {
    const auto sr = nearest_source(r, layer.height, height);
    for (std::uint32_t c = 0; c < width; ++c) {
      const auto sc = nearest_source(c, layer.width, width);
      std::copy_n(layer.at(sr, sc), layer.channels, out.at(r, c));
    }
  }
  return out;
}

}  // namespace mtg
