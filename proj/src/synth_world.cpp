#include "mtg/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtg/error.hpp"

namespace mtg {

namespace {

// Default (semantic, appearance) gains cycled over the configured layers.
constexpr std::array<std::array<double, 2>, 4> kDefaultGains = {{{1.0, 0.3}, {0.7, 0.7}, {1.0, 0.6}, {0.3, 1.0}}};

std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Splits `extent` cells into `pieces` contiguous runs of at least two cells with random lengths.
std::vector<std::uint32_t> random_cuts(std::mt19937_64& rng, std::uint32_t extent, std::uint32_t pieces) {
  std::uniform_real_distribution<double> weight(0.5, 1.5);
  std::vector<double> w(pieces);
  for (auto& x : w) x = weight(rng);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::uint32_t> sizes(pieces, 2);
  std::uint32_t spare = extent - 2 * pieces;
  std::uint32_t used = 0;
  for (std::uint32_t i = 0; i + 1 < pieces; ++i) {
    const auto extra = static_cast<std::uint32_t>(std::floor(spare * w[i] / total));
    sizes[i] += extra;
    used += extra;
  }
  sizes.back() += spare - used;
  // boundaries[i] = first cell of run i
  std::vector<std::uint32_t> starts(pieces + 1, 0);
  for (std::uint32_t i = 0; i < pieces; ++i) starts[i + 1] = starts[i] + sizes[i];
  return starts;
}

// Separable Gaussian blur of an h x w field of dim-vectors (edge-renormalized),
// rescaled so the mean squared norm per cell is unchanged.
void smooth_field(std::vector<double>& field, std::uint32_t h, std::uint32_t w, std::uint32_t dim, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const auto energy = [&] { return std::inner_product(field.begin(), field.end(), field.begin(), 0.0); };
  const double before = energy();
  std::vector<double> tmp(field.size());
  auto pass = [&](bool along_rows) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (std::uint32_t r = 0; r < h; ++r) {
      for (std::uint32_t c = 0; c < w; ++c) {
        double norm = 0.0;
        double* dst = tmp.data() + (std::size_t{r} * w + c) * dim;
        for (int k = -radius; k <= radius; ++k) {
          const long rr = along_rows ? static_cast<long>(r) : static_cast<long>(r) + k;
          const long cc = along_rows ? static_cast<long>(c) + k : static_cast<long>(c);
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
          const double kw = kernel[k + radius];
          norm += kw;
          const double* src = field.data() + (static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)) * dim;
          for (std::uint32_t i = 0; i < dim; ++i) dst[i] += kw * src[i];
        }
        for (std::uint32_t i = 0; i < dim; ++i) dst[i] /= norm;
      }
    }
    field.swap(tmp);
  };
  pass(true);
  pass(false);
  const double after = energy();
  if (after > 0.0) {
    const double scale = std::sqrt(before / after);
    for (auto& x : field) x *= scale;
  }
}

struct Dihedral {
  int rotations = 0;  // quarter turns clockwise
  bool flip = false;  // horizontal mirror applied before rotating
};

// Maps canonical (u, w) in an h x w box to the transformed box.
std::pair<std::uint32_t, std::uint32_t> apply(const Dihedral& t, std::uint32_t u, std::uint32_t w, std::uint32_t h,
                                              std::uint32_t width) {
  if (t.flip) w = width - 1 - w;
  for (int k = 0; k < t.rotations; ++k) {
    const auto nu = w;
    const auto nw = h - 1 - u;
    u = nu;
    w = nw;
    std::swap(h, width);
  }
  return {u, w};
}

}  // namespace

// --- config ---------------------------------------------------------------------

void SynthWorldConfig::validate() const {
  if (part_count == 0) fail(ErrorCode::invariant, "synthetic world needs at least one part");
  if (grid == 0) fail(ErrorCode::invariant, "synthetic grid must be non-empty");
  if (subject_min == 0 || subject_min > subject_max || subject_max > grid) {
    fail(ErrorCode::invariant, "subject size range must satisfy 0 < min <= max <= grid");
  }
  if (layer_ids.empty()) fail(ErrorCode::invariant, "synthetic world needs at least one layer");
  for (std::size_t i = 1; i < layer_ids.size(); ++i) {
    if (layer_ids[i] <= layer_ids[i - 1]) fail(ErrorCode::invariant, "synthetic layer ids must be increasing");
  }
  if (channels == 0 || semantic_dim == 0 || appearance_dim == 0) {
    fail(ErrorCode::invariant, "synthetic feature dimensions must be positive");
  }
  if (!semantic_gains.empty() && semantic_gains.size() != layer_ids.size()) {
    fail(ErrorCode::invariant, "semantic_gains must have one entry per layer");
  }
  if (!appearance_gains.empty() && appearance_gains.size() != layer_ids.size()) {
    fail(ErrorCode::invariant, "appearance_gains must have one entry per layer");
  }
  if (planted_part >= static_cast<int>(part_count)) fail(ErrorCode::invariant, "planted_part out of range");
  if (warp != "affine" && warp != "identity") fail(ErrorCode::invariant, "warp must be 'affine' or 'identity'");
  if (!(smoothness >= 0.0)) fail(ErrorCode::invariant, "smoothness must be >= 0");
  if (!(noise_scale >= 0.0) || !(part_weight >= 0.0 && part_weight <= 1.0)) {
    fail(ErrorCode::invariant, "noise_scale must be >= 0 and part_weight in [0, 1]");
  }
  // Each part needs at least 2x2 cells.
  std::uint32_t rows = 1;
  for (std::uint32_t r = 1; r * r <= part_count; ++r) {
    if (part_count % r == 0) rows = r;
  }
  const std::uint32_t cols = part_count / rows;
  if (2 * cols > subject_min) fail(ErrorCode::invariant, "subject too small for the requested part count");
}

double SynthWorldConfig::semantic_gain(std::size_t k) const {
  return semantic_gains.empty() ? kDefaultGains[k % kDefaultGains.size()][0] : semantic_gains[k];
}

double SynthWorldConfig::appearance_gain(std::size_t k) const {
  return appearance_gains.empty() ? kDefaultGains[k % kDefaultGains.size()][1] : appearance_gains[k];
}

nlohmann::json to_json(const SynthWorldConfig& c) {
  return nlohmann::json{{"grid", c.grid},
                        {"subject_min", c.subject_min},
                        {"subject_max", c.subject_max},
                        {"part_count", c.part_count},
                        {"textured", c.textured},
                        {"planted_part", c.planted_part},
                        {"warp", c.warp},
                        {"layer_ids", c.layer_ids},
                        {"channels", c.channels},
                        {"semantic_dim", c.semantic_dim},
                        {"appearance_dim", c.appearance_dim},
                        {"semantic_gains", c.semantic_gains},
                        {"appearance_gains", c.appearance_gains},
                        {"part_weight", c.part_weight},
                        {"smoothness", c.smoothness},
                        {"noise_scale", c.noise_scale},
                        {"layout_seed", c.layout_seed},
                        {"semantic_seed", c.semantic_seed},
                        {"appearance_seed", c.appearance_seed},
                        {"noise_seed", c.noise_seed},
                        {"mixing_seed", c.mixing_seed}};
}

SynthWorldConfig synth_world_config_from_json(const nlohmann::json& j) {
  SynthWorldConfig c;
  c.grid = j.value("grid", c.grid);
  c.subject_min = j.value("subject_min", c.subject_min);
  c.subject_max = j.value("subject_max", c.subject_max);
  c.part_count = j.value("part_count", c.part_count);
  c.textured = j.value("textured", c.textured);
  c.planted_part = j.value("planted_part", c.planted_part);
  c.warp = j.value("warp", c.warp);
  c.layer_ids = j.value("layer_ids", c.layer_ids);
  c.channels = j.value("channels", c.channels);
  c.semantic_dim = j.value("semantic_dim", c.semantic_dim);
  c.appearance_dim = j.value("appearance_dim", c.appearance_dim);
  c.semantic_gains = j.value("semantic_gains", c.semantic_gains);
  c.appearance_gains = j.value("appearance_gains", c.appearance_gains);
  c.part_weight = j.value("part_weight", c.part_weight);
  c.smoothness = j.value("smoothness", c.smoothness);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  c.layout_seed = j.value("layout_seed", c.layout_seed);
  c.semantic_seed = j.value("semantic_seed", c.semantic_seed);
  c.appearance_seed = j.value("appearance_seed", c.appearance_seed);
  c.noise_seed = j.value("noise_seed", c.noise_seed);
  c.mixing_seed = j.value("mixing_seed", c.mixing_seed);
  return c;
}

// --- world ----------------------------------------------------------------------

SynthWorld::SynthWorld(SynthWorldConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::uint32_t g = cfg_.grid;
  const std::size_t cells = std::size_t{g} * g;
  const std::uint32_t ds = cfg_.semantic_dim;
  const std::uint32_t da = cfg_.appearance_dim;
  const std::uint32_t db = cfg_.base_dim();

  // Layout: subject box, part grid, view transforms and offsets.
  std::mt19937_64 layout_rng(cfg_.layout_seed);
  std::uniform_int_distribution<std::uint32_t> side(cfg_.subject_min, cfg_.subject_max);
  subject_h_ = side(layout_rng);
  subject_w_ = side(layout_rng);
  for (std::uint32_t r = 1; r * r <= cfg_.part_count; ++r) {
    if (cfg_.part_count % r == 0) part_rows_ = r;
  }
  part_cols_ = cfg_.part_count / part_rows_;
  if (subject_h_ < subject_w_ && part_rows_ > part_cols_) std::swap(part_rows_, part_cols_);
  if (subject_h_ > subject_w_ && part_rows_ < part_cols_) std::swap(part_rows_, part_cols_);
  const auto row_starts = random_cuts(layout_rng, subject_h_, part_rows_);
  const auto col_starts = random_cuts(layout_rng, subject_w_, part_cols_);
  canonical_labels_.assign(std::size_t{subject_h_} * subject_w_, 0);
  for (std::uint32_t u = 0; u < subject_h_; ++u) {
    const auto pr = static_cast<int>(std::upper_bound(row_starts.begin(), row_starts.end(), u) - row_starts.begin() - 1);
    for (std::uint32_t w = 0; w < subject_w_; ++w) {
      const auto pc =
          static_cast<int>(std::upper_bound(col_starts.begin(), col_starts.end(), w) - col_starts.begin() - 1);
      canonical_labels_[std::size_t{u} * subject_w_ + w] = pr * static_cast<int>(part_cols_) + pc;
    }
  }

  std::array<Dihedral, 2> transforms{};
  std::array<std::pair<std::uint32_t, std::uint32_t>, 2> offsets{};
  std::uniform_int_distribution<int> dihedral(0, 7);
  if (cfg_.warp == "affine") {
    const int t = dihedral(layout_rng);
    transforms[1] = Dihedral{t % 4, t >= 4};
  }
  for (int v = 0; v < 2; ++v) {
    const bool swapped = transforms[v].rotations % 2 == 1;
    const auto h = swapped ? subject_w_ : subject_h_;
    const auto w = swapped ? subject_h_ : subject_w_;
    std::uniform_int_distribution<std::uint32_t> oy(0, g - h);
    std::uniform_int_distribution<std::uint32_t> ox(0, g - w);
    offsets[v] = {oy(layout_rng), ox(layout_rng)};
  }
  if (cfg_.warp == "identity") offsets[1] = offsets[0];

  // Semantic codes.
  std::mt19937_64 sem_rng(cfg_.semantic_seed);
  const double sem_sd = 1.0 / std::sqrt(static_cast<double>(ds));
  const double app_sd = 1.0 / std::sqrt(static_cast<double>(da));
  const double base_sd = 1.0 / std::sqrt(static_cast<double>(db));
  const double pw = cfg_.part_weight;
  const double lw = std::sqrt(1.0 - pw * pw);
  auto textured = [&](int part) { return cfg_.planted_part >= 0 ? part == cfg_.planted_part : cfg_.textured; };

  std::vector<std::vector<double>> part_sem(cfg_.part_count);
  for (auto& p : part_sem) p = gaussian_vector(sem_rng, ds, sem_sd);
  const auto flat_sem = gaussian_vector(sem_rng, ds, sem_sd);
  const std::size_t subject_cells = canonical_labels_.size();
  auto sem_local = gaussian_vector(sem_rng, subject_cells * ds, sem_sd);
  smooth_field(sem_local, subject_h_, subject_w_, ds, cfg_.smoothness);
  std::vector<double> canon_sem(subject_cells * ds);
  for (std::size_t i = 0; i < subject_cells; ++i) {
    const int part = canonical_labels_[i];
    for (std::uint32_t k = 0; k < ds; ++k) {
      canon_sem[i * ds + k] = textured(part) ? pw * part_sem[part][k] + lw * sem_local[i * ds + k] : flat_sem[k];
    }
  }

  // Appearance codes and per-view backgrounds.
  std::mt19937_64 app_rng(cfg_.appearance_seed);
  std::vector<std::vector<double>> part_app(cfg_.part_count);
  for (auto& p : part_app) p = gaussian_vector(app_rng, da, app_sd);
  const auto flat_app = gaussian_vector(app_rng, da, app_sd);
  auto tex = gaussian_vector(app_rng, subject_cells * da, app_sd);
  smooth_field(tex, subject_h_, subject_w_, da, cfg_.smoothness);
  std::vector<double> canon_app(subject_cells * da);
  for (std::size_t i = 0; i < subject_cells; ++i) {
    const int part = canonical_labels_[i];
    for (std::uint32_t k = 0; k < da; ++k) {
      canon_app[i * da + k] = textured(part) ? pw * part_app[part][k] + lw * tex[i * da + k] : flat_app[k];
    }
  }
  std::array<std::vector<double>, 2> scene;
  for (auto& s : scene) s = gaussian_vector(app_rng, db, base_sd);

  // Mixing matrices shared by both views.
  std::mt19937_64 mix_rng(cfg_.mixing_seed);
  mixing_.clear();
  for (std::size_t k = 0; k < cfg_.layer_ids.size(); ++k) mixing_.push_back(gaussian_vector(mix_rng, std::size_t{cfg_.channels} * db, base_sd));

  std::mt19937_64 noise_rng(cfg_.noise_seed);
  ground_truth_.assign(cells, -1);
  for (int v = 0; v < 2; ++v) {
    View& view = views_[v];
    view.subject = Mask(g, g);
    view.labels.assign(cells, -1);
    view.semantic.assign(cells * ds, 0.0);
    view.appearance.assign(cells * da, 0.0);
    // Unit draws scaled afterwards so that worlds differing only in noise_scale share the same noise pattern.
    view.noise = gaussian_vector(noise_rng, cells * db, 1.0);
    for (auto& x : view.noise) x *= base_sd * cfg_.noise_scale;
    // Background everywhere first.
    std::vector<double> bg = gaussian_vector(app_rng, cells * db, base_sd);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      for (std::uint32_t k = 0; k < ds; ++k) view.semantic[cell * ds + k] = 0.6 * scene[v][k] + 0.8 * bg[cell * db + k];
      for (std::uint32_t k = 0; k < da; ++k) {
        view.appearance[cell * da + k] = 0.6 * scene[v][ds + k] + 0.8 * bg[cell * db + ds + k];
      }
    }
    for (std::uint32_t u = 0; u < subject_h_; ++u) {
      for (std::uint32_t w = 0; w < subject_w_; ++w) {
        const auto [tu, tw] = apply(transforms[v], u, w, subject_h_, subject_w_);
        const std::size_t cell = std::size_t{offsets[v].first + tu} * g + offsets[v].second + tw;
        const std::size_t canon = std::size_t{u} * subject_w_ + w;
        view.subject.bits[cell] = 1;
        view.labels[cell] = canonical_labels_[canon];
        std::copy_n(canon_sem.begin() + static_cast<std::ptrdiff_t>(canon * ds), ds,
                    view.semantic.begin() + static_cast<std::ptrdiff_t>(cell * ds));
        std::copy_n(canon_app.begin() + static_cast<std::ptrdiff_t>(canon * da), da,
                    view.appearance.begin() + static_cast<std::ptrdiff_t>(cell * da));
      }
    }
    view.stack.image_id = v == 0 ? "view1" : "view2";
    for (std::size_t k = 0; k < cfg_.layer_ids.size(); ++k) {
      LayerBlock l;
      l.layer_id = cfg_.layer_ids[k];
      l.channels = cfg_.channels;
      l.height = g;
      l.width = g;
      l.values.assign(cells * cfg_.channels, 0.0f);
      view.stack.layers.push_back(std::move(l));
    }
    for (std::size_t cell = 0; cell < cells; ++cell) {
      render_cell(view, cell, view.appearance.data() + cell * da, view.stack);
    }
  }

  // Ground truth follows the warp.
  for (std::uint32_t u = 0; u < subject_h_; ++u) {
    for (std::uint32_t w = 0; w < subject_w_; ++w) {
      const auto [u1, w1] = apply(transforms[0], u, w, subject_h_, subject_w_);
      const auto [u2, w2] = apply(transforms[1], u, w, subject_h_, subject_w_);
      const std::size_t c1 = std::size_t{offsets[0].first + u1} * g + offsets[0].second + w1;
      const std::size_t c2 = std::size_t{offsets[1].first + u2} * g + offsets[1].second + w2;
      ground_truth_[c1] = static_cast<std::int64_t>(c2);
    }
  }
}

void SynthWorld::render_cell(const View& view, std::size_t cell, const double* appearance, FeatureStack& out) const {
  const std::uint32_t ds = cfg_.semantic_dim;
  const std::uint32_t da = cfg_.appearance_dim;
  const std::uint32_t db = cfg_.base_dim();
  std::vector<double> base(db);
  const double* noise = view.noise.data() + cell * db;
  for (std::size_t k = 0; k < cfg_.layer_ids.size(); ++k) {
    const double gs = cfg_.semantic_gain(k);
    const double ga = cfg_.appearance_gain(k);
    for (std::uint32_t i = 0; i < ds; ++i) base[i] = gs * (view.semantic[cell * ds + i] + noise[i]);
    for (std::uint32_t i = 0; i < da; ++i) base[ds + i] = ga * (appearance[i] + noise[ds + i]);
    const auto& m = mixing_[k];
    float* dst = out.layers[k].values.data() + cell * cfg_.channels;
    for (std::uint32_t c = 0; c < cfg_.channels; ++c) {
      double acc = 0.0;
      const double* row = m.data() + std::size_t{c} * db;
      for (std::uint32_t i = 0; i < db; ++i) acc += row[i] * base[i];
      dst[c] = static_cast<float>(acc);
    }
  }
}

Mask SynthWorld::part_mask(int view, int part) const {
  const auto& labels = part_labels(view);
  Mask m(cfg_.grid, cfg_.grid);
  for (std::size_t i = 0; i < labels.size(); ++i) m.bits[i] = labels[i] == part ? 1 : 0;
  return m;
}

std::vector<int> SynthWorld::adjacent_parts(int part) const {
  const int rows = static_cast<int>(part_rows_);
  const int cols = static_cast<int>(part_cols_);
  const int r = part / cols;
  const int c = part % cols;
  std::vector<int> out;
  if (r > 0) out.push_back(part - cols);
  if (c > 0) out.push_back(part - 1);
  if (c + 1 < cols) out.push_back(part + 1);
  if (r + 1 < rows) out.push_back(part + cols);
  return out;
}

FeatureStack SynthWorld::inpaint(int view_index, const Mask& region, std::uint64_t seed, double strength) const {
  const View& view = views_.at(view_index);
  if (region.height != cfg_.grid || region.width != cfg_.grid) {
    fail(ErrorCode::dimension_mismatch, "inpaint region does not match the synthetic grid");
  }
  const std::uint32_t da = cfg_.appearance_dim;
  const double app_sd = 1.0 / std::sqrt(static_cast<double>(da));
  const double pw = cfg_.part_weight;
  const double lw = std::sqrt(1.0 - pw * pw);
  std::mt19937_64 rng(seed);
  const auto colour = gaussian_vector(rng, da, app_sd);
  auto tex = gaussian_vector(rng, region.size() * da, app_sd);
  smooth_field(tex, cfg_.grid, cfg_.grid, da, cfg_.smoothness);
  FeatureStack out = view.stack;
  std::vector<double> app(da);
  for (std::size_t cell = 0; cell < region.size(); ++cell) {
    if (!region.test(cell)) continue;
    for (std::uint32_t k = 0; k < da; ++k) {
      const double fresh = pw * colour[k] + lw * tex[cell * da + k];
      app[k] = (1.0 - strength) * view.appearance[cell * da + k] + strength * fresh;
    }
    render_cell(view, cell, app.data(), out);
  }
  return out;
}

}  // namespace mtg
