#include "mtg/model.hpp"

#include <cmath>
#include <random>

#include "mtg/error.hpp"

namespace mtg {

namespace {

constexpr double kZeroNorm = 1e-12;

RowMatrix relu(const RowMatrix& m) { return m.cwiseMax(0.0); }

RowMatrix relu_mask(const RowMatrix& pre, const RowMatrix& grad) {
  return (pre.array() > 0.0).select(grad.array(), 0.0).matrix();
}

void fill_gaussian(RowMatrix& m, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * n(rng);
}

BranchParams init_branch(const ModelConfig& cfg, std::mt19937_64& rng) {
  BranchParams b;
  b.layer_ids = cfg.layer_ids;
  const auto q = static_cast<Eigen::Index>(cfg.feature_dim);
  for (std::size_t l = 0; l < cfg.layer_ids.size(); ++l) {
    const auto c = static_cast<Eigen::Index>(cfg.in_channels[l]);
    BlockParams p;
    p.w_in.resize(q, c);
    fill_gaussian(p.w_in, 1.0 / std::sqrt(static_cast<double>(c)), rng);
    p.b_in = Eigen::VectorXd::Zero(q);
    p.w_hidden.resize(q, q);
    fill_gaussian(p.w_hidden, std::sqrt(2.0 / static_cast<double>(q)), rng);
    p.b_hidden = Eigen::VectorXd::Zero(q);
    p.w_out = RowMatrix::Zero(q, q);
    p.b_out = Eigen::VectorXd::Zero(q);
    p.weight = 1.0 / static_cast<double>(cfg.layer_ids.size());
    b.blocks.push_back(std::move(p));
  }
  return b;
}

BranchParams zeros_branch(const BranchParams& src) {
  BranchParams b;
  b.layer_ids = src.layer_ids;
  for (const auto& s : src.blocks) {
    BlockParams p;
    p.w_in = RowMatrix::Zero(s.w_in.rows(), s.w_in.cols());
    p.b_in = Eigen::VectorXd::Zero(s.b_in.size());
    p.w_hidden = RowMatrix::Zero(s.w_hidden.rows(), s.w_hidden.cols());
    p.b_hidden = Eigen::VectorXd::Zero(s.b_hidden.size());
    p.w_out = RowMatrix::Zero(s.w_out.rows(), s.w_out.cols());
    p.b_out = Eigen::VectorXd::Zero(s.b_out.size());
    p.weight = 0.0;
    b.blocks.push_back(std::move(p));
  }
  return b;
}

template <class F>
void for_each_tensor(BranchParams& b, const std::string& prefix, F&& f) {
  for (std::size_t l = 0; l < b.blocks.size(); ++l) {
    auto& p = b.blocks[l];
    const auto base = prefix + "." + std::to_string(b.layer_ids[l]) + ".";
    f(base + "w_in", p.w_in.data(), static_cast<std::size_t>(p.w_in.size()));
    f(base + "b_in", p.b_in.data(), static_cast<std::size_t>(p.b_in.size()));
    f(base + "w_hidden", p.w_hidden.data(), static_cast<std::size_t>(p.w_hidden.size()));
    f(base + "b_hidden", p.b_hidden.data(), static_cast<std::size_t>(p.b_hidden.size()));
    f(base + "w_out", p.w_out.data(), static_cast<std::size_t>(p.w_out.size()));
    f(base + "b_out", p.b_out.data(), static_cast<std::size_t>(p.b_out.size()));
    f(base + "weight", &p.weight, 1);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layer_ids.empty()) fail(ErrorCode::invariant, "model needs at least one layer");
  if (layer_ids.size() != in_channels.size()) fail(ErrorCode::invariant, "layer ids and channel counts differ in length");
  for (auto c : in_channels) {
    if (c == 0) fail(ErrorCode::invariant, "zero input channels");
  }
  if (feature_dim == 0) fail(ErrorCode::invariant, "feature_dim must be positive");
  if (grid == 0) fail(ErrorCode::invariant, "grid must be positive");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::invariant, "tau must be positive");
}

ModelConfig model_config_for(const FeatureStack& stack, std::uint32_t feature_dim) {
  ModelConfig cfg;
  for (const auto& l : stack.layers) {
    cfg.layer_ids.push_back(l.layer_id);
    cfg.in_channels.push_back(l.channels);
  }
  cfg.feature_dim = feature_dim;
  return cfg;
}

std::uint32_t AggregatorParams::feature_dim() const {
  if (semantic.blocks.empty()) return 0;
  return static_cast<std::uint32_t>(semantic.blocks.front().w_in.rows());
}

ModelConfig AggregatorParams::config() const {
  ModelConfig cfg;
  cfg.layer_ids = semantic.layer_ids;
  for (const auto& b : semantic.blocks) cfg.in_channels.push_back(static_cast<std::uint32_t>(b.w_in.cols()));
  cfg.feature_dim = feature_dim();
  cfg.tau = tau;
  return cfg;
}

AggregatorParams AggregatorParams::zeros_like() const {
  AggregatorParams z;
  z.semantic = zeros_branch(semantic);
  z.visual = zeros_branch(visual);
  z.tau = 0.0;
  return z;
}

void AggregatorParams::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::invariant, "tau must be positive and finite");
  const auto q = feature_dim();
  if (q == 0) fail(ErrorCode::invariant, "model has no layers");
  for (const auto* b : {&semantic, &visual}) {
    if (b->layer_ids.size() != b->blocks.size()) fail(ErrorCode::invariant, "layer ids and blocks differ in length");
    if (b->layer_ids != semantic.layer_ids) fail(ErrorCode::invariant, "branches use different layer sets");
    for (std::size_t l = 0; l < b->blocks.size(); ++l) {
      const auto& p = b->blocks[l];
      const auto c = p.w_in.cols();
      if (p.w_in.rows() != q || c == 0 || p.b_in.size() != q || p.w_hidden.rows() != q || p.w_hidden.cols() != q ||
          p.b_hidden.size() != q || p.w_out.rows() != q || p.w_out.cols() != q || p.b_out.size() != q) {
        fail(ErrorCode::invariant, "block for layer " + std::to_string(b->layer_ids[l]) + " has inconsistent shapes");
      }
      if (semantic.blocks[l].w_in.cols() != c) fail(ErrorCode::invariant, "branches disagree on input channels");
    }
  }
  check_finite(*this, "parameters");
}

AggregatorParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  AggregatorParams p;
  p.semantic = init_branch(cfg, rng);
  p.visual = init_branch(cfg, rng);
  p.tau = cfg.tau;
  return p;
}

std::vector<ParamView> param_views(AggregatorParams& params, bool include_tau) {
  std::vector<ParamView> views;
  auto add = [&](const std::string& name, double* data, std::size_t n) { views.push_back({name, data, n, true}); };
  for_each_tensor(params.semantic, "semantic", add);
  for_each_tensor(params.visual, "visual", add);
  if (include_tau) views.push_back({"tau", &params.tau, 1, false});
  return views;
}

StackInputs prepare_inputs(const FeatureStack& stack, const std::vector<std::uint32_t>& layer_ids, std::uint32_t grid) {
  StackInputs in;
  in.grid = grid;
  for (auto id : layer_ids) {
    const LayerBlock* src = &stack.layer(id);
    LayerBlock resampled;
    if (src->height != grid || src->width != grid) {
      resampled = resample_layer(*src, grid, grid);
      src = &resampled;
    }
    const auto d = static_cast<Eigen::Index>(src->positions());
    const auto c = static_cast<Eigen::Index>(src->channels);
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(src->values.data(), d, c);
    in.layers.push_back(m.cast<double>());
  }
  return in;
}

FeatureMatrix aggregate(const StackInputs& inputs, const BranchParams& params, BranchCache* cache) {
  if (inputs.layers.size() != params.blocks.size()) {
    fail(ErrorCode::dimension_mismatch, "stack inputs do not match the branch layer set");
  }
  const auto d = static_cast<Eigen::Index>(inputs.grid) * inputs.grid;
  const auto q = params.blocks.front().w_in.rows();
  RowMatrix u = RowMatrix::Zero(d, q);
  if (cache != nullptr) {
    cache->z.clear();
    cache->a2.clear();
    cache->y.clear();
  }
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& p = params.blocks[l];
    const auto& x = inputs.layers[l];
    if (x.cols() != p.w_in.cols() || x.rows() != d) {
      fail(ErrorCode::dimension_mismatch, "layer " + std::to_string(params.layer_ids[l]) + " input has " +
                                              std::to_string(x.cols()) + " channels, block expects " +
                                              std::to_string(p.w_in.cols()));
    }
    RowMatrix z = x * p.w_in.transpose();
    z.rowwise() += p.b_in.transpose();
    RowMatrix a2 = relu(z) * p.w_hidden.transpose();
    a2.rowwise() += p.b_hidden.transpose();
    RowMatrix y = relu(a2) * p.w_out.transpose();
    y.rowwise() += p.b_out.transpose();
    y += z;
    u += p.weight * y;
    if (cache != nullptr) {
      cache->z.push_back(std::move(z));
      cache->a2.push_back(std::move(a2));
      cache->y.push_back(std::move(y));
    }
  }
  FeatureMatrix out;
  out.grid_height = inputs.grid;
  out.grid_width = inputs.grid;
  out.normalized = true;
  out.zero_rows.assign(static_cast<std::size_t>(d), 0);
  Eigen::VectorXd norms = u.rowwise().norm();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (norms(i) > kZeroNorm) {
      u.row(i) /= norms(i);
    } else {
      u.row(i).setZero();
      out.zero_rows[static_cast<std::size_t>(i)] = 1;
    }
  }
  if (!u.allFinite()) fail(ErrorCode::numeric, "non-finite value in aggregated features");
  if (cache != nullptr) {
    cache->norms = norms;
    cache->out = u;
  }
  out.values = std::move(u);
  return out;
}

FeatureMatrix aggregate(const FeatureStack& stack, const BranchParams& params, std::uint32_t grid) {
  return aggregate(prepare_inputs(stack, params.layer_ids, grid), params, nullptr);
}

void aggregate_backward(const StackInputs& inputs, const BranchParams& params, const BranchCache& cache,
                        const RowMatrix& d_out, BranchParams& grad) {
  const auto& s = cache.out;
  // Through the row normalization: dU = (dS - S (S . dS)) / |U|.
  RowMatrix du = d_out;
  const Eigen::VectorXd proj = (s.array() * d_out.array()).rowwise().sum();
  for (Eigen::Index i = 0; i < du.rows(); ++i) {
    if (cache.norms(i) > kZeroNorm) {
      du.row(i) = (d_out.row(i) - proj(i) * s.row(i)) / cache.norms(i);
    } else {
      du.row(i).setZero();
    }
  }
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& p = params.blocks[l];
    auto& g = grad.blocks[l];
    const auto& z = cache.z[l];
    const auto& a2 = cache.a2[l];
    g.weight += (du.array() * cache.y[l].array()).sum();
    const RowMatrix dy = p.weight * du;
    g.w_out.noalias() += dy.transpose() * relu(a2);
    g.b_out += dy.colwise().sum().transpose();
    const RowMatrix da2 = relu_mask(a2, dy * p.w_out);
    g.w_hidden.noalias() += da2.transpose() * relu(z);
    g.b_hidden += da2.colwise().sum().transpose();
    RowMatrix dz = relu_mask(z, da2 * p.w_hidden);
    dz += dy;
    g.w_in.noalias() += dz.transpose() * inputs.layers[l];
    g.b_in += dz.colwise().sum().transpose();
  }
}

void axpy(AggregatorParams& dst, const AggregatorParams& src, double scale) {
  auto d = param_views(dst, true);
  auto s = param_views(const_cast<AggregatorParams&>(src), true);
  if (d.size() != s.size()) fail(ErrorCode::dimension_mismatch, "parameter sets differ");
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (d[k].size != s[k].size) fail(ErrorCode::dimension_mismatch, "tensor " + d[k].name + " differs in size");
    for (std::size_t i = 0; i < d[k].size; ++i) d[k].data[i] += scale * s[k].data[i];
  }
}

void check_finite(const AggregatorParams& params, const std::string& what) {
  auto views = param_views(const_cast<AggregatorParams&>(params), true);
  for (const auto& v : views) {
    for (std::size_t i = 0; i < v.size; ++i) {
      if (!std::isfinite(v.data[i])) fail(ErrorCode::numeric, what + ": non-finite value in tensor " + v.name);
    }
  }
}

}  // namespace mtg
