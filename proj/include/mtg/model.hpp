#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mtg/correspondence.hpp"
#include "mtg/feature_store.hpp"

namespace mtg {

inline constexpr std::uint32_t kModelGrid = 48;

struct ModelConfig {
  std::vector<std::uint32_t> layer_ids;
  std::vector<std::uint32_t> in_channels;  // c_l, aligned with layer_ids
  std::uint32_t feature_dim = 384;         // q
  std::uint32_t grid = kModelGrid;
  double tau = 0.07;

  void validate() const;
};

/// Layer ids and channel counts taken from a reference stack.
ModelConfig model_config_for(const FeatureStack& stack, std::uint32_t feature_dim = 384);

/// Pointwise residual bottleneck for one backbone layer:
///   z = W_in f + b_in
///   y = W_out relu(W_h relu(z) + b_h) + b_out + z
struct BlockParams {
  RowMatrix w_in;  // q x c
  Eigen::VectorXd b_in;
  RowMatrix w_hidden;  // q x q
  Eigen::VectorXd b_hidden;
  RowMatrix w_out;  // q x q
  Eigen::VectorXd b_out;
  double weight = 1.0;  // scalar layer weight
};

struct BranchParams {
  std::vector<std::uint32_t> layer_ids;
  std::vector<BlockParams> blocks;
};

enum class Branch { semantic, visual };

struct AggregatorParams {
  BranchParams semantic;
  BranchParams visual;
  double tau = 0.07;

  const BranchParams& branch(Branch b) const { return b == Branch::semantic ? semantic : visual; }
  BranchParams& branch(Branch b) { return b == Branch::semantic ? semantic : visual; }
  std::uint32_t feature_dim() const;
  ModelConfig config() const;
  /// Same shapes, every value zero (tau included).
  AggregatorParams zeros_like() const;
  /// Throws Error(invariant / non_finite) on shape mismatch, non-finite values or tau <= 0.
  void validate() const;
};

/// Gaussian W_in and W_h, zero W_out and biases, layer weights 1/|L|.
AggregatorParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Flat view of one parameter tensor, used by the optimizer and gradient checks.
struct ParamView {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
  bool decay = true;  // decoupled weight decay applies
};

/// Every tensor in a fixed order; tau is last and only included on request.
std::vector<ParamView> param_views(AggregatorParams& params, bool include_tau);

/// Per-layer inputs resampled to the model grid and widened to double.
struct StackInputs {
  std::vector<RowMatrix> layers;  // d x c_l, aligned with the branch layer ids
  std::uint32_t grid = 0;
};

StackInputs prepare_inputs(const FeatureStack& stack, const std::vector<std::uint32_t>& layer_ids, std::uint32_t grid);

struct BranchCache {
  std::vector<RowMatrix> z;   // input projection
  std::vector<RowMatrix> a2;  // hidden pre-activation
  std::vector<RowMatrix> y;   // block output
  Eigen::VectorXd norms;      // row norms of the weighted sum
  RowMatrix out;              // normalized output
};

/// Weighted block sum followed by per-position L2 normalization.
FeatureMatrix aggregate(const StackInputs& inputs, const BranchParams& params, BranchCache* cache = nullptr);
FeatureMatrix aggregate(const FeatureStack& stack, const BranchParams& params, std::uint32_t grid = kModelGrid);

/// Accumulates into `grad` the gradient of a scalar whose derivative with
/// respect to the normalized output is `d_out`.
void aggregate_backward(const StackInputs& inputs, const BranchParams& params, const BranchCache& cache,
                        const RowMatrix& d_out, BranchParams& grad);

/// Adds `scale * src` into `dst` tensor by tensor.
void axpy(AggregatorParams& dst, const AggregatorParams& src, double scale);

/// Throws Error(numeric) naming the first tensor holding a non-finite value.
void check_finite(const AggregatorParams& params, const std::string& what);

}  // namespace mtg
