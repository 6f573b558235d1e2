#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtg/correspondence.hpp"
#include "mtg/feature_store.hpp"
#include "mtg/model.hpp"

namespace mtg {

/// Correspondence indices inside / outside the inconsistent regions.
/// A correspondence is inside when either endpoint lies in its image's region.
struct PointPartition {
  std::vector<std::size_t> inside;
  std::vector<std::size_t> outside;
};

PointPartition partition_points(const CorrespondenceSet& corr, const Mask& r1, const Mask& r2);

struct CeResult {
  double value = 0.0;
  bool empty = false;  // no queries; value is 0 by definition
};

/// Mean over queries of the cross-entropy of softmax(sign * D[query, :] / tau)
/// against the target column. Every column is a candidate.
CeResult contrastive_ce(const RowMatrix& d, std::span<const std::size_t> queries, std::span<const std::size_t> targets,
                        double sign, double tau);

/// Gradient sink for contrastive_ce on D = Q K^T. Null pointers skip that part.
struct CeGrad {
  RowMatrix* d_queries = nullptr;  // same shape as Q
  RowMatrix* d_keys = nullptr;     // same shape as K
  double* d_tau = nullptr;
  double weight = 1.0;  // applied to the summed (not averaged) loss
};

/// Summed cross-entropy over the given rows of Q against K, with optional
/// gradient accumulation. Returns the sum, not the mean.
double contrastive_ce_sum(const RowMatrix& q, const RowMatrix& k, std::span<const std::size_t> queries,
                          std::span<const std::size_t> targets, double sign, double tau, const CeGrad* grad = nullptr);

struct LossBreakdown {
  double semantic = 0.0;
  double visual_in = 0.0;
  double visual_out = 0.0;
  double total = 0.0;
  double semantic_12 = 0.0, semantic_21 = 0.0;
  double visual_in_12 = 0.0, visual_in_21 = 0.0;
  double visual_out_12 = 0.0, visual_out_21 = 0.0;
  bool empty_inside = false;
  bool empty_outside = false;
};

/// acc += w * l, component-wise; flags are OR-ed.
void add_scaled(LossBreakdown& acc, const LossBreakdown& l, double w);

/// Multipliers on each term's gradient; loss values are always reported unweighted.
struct GradWeights {
  double semantic = 1.0;
  double visual_in = 1.0;
  double visual_out = 1.0;
};

struct LossOptions {
  double alpha = 10.0;
  bool use_consistent_pair_term = true;
  GradWeights grad_weights;
};

/// Flattened correspondence endpoints plus the partition.
struct CorrespondenceIndex {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  PointPartition partition;
};

CorrespondenceIndex index_correspondences(const CorrespondenceSet& corr, std::uint32_t grid_width_1,
                                          std::uint32_t grid_width_2, const Mask& r1, const Mask& r2);

/// Aggregated matrices of one sample. The consistent pair is optional.
struct LossInputs {
  const RowMatrix& s1;
  const RowMatrix& s2;
  const RowMatrix& v1;
  const RowMatrix& v2;
  const RowMatrix* v1_consistent = nullptr;
  const RowMatrix* v2_consistent = nullptr;
};

struct LossGrads {
  RowMatrix* s1 = nullptr;
  RowMatrix* s2 = nullptr;
  RowMatrix* v1 = nullptr;
  RowMatrix* v2 = nullptr;
  RowMatrix* v1_consistent = nullptr;
  RowMatrix* v2_consistent = nullptr;
  double* tau = nullptr;
};

/// L_total = L_s + alpha (L_v_in + L_v_out); each term averages both directions.
/// L_v_out pools the outside correspondences of the inconsistent pair with the
/// inside correspondences evaluated on the consistent pair (when supplied and enabled).
LossBreakdown total_loss(const LossInputs& in, const CorrespondenceIndex& idx, double tau, const LossOptions& opts,
                         const LossGrads* grads = nullptr);

/// Everything needed to evaluate one training sample.
struct TrainingSample {
  std::string sample_id;
  StackInputs inconsistent_1, inconsistent_2;
  std::optional<StackInputs> consistent_1, consistent_2;
  CorrespondenceIndex index;
};

TrainingSample make_training_sample(std::string sample_id, const FeatureStack& inconsistent_1,
                                    const FeatureStack& inconsistent_2, const FeatureStack* consistent_1,
                                    const FeatureStack* consistent_2, const CorrespondenceSet& corr, const Mask& r1,
                                    const Mask& r2, const std::vector<std::uint32_t>& layer_ids, std::uint32_t grid);

/// Forward pass, and when `grad` is non-null the exact gradient of L_total
/// (scaled by `scale`) accumulated into it. tau's gradient is always filled.
LossBreakdown sample_loss(const AggregatorParams& params, const TrainingSample& sample, const LossOptions& opts,
                          AggregatorParams* grad = nullptr, double scale = 1.0);

struct BatchResult {
  LossBreakdown mean;
  AggregatorParams grad;
};

/// Mean loss and gradient over the batch. Per-sample gradients are reduced in
/// batch order, so the result does not depend on `threads`.
BatchResult batch_gradients(const AggregatorParams& params, std::span<const TrainingSample* const> batch,
                            const LossOptions& opts, unsigned threads = 1);

}  // namespace mtg
