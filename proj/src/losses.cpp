#include "mtg/losses.hpp"

#include <cmath>
#include <thread>

#include "mtg/error.hpp"

namespace mtg {

namespace {

void check_pairs(std::span<const std::size_t> queries, std::span<const std::size_t> targets, Eigen::Index rows,
                 Eigen::Index cols) {
  if (queries.size() != targets.size()) fail(ErrorCode::dimension_mismatch, "query and target lists differ in length");
  for (std::size_t j = 0; j < queries.size(); ++j) {
    if (static_cast<Eigen::Index>(queries[j]) >= rows || static_cast<Eigen::Index>(targets[j]) >= cols) {
      fail(ErrorCode::dimension_mismatch, "correspondence index out of range");
    }
  }
}

// Row-wise cross-entropy on raw scores; optionally replaces `scores` by
// (softmax - onehot) so the caller can chain the gradient.
double ce_rows(RowMatrix& scores, std::span<const std::size_t> targets, double sign, double tau, bool want_grad,
               double* d_tau, double weight) {
  double total = 0.0;
  double tau_acc = 0.0;
  Eigen::ArrayXd e(scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r).array();
    row *= sign / tau;
    const double m = row.maxCoeff();
    e = (row.transpose() - m).exp();
    const double z = e.sum();
    const double lse = m + std::log(z);
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
    total += lse - row(t);
    if (want_grad) {
      e /= z;
      tau_acc += (e * row.transpose()).sum() - row(t);
      row = e.transpose();
      row(t) -= 1.0;
    }
  }
  if (want_grad && d_tau != nullptr) *d_tau += -weight * tau_acc / tau;
  return total;
}

}  // namespace

void add_scaled(LossBreakdown& acc, const LossBreakdown& l, double w) {
  acc.semantic += w * l.semantic;
  acc.visual_in += w * l.visual_in;
  acc.visual_out += w * l.visual_out;
  acc.total += w * l.total;
  acc.semantic_12 += w * l.semantic_12;
  acc.semantic_21 += w * l.semantic_21;
  acc.visual_in_12 += w * l.visual_in_12;
  acc.visual_in_21 += w * l.visual_in_21;
  acc.visual_out_12 += w * l.visual_out_12;
  acc.visual_out_21 += w * l.visual_out_21;
  acc.empty_inside = acc.empty_inside || l.empty_inside;
  acc.empty_outside = acc.empty_outside || l.empty_outside;
}

PointPartition partition_points(const CorrespondenceSet& corr, const Mask& r1, const Mask& r2) {
  PointPartition p;
  for (std::size_t j = 0; j < corr.size(); ++j) {
    const auto& a = corr.points_a[j];
    const auto& b = corr.points_b[j];
    const bool in = r1.test(a.y, a.x) || r2.test(b.y, b.x);
    (in ? p.inside : p.outside).push_back(j);
  }
  return p;
}

CeResult contrastive_ce(const RowMatrix& d, std::span<const std::size_t> queries, std::span<const std::size_t> targets,
                        double sign, double tau) {
  check_pairs(queries, targets, d.rows(), d.cols());
  if (queries.empty()) return {0.0, true};
  if (!(tau > 0.0)) fail(ErrorCode::invariant, "tau must be positive");
  RowMatrix rows(static_cast<Eigen::Index>(queries.size()), d.cols());
  for (std::size_t j = 0; j < queries.size(); ++j) rows.row(static_cast<Eigen::Index>(j)) = d.row(static_cast<Eigen::Index>(queries[j]));
  const double sum = ce_rows(rows, targets, sign, tau, false, nullptr, 1.0);
  return {sum / static_cast<double>(queries.size()), false};
}

double contrastive_ce_sum(const RowMatrix& q, const RowMatrix& k, std::span<const std::size_t> queries,
                          std::span<const std::size_t> targets, double sign, double tau, const CeGrad* grad) {
  check_pairs(queries, targets, q.rows(), k.rows());
  if (queries.empty()) return 0.0;
  if (q.cols() != k.cols()) fail(ErrorCode::dimension_mismatch, "query and key features differ in width");
  const auto n = static_cast<Eigen::Index>(queries.size());
  RowMatrix qs(n, q.cols());
  for (Eigen::Index j = 0; j < n; ++j) qs.row(j) = q.row(static_cast<Eigen::Index>(queries[static_cast<std::size_t>(j)]));
  RowMatrix scores = qs * k.transpose();
  const bool want_grad = grad != nullptr && grad->weight != 0.0;
  const double sum = ce_rows(scores, targets, sign, tau, want_grad, want_grad ? grad->d_tau : nullptr,
                             want_grad ? grad->weight : 0.0);
  if (want_grad) {
    // scores now holds softmax - onehot; chain through logits = sign * Q K^T / tau.
    scores *= grad->weight * sign / tau;
    if (grad->d_queries != nullptr) {
      const RowMatrix dqs = scores * k;
      for (Eigen::Index j = 0; j < n; ++j) {
        grad->d_queries->row(static_cast<Eigen::Index>(queries[static_cast<std::size_t>(j)])) += dqs.row(j);
      }
    }
    if (grad->d_keys != nullptr) grad->d_keys->noalias() += scores.transpose() * qs;
  }
  return sum;
}

CorrespondenceIndex index_correspondences(const CorrespondenceSet& corr, std::uint32_t grid_width_1,
                                          std::uint32_t grid_width_2, const Mask& r1, const Mask& r2) {
  CorrespondenceIndex idx;
  for (std::size_t j = 0; j < corr.size(); ++j) {
    idx.first.push_back(std::size_t{corr.points_a[j].y} * grid_width_1 + corr.points_a[j].x);
    idx.second.push_back(std::size_t{corr.points_b[j].y} * grid_width_2 + corr.points_b[j].x);
  }
  idx.partition = partition_points(corr, r1, r2);
  return idx;
}

LossBreakdown total_loss(const LossInputs& in, const CorrespondenceIndex& idx, double tau, const LossOptions& opts,
                         const LossGrads* grads) {
  if (in.s1.cols() != in.s2.cols() || in.v1.cols() != in.v2.cols() || in.s1.cols() != in.v1.cols()) {
    fail(ErrorCode::dimension_mismatch, "aggregated matrices do not share a feature width");
  }
  auto pick = [](const std::vector<std::size_t>& from, const std::vector<std::size_t>& which) {
    std::vector<std::size_t> out;
    out.reserve(which.size());
    for (auto j : which) out.push_back(from[j]);
    return out;
  };
  const auto& part = idx.partition;
  const auto in1 = pick(idx.first, part.inside);
  const auto in2 = pick(idx.second, part.inside);
  const auto out1 = pick(idx.first, part.outside);
  const auto out2 = pick(idx.second, part.outside);
  const bool consistent =
      opts.use_consistent_pair_term && in.v1_consistent != nullptr && in.v2_consistent != nullptr && !in1.empty();

  LossBreakdown lb;
  lb.empty_inside = in1.empty();
  lb.empty_outside = out1.empty() && !consistent;
  const auto n_all = static_cast<double>(idx.first.size());
  const auto n_in = static_cast<double>(in1.size());
  const auto n_out = static_cast<double>(out1.size() + (consistent ? in1.size() : 0));

  auto make = [&](RowMatrix* dq, RowMatrix* dk, double w) {
    CeGrad g;
    g.d_queries = dq;
    g.d_keys = dk;
    g.d_tau = grads != nullptr ? grads->tau : nullptr;
    g.weight = w;
    return g;
  };
  const bool want = grads != nullptr;

  if (n_all > 0) {
    const double w = opts.grad_weights.semantic * 0.5 / n_all;
    const auto g12 = make(want ? grads->s1 : nullptr, want ? grads->s2 : nullptr, w);
    const auto g21 = make(want ? grads->s2 : nullptr, want ? grads->s1 : nullptr, w);
    lb.semantic_12 = contrastive_ce_sum(in.s1, in.s2, idx.first, idx.second, 1.0, tau, want ? &g12 : nullptr) / n_all;
    lb.semantic_21 = contrastive_ce_sum(in.s2, in.s1, idx.second, idx.first, 1.0, tau, want ? &g21 : nullptr) / n_all;
  }
  if (n_in > 0) {
    const double w = opts.alpha * opts.grad_weights.visual_in * 0.5 / n_in;
    const auto g12 = make(want ? grads->v1 : nullptr, want ? grads->v2 : nullptr, w);
    const auto g21 = make(want ? grads->v2 : nullptr, want ? grads->v1 : nullptr, w);
    lb.visual_in_12 = contrastive_ce_sum(in.v1, in.v2, in1, in2, -1.0, tau, want ? &g12 : nullptr) / n_in;
    lb.visual_in_21 = contrastive_ce_sum(in.v2, in.v1, in2, in1, -1.0, tau, want ? &g21 : nullptr) / n_in;
  }
  if (n_out > 0) {
    const double w = opts.alpha * opts.grad_weights.visual_out * 0.5 / n_out;
    const auto g12 = make(want ? grads->v1 : nullptr, want ? grads->v2 : nullptr, w);
    const auto g21 = make(want ? grads->v2 : nullptr, want ? grads->v1 : nullptr, w);
    double s12 = contrastive_ce_sum(in.v1, in.v2, out1, out2, 1.0, tau, want ? &g12 : nullptr);
    double s21 = contrastive_ce_sum(in.v2, in.v1, out2, out1, 1.0, tau, want ? &g21 : nullptr);
    if (consistent) {
      const auto c12 = make(want ? grads->v1_consistent : nullptr, want ? grads->v2_consistent : nullptr, w);
      const auto c21 = make(want ? grads->v2_consistent : nullptr, want ? grads->v1_consistent : nullptr, w);
      s12 += contrastive_ce_sum(*in.v1_consistent, *in.v2_consistent, in1, in2, 1.0, tau, want ? &c12 : nullptr);
      s21 += contrastive_ce_sum(*in.v2_consistent, *in.v1_consistent, in2, in1, 1.0, tau, want ? &c21 : nullptr);
    }
    lb.visual_out_12 = s12 / n_out;
    lb.visual_out_21 = s21 / n_out;
  }
  lb.semantic = 0.5 * (lb.semantic_12 + lb.semantic_21);
  lb.visual_in = 0.5 * (lb.visual_in_12 + lb.visual_in_21);
  lb.visual_out = 0.5 * (lb.visual_out_12 + lb.visual_out_21);
  lb.total = lb.semantic + opts.alpha * (lb.visual_in + lb.visual_out);
  if (!std::isfinite(lb.total)) fail(ErrorCode::numeric, "non-finite loss");
  return lb;
}

TrainingSample make_training_sample(std::string sample_id, const FeatureStack& inconsistent_1,
                                    const FeatureStack& inconsistent_2, const FeatureStack* consistent_1,
                                    const FeatureStack* consistent_2, const CorrespondenceSet& corr, const Mask& r1,
                                    const Mask& r2, const std::vector<std::uint32_t>& layer_ids, std::uint32_t grid) {
  TrainingSample s;
  s.sample_id = std::move(sample_id);
  s.inconsistent_1 = prepare_inputs(inconsistent_1, layer_ids, grid);
  s.inconsistent_2 = prepare_inputs(inconsistent_2, layer_ids, grid);
  if (consistent_1 != nullptr && consistent_2 != nullptr) {
    s.consistent_1 = prepare_inputs(*consistent_1, layer_ids, grid);
    s.consistent_2 = prepare_inputs(*consistent_2, layer_ids, grid);
  }
  const Mask m1 = r1.height == grid && r1.width == grid ? r1 : resample_mask(r1, grid, grid);
  const Mask m2 = r2.height == grid && r2.width == grid ? r2 : resample_mask(r2, grid, grid);
  corr.validate(grid, grid, grid, grid);
  s.index = index_correspondences(corr, grid, grid, m1, m2);
  return s;
}

LossBreakdown sample_loss(const AggregatorParams& params, const TrainingSample& sample, const LossOptions& opts,
                          AggregatorParams* grad, double scale) {
  const bool want = grad != nullptr;
  const bool consistent = opts.use_consistent_pair_term && sample.consistent_1 && sample.consistent_2 &&
                          !sample.index.partition.inside.empty();
  BranchCache cs1, cs2, cv1, cv2, cc1, cc2;
  const auto s1 = aggregate(sample.inconsistent_1, params.semantic, want ? &cs1 : nullptr);
  const auto s2 = aggregate(sample.inconsistent_2, params.semantic, want ? &cs2 : nullptr);
  const auto v1 = aggregate(sample.inconsistent_1, params.visual, want ? &cv1 : nullptr);
  const auto v2 = aggregate(sample.inconsistent_2, params.visual, want ? &cv2 : nullptr);
  FeatureMatrix c1, c2;
  if (consistent) {
    c1 = aggregate(*sample.consistent_1, params.visual, want ? &cc1 : nullptr);
    c2 = aggregate(*sample.consistent_2, params.visual, want ? &cc2 : nullptr);
  }
  LossInputs in{s1.values, s2.values, v1.values, v2.values, consistent ? &c1.values : nullptr,
                consistent ? &c2.values : nullptr};
  if (!want) return total_loss(in, sample.index, params.tau, opts, nullptr);

  auto zeros = [](const RowMatrix& like) { return RowMatrix::Zero(like.rows(), like.cols()).eval(); };
  RowMatrix ds1 = zeros(s1.values), ds2 = zeros(s2.values), dv1 = zeros(v1.values), dv2 = zeros(v2.values);
  RowMatrix dc1, dc2;
  if (consistent) {
    dc1 = zeros(c1.values);
    dc2 = zeros(c2.values);
  }
  double dtau = 0.0;
  LossGrads g{&ds1, &ds2, &dv1, &dv2, consistent ? &dc1 : nullptr, consistent ? &dc2 : nullptr, &dtau};
  const auto lb = total_loss(in, sample.index, params.tau, opts, &g);

  auto back = [&](const StackInputs& x, const BranchParams& p, const BranchCache& c, RowMatrix& d, BranchParams& out) {
    d *= scale;
    aggregate_backward(x, p, c, d, out);
  };
  back(sample.inconsistent_1, params.semantic, cs1, ds1, grad->semantic);
  back(sample.inconsistent_2, params.semantic, cs2, ds2, grad->semantic);
  back(sample.inconsistent_1, params.visual, cv1, dv1, grad->visual);
  back(sample.inconsistent_2, params.visual, cv2, dv2, grad->visual);
  if (consistent) {
    back(*sample.consistent_1, params.visual, cc1, dc1, grad->visual);
    back(*sample.consistent_2, params.visual, cc2, dc2, grad->visual);
  }
  grad->tau += scale * dtau;
  return lb;
}

BatchResult batch_gradients(const AggregatorParams& params, std::span<const TrainingSample* const> batch,
                            const LossOptions& opts, unsigned threads) {
  if (batch.empty()) fail(ErrorCode::empty_input, "empty batch");
  const auto n = batch.size();
  std::vector<AggregatorParams> grads(n);
  std::vector<LossBreakdown> losses(n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      grads[i] = params.zeros_like();
      losses[i] = sample_loss(params, *batch[i], opts, &grads[i], 1.0);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  BatchResult r;
  r.grad = params.zeros_like();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    axpy(r.grad, grads[i], inv);
    add_scaled(r.mean, losses[i], inv);
  }
  check_finite(r.grad, "gradient");
  return r;
}

}  // namespace mtg
