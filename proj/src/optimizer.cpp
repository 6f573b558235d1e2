#include "mtg/optimizer.hpp"

#include <cmath>

#include "mtg/error.hpp"

namespace mtg {

double scheduled_lr(std::uint32_t epoch, double base_lr, std::uint32_t every, double factor) {
  if (every == 0) return base_lr;
  return base_lr * std::pow(factor, -static_cast<double>(epoch / every));
}

double adamw_update(double theta, double grad, double& m, double& v, std::uint64_t step, double lr,
                    const AdamWConfig& cfg, bool decay) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
  const double t = static_cast<double>(step);
  const double m_hat = m / (1.0 - std::pow(cfg.beta1, t));
  const double v_hat = v / (1.0 - std::pow(cfg.beta2, t));
  double next = theta - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  if (decay) next -= lr * cfg.weight_decay * theta;
  return next;
}

void adamw_step(AggregatorParams& params, const AggregatorParams& grads, AdamWState& state, double lr,
                const AdamWConfig& cfg, bool train_tau) {
  auto p = param_views(params, train_tau);
  auto g = param_views(const_cast<AggregatorParams&>(grads), train_tau);
  std::size_t total = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].size != g[k].size) fail(ErrorCode::dimension_mismatch, "gradient for " + p[k].name + " has wrong size");
    total += p[k].size;
  }
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  if (state.m.size() != total) fail(ErrorCode::dimension_mismatch, "optimizer state does not match parameters");
  ++state.step;
  std::size_t off = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size; ++i, ++off) {
      p[k].data[i] = adamw_update(p[k].data[i], g[k].data[i], state.m[off], state.v[off], state.step, lr, cfg,
                                  p[k].decay);
    }
  }
  if (!(params.tau > 0.0)) fail(ErrorCode::numeric, "tau left the positive range");
}

}  // namespace mtg
