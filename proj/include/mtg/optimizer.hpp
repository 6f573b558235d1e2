#pragma once

#include <cstdint>
#include <vector>

#include "mtg/model.hpp"

namespace mtg {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Step-decay schedule: base_lr * factor^(-floor(epoch / every)), epochs 0-based.
double scheduled_lr(std::uint32_t epoch, double base_lr, std::uint32_t every, double factor);

/// One decoupled-weight-decay Adam update of a scalar. `step` is 1-based.
double adamw_update(double theta, double grad, double& m, double& v, std::uint64_t step, double lr,
                    const AdamWConfig& cfg, bool decay = true);

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// Updates every tensor in place. tau moves only when `train_tau`, and never decays.
void adamw_step(AggregatorParams& params, const AggregatorParams& grads, AdamWState& state, double lr,
                const AdamWConfig& cfg, bool train_tau);

}  // namespace mtg
