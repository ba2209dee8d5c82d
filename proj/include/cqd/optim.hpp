#pragma once

#include <vector>

#include "cqd/tensor.hpp"

namespace cqd {

/// Classical momentum SGD with L2 weight decay folded into the gradient:
///   v <- momentum * v - lr * (g + weight_decay * theta);  theta <- theta + v
struct SgdState {
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 0.0005f;
  std::vector<std::vector<float>> velocity;
};

/// Applies one update to every parameter. Parameters without a gradient are
/// treated as having a zero gradient. Velocity buffers are created on the
/// first call and must keep matching parameter shapes afterwards.
void sgd_step(std::vector<Tensor>& params, SgdState& state);

/// Linear learning-rate ramp from `start` to `end` over `ramp_epochs`, then
/// constant at `end`.
struct LrSchedule {
  double start = 0.0005;
  double end = 0.00005;
  int ramp_epochs = 30;
};

double lr_at(int epoch, const LrSchedule& schedule);

}  // namespace cqd
