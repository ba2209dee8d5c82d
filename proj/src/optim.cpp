#include "cqd/optim.hpp"

#include "cqd/errors.hpp"

namespace cqd {

void sgd_step(std::vector<Tensor>& params, SgdState& state) {
  CQD_REQUIRE(state.lr > 0.0f, "sgd: learning rate must be positive");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.size(), 0.0f);
  }
  CQD_REQUIRE(state.velocity.size() == params.size(), "sgd: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto& v = state.velocity[i];
    CQD_REQUIRE(v.size() == theta.size(), "sgd: velocity/parameter shape mismatch");
    const bool has = params[i].has_grad();
    std::span<const float> g = has ? std::span<const float>(params[i].grad()) : std::span<const float>{};
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const float grad = (has ? g[j] : 0.0f) + state.weight_decay * theta[j];
      v[j] = state.momentum * v[j] - state.lr * grad;
      theta[j] += v[j];
    }
  }
}

double lr_at(int epoch, const LrSchedule& schedule) {
  CQD_REQUIRE(epoch >= 0, "lr_at: negative epoch");
  if (schedule.ramp_epochs <= 0 || epoch >= schedule.ramp_epochs) return schedule.end;
  const double t = static_cast<double>(epoch) / schedule.ramp_epochs;
  return schedule.start + (schedule.end - schedule.start) * t;
}

}  // namespace cqd
