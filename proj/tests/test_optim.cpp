#include <doctest.h>

#include <cmath>

#include "cqd/errors.hpp"
#include "cqd/optim.hpp"

using namespace cqd;

TEST_CASE("sgd follows the momentum recurrence") {
  // Hand-unrolled: v1 = -lr(g + wd θ0), θ1 = θ0 + v1, v2 = m v1 - lr(g + wd θ1), θ2 = θ1 + v2.
  const double lr = 0.1, m = 0.9, wd = 0.01, g = 0.5;
  double theta = 2.0, v = 0.0;
  std::vector<Tensor> params{Tensor({1}, std::vector<float>{2.0f})};
  params[0].set_requires_grad(true);
  SgdState s;
  s.lr = static_cast<float>(lr);
  s.momentum = static_cast<float>(m);
  s.weight_decay = static_cast<float>(wd);
  for (int step = 0; step < 5; ++step) {
    params[0].ensure_grad()[0] = static_cast<float>(g);
    sgd_step(params, s);
    v = m * v - lr * (g + wd * theta);
    theta += v;
    CHECK(params[0].data()[0] == doctest::Approx(theta).epsilon(1e-6));
  }
}

TEST_CASE("parameters without a gradient only decay") {
  std::vector<Tensor> params{Tensor({2}, std::vector<float>{1.0f, -1.0f})};
  SgdState s;
  s.lr = 0.5f;
  s.momentum = 0.0f;
  s.weight_decay = 0.1f;
  sgd_step(params, s);
  CHECK(params[0].data()[0] == doctest::Approx(0.95));
  CHECK(params[0].data()[1] == doctest::Approx(-0.95));
}

TEST_CASE("sgd rejects changed parameter sets") {
  std::vector<Tensor> params{Tensor({2})};
  SgdState s;
  sgd_step(params, s);
  params.push_back(Tensor({1}));
  CHECK_THROWS_AS(sgd_step(params, s), ContractError);
  s.lr = 0;
  CHECK_THROWS_AS(sgd_step(params, s), ContractError);
}

TEST_CASE("learning-rate ramp") {
  const LrSchedule sch{0.0005, 0.00005, 30};
  CHECK(lr_at(0, sch) == doctest::Approx(0.0005));
  CHECK(lr_at(15, sch) == doctest::Approx(0.000275));
  CHECK(lr_at(30, sch) == doctest::Approx(0.00005));
  CHECK(lr_at(100, sch) == doctest::Approx(0.00005));
  for (int e = 0; e < 40; ++e) CHECK(lr_at(e + 1, sch) <= lr_at(e, sch));
  CHECK(lr_at(3, LrSchedule{0.1, 0.01, 0}) == doctest::Approx(0.01));
  CHECK_THROWS_AS(lr_at(-1, sch), ContractError);
}
