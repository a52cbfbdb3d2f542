#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feds2t/optim.hpp"

#include <cmath>

using namespace feds2t;

TEST_CASE("zero gradient leaves parameters unchanged") {
  Vector p(3);
  p << 1.5, -2.0, 0.25;
  const Vector orig = p;
  AdamState state(3);
  for (int i = 0; i < 5; ++i) adam_step(p, Vector::Zero(3), state, 0.1);
  CHECK((p - orig).cwiseAbs().maxCoeff() == 0.0);

  sgd_step(p, Vector::Zero(3), 0.1);
  CHECK((p - orig).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bias-corrected first Adam step moves by about lr") {
  Vector p(1);
  p << 2.0;
  Vector g(1);
  g << 1.0;
  AdamState state(1);
  adam_step(p, g, state, 0.1);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  CHECK(std::abs(p(0) - (2.0 - 0.1 / (1.0 + 1e-8))) < 1e-15);
  CHECK(std::abs(p(0) - 1.9) < 1e-8);
}

TEST_CASE("two Adam steps reproduce the hand recurrence") {
  const double g = 0.37, lr = 0.05;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Vector p(1);
  p << -1.2;
  AdamState state(1);
  adam_step(p, Vector::Constant(1, g), state, lr);
  adam_step(p, Vector::Constant(1, g), state, lr);

  // The same recurrence written out longhand.
  double m = 0, v = 0, x = -1.2;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double m_hat = m / (1 - std::pow(b1, t));
    const double v_hat = v / (1 - std::pow(b2, t));
    x -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
  CHECK(std::abs(p(0) - x) < 1e-12);
}

TEST_CASE("sgd step is the plain update") {
  Vector p(2);
  p << 1.0, -1.0;
  Vector g(2);
  g << 0.5, 2.0;
  sgd_step(p, g, 0.1);
  CHECK(p(0) == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p(1) == doctest::Approx(-1.2).epsilon(1e-15));
}

TEST_CASE("shape mismatches are rejected") {
  Vector p(2);
  p.setZero();
  AdamState state(3);
  CHECK_THROWS_AS(adam_step(p, Vector::Zero(2), state, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(sgd_step(p, Vector::Zero(3), 0.1), std::invalid_argument);
}
