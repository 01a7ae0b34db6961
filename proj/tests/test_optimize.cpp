#include <gtest/gtest.h>

#include <cmath>

#include "tenduq/optimize.hpp"

using namespace tenduq;

TEST(NelderMead, Rosenbrock) {
  auto f = [](const Vector& x) {
    return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2);
  };
  Vector start(2);
  start << -1.2, 1.0;
  NelderMeadOptions opt;
  opt.max_evaluations = 5000;
  opt.x_tolerance = 1e-10;
  const auto r = nelder_mead(f, start, opt);
  EXPECT_NEAR(r.x[0], 1.0, 1e-5);
  EXPECT_NEAR(r.x[1], 1.0, 1e-5);
  EXPECT_TRUE(r.converged);
}

TEST(NelderMead, NonFiniteRegionsAvoided) {
  auto f = [](const Vector& x) {
    if (x[0] < 0) return std::numeric_limits<double>::quiet_NaN();
    return std::pow(x[0] - 2.0, 2);
  };
  Vector start(1);
  start << 0.5;
  const auto r = nelder_mead(f, start);
  EXPECT_NEAR(r.x[0], 2.0, 1e-4);
}

TEST(NelderMead, RespectsEvaluationBudget) {
  auto f = [](const Vector& x) { return x.squaredNorm(); };
  NelderMeadOptions opt;
  opt.max_evaluations = 30;
  const auto r = nelder_mead(f, Vector::Constant(3, 5.0), opt);
  EXPECT_LE(r.evaluations, 30u + 5u);
}
