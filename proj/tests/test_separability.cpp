#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>

#include "tenduq/separability.hpp"

using namespace tenduq;

namespace {

LambdaResponse linear(double b, double s, double c = 0.0) {
  return [=](double l) { return Moments{c + b * l, s}; };
}

LambdaDomain domain(double lo, double hi, std::size_t n, double dmax) {
  auto d = LambdaDomain::uniform(lo, hi, n);
  d.delta_max = dmax;
  return d;
}

}  // namespace

TEST(Ci95, BasicCases) {
  const auto a = ci_95({3.0, 0.0});
  EXPECT_EQ(a.lo, 3.0);
  EXPECT_EQ(a.hi, 3.0);
  const auto b = ci_95({0.0, 1.0});
  EXPECT_DOUBLE_EQ(b.lo, -1.96);
  EXPECT_DOUBLE_EQ(b.hi, 1.96);
  const auto c = ci_95({0.0, 1.5});
  EXPECT_LT(c.lo, b.lo);
  EXPECT_GT(c.hi, b.hi);
}

TEST(MinDelta, LinearMeanConstantStd) {
  const auto dom = domain(0, 10, 11, 2.0);
  const auto d = min_detectable_delta(linear(1.0, 0.1), 5.0, dom);
  ASSERT_TRUE(d);
  EXPECT_NEAR(*d, 0.392, 0.01 * 0.392);
}

TEST(MinDelta, AnalyticThresholdForRandomSlopes) {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const double s = 0.05 + uniform01(rng);
    const double b = (uniform01(rng) < 0.5 ? -1 : 1) * (0.5 + 3 * uniform01(rng));
    const double expect = 3.92 * s / std::abs(b);
    const auto dom = domain(0, 100, 21, 4 * expect);
    const auto d = min_detectable_delta(linear(b, s), 50.0, dom);
    ASSERT_TRUE(d);
    EXPECT_NEAR(*d, expect, 0.01 * expect) << "s=" << s << " b=" << b;
  }
}

TEST(MinDelta, ZeroStdSeparatesImmediately) {
  const auto dom = domain(0, 10, 11, 2.0);
  const auto d = min_detectable_delta(linear(1.0, 0.0), 5.0, dom);
  ASSERT_TRUE(d);
  EXPECT_LE(*d, 1e-5 * dom.delta_max);
  EXPECT_GT(*d, 0.0);
}

TEST(MinDelta, FlatMeanIsInfeasible) {
  const auto dom = domain(0, 10, 11, 2.0);
  EXPECT_FALSE(min_detectable_delta(linear(0.0, 0.1, 3.0), 5.0, dom));
}

TEST(MinDelta, MatchesBruteForceScan) {
  Rng rng(2);
  int checked = 0;
  for (int t = 0; t < 20; ++t) {
    const double b = 0.2 + uniform01(rng), a = 0.3 * uniform01(rng), w = 2 + 5 * uniform01(rng);
    const double s0 = 0.05 + 0.5 * uniform01(rng), s1 = 0.05 * uniform01(rng);
    // strictly increasing mean: b > a / (2 w)
    LambdaResponse f = [=](double l) { return Moments{b * l + 0.5 * a * std::sin(l / w), s0 + s1 * l}; };
    const auto dom = domain(0, 20, 11, 8.0);
    const double l0 = dom.grid[1 + static_cast<std::size_t>(uniform01(rng) * 9)];
    const auto d = min_detectable_delta(f, l0, dom);
    const Moments c = f(l0);
    const int n = 10000;
    const double step = dom.delta_max / n;
    std::optional<double> brute;
    for (int k = 1; k <= n; ++k) {
      const auto m = separation_margin(f, l0, c, k * step, dom);
      if (m && *m > 0.0) {
        brute = k * step;
        break;
      }
    }
    ASSERT_EQ(d.has_value(), brute.has_value()) << t;
    if (!d) continue;
    ++checked;
    EXPECT_LE(std::abs(*d - *brute), step) << t;
  }
  EXPECT_GE(checked, 15);
}

TEST(Maximin, LinearCaseTiesAtFirstGridPoint) {
  const auto dom = domain(0, 10, 11, 2.0);
  const auto r = maximin_over_grid(linear(1.0, 0.1), dom);
  ASSERT_TRUE(r);
  EXPECT_DOUBLE_EQ(r->lambda_star, 0.0);
  EXPECT_NEAR(r->delta_min, 0.392, 0.004);
}

TEST(Maximin, FlatRegionIsInfeasible) {
  LambdaResponse f = [](double l) { return Moments{l < 5 ? 0.0 : l - 5, 0.1}; };
  const auto dom = domain(0, 10, 11, 2.0);
  EXPECT_FALSE(maximin_over_grid(f, dom));
}

TEST(Maximin, DoublingStdDoesNotShrinkDelta) {
  LambdaResponse f = [](double l) { return Moments{std::exp(-l / 3.0), 0.002 + 0.001 * l}; };
  LambdaResponse f2 = [&](double l) {
    auto m = f(l);
    m.std_dev *= 2;
    return m;
  };
  const auto dom = domain(0, 10, 11, 5.0);
  const auto a = maximin_over_grid(f, dom);
  const auto b = maximin_over_grid(f2, dom);
  ASSERT_TRUE(a);
  if (b) {
    EXPECT_GE(b->delta_min, a->delta_min);
  }
}

TEST(Overlap, IdenticalDistributions) {
  EXPECT_NEAR(overlap_pair({1.0, 0.3}, {1.0, 0.3}), 1.0, 1e-3);
  const auto dom = domain(0, 10, 11, 2.0);
  const auto o = overlap_integral(linear(0.0, 0.5, 2.0), 5.0, dom);
  ASSERT_TRUE(o);
  EXPECT_NEAR(*o, 1.0, 1e-3);
}

TEST(Overlap, ShiftedUnitNormals) {
  const double exact = 2.0 * boost::math::cdf(boost::math::normal(), -1.0);
  EXPECT_NEAR(overlap_pair({0, 1}, {2, 1}), exact, 1e-3);
  EXPECT_NEAR(exact, 0.3173, 1e-4);
  // symmetric sides around the centre
  const auto dom = domain(0, 10, 11, 2.0);
  const auto o = overlap_integral(linear(1.0, 1.0), 5.0, dom);
  ASSERT_TRUE(o);
  EXPECT_NEAR(*o, exact, 1e-3);
}

TEST(Overlap, FarApartIsNegligible) {
  EXPECT_LT(overlap_pair({0, 1}, {10, 1}), 1e-6);
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const double o = overlap_pair({standard_normal(rng), 0.1 + uniform01(rng)}, {standard_normal(rng), 0.1 + uniform01(rng)});
    EXPECT_GE(o, 0.0);
    EXPECT_LE(o, 1.0);
  }
}

TEST(Node, BranchesArePopulatedExclusively) {
  const auto dom = domain(0, 10, 11, 2.0);
  const auto sep = separability_node(linear(1.0, 0.1), {0, 0}, dom);
  EXPECT_TRUE(sep.separable);
  EXPECT_TRUE(sep.delta_min && sep.lambda_star);
  EXPECT_FALSE(sep.o_min || sep.o_max || sep.r_o);
  const auto non = separability_node(linear(0.01, 0.5), {0, 0}, dom);
  EXPECT_FALSE(non.separable);
  EXPECT_FALSE(non.delta_min);
  ASSERT_TRUE(non.o_min && non.o_max && non.r_o);
  EXPECT_LE(*non.o_min, *non.o_max);
  EXPECT_DOUBLE_EQ(*non.r_o, *non.o_max - *non.o_min);
  EXPECT_EQ(non.overlap.size(), dom.grid.size());
}

TEST(Domain, Validation) {
  auto d = domain(0, 10, 11, 2.0);
  EXPECT_NO_THROW(d.validate());
  d.grid = {1, 1};
  EXPECT_THROW(d.validate(), ConfigError);
  d = domain(0, 10, 11, 0.0);
  EXPECT_THROW(d.validate(), ConfigError);
  EXPECT_DOUBLE_EQ(LambdaDomain::uniform(50, 500, 20).delta_max, 90.0);
}

class MomentSurrogateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    Rng rng(7);
    grid_ = MomentTrainingGrid::defaults();
    auto g = upscaled_response(UpscaledBeamModel{});
    UpscaledResponse counted = [g](const std::vector<Point>& p, double E, double l) {
      ++calls_;
      return g(p, E, l);
    };
    surr_ = new MomentSurrogates(train_moment_surrogates(counted, {StochasticKind::lognormal, 31244, 3549}, grid_,
                                                         LambdaDomain::uniform(50, 500, 20), {}, rng));
  }
  static void TearDownTestSuite() { delete surr_; }
  static inline MomentTrainingGrid grid_;
  static inline MomentSurrogates* surr_ = nullptr;
  static inline std::size_t calls_ = 0;
};

TEST_F(MomentSurrogateTest, CostIsLambdaCountTimesQuadrature) {
  EXPECT_EQ(calls_, grid_.lambdas.size() * 4);
  EXPECT_EQ(surr_->forward_evaluations, calls_);
}

TEST_F(MomentSurrogateTest, ValidationAccuracy) {
  ASSERT_TRUE(surr_->mean_metrics.r2);
  ASSERT_TRUE(surr_->std_metrics.r2);
  EXPECT_GE(*surr_->mean_metrics.r2, 0.99);
  EXPECT_GE(*surr_->std_metrics.r2, 0.99);
}

TEST_F(MomentSurrogateTest, FastResponseMatchesDirectPrediction) {
  const Point p{700, 300};
  const auto f = surr_->response(p);
  for (double l : {60.0, 233.0, 480.0}) {
    EXPECT_NEAR(f(l).mean, surr_->at(p, l).mean, 1e-10);
    EXPECT_NEAR(f(l).std_dev, surr_->at(p, l).std_dev, 1e-10);
  }
}

TEST_F(MomentSurrogateTest, NearFieldSeparableFarFieldOverlaps) {
  const auto map = separability_map(*surr_, {{0, 600}, {2500, 600}});
  EXPECT_TRUE(map[0].separable);
  ASSERT_TRUE(map[0].delta_min);
  EXPECT_GT(*map[0].delta_min, 0.0);
  EXPECT_FALSE(map[1].separable);
  ASSERT_TRUE(map[1].o_max);
  EXPECT_GT(*map[1].o_max, 0.4);
  // overlap grows towards the far field
  const auto mid = separability_node(surr_->response({1500, 600}), {1500, 600}, surr_->domain);
  ASSERT_TRUE(mid.o_max);
  EXPECT_GT(*map[1].o_max, *mid.o_max);

  const std::string path = ::testing::TempDir() + "sep.csv";
  write_separability_csv(path, map);
  const auto t = csv::read(path);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x_mm", "z_mm", "separable", "delta_min_mm", "lambda_star_mm", "o_min",
                                                "o_max", "r_o"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][2], "1");
  EXPECT_EQ(t.rows[0][5], "");
  EXPECT_EQ(t.rows[1][3], "");
}

TEST(MomentTraining, DeterministicLimit) {
  MomentTrainingGrid grid;
  grid.xs = {0, 500, 1000, 1500};
  grid.zs = {200, 600};
  grid.lambdas = {50, 200, 350, 500};
  grid.train_points = 32;
  const UpscaledBeamModel model;
  Rng rng(9);
  MomentFitSettings s;
  s.gp = {2, 200, 0};
  const auto surr = train_moment_surrogates(upscaled_response(model), {StochasticKind::lognormal, 31000, 1e-6}, grid,
                                            LambdaDomain::uniform(50, 500, 4), s, rng);
  // training targets: g at the mean, zero spread
  const auto& norm = surr.mean_gp.normalizer();
  for (Eigen::Index r = 0; r < surr.mean_gp.train_inputs().rows(); ++r) {
    const Vector raw = norm.from_unit(surr.mean_gp.train_inputs().row(r).transpose());
    const double target = norm.output_from_unit(surr.mean_gp.train_outputs()[r]);
    EXPECT_NEAR(target, eval_g(model, {raw[0], raw[1]}, 31000, raw[2]), 1e-6 * std::max(1.0, std::abs(target)));
    EXPECT_LT(surr.std_gp.normalizer().output_from_unit(surr.std_gp.train_outputs()[r]), 1e-6);
  }
}
