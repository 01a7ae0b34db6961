#include <gtest/gtest.h>

#include <boost/math/distributions/lognormal.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "tenduq/core.hpp"

using namespace tenduq;

namespace {

ParameterSpace unit_space(std::size_t dim) {
  std::vector<ParameterEntry> entries;
  for (std::size_t i = 0; i < dim; ++i)
    entries.push_back({"p" + std::to_string(i), 0.0, 1.0, PriorSpec::uniform(0.0, 1.0)});
  return ParameterSpace(entries);
}

ParameterSpace reference_gp_space() {
  return ParameterSpace({{"E_cm", 2.702e4, 3.898e4, PriorSpec::uniform(2.702e4, 3.898e4)},
                         {"p0", 2.008, 5.992, PriorSpec::uniform(2.008, 5.992)},
                         {"c0", 0.2012, 0.7988, PriorSpec::uniform(0.2012, 0.7988)},
                         {"mu", 0.202, 1.198, PriorSpec::uniform(0.202, 1.198)}});
}

std::string temp_path(const std::string& name) {
  return ::testing::TempDir() + "tenduq_core_" + name;
}

void expect_stratified(const Matrix& design, const ParameterSpace& space) {
  const auto n = static_cast<std::size_t>(design.rows());
  for (Eigen::Index j = 0; j < design.cols(); ++j) {
    std::set<std::size_t> strata;
    const double lo = space[static_cast<std::size_t>(j)].lower;
    const double w = space[static_cast<std::size_t>(j)].upper - lo;
    for (Eigen::Index r = 0; r < design.rows(); ++r) {
      const double u = (design(r, j) - lo) / w;
      ASSERT_GE(u, 0.0);
      ASSERT_LE(u, 1.0);
      strata.insert(std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n))));
    }
    EXPECT_EQ(strata.size(), n) << "dimension " << j;
  }
}

}  // namespace

TEST(Prior, UniformInsideAndOutside) {
  const auto space = unit_space(1);
  const double inside[] = {0.5};
  const double outside[] = {1.5};
  EXPECT_DOUBLE_EQ(prior_log_density(space, inside), 0.0);
  EXPECT_EQ(prior_log_density(space, outside), kNegInf);
}

TEST(Prior, DimensionMismatchThrows) {
  const auto space = unit_space(2);
  const double theta[] = {0.5};
  EXPECT_THROW(prior_log_density(space, theta), std::invalid_argument);
}

TEST(Prior, LognormalMatchesIndependentEvaluator) {
  const ParameterSpace space({{"E", 1.0, 1e6, PriorSpec::lognormal(33000, 3300)}});
  const double cv2 = 0.01;  // (3300/33000)^2
  const double scale = std::sqrt(std::log(1.0 + cv2));
  const double loc = std::log(33000.0) - 0.5 * scale * scale;
  const boost::math::lognormal_distribution<double> oracle(loc, scale);
  const double theta[] = {33000.0};
  EXPECT_NEAR(prior_log_density(space, theta), std::log(boost::math::pdf(oracle, 33000.0)), 1e-12);
  EXPECT_NEAR(boost::math::mean(oracle), 33000.0, 1e-8);
  EXPECT_NEAR(boost::math::standard_deviation(oracle), 3300.0, 1e-8);
}

TEST(Prior, TruncatedTrapezoidMassConsistent) {
  const double lo = 25200, hi = 37050;
  const ParameterSpace space({{"E", lo, hi, PriorSpec::lognormal(33000, 3300)}});
  const auto ln = lognormal_from_moments(33000, 3300);
  const boost::math::lognormal_distribution<double> oracle(ln.location, ln.scale);
  const double mass = boost::math::cdf(oracle, hi) - boost::math::cdf(oracle, lo);
  const int n = 10000;
  const double h = (hi - lo) / (n - 1);
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    const double theta[] = {lo + h * i};
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    integral += w * std::exp(prior_log_density(space, theta));
  }
  integral *= h;
  EXPECT_NEAR(integral, mass, 1e-6);
}

TEST(Prior, InvalidSpecsRejected) {
  EXPECT_THROW(ParameterSpace({{"a", 1.0, 1.0, PriorSpec::uniform(0, 1)}}), std::invalid_argument);
  EXPECT_THROW(ParameterSpace({{"a", 0.0, 1.0, PriorSpec::normal(0, 0)}}), std::invalid_argument);
  EXPECT_THROW(ParameterSpace({{"a", 0.0, 1.0, PriorSpec::uniform(0, 1)}}, 3,
                              ParameterEntry{"s", 0.0, 1.0, PriorSpec::uniform(0, 1)}),
               std::invalid_argument);
  EXPECT_THROW(prior_kind_from_string("gamma"), ConfigError);
}

TEST(Prior, ExtendedSpaceAppendsSigmaLast) {
  const ParameterSpace space({{"E", 1.0, 2.0, PriorSpec::uniform(1, 2)},
                              {"p", 0.0, 1.0, PriorSpec::uniform(0, 1)}},
                             0, ParameterEntry{"sigma_E", 0.5, 3.0, PriorSpec::uniform(0.5, 3.0)});
  const auto ext = space.extended();
  ASSERT_EQ(ext.size(), 3u);
  EXPECT_EQ(ext[2].name, "sigma_E");
  EXPECT_FALSE(ext.embedded_index().has_value());
  EXPECT_EQ(space.base().size(), 2u);
}

TEST(SamplePrior, UniformMeanAndBounds) {
  const auto space = unit_space(1);
  Rng rng(1);
  const Matrix s = sample_prior(space, rng, 1000);
  EXPECT_NEAR(s.mean(), 0.5, 0.05);
  EXPECT_GE(s.minCoeff(), 0.0);
  EXPECT_LE(s.maxCoeff(), 1.0);
}

TEST(SamplePrior, TruncatedLognormalMeanMatchesQuadratureOracle) {
  const double lo = 25200, hi = 37050;
  const ParameterSpace space({{"E", lo, hi, PriorSpec::lognormal(33000, 3300)}});
  const auto ln = lognormal_from_moments(33000, 3300);
  const boost::math::lognormal_distribution<double> oracle(ln.location, ln.scale);
  // mean of the truncated law by dense quadrature
  const int n = 20001;
  const double h = (hi - lo) / (n - 1);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + h * i;
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    num += w * x * boost::math::pdf(oracle, x);
    den += w * boost::math::pdf(oracle, x);
  }
  Rng rng(7);
  const Matrix s = sample_prior(space, rng, 100000);
  EXPECT_NEAR(s.mean(), num / den, 0.01 * num / den);
  EXPECT_GE(s.minCoeff(), lo);
  EXPECT_LE(s.maxCoeff(), hi);
}

TEST(LatinHypercube, OneDimensionFourStrata) {
  const auto space = unit_space(1);
  Rng rng(3);
  expect_stratified(latin_hypercube(space, rng, 4), space);
}

TEST(LatinHypercube, StratifiedForAllCounts) {
  const auto space = reference_gp_space();
  for (std::size_t count : {1u, 4u, 100u}) {
    Rng rng(count);
    const Matrix d = latin_hypercube(space, rng, count);
    ASSERT_EQ(static_cast<std::size_t>(d.rows()), count);
    expect_stratified(d, space);
  }
}

TEST(Normalizer, RoundTripExact) {
  Rng rng(11);
  Matrix inputs(50, 3);
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = 1e4 * uniform01(rng) - 3.0;
  Matrix outputs = Matrix::Random(50, 2) * 40.0;
  const auto norm = Normalizer::from_data(inputs, outputs);
  for (int k = 0; k < 1000; ++k) {
    Vector v(3);
    for (int j = 0; j < 3; ++j) v[j] = uniform01(rng);
    const Vector x = norm.from_unit(v);
    const Vector back = norm.to_unit(std::span<const double>(x.data(), 3));
    EXPECT_LT((back - v).lpNorm<Eigen::Infinity>(), 1e-12);
    const double y = uniform01(rng);
    EXPECT_NEAR(norm.output_to_unit(norm.output_from_unit(y)), y, 1e-12);
  }
  const Matrix unit = norm.to_unit(inputs);
  EXPECT_NEAR(unit.minCoeff(), 0.0, 1e-15);
  EXPECT_NEAR(unit.maxCoeff(), 1.0, 1e-15);
}

TEST(Normalizer, DegenerateRangeKeepsUnitWidth) {
  Matrix inputs = Matrix::Constant(4, 1, 2.0);
  Matrix outputs = Matrix::Constant(4, 1, 5.0);
  const auto norm = Normalizer::from_data(inputs, outputs);
  EXPECT_DOUBLE_EQ(norm.output_width(), 1.0);
  EXPECT_DOUBLE_EQ(norm.output_to_unit(5.0), 0.0);
}

TEST(Observations, CsvRoundTripAnyOrderWithGroups) {
  const auto path = temp_path("obs.csv");
  {
    std::ofstream out(path);
    out << "x_mm,z_mm,strain_microstrain,group\n"
        << "40,0,3.5,b\n"
        << "\n"
        << "0,0,20.25,a\n"
        << "0,-40,1e1,a\n";
  }
  const auto obs = read_observations(path, 0.01);
  ASSERT_EQ(obs.size(), 3u);
  EXPECT_EQ(obs.points[0], (Point{40, 0}));
  EXPECT_DOUBLE_EQ(obs.values[2], 10.0);
  ASSERT_EQ(obs.groups.size(), 2u);
  EXPECT_EQ(obs.groups[0].label, "b");
  EXPECT_EQ(obs.groups[1].indices, (std::vector<std::size_t>{1, 2}));

  const auto path2 = temp_path("obs2.csv");
  write_observations(path2, obs);
  const auto again = read_observations(path2, 0.01);
  EXPECT_EQ(again.values, obs.values);
  EXPECT_EQ(again.points, obs.points);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST(Observations, ParseErrorsNameLocation) {
  const auto path = temp_path("bad.csv");
  {
    std::ofstream out(path);
    out << "x_mm,z_mm,strain_microstrain\n0,0,1\n40,abc,2\n";
  }
  try {
    read_observations(path, 0.01);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  }
  {
    std::ofstream out(path);
    out << "x_mm,z_mm,strain_microstrain\n";
  }
  EXPECT_THROW(read_observations(path, 0.01), ParseError);
  std::remove(path.c_str());
}

TEST(Observations, ValidateRejectsOverlappingGroups) {
  ObservationSet obs;
  obs.points = {{0, 0}, {1, 0}};
  obs.values = {1, 2};
  obs.groups = {{"a", {0}}, {"b", {0, 1}}};
  EXPECT_THROW(obs.validate(), std::invalid_argument);
  obs.groups = {{"a", {0}}, {"b", {1}}};
  EXPECT_NO_THROW(obs.validate());
}

TEST(Stats, QuantileAndMad) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.25), 2.5);
  EXPECT_DOUBLE_EQ(median_abs_deviation({1, 2, 3, 4, 100}), 1.0);
}
