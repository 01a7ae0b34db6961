#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tenduq/forward.hpp"

using namespace tenduq;

namespace {

const std::vector<double> kTheta{31000.0, 3.5, 0.45, 0.65};

std::string temp_path(const std::string& name) {
  return ::testing::TempDir() + "tenduq_forward_" + name;
}

}  // namespace

TEST(EvalF, OriginAtReferenceModulusIsAmplitude) {
  const SyntheticBeamModel m;
  const std::vector<double> theta{m.E_ref, 3.5, 0.45, 0.65};
  EXPECT_DOUBLE_EQ(eval_f(m, {0, 0}, theta), 20.0);
}

TEST(EvalF, OneTransferLengthIsAmplitudeOverE) {
  const SyntheticBeamModel m;
  const std::vector<double> theta{m.E_ref, 3.5, 0.45, 0.65};
  const double lt = m.transfer_length(3.5, 0.45, 0.65);
  EXPECT_NEAR(eval_f(m, {lt, 0}, theta), 7.357588823428847, 1e-12);
}

TEST(EvalF, VerticalAsymmetryRatio) {
  const SyntheticBeamModel m;
  const double top = eval_f(m, {40, m.h / 2}, kTheta);
  const double bottom = eval_f(m, {40, -m.h / 2}, kTheta);
  EXPECT_NEAR(top / bottom, (1 + 0.075) / (1 - 0.075), 1e-12);
}

TEST(EvalF, RejectsNonPositiveParameters) {
  const SyntheticBeamModel m;
  EXPECT_THROW(eval_f(m, {0, 0}, std::vector<double>{0.0, 3.5, 0.45, 0.65}), std::domain_error);
  EXPECT_THROW(eval_f(m, {0, 0}, std::vector<double>{3e4, -1.0, 0.45, 0.65}), std::domain_error);
  EXPECT_THROW(eval_f(m, {0, 0}, std::vector<double>{3e4, 3.5, 0.45, 0.0}), std::domain_error);
}

TEST(EvalF, MonotoneInModulusAndDistance) {
  const SyntheticBeamModel m;
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> theta{27020 + 11960 * uniform01(rng), 2.008 + 3.984 * uniform01(rng),
                              0.2012 + 0.5976 * uniform01(rng), 0.202 + 0.996 * uniform01(rng)};
    const Point p{400 * uniform01(rng), -80 + 160 * uniform01(rng)};
    const double base = eval_f(m, p, theta);
    auto stiffer = theta;
    stiffer[kEcm] += 1.0 + 1000 * uniform01(rng);
    EXPECT_LE(eval_f(m, p, stiffer), base);
    EXPECT_LE(eval_f(m, {p.x + 1.0 + 50 * uniform01(rng), p.z}, theta), base);
  }
}

TEST(EvalF, TransferLengthTrends) {
  const SyntheticBeamModel m;
  const double base = m.transfer_length(3.5, 0.45, 0.65);
  EXPECT_LT(m.transfer_length(4.0, 0.45, 0.65), base);
  EXPECT_LT(m.transfer_length(3.5, 0.45, 0.8), base);
  EXPECT_GT(m.transfer_length(3.5, 0.6, 0.65), base);
}

TEST(EvalG, PeakIsAmplitude) {
  const UpscaledBeamModel m;
  EXPECT_DOUBLE_EQ(eval_g(m, {0, m.z_t}, m.E_ref, 0.0), m.a0);
}

TEST(EvalG, DepthFactorMatchesDirectEvaluation) {
  const UpscaledBeamModel m;
  const Point p{300, 450};
  for (double a : {50.0, 120.0, 240.0}) {
    const double ratio = eval_g(m, p, 33000, 2 * a) / eval_g(m, p, 33000, a);
    EXPECT_NEAR(ratio, std::exp(-a / m.d0), 1e-12);
  }
}

TEST(EvalG, DoublingModulusHalvesWithoutDecayCoupling) {
  UpscaledBeamModel m;
  m.kappa = 0.0;
  for (double x : {0.0, 250.0, 1500.0})
    EXPECT_NEAR(eval_g(m, {x, 300}, 2 * m.E_ref, 100) / eval_g(m, {x, 300}, m.E_ref, 100), 0.5,
                1e-12);
  // with the stiffness-dependent decay length the halving holds at the break
  const UpscaledBeamModel coupled;
  EXPECT_NEAR(eval_g(coupled, {0, 300}, 2 * coupled.E_ref, 100) /
                  eval_g(coupled, {0, 300}, coupled.E_ref, 100),
              0.5, 1e-12);
}

TEST(EvalG, SeparableProductStructure) {
  const UpscaledBeamModel m;
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const double z = 1000 * uniform01(rng), E = 20000 + 20000 * uniform01(rng);
    const double x1 = 2500 * uniform01(rng), x2 = 2500 * uniform01(rng);
    const double a1 = 50 + 450 * uniform01(rng), a2 = 50 + 450 * uniform01(rng);
    const double lhs = eval_g(m, {x1, z}, E, a1) * eval_g(m, {x2, z}, E, a2);
    const double rhs = eval_g(m, {x2, z}, E, a1) * eval_g(m, {x1, z}, E, a2);
    EXPECT_NEAR(lhs / rhs, 1.0, 1e-10);
  }
}

TEST(EvalG, StrictlyDecreasingInDepthAndDistance) {
  const UpscaledBeamModel m;
  EXPECT_GT(eval_g(m, {100, 500}, 33000, 100), eval_g(m, {100, 500}, 33000, 101));
  EXPECT_GT(eval_g(m, {100, 500}, 33000, 100), eval_g(m, {101, 500}, 33000, 100));
}

TEST(GenerateObservations, DefaultGridHas55Points) {
  const auto grid = ObservationGrid::dfos_default();
  EXPECT_EQ(grid.points().size(), 55u);
  const auto groups = grid.distance_groups();
  EXPECT_EQ(groups.size(), 11u);
  EXPECT_EQ(groups[0].indices.size(), 5u);
}

TEST(GenerateObservations, NoiseFreeMatchesModel) {
  const SyntheticBeamModel m;
  Rng rng(1);
  const auto obs = generate_observations(m, kTheta, ObservationGrid::dfos_default(), 0.0, 20.0, rng);
  for (std::size_t i = 0; i < obs.size(); ++i)
    EXPECT_EQ(obs.values[i], eval_f(m, obs.points[i], kTheta));
  EXPECT_NO_THROW(obs.validate());
}

TEST(GenerateObservations, SameSeedIsIdentical) {
  const SyntheticBeamModel m;
  Rng a(42), b(42);
  const auto grid = ObservationGrid::dfos_default();
  const auto o1 = generate_observations(m, kTheta, grid, 0.01, 20.0, a);
  const auto o2 = generate_observations(m, kTheta, grid, 0.01, 20.0, b);
  EXPECT_EQ(o1.values, o2.values);
}

TEST(GenerateObservations, NoiseStdInNormalizedUnits) {
  const SyntheticBeamModel m;
  ObservationGrid grid;
  for (int i = 0; i < 100; ++i) grid.xs.push_back(4.0 * i);
  for (int i = 0; i < 100; ++i) grid.zs.push_back(-80.0 + 1.6 * i);
  Rng rng(3);
  const double scale = 18.0;
  const auto obs = generate_observations(m, kTheta, grid, 0.01, scale, rng);
  ASSERT_EQ(obs.size(), 10000u);
  double ss = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double r = (obs.values[i] - eval_f(m, obs.points[i], kTheta)) / scale;
    ss += r * r;
  }
  EXPECT_NEAR(std::sqrt(ss / obs.size()), 0.01, 0.001);
}

TEST(GenerateObservations, StiffnessFieldPerturbsModulus) {
  const SyntheticBeamModel m;
  Rng rng(1);
  StiffnessField field;
  field.amplitude = 0.15;
  const auto obs =
      generate_observations(m, kTheta, ObservationGrid::dfos_default(), 0.0, 20.0, rng, field);
  const auto& p = obs.points[12];
  auto theta = kTheta;
  theta[kEcm] *= field.factor(p);
  EXPECT_DOUBLE_EQ(obs.values[12], eval_f(m, p, theta));
}

TEST(Snapshots, RoundTripAndShape) {
  const SyntheticBeamModel m;
  const ParameterSpace space({{"E_cm", 2.702e4, 3.898e4, PriorSpec::uniform(2.702e4, 3.898e4)},
                              {"p0", 2.008, 5.992, PriorSpec::uniform(2.008, 5.992)},
                              {"c0", 0.2012, 0.7988, PriorSpec::uniform(0.2012, 0.7988)},
                              {"mu", 0.202, 1.198, PriorSpec::uniform(0.202, 1.198)}});
  Rng rng(2);
  const auto design = latin_hypercube(space, rng, 100);
  const auto snap =
      simulate_snapshots(m, design, ObservationGrid::dfos_default().points(), space.names());
  const auto path = temp_path("snap.csv");
  write_snapshots(path, snap);
  const auto back = load_snapshots(path);
  EXPECT_EQ(back.runs(), 100u);
  EXPECT_EQ(back.points.size(), 55u);
  EXPECT_EQ(back.param_names, space.names());
  EXPECT_EQ((back.design - snap.design).lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ((back.outputs - snap.outputs).lpNorm<Eigen::Infinity>(), 0.0);
  std::remove(path.c_str());
}

TEST(Snapshots, ErrorsCarryLocation) {
  const auto path = temp_path("bad.csv");
  {
    std::ofstream out(path);
    out << "param:E,out:0:0\n";
  }
  try {
    load_snapshots(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no simulations"), std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "param:E,out:0:0\n1,2\n3\n";
  }
  try {
    load_snapshots(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(path);
    out << "param:E,out:0:zz\n1,2\n";
  }
  EXPECT_THROW(load_snapshots(path), ParseError);
  {
    std::ofstream out(path);
    out << "param:E,out:0:0\n1,x\n";
  }
  EXPECT_THROW(load_snapshots(path), ParseError);
  std::remove(path.c_str());
}
