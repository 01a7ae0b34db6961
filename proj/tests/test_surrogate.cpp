#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tenduq/surrogate.hpp"

using namespace tenduq;

namespace {

ParameterSpace gp_space() {
  return ParameterSpace({{"E_cm", 2.702e4, 3.898e4, PriorSpec::uniform(2.702e4, 3.898e4)},
                         {"p0", 2.008, 5.992, PriorSpec::uniform(2.008, 5.992)},
                         {"c0", 0.2012, 0.7988, PriorSpec::uniform(0.2012, 0.7988)},
                         {"mu", 0.202, 1.198, PriorSpec::uniform(0.202, 1.198)}});
}

Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

double dense_lml(const KernelSpec& k, const Matrix& X, const Vector& f) {
  const auto n = X.rows();
  Matrix K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector xi = X.row(i), xj = X.row(j);
      K(i, j) = kernel_eval(k, {xi.data(), static_cast<std::size_t>(xi.size())},
                            {xj.data(), static_cast<std::size_t>(xj.size())}, i == j);
    }
  const Eigen::FullPivLU<Matrix> lu(K);
  return -0.5 * f.dot(lu.solve(f)) - 0.5 * std::log(lu.determinant()) - 0.5 * n * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST(Kernel, SameIndexAddsNoise) {
  const KernelSpec k{KernelFamily::rbf, 0.7, 1.0, 0.1};
  const double x[] = {0.3, 0.4};
  EXPECT_DOUBLE_EQ(kernel_eval(k, x, x, true), 1.1);
  EXPECT_DOUBLE_EQ(kernel_eval(k, x, x, false), 1.0);
}

TEST(Kernel, RbfAtTwoLengthScalesSquared) {
  const KernelSpec k{KernelFamily::rbf, 0.5, 1.0, 0.1};
  const double a[] = {0.0, 0.0};
  const double b[] = {0.5, 0.5};  // squared distance 0.5 = 2 l^2
  EXPECT_NEAR(kernel_eval(k, a, b), 0.36787944117144233, 1e-15);
}

TEST(Kernel, DecaysToZeroFarAway) {
  for (auto fam : {KernelFamily::rbf, KernelFamily::matern_nu_1_5}) {
    const KernelSpec k{fam, 1.0, 2.0, 0.1};
    const double a[] = {0.0};
    const double b[] = {1e4};
    EXPECT_LT(kernel_eval(k, a, b), 1e-100);
  }
}

TEST(Kernel, MaternDirectFormula) {
  const KernelSpec k{KernelFamily::matern_nu_1_5, 0.8, 1.5, 0.0};
  const double a[] = {0.1, 0.2};
  const double b[] = {0.7, -0.3};
  const double r = std::hypot(0.6, 0.5);
  const double s = std::sqrt(3.0) * r / 0.8;
  EXPECT_NEAR(kernel_eval(k, a, b), 1.5 * (1 + s) * std::exp(-s), 1e-14);
}

TEST(Lml, FactorizedMatchesDenseFormula) {
  Rng rng(4);
  for (auto fam : {KernelFamily::rbf, KernelFamily::matern_nu_1_5}) {
    for (int trial = 0; trial < 5; ++trial) {
      Matrix X(10, 10);
      for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform01(rng);
      Vector f(10);
      for (Eigen::Index i = 0; i < 10; ++i) f[i] = standard_normal(rng);
      const KernelSpec k{fam, 0.5 + uniform01(rng), 0.5 + uniform01(rng), 0.01 + 0.1 * uniform01(rng)};
      EXPECT_NEAR(log_marginal_likelihood(k, squared_distances(X, X), f), dense_lml(k, X, f), 1e-8);
    }
  }
}

TEST(GpFit, ConstantZeroTarget) {
  Rng rng(1);
  Matrix X(15, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform01(rng);
  const Vector f = Vector::Zero(15);
  GpFitOptions opt;
  opt.restarts = 3;
  const auto gp = gp_fit(X, f, KernelFamily::rbf, KernelBounds::calibration(), opt, rng);
  const auto p = gp.predict(Matrix::Random(20, 2));
  EXPECT_LT(p.mean.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(gp.kernel().noise_var, 1e-7, 1e-9);
}

TEST(GpFit, SyntheticModelHeldOutR2) {
  const SyntheticBeamModel model;
  const auto space = gp_space();
  Rng rng(2024);
  const Matrix train = latin_hypercube(space, rng, 100);
  const Matrix val = latin_hypercube(space, rng, 49);
  const Point p{80, -40};
  auto eval = [&](const Matrix& d) {
    Vector y(d.rows());
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      const Vector th = d.row(r);
      y[r] = eval_f(model, p, {th.data(), 4});
    }
    return y;
  };
  const auto gp = gp_fit(train, eval(train), KernelFamily::rbf, KernelBounds::calibration(), {}, rng);
  const auto metrics = gp_validate(gp, val, eval(val));
  ASSERT_TRUE(metrics.r2.has_value());
  EXPECT_GE(*metrics.r2, 0.99);
}

TEST(GpFit, RecoversAtLeastGeneratingLml) {
  Rng rng(77);
  const Eigen::Index n = 30;
  Matrix X(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) X(i, 0) = uniform01(rng);
  const KernelSpec truth{KernelFamily::rbf, 0.2, 1.0, 1e-4};
  Matrix K = kernel_matrix(truth, squared_distances(X, X));
  K.diagonal().array() += truth.noise_var;
  const Matrix L = K.llt().matrixL();
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = standard_normal(rng);
  const Vector f = L * z;
  // fit directly in unit space so both likelihoods refer to the same targets
  Normalizer identity;
  identity.input_lo = Vector::Zero(1);
  identity.input_hi = Vector::Ones(1);
  const auto gp = gp_fit_normalized(X, f, identity, KernelFamily::rbf, KernelBounds::calibration(), {}, rng);
  EXPECT_GE(gp.log_marginal_likelihood(), log_marginal_likelihood(truth, squared_distances(X, X), f) - 1e-6);
}

TEST(GpPredict, InterpolatesTrainingDataAtMinimumNoise) {
  Rng rng(3);
  const Matrix X = column({0.0, 0.5, 1.3, 2.0, 2.9, 3.5, 4.4, 5.0});
  Vector y(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) y[i] = std::cos(X(i, 0)) * 3.0 + 1.0;
  KernelBounds b = KernelBounds::calibration();
  b.noise_var = {1e-7, 1.1e-7};
  const auto gp = gp_fit(X, y, KernelFamily::rbf, b, {}, rng);
  const auto p = gp.predict(X);
  const double range = y.maxCoeff() - y.minCoeff();
  EXPECT_LT((p.mean - y).cwiseAbs().maxCoeff(), 1e-4 * range);
}

TEST(GpPredict, RevertsToPriorVarianceFarAway) {
  Rng rng(5);
  const Matrix X = column({0.0, 0.2, 0.4, 0.6, 0.8, 1.0});
  Vector y(6);
  y << 0.0, 0.5, 0.9, 0.4, -0.2, 0.3;
  const auto gp = gp_fit(X, y, KernelFamily::rbf, KernelBounds::calibration(), {}, rng);
  const double w = gp.normalizer().output_width();
  const double far = gp.predict(column({1e5})).variance[0];
  EXPECT_NEAR(far, gp.kernel().signal_var * w * w, 0.01 * gp.kernel().signal_var * w * w);
}

TEST(GpPredict, SineAtHalfPi) {
  Rng rng(6);
  Matrix X(20, 1);
  Vector y(20);
  for (int i = 0; i < 20; ++i) {
    X(i, 0) = 2 * std::numbers::pi * i / 19.0;
    y[i] = std::sin(X(i, 0));
  }
  const auto gp = gp_fit(X, y, KernelFamily::rbf, KernelBounds::calibration(), {}, rng);
  EXPECT_NEAR(gp.predict(column({std::numbers::pi / 2})).mean[0], 1.0, 0.01);
  const double q[] = {std::numbers::pi / 2};
  EXPECT_NEAR(gp.mean(q), gp.predict(column({std::numbers::pi / 2})).mean[0], 1e-12);
}

TEST(GpPredict, VarianceNonNegative) {
  Rng rng(8);
  Matrix X(40, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform01(rng);
  Vector y = (X.col(0).array() * 3.0).sin().matrix() + X.col(1);
  const auto gp = gp_fit(X, y, KernelFamily::matern_nu_1_5, KernelBounds::calibration(), {}, rng);
  Matrix Q(10000, 3);
  for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = 1.4 * uniform01(rng) - 0.2;
  EXPECT_GE(gp.predict(Q).variance.minCoeff(), 0.0);
}

TEST(GpPredict, AddingTrainingPointNeverIncreasesVariance) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(10 * uniform01(rng));
    Matrix X(n + 1, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform01(rng);
    Vector y(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) y[i] = standard_normal(rng);
    const KernelSpec k{uniform01(rng) < 0.5 ? KernelFamily::rbf : KernelFamily::matern_nu_1_5,
                       0.1 + uniform01(rng), 0.5 + uniform01(rng), 1e-4 + 0.01 * uniform01(rng)};
    Normalizer id;
    id.input_lo = Vector::Zero(2);
    id.input_hi = Vector::Ones(2);
    const GpModel small(k, X.topRows(n), y.head(n), id);
    const GpModel big(k, X, y, id);
    Matrix Q(20, 2);
    for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = uniform01(rng);
    const Vector vs = small.predict(Q).variance, vb = big.predict(Q).variance;
    EXPECT_LE((vb - vs).maxCoeff(), 1e-8);
  }
}

TEST(Metrics, PerfectAndMeanPredictions) {
  const std::vector<double> truth{1, 2, 3, 4};
  const std::vector<double> var{0.1, 0.1, 0.1, 0.1};
  const auto perfect = compute_metrics(truth, truth, var);
  EXPECT_DOUBLE_EQ(*perfect.r2, 1.0);
  EXPECT_DOUBLE_EQ(perfect.rmse, 0.0);
  EXPECT_DOUBLE_EQ(perfect.pct_abs_z_below_2, 100.0);
  const std::vector<double> mean(4, 2.5);
  EXPECT_NEAR(*compute_metrics(truth, mean, var).r2, 0.0, 1e-15);
  const std::vector<double> flat(4, 1.0);
  EXPECT_FALSE(compute_metrics(flat, truth, var).r2.has_value());
  EXPECT_TRUE(to_json(compute_metrics(flat, truth, var))["r2"].is_null());
}

TEST(Metrics, SchemaFields) {
  const auto j = to_json(compute_metrics(std::vector<double>{1, 2}, std::vector<double>{1.1, 1.9},
                                         std::vector<double>{0.01, 0.01}));
  for (const char* key : {"r2", "rmse", "mae", "max_error", "nrmse_percent", "mean_abs_z", "pct_abs_z_below_2",
                          "pct_abs_z_above_0_5"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_NEAR(j["mean_abs_z"].get<double>(), 1.0, 1e-12);
}

TEST(Pointwise, SharedNormalizerAndJointModeAgreement) {
  const SyntheticBeamModel model;
  const auto space = gp_space();
  Rng rng(31);
  const Matrix design = latin_hypercube(space, rng, 60);
  const std::vector<Point> pts{{0, 0}, {80, 0}, {160, 0}, {240, 0}, {320, 0}};
  const auto snap = simulate_snapshots(model, design, pts, space.names());
  GpFitOptions opt;
  opt.restarts = 4;
  const auto em = fit_pointwise(snap, KernelFamily::rbf, KernelBounds::calibration(), opt, 99);
  ASSERT_EQ(em.size(), 5u);
  for (const auto& gp : em.models) EXPECT_EQ(gp.normalizer().output_lo, em.normalizer.output_lo);

  const auto joint = joint_design(snap);
  const auto jgp = gp_fit(joint.inputs, joint.outputs, KernelFamily::rbf, KernelBounds::calibration(), opt, rng);
  const Matrix queries = sample_prior(space, rng, 100);
  std::vector<double> per_point, joint_pred;
  for (Eigen::Index r = 0; r < queries.rows(); ++r) {
    const Vector th = queries.row(r);
    per_point.push_back(em.mean({th.data(), 4})[1]);
    Vector xq(6);
    xq << 80, 0, th;
    joint_pred.push_back(jgp.mean({xq.data(), 6}));
  }
  const auto m = compute_metrics(per_point, joint_pred, std::vector<double>(per_point.size(), 1.0));
  EXPECT_LT(m.nrmse_percent, 2.0);
}

TEST(Serialization, Base64RoundTrip) {
  for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)})
    EXPECT_EQ(encoding::base64_decode(encoding::base64_encode(s)), s);
  EXPECT_EQ(encoding::base64_encode("Man"), "TWFu");
  EXPECT_EQ(encoding::base64_encode("Ma"), "TWE=");
}

TEST(Serialization, GpModelRoundTripsBitExactly) {
  Rng rng(12);
  Matrix X(25, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = 100 * uniform01(rng);
  Vector y = (X.col(0).array() / 30).cos().matrix() * 5;
  GpFitOptions opt;
  opt.restarts = 2;
  const auto gp = gp_fit(X, y, KernelFamily::matern_nu_1_5, KernelBounds::calibration(), opt, rng);
  const auto text = to_json(gp).dump();
  const auto back = gp_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.kernel().length_scale, gp.kernel().length_scale);
  EXPECT_EQ(back.kernel().noise_var, gp.kernel().noise_var);
  const Matrix Q = X.array() + 0.5;
  EXPECT_EQ((back.predict(Q).mean - gp.predict(Q).mean).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Serialization, PointwiseRoundTrip) {
  const SyntheticBeamModel model;
  const auto space = gp_space();
  Rng rng(13);
  const auto snap = simulate_snapshots(model, latin_hypercube(space, rng, 20), {{0, 0}, {40, 80}}, space.names());
  GpFitOptions opt;
  opt.restarts = 1;
  const auto em = fit_pointwise(snap, KernelFamily::rbf, KernelBounds::calibration(), opt, 1);
  const auto back = pointwise_from_json(nlohmann::json::parse(to_json(em).dump()));
  const double th[] = {31000, 3.5, 0.45, 0.65};
  EXPECT_EQ((back.mean(th) - em.mean(th)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(back.points, em.points);
  EXPECT_THROW(pointwise_from_json(nlohmann::json::parse("{\"points\":[]}")), ConfigError);
}
