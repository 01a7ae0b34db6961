#ifndef TENDUQ_PCE_HPP
#define TENDUQ_PCE_HPP

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tenduq/core.hpp"

namespace tenduq {

/// Nodes and weights against the standard normal density; weights sum to 1.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

/// psi_0..psi_p: probabilists' Hermite polynomials scaled to unit norm under N(0,1).
inline Vector hermite_orthonormal(std::size_t degree, double x) {
  Vector psi(static_cast<Eigen::Index>(degree + 1));
  psi[0] = 1.0;
  if (degree >= 1) psi[1] = x;
  for (std::size_t k = 1; k < degree; ++k)
    psi[static_cast<Eigen::Index>(k + 1)] =
        (x * psi[static_cast<Eigen::Index>(k)] - std::sqrt(static_cast<double>(k)) * psi[static_cast<Eigen::Index>(k - 1)]) /
        std::sqrt(static_cast<double>(k + 1));
  return psi;
}

/// Q-point Gauss-Hermite rule for the standard normal germ, 1 <= Q <= 20.
/// Golub-Welsch start, Newton polish on psi_Q, weights 1 / (Q psi_{Q-1}(x)^2).
inline QuadratureRule gauss_hermite(std::size_t Q) {
  if (Q < 1 || Q > 20) throw std::invalid_argument("gauss_hermite supports 1 <= Q <= 20");
  QuadratureRule rule;
  if (Q == 1) {
    rule.nodes = {0.0};
    rule.weights = {1.0};
    return rule;
  }
  const auto n = static_cast<Eigen::Index>(Q);
  Matrix J = Matrix::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  std::vector<double> x(eig.eigenvalues().data(), eig.eigenvalues().data() + n);
  for (auto& xi : x) {
    for (int it = 0; it < 8; ++it) {
      const Vector psi = hermite_orthonormal(Q, xi);
      const double deriv = std::sqrt(static_cast<double>(Q)) * psi[n - 1];
      if (deriv == 0.0) break;
      const double step = psi[n] / deriv;
      xi -= step;
      if (std::abs(step) < 1e-16 * (1.0 + std::abs(xi))) break;
    }
  }
  std::vector<double> w(Q);
  for (std::size_t i = 0; i < Q; ++i) {
    const double p = hermite_orthonormal(Q - 1, x[i])[n - 1];
    w[i] = 1.0 / (static_cast<double>(Q) * p * p);
  }
  // exact symmetry about zero
  for (std::size_t i = 0; i < Q / 2; ++i) {
    const std::size_t j = Q - 1 - i;
    const double xs = 0.5 * (x[j] - x[i]);
    const double ws = 0.5 * (w[i] + w[j]);
    x[i] = -xs;
    x[j] = xs;
    w[i] = w[j] = ws;
  }
  if (Q % 2 == 1) x[Q / 2] = 0.0;
  double total = 0.0;
  for (double v : w) total += v;
  for (auto& v : w) v /= total;
  rule.nodes = std::move(x);
  rule.weights = std::move(w);
  return rule;
}

enum class StochasticKind { normal, lognormal };

/// Random input written as a transform of the standard normal germ xi.
struct StochasticInput {
  StochasticKind kind = StochasticKind::lognormal;
  double mean = 0.0;
  double std_dev = 1.0;

  void validate() const {
    if (!(std_dev > 0.0)) throw std::invalid_argument("stochastic input needs std > 0");
    if (kind == StochasticKind::lognormal && !(mean > 0.0))
      throw std::invalid_argument("lognormal stochastic input needs mean > 0");
  }

  double from_germ(double xi) const {
    if (kind == StochasticKind::normal) return mean + std_dev * xi;
    const auto ln = lognormal_from_moments(mean, std_dev);
    return std::exp(ln.location + ln.scale * xi);
  }
};

struct PceConfig {
  std::size_t degree = 2;
  std::size_t quadrature = 4;

  void validate() const {
    if (degree < 1) throw ConfigError("pce degree must be >= 1");
    if (quadrature < degree + 1 || quadrature > 20) throw ConfigError("pce quadrature must satisfy degree+1 <= Q <= 20");
  }
};

struct PceExpansion {
  std::size_t degree = 0;
  QuadratureRule rule;
  Matrix coeffs;  // outputs x (degree + 1)

  Vector mean() const { return coeffs.col(0); }
  Vector variance() const {
    if (coeffs.cols() <= 1) return Vector::Zero(coeffs.rows());
    return coeffs.rightCols(coeffs.cols() - 1).rowwise().squaredNorm();
  }
};

using VectorEmulator = std::function<Vector(double)>;

/// Pseudo-spectral projection with exactly Q emulator calls.
template <class Emulator>
PceExpansion build_pce(Emulator&& emulator, const StochasticInput& input, std::size_t degree, std::size_t Q) {
  input.validate();
  if (Q < degree + 1) throw std::invalid_argument("build_pce needs Q >= degree + 1");
  PceExpansion pce;
  pce.degree = degree;
  pce.rule = gauss_hermite(Q);
  for (std::size_t q = 0; q < Q; ++q) {
    const double xi = pce.rule.nodes[q];
    Vector f;
    try {
      f = emulator(input.from_germ(xi));
    } catch (const std::exception& e) {
      throw NumericalError("emulator failed at quadrature node " + std::to_string(q) + ": " + e.what());
    }
    if (q == 0) pce.coeffs = Matrix::Zero(f.size(), static_cast<Eigen::Index>(degree + 1));
    if (f.size() != pce.coeffs.rows())
      throw NumericalError("emulator output size changed at quadrature node " + std::to_string(q));
    const Vector psi = hermite_orthonormal(degree, xi);
    pce.coeffs.noalias() += pce.rule.weights[q] * f * psi.transpose();
  }
  return pce;
}

struct PceMoments {
  Vector mean;
  Vector variance;
};

inline PceMoments pce_moments(const PceExpansion& pce) {
  PceMoments m{pce.mean(), pce.variance()};
  for (Eigen::Index i = 0; i < m.variance.size(); ++i)
    if (m.variance[i] < 0.0 && m.variance[i] > -1e-14) m.variance[i] = 0.0;
  return m;
}

}  // namespace tenduq

#endif  // TENDUQ_PCE_HPP
