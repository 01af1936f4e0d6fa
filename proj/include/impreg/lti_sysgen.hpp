#pragma once

// Random stable SISO systems, their -3 dB bandwidth, zero-order-hold
// discretization and truncated impulse responses.

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "impreg/error.hpp"
#include "impreg/random.hpp"
#include "impreg/types.hpp"

namespace impreg {

struct ContinuousStateSpace {
  Matrix A;
  Vector B;
  RowVector C;
  double D = 0.0;

  Eigen::Index order() const { return A.rows(); }
};

struct DiscreteStateSpace {
  Matrix Ad;
  Vector Bd;
  RowVector Cd;
  double Dd = 0.0;
  double sample_time = 0.0;

  Eigen::Index order() const { return Ad.rows(); }
};

struct ImpulseResponse {
  Vector coefficients;
};

inline double max_real_eigenvalue(const Matrix& A) {
  Eigen::EigenSolver<Matrix> solver(A, false);
  return solver.eigenvalues().real().maxCoeff();
}

inline double spectral_radius(const Matrix& A) {
  Eigen::EigenSolver<Matrix> solver(A, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of R's diagonal folded into Q).
inline Matrix random_orthogonal(Eigen::Index size, Rng& rng) {
  const Matrix gaussian = standard_normal_matrix(size, size, rng);
  Eigen::HouseholderQR<Matrix> qr(gaussian);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < size; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

/// Stable continuous-time system of the given order with D = 0.
///
/// Poles come in floor(order/2) complex-conjugate pairs plus one real pole
/// for odd orders. Pole real parts are log-uniform on [-10, -0.05] and the
/// imaginary parts uniform on [0, 3|re|]. The block-diagonal modal matrix is
/// rotated by a random orthogonal matrix; B and C are standard normal.
inline ContinuousStateSpace sample_system(int order, Rng& rng) {
  if (order < 1) throw Error(ErrorCode::InvalidArgument, "system order must be >= 1");

  std::uniform_real_distribution<double> log_rate(std::log(0.05), std::log(10.0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (;;) {
    Matrix modal = Matrix::Zero(order, order);
    const int pairs = order / 2;
    for (int p = 0; p < pairs; ++p) {
      const double re = -std::exp(log_rate(rng));
      const double im = 3.0 * std::abs(re) * unit(rng);
      const int k = 2 * p;
      modal(k, k) = re;
      modal(k, k + 1) = im;
      modal(k + 1, k) = -im;
      modal(k + 1, k + 1) = re;
    }
    if (order % 2 == 1) modal(order - 1, order - 1) = -std::exp(log_rate(rng));

    const Matrix q = random_orthogonal(order, rng);
    ContinuousStateSpace sys;
    sys.A = q * modal * q.transpose();
    sys.B = standard_normal_vector(order, rng);
    sys.C = standard_normal_vector(order, rng).transpose();
    sys.D = 0.0;

    if (sys.A.allFinite() && sys.B.allFinite() && sys.C.allFinite() &&
        max_real_eigenvalue(sys.A) < 0.0)
      return sys;
  }
}

/// G(jw) = C (jwI - A)^{-1} B + D.
inline std::complex<double> frequency_response(const ContinuousStateSpace& sys, double omega) {
  using Complex = std::complex<double>;
  const Eigen::Index n = sys.order();
  Eigen::MatrixXcd m = -sys.A.cast<Complex>();
  m.diagonal().array() += Complex(0.0, omega);
  const Eigen::VectorXcd x = m.partialPivLu().solve(sys.B.cast<Complex>());
  Complex g = sys.D;
  for (Eigen::Index i = 0; i < n; ++i) g += sys.C[i] * x[i];
  return g;
}

/// Smallest w > 0 with |G(jw)| = |G(0)|/sqrt(2), in rad/s.
///
/// A 400-point log grid on [1e-4, 1e4] brackets the first crossing, then
/// bisection refines it to a relative width of 1e-9.
inline double bandwidth(const ContinuousStateSpace& sys) {
  const double dc = std::abs(frequency_response(sys, 0.0));
  if (!(dc >= 1e-12)) throw Error(ErrorCode::DegenerateGain, "|G(0)| below 1e-12");
  const double target = dc / std::numbers::sqrt2;

  constexpr int grid_points = 400;
  const double log_lo = std::log(1e-4);
  const double log_hi = std::log(1e4);
  double lo = 0.0;
  double hi = -1.0;
  for (int k = 0; k < grid_points; ++k) {
    const double omega = std::exp(log_lo + (log_hi - log_lo) * k / (grid_points - 1));
    if (std::abs(frequency_response(sys, omega)) < target) {
      hi = omega;
      break;
    }
    lo = omega;
  }
  if (hi < 0.0) throw Error(ErrorCode::DegenerateGain, "no -3 dB crossing below 1e4 rad/s");

  while (hi - lo > 1e-9 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (std::abs(frequency_response(sys, mid)) < target)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

/// Scaling-and-squaring Pade exponential (Eigen's MatrixFunctions).
inline Matrix matrix_exponential(const Matrix& m) { return m.exp(); }

inline DiscreteStateSpace discretize_zoh(const ContinuousStateSpace& sys, double sample_time) {
  if (!(sample_time > 0.0)) throw Error(ErrorCode::InvalidArgument, "sample_time must be > 0");
  const Eigen::Index n = sys.order();

  // exp([[A T, B T], [0, 0]]) = [[Ad, Bd], [0, 1]]
  Matrix augmented = Matrix::Zero(n + 1, n + 1);
  augmented.topLeftCorner(n, n) = sys.A * sample_time;
  augmented.topRightCorner(n, 1) = sys.B * sample_time;
  const Matrix e = matrix_exponential(augmented);

  DiscreteStateSpace d;
  d.Ad = e.topLeftCorner(n, n);
  d.Bd = e.topRightCorner(n, 1);
  d.Cd = sys.C;
  d.Dd = sys.D;
  d.sample_time = sample_time;
  return d;
}

/// g_k = Cd Ad^{k-1} Bd for k = 1..n.
inline ImpulseResponse impulse_response(const DiscreteStateSpace& dsys, int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "impulse response length must be >= 1");
  ImpulseResponse ir;
  ir.coefficients.resize(n);
  Vector x = dsys.Bd;
  for (int k = 0; k < n; ++k) {
    ir.coefficients[k] = dsys.Cd.dot(x);
    x = dsys.Ad * x;
  }
  return ir;
}

/// T = 1/f with f = 3 * (bw * 2 pi), where bw is the bandwidth in rad/s as
/// returned by bandwidth().
inline double sample_time_from_bandwidth(double omega_b) {
  if (!(omega_b > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be > 0");
  return 1.0 / (3.0 * (omega_b * 2.0 * std::numbers::pi));
}

struct SystemConfig {
  int order = 30;
  int fir_order = 50;
  int reference_length = 500;
  double max_tail_fraction = 0.01;
};

struct SampledSystem {
  ContinuousStateSpace continuous;
  DiscreteStateSpace discrete;
  double bandwidth = 0.0;
  ImpulseResponse theta0;
};

/// Draws systems until one has a usable bandwidth, a stable discretization
/// and at most max_tail_fraction of its (reference_length) energy past the
/// FIR truncation point.
inline SampledSystem sample_true_system(const SystemConfig& cfg, Rng& rng) {
  if (cfg.fir_order < 1) throw Error(ErrorCode::InvalidArgument, "FIR order must be >= 1");
  const int reference = std::max(cfg.reference_length, cfg.fir_order);
  for (;;) {
    SampledSystem out;
    out.continuous = sample_system(cfg.order, rng);
    try {
      out.bandwidth = bandwidth(out.continuous);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateGain) throw;
      continue;
    }
    out.discrete = discretize_zoh(out.continuous, sample_time_from_bandwidth(out.bandwidth));
    if (!out.discrete.Ad.allFinite() || spectral_radius(out.discrete.Ad) >= 1.0) continue;

    const Vector full = impulse_response(out.discrete, reference).coefficients;
    const double total = full.squaredNorm();
    const double head = full.head(cfg.fir_order).squaredNorm();
    if (!(total > 0.0) || total - head > cfg.max_tail_fraction * total) continue;

    out.theta0.coefficients = full.head(cfg.fir_order);
    return out;
  }
}

}  // namespace impreg
