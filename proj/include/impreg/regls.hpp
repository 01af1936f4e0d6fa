#pragma once

// FIR regression statistics and the regularized least-squares estimate
// theta = (P R + I)^{-1} P F.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <string>

#include "impreg/error.hpp"
#include "impreg/types.hpp"

namespace impreg {

/// R = sum phi(t) phi(t)^T and F = sum phi(t) y(t) over t = n+1..N.
struct RegressionData {
  Matrix R;
  Vector F;
  Eigen::Index count = 0;

  Eigen::Index order() const { return F.size(); }
};

/// Inverse regularization matrix P (symmetric PSD).
struct RegMatrix {
  Matrix P;

  Eigen::Index order() const { return P.rows(); }
  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(P, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
  bool is_psd(double relative_tol = 1e-8) const {
    if (P.size() == 0) return true;
    const double scale = P.norm();
    return (P - P.transpose()).norm() <= 1e-10 * std::max(scale, 1.0) &&
           min_eigenvalue() >= -relative_tol * scale;
  }
};

/// Rows are phi(t)^T = (u(t-1), ..., u(t-n)) for t = n+1..N (1-based t).
inline Matrix regressor_matrix(const Vector& u, Eigen::Index n) {
  const Eigen::Index N = u.size();
  if (N <= n) throw Error(ErrorCode::SequenceTooShort, "need N > n (N=" + std::to_string(N) + ", n=" + std::to_string(n) + ")");
  const Eigen::Index rows = N - n;
  Matrix phi(rows, n);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index k = 0; k < n; ++k) phi(r, k) = u[n + r - 1 - k];
  return phi;
}

/// y(t) for t = n+1..N.
inline Vector used_outputs(const Vector& y, Eigen::Index n) {
  if (y.size() <= n) throw Error(ErrorCode::SequenceTooShort, "need N > n");
  return y.tail(y.size() - n);
}

inline RegressionData build_regression(const Vector& u, const Vector& y, Eigen::Index n) {
  if (u.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "u and y lengths differ");
  const Matrix phi = regressor_matrix(u, n);
  RegressionData rd;
  rd.R = Matrix::Zero(n, n);
  rd.R.selfadjointView<Eigen::Lower>().rankUpdate(phi.transpose());
  rd.R = rd.R.selfadjointView<Eigen::Lower>();
  rd.F = phi.transpose() * used_outputs(y, n);
  rd.count = phi.rows();
  return rd;
}

inline constexpr double kMaxConditionNumber = 1e14;

/// theta = (P R + I)^{-1} P F via LU with partial pivoting.
inline Vector estimate(const RegMatrix& reg, const RegressionData& rd) {
  const Eigen::Index n = rd.order();
  if (reg.order() != n) throw Error(ErrorCode::InvalidArgument, "P and R dimensions differ");
  Matrix system = reg.P * rd.R;
  system.diagonal().array() += 1.0;
  Eigen::PartialPivLU<Matrix> lu(system);
  const double rcond = lu.rcond();
  if (!(rcond * kMaxConditionNumber >= 1.0))
    throw Error(ErrorCode::SingularSystem, "P R + I condition estimate exceeds 1e14");
  Vector theta = lu.solve(reg.P * rd.F);
  if (!theta.allFinite()) throw Error(ErrorCode::SingularSystem, "non-finite solution");
  return theta;
}

inline constexpr double kPseudoInverseCutoff = 1e-10;

/// Minimum-norm solution of R theta = F (eigenvalues below 1e-10 lambda_max
/// are treated as zero).
inline Vector least_squares(const RegressionData& rd) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rd.R);
  const Vector& lambda = es.eigenvalues();
  const Matrix& V = es.eigenvectors();
  const double lambda_max = lambda.size() ? lambda.maxCoeff() : 0.0;
  Vector coeffs = V.transpose() * rd.F;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda_max > 0.0 && lambda[i] > kPseudoInverseCutoff * lambda_max)
      coeffs[i] /= lambda[i];
    else
      coeffs[i] = 0.0;
  }
  return V * coeffs;
}

/// Optimal (oracle) inverse regularization: P = theta0 theta0^T / sigma2.
inline RegMatrix optimal_P(const Vector& theta0, double sigma2) {
  if (!(sigma2 > 0.0)) throw Error(ErrorCode::NonpositiveNoise, "sigma2 must be > 0");
  return RegMatrix{theta0 * theta0.transpose() / sigma2};
}

}  // namespace impreg
