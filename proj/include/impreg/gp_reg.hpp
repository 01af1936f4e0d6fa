#pragma once

// Empirical-Bayes baseline: a TC-kernel Gaussian-process prior on the
// impulse response whose hyperparameters maximize the marginal likelihood
// of the observed outputs.

#include <Eigen/Cholesky>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "impreg/error.hpp"
#include "impreg/nelder_mead.hpp"
#include "impreg/regls.hpp"
#include "impreg/types.hpp"

namespace impreg {

struct GPHyper {
  double c = 1.0;       ///< kernel scale
  double lam = 0.9;     ///< decay rate, in (0, 1)
  double sigma2 = 1.0;  ///< measurement noise variance

  bool valid() const { return c > 0.0 && lam > 0.0 && lam < 1.0 && sigma2 > 0.0; }
};

/// P_ij = c lam^max(i,j), 1-based indices.
inline RegMatrix kernel_matrix(const GPHyper& h, Eigen::Index n) {
  if (!h.valid()) throw Error(ErrorCode::InvalidArgument, "invalid GP hyperparameters");
  Matrix P(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) P(i, j) = h.c * std::pow(h.lam, static_cast<double>(std::max(i, j) + 1));
  return RegMatrix{P};
}

/// Exact factor L with L L^T = kernel_matrix(h, n). L is upper triangular:
/// the TC kernel is c min(lam^i, lam^j) = c sum_{k >= max(i,j)} d_k with
/// d_k = lam^k - lam^{k+1} (and d_n = lam^n), so column k of L is
/// sqrt(c d_k) on rows 1..k.
inline Matrix kernel_factor(const GPHyper& h, Eigen::Index n) {
  Matrix L = Matrix::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double lk = std::pow(h.lam, static_cast<double>(k + 1));
    const double d = (k + 1 < n) ? lk * (1.0 - h.lam) : lk;
    L.col(k).head(k + 1).setConstant(std::sqrt(h.c * d));
  }
  return L;
}

/// Data for the marginal likelihood: regressor rows phi(t)^T and the outputs
/// they predict, plus the sufficient statistics the low-rank path needs.
struct GPContext {
  Matrix Phi;
  Vector y_used;
  Matrix R;
  Vector F;
  double yy = 0.0;

  static GPContext from_io(const Vector& u, const Vector& y, Eigen::Index n) {
    GPContext ctx;
    ctx.Phi = regressor_matrix(u, n);
    ctx.y_used = used_outputs(y, n);
    ctx.R = ctx.Phi.transpose() * ctx.Phi;
    ctx.F = ctx.Phi.transpose() * ctx.y_used;
    ctx.yy = ctx.y_used.squaredNorm();
    return ctx;
  }

  static GPContext from_matrix(const Matrix& Phi, const Vector& y_used) {
    GPContext ctx;
    ctx.Phi = Phi;
    ctx.y_used = y_used;
    ctx.R = Phi.transpose() * Phi;
    ctx.F = Phi.transpose() * y_used;
    ctx.yy = y_used.squaredNorm();
    return ctx;
  }

  Eigen::Index rows() const { return Phi.rows(); }
  Eigen::Index order() const { return Phi.cols(); }
};

namespace detail {

/// Cholesky with diagonal jitter escalating from 1e-10 to 1e-6 of the mean
/// diagonal.
inline Eigen::LLT<Matrix> robust_cholesky(Matrix m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const double mean_diag = std::max(m.diagonal().mean(), std::numeric_limits<double>::min());
  for (double rel = 1e-10; rel <= 1e-6 * 1.0001; rel *= 10.0) {
    Matrix jittered = m;
    jittered.diagonal().array() += rel * mean_diag;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw Error(ErrorCode::NumericalFailure, "Cholesky failed after jitter escalation");
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// log N(y | 0, Phi K Phi^T + sigma2 I) through an m x m Cholesky factor.
inline double marginal_loglik_dense(const GPHyper& h, const GPContext& ctx) {
  const Eigen::Index m = ctx.rows();
  const Matrix K = kernel_matrix(h, ctx.order()).P;
  Matrix cov = ctx.Phi * K * ctx.Phi.transpose();
  cov.diagonal().array() += h.sigma2;
  const auto llt = detail::robust_cholesky(std::move(cov));
  const Vector alpha = llt.matrixL().solve(ctx.y_used);
  return -0.5 * (m * std::log(2.0 * std::numbers::pi) + detail::log_det(llt) + alpha.squaredNorm());
}

/// Same density via the n x n matrix M = sigma2 I + L^T R L (K = L L^T):
/// log det = (m - n) log sigma2 + log det M and
/// quad = (y^T y - v^T M^{-1} v) / sigma2 with v = L^T F.
inline double marginal_loglik_lowrank(const GPHyper& h, const GPContext& ctx) {
  const Eigen::Index m = ctx.rows();
  const Eigen::Index n = ctx.order();
  const Matrix L = kernel_factor(h, n);
  Matrix M = L.transpose() * ctx.R * L;
  M.diagonal().array() += h.sigma2;
  const auto llt = detail::robust_cholesky(std::move(M));
  const Vector v = L.transpose() * ctx.F;
  const Vector w = llt.matrixL().solve(v);
  const double quad = (ctx.yy - w.squaredNorm()) / h.sigma2;
  const double logdet = static_cast<double>(m - n) * std::log(h.sigma2) + detail::log_det(llt);
  return -0.5 * (m * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

inline double marginal_loglik(const GPHyper& h, const GPContext& ctx) {
  if (!h.valid()) throw Error(ErrorCode::InvalidArgument, "invalid GP hyperparameters");
  return ctx.order() < ctx.rows() ? marginal_loglik_lowrank(h, ctx) : marginal_loglik_dense(h, ctx);
}

struct GPSearchBox {
  double c_min = 1e-4, c_max = 1e4;
  double lam_min = 0.5, lam_max = 0.999;
  double sigma2_min = 1e-6, sigma2_max = 1e2;
  int grid = 8;
  NelderMeadOptions refine{200, 1e-4};
};

struct GPFit {
  /// Kernel divided by the fitted noise variance: the matrix to plug into
  /// the regularized estimate.
  RegMatrix P;
  RegMatrix kernel;
  GPHyper hyper;
  double loglik = -std::numeric_limits<double>::infinity();
  double best_grid_loglik = -std::numeric_limits<double>::infinity();
  int grid_failures = 0;
  int refine_evaluations = 0;
};

/// Coarse grid over (log c, lam, log sigma2) followed by Nelder-Mead in the
/// same coordinates. Candidates whose likelihood cannot be computed are
/// skipped; ties keep the lowest grid index.
inline GPFit fit_empirical_bayes(const GPContext& ctx, const GPSearchBox& box = {}) {
  const Eigen::Index n = ctx.order();
  auto axis = [&](double lo, double hi, int i, bool logscale) {
    const double t = box.grid > 1 ? static_cast<double>(i) / (box.grid - 1) : 0.0;
    return logscale ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))) : lo + t * (hi - lo);
  };

  GPFit fit;
  GPHyper best;
  for (int ic = 0; ic < box.grid; ++ic)
    for (int il = 0; il < box.grid; ++il)
      for (int is = 0; is < box.grid; ++is) {
        const GPHyper h{axis(box.c_min, box.c_max, ic, true), axis(box.lam_min, box.lam_max, il, false),
                        axis(box.sigma2_min, box.sigma2_max, is, true)};
        double ll;
        try {
          ll = marginal_loglik(h, ctx);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NumericalFailure) throw;
          ++fit.grid_failures;
          continue;
        }
        if (std::isfinite(ll) && ll > fit.best_grid_loglik) {
          fit.best_grid_loglik = ll;
          best = h;
        }
      }
  if (!std::isfinite(fit.best_grid_loglik))
    throw Error(ErrorCode::OptimizationFailed, "every grid candidate failed");

  const double slack = 1e-12;
  auto in_box = [&](const Vector& x) {
    return x[0] >= std::log(box.c_min) - slack && x[0] <= std::log(box.c_max) + slack &&
           x[1] >= box.lam_min - slack && x[1] <= box.lam_max + slack &&
           x[2] >= std::log(box.sigma2_min) - slack && x[2] <= std::log(box.sigma2_max) + slack;
  };
  auto to_hyper = [](const Vector& x) { return GPHyper{std::exp(x[0]), x[1], std::exp(x[2])}; };
  auto objective = [&](const Vector& x) {
    if (!in_box(x)) return std::numeric_limits<double>::infinity();
    const GPHyper h = to_hyper(x);
    try {
      return -marginal_loglik(h, ctx);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NumericalFailure) throw;
      return std::numeric_limits<double>::infinity();
    }
  };

  // Start from the better of the best grid point and the same point with the
  // least-squares residual variance as noise level.
  Vector x0(3);
  x0 << std::log(best.c), best.lam, std::log(best.sigma2);
  double f0 = -fit.best_grid_loglik;
  {
    RegressionData rd{ctx.R, ctx.F, ctx.rows()};
    const Vector theta_ls = least_squares(rd);
    const double dof = static_cast<double>(std::max<Eigen::Index>(ctx.rows() - n, 1));
    const double s2 = std::clamp((ctx.y_used - ctx.Phi * theta_ls).squaredNorm() / dof, box.sigma2_min, box.sigma2_max);
    Vector alt = x0;
    alt[2] = std::log(s2);
    const double fa = objective(alt);
    if (fa < f0) {
      x0 = alt;
      f0 = fa;
    }
  }

  Vector steps(3);
  steps << 0.5 * (std::log(box.c_max) - std::log(box.c_min)) / (box.grid - 1),
      0.5 * (box.lam_max - box.lam_min) / (box.grid - 1),
      0.5 * (std::log(box.sigma2_max) - std::log(box.sigma2_min)) / (box.grid - 1);
  const Vector hi = (Vector(3) << std::log(box.c_max), box.lam_max, std::log(box.sigma2_max)).finished();
  for (int i = 0; i < 3; ++i)
    if (x0[i] + steps[i] > hi[i]) steps[i] = -steps[i];

  const NelderMeadResult nm = nelder_mead(objective, x0, steps, box.refine);
  fit.refine_evaluations = nm.evaluations;
  Vector x_best = x0;
  double f_best = f0;
  if (nm.value < f_best) {
    x_best = nm.x;
    f_best = nm.value;
  }

  fit.hyper = to_hyper(x_best);
  fit.loglik = -f_best;
  fit.kernel = kernel_matrix(fit.hyper, n);
  fit.P = RegMatrix{fit.kernel.P / fit.hyper.sigma2};
  return fit;
}

inline GPFit fit_empirical_bayes(const Vector& u, const Vector& y, Eigen::Index n, const GPSearchBox& box = {}) {
  return fit_empirical_bayes(GPContext::from_io(u, y, n), box);
}

}  // namespace impreg
