#pragma once

// Learned inverse regularization matrix
//
//   P = sum_i w_i(u, y, theta_LS) s_i s_i^T,
//
// where w comes from a ReLU MLP whose last layer is the "softmax with one"
// exp(h) / (1 + sum exp(h)), followed by dropout during training. The
// estimate theta = (P R + I)^{-1} P F is differentiated through the linear
// solve with the adjoint system, so the network is trained end to end on
// the squared estimation error.

#include <Eigen/LU>

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "impreg/dataset.hpp"
#include "impreg/error.hpp"
#include "impreg/random.hpp"
#include "impreg/regls.hpp"
#include "impreg/types.hpp"

namespace impreg {

struct NetConfig {
  int N = 125;
  int n = 50;
  std::array<int, 3> hidden{600, 300, 200};
  int n_m = 500;

  int input_size() const { return 2 * N + n; }
  bool operator==(const NetConfig&) const = default;
};

inline constexpr std::array<const char*, 9> kParamBlockNames{"W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "S"};

/// All trainable parameters: four affine layers and the n x n_m matrix whose
/// columns are the rank-one generators s_i. Also used as the gradient type.
struct NetParams {
  std::array<Matrix, 4> W;
  std::array<Vector, 4> b;
  Matrix S;

  static NetParams zeros(const NetConfig& cfg) {
    NetParams p;
    const std::array<int, 5> dims{cfg.input_size(), cfg.hidden[0], cfg.hidden[1], cfg.hidden[2], cfg.n_m};
    for (int l = 0; l < 4; ++l) {
      p.W[l] = Matrix::Zero(dims[l + 1], dims[l]);
      p.b[l] = Vector::Zero(dims[l + 1]);
    }
    p.S = Matrix::Zero(cfg.n, cfg.n_m);
    return p;
  }

  /// Shapes determine the configuration; N follows from W1's width.
  NetConfig config() const {
    NetConfig cfg;
    cfg.n = static_cast<int>(S.rows());
    cfg.n_m = static_cast<int>(S.cols());
    cfg.N = static_cast<int>((W[0].cols() - S.rows()) / 2);
    for (int l = 0; l < 3; ++l) cfg.hidden[l] = static_cast<int>(W[l].rows());
    return cfg;
  }

  /// f(name, data, size) for every tensor, in kParamBlockNames order.
  template <class Fn>
  void for_each_block(Fn&& f) {
    for (int l = 0; l < 4; ++l) {
      f(std::string(kParamBlockNames[2 * l]), W[l].data(), static_cast<std::size_t>(W[l].size()));
      f(std::string(kParamBlockNames[2 * l + 1]), b[l].data(), static_cast<std::size_t>(b[l].size()));
    }
    f(std::string("S"), S.data(), static_cast<std::size_t>(S.size()));
  }
  template <class Fn>
  void for_each_block(Fn&& f) const {
    const_cast<NetParams*>(this)->for_each_block(
        [&](const std::string& name, double* data, std::size_t size) { f(name, static_cast<const double*>(data), size); });
  }

  bool all_finite() const {
    bool ok = S.allFinite();
    for (int l = 0; l < 4; ++l) ok = ok && W[l].allFinite() && b[l].allFinite();
    return ok;
  }

  void add_scaled(const NetParams& other, double scale) {
    for (int l = 0; l < 4; ++l) {
      W[l] += scale * other.W[l];
      b[l] += scale * other.b[l];
    }
    S += scale * other.S;
  }
};

/// He-initialized weights, zero biases, and s_i[j] = mean[j] + std[j] z.
inline NetParams init_params(const NetConfig& cfg, const ThetaStats& stats, Rng& rng) {
  if (stats.size() != cfg.n) throw Error(ErrorCode::InvalidArgument, "theta statistics length differs from n");
  NetParams p = NetParams::zeros(cfg);
  for (int l = 0; l < 4; ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(p.W[l].cols()));
    p.W[l] = scale * standard_normal_matrix(p.W[l].rows(), p.W[l].cols(), rng);
  }
  const Matrix z = standard_normal_matrix(cfg.n, cfg.n_m, rng);
  p.S = (z.array().colwise() * stats.std.array()).colwise() + stats.mean.array();
  return p;
}

/// exp(h) / (1 + sum exp(h)), evaluated with the shift m = max(0, max h)
/// so that the constant 1 becomes exp(-m).
inline Vector softmax_with_one(const Vector& h) {
  const double shift = std::max(0.0, h.size() ? h.maxCoeff() : 0.0);
  const Vector e = (h.array() - shift).exp().matrix();
  return e / (std::exp(-shift) + e.sum());
}

/// P = S diag(w) S^T, formed as a symmetric rank update of S diag(sqrt w).
inline RegMatrix assemble_P(const Vector& w, const Matrix& S) {
  if (w.size() != S.cols()) throw Error(ErrorCode::InvalidArgument, "weight count differs from number of generators");
  if ((w.array() < 0.0).any()) throw Error(ErrorCode::InvalidArgument, "weights must be non-negative");
  const Matrix scaled = S * w.cwiseSqrt().asDiagonal();
  Matrix P = Matrix::Zero(S.rows(), S.rows());
  P.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
  P = P.selfadjointView<Eigen::Lower>();
  return RegMatrix{P};
}

/// Squared 2-norm of the estimation error.
inline double loss(const Vector& theta_hat, const Vector& theta0) {
  if (theta_hat.size() != theta0.size()) throw Error(ErrorCode::InvalidArgument, "length mismatch");
  return (theta_hat - theta0).squaredNorm();
}

/// Network input {u, y, theta_LS_normalized}.
inline Vector network_input(const Vector& u, const Vector& y, const Vector& theta_ls_norm) {
  Vector x(u.size() + y.size() + theta_ls_norm.size());
  x << u, y, theta_ls_norm;
  return x;
}

inline Vector normalize_theta_ls(const Vector& theta_ls, const ThetaStats& stats) {
  return ((theta_ls - stats.mean).array() / stats.std.array()).matrix();
}

enum class Mode { Train, Eval };

/// Everything the backward pass needs, one column (or entry) per example.
struct ForwardTrace {
  Matrix X;                    ///< inputs, one column per example
  std::array<Matrix, 3> Z;     ///< hidden pre-activations
  std::array<Matrix, 3> H;     ///< hidden activations
  Matrix H4;                   ///< logits
  Matrix Wd;                   ///< softmax-with-one weights
  Matrix Mask;                 ///< dropout mask (all ones in eval mode)
  Matrix Wt;                   ///< weights after dropout
  std::vector<RegMatrix> P;
  std::vector<RegressionData> rd;
  std::vector<Eigen::PartialPivLU<Matrix>> lu;  ///< of P R + I
  Matrix Theta;                ///< estimates

  Eigen::Index batch() const { return X.cols(); }
};

inline Matrix dropout_mask(Eigen::Index n_m, Eigen::Index batch, double p, Rng& rng) {
  Matrix mask = Matrix::Ones(n_m, batch);
  if (p <= 0.0) return mask;
  if (!(p < 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout probability must be in [0, 1)");
  std::bernoulli_distribution drop(p);
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index i = 0; i < n_m; ++i)
      if (drop(rng)) mask(i, j) = 0.0;
  return mask;
}

/// Forward pass for a batch with an explicit dropout mask.
inline ForwardTrace forward_with_mask(const NetParams& p, const Matrix& X, std::vector<RegressionData> rds,
                                      const Matrix& mask) {
  const Eigen::Index B = X.cols();
  if (static_cast<Eigen::Index>(rds.size()) != B) throw Error(ErrorCode::InvalidArgument, "one RegressionData per column");
  if (X.rows() != p.W[0].cols()) throw Error(ErrorCode::InvalidArgument, "input length differs from network width");

  ForwardTrace t;
  t.X = X;
  const Matrix* in = &t.X;
  for (int l = 0; l < 3; ++l) {
    t.Z[l] = (p.W[l] * *in).colwise() + p.b[l];
    t.H[l] = t.Z[l].cwiseMax(0.0);
    in = &t.H[l];
  }
  t.H4 = (p.W[3] * t.H[2]).colwise() + p.b[3];
  if (!t.H4.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "non-finite logits");

  t.Wd.resize(t.H4.rows(), B);
  for (Eigen::Index e = 0; e < B; ++e) t.Wd.col(e) = softmax_with_one(t.H4.col(e));
  t.Mask = mask;
  t.Wt = t.Wd.cwiseProduct(mask);

  t.rd = std::move(rds);
  t.P.reserve(B);
  t.lu.reserve(B);
  t.Theta.resize(p.S.rows(), B);
  for (Eigen::Index e = 0; e < B; ++e) {
    t.P.push_back(assemble_P(t.Wt.col(e), p.S));
    Matrix A = t.P[e].P * t.rd[e].R;
    A.diagonal().array() += 1.0;
    t.lu.emplace_back(A);
    if (!(t.lu[e].rcond() * kMaxConditionNumber >= 1.0))
      throw Error(ErrorCode::SingularSystem, "P R + I condition estimate exceeds 1e14");
    t.Theta.col(e) = t.lu[e].solve(t.P[e].P * t.rd[e].F);
  }
  if (!t.Theta.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "non-finite estimate");
  return t;
}

inline ForwardTrace forward_batch(const NetParams& p, const Matrix& X, std::vector<RegressionData> rds, Mode mode,
                                  Rng& rng, double dropout = 0.3) {
  const Matrix mask = mode == Mode::Train ? dropout_mask(p.S.cols(), X.cols(), dropout, rng)
                                          : Matrix::Ones(p.S.cols(), X.cols());
  return forward_with_mask(p, X, std::move(rds), mask);
}

/// Single normalized example; theta_ls_norm is the standardized LS estimate.
inline ForwardTrace forward(const NetParams& p, const Example& ex_norm, const Vector& theta_ls_norm, Mode mode,
                            Rng& rng, double dropout = 0.3) {
  const Vector x = network_input(ex_norm.u, ex_norm.y, theta_ls_norm);
  std::vector<RegressionData> rds{build_regression(ex_norm.u, ex_norm.y, p.S.rows())};
  return forward_batch(p, x, std::move(rds), mode, rng, dropout);
}

/// Gradient of sum_e L_e given dL_e/dtheta_e in the columns of theta_grad.
inline NetParams backward_from_theta_grad(const NetParams& p, const ForwardTrace& t, const Matrix& theta_grad) {
  const Eigen::Index B = t.batch();
  NetParams g;
  g.S = Matrix::Zero(p.S.rows(), p.S.cols());
  Matrix dH4(p.S.cols(), B);

  for (Eigen::Index e = 0; e < B; ++e) {
    // theta = A^{-1} P F with A = P R + I: dL/dP = lambda (F - R theta)^T, A^T lambda = dL/dtheta
    const Vector lambda = t.lu[e].transpose().solve(theta_grad.col(e));
    const Vector residual = t.rd[e].F - t.rd[e].R * t.Theta.col(e);
    const Matrix G = lambda * residual.transpose();
    const Matrix T = (G + G.transpose()) * p.S;
    const Vector dw = 0.5 * p.S.cwiseProduct(T).colwise().sum().transpose();
    g.S.noalias() += T * t.Wt.col(e).asDiagonal();
    const Vector dwd = dw.cwiseProduct(t.Mask.col(e));
    const auto wd = t.Wd.col(e);
    dH4.col(e) = wd.cwiseProduct(dwd) - wd * wd.dot(dwd);
  }

  g.W[3] = dH4 * t.H[2].transpose();
  g.b[3] = dH4.rowwise().sum();
  Matrix delta = p.W[3].transpose() * dH4;
  for (int l = 2; l >= 0; --l) {
    delta = delta.cwiseProduct((t.Z[l].array() > 0.0).cast<double>().matrix());
    const Matrix& input = l == 0 ? t.X : t.H[l - 1];
    g.W[l] = delta * input.transpose();
    g.b[l] = delta.rowwise().sum();
    if (l > 0) delta = p.W[l].transpose() * delta;
  }
  if (!g.all_finite()) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient");
  return g;
}

/// Gradient of scale * sum_e ||theta_e - theta0_e||^2.
inline NetParams backward(const NetParams& p, const ForwardTrace& t, const Matrix& theta0, double scale = 1.0) {
  return backward_from_theta_grad(p, t, 2.0 * scale * (t.Theta - theta0));
}

}  // namespace impreg
