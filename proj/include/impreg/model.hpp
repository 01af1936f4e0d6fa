#pragma once

// Trained model = network parameters + the theta statistics of its training
// set, persisted as a named-tensor container, plus the inference path.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "impreg/binary_io.hpp"
#include "impreg/dataset.hpp"
#include "impreg/neuralreg.hpp"
#include "impreg/regls.hpp"

namespace impreg {

struct Model {
  NetParams params;
  ThetaStats stats;

  NetConfig config() const { return params.config(); }
};

inline constexpr std::uint8_t kModelVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;  ///< row-major
};

namespace detail {

inline Tensor to_tensor(const Matrix& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

inline Tensor to_tensor(const Vector& v) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

inline Matrix to_matrix(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 2) throw Error(ErrorCode::FormatVersionMismatch, "tensor '" + name + "' must be rank 2");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), t.dims[0],
                                                                                                   t.dims[1]);
}

inline Vector to_vector(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 1) throw Error(ErrorCode::FormatVersionMismatch, "tensor '" + name + "' must be rank 1");
  return Eigen::Map<const Vector>(t.data.data(), t.dims[0]);
}

}  // namespace detail

/// Writes an IRNN container: "IRNN" u8 version u32 count, then per tensor
/// u16 name length, name, u8 rank, u32 dims[rank], f64 data (row-major);
/// trailing CRC32 of all preceding bytes.
inline void save_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors, const std::string& path) {
  std::ofstream out = io::open_for_write(path);
  io::Writer w(out);
  w.text("IRNN");
  w.u8(kModelVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.text(name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.f64s(t.data.data(), t.data.size());
  }
  w.finish_with_crc();
}

inline std::map<std::string, Tensor> load_tensors(const std::string& path) {
  std::ifstream in = io::open_for_read(path);
  io::Reader r(in);
  io::expect_magic(r, "IRNN", path);
  if (const auto v = r.u8(); v != kModelVersion)
    throw Error(ErrorCode::FormatVersionMismatch, "'" + path + "' has model version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text(r.u16());
    Tensor t;
    t.dims.resize(r.u8());
    std::uint64_t elements = 1;
    for (auto& d : t.dims) {
      d = r.u32();
      elements *= d;
    }
    if (elements > (std::uint64_t{1} << 32)) throw Error(ErrorCode::ChecksumMismatch, "implausible tensor size");
    t.data.resize(elements);
    r.f64s(t.data.data(), t.data.size());
    tensors[name] = std::move(t);
  }
  r.verify_crc();
  return tensors;
}

inline void save_model(const Model& model, const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (int l = 0; l < 4; ++l) {
    tensors.emplace_back(kParamBlockNames[2 * l], detail::to_tensor(model.params.W[l]));
    tensors.emplace_back(kParamBlockNames[2 * l + 1], detail::to_tensor(model.params.b[l]));
  }
  tensors.emplace_back("S", detail::to_tensor(model.params.S));
  tensors.emplace_back("theta_mean", detail::to_tensor(model.stats.mean));
  tensors.emplace_back("theta_std", detail::to_tensor(model.stats.std));
  save_tensors(tensors, path);
}

inline Model load_model(const std::string& path) {
  const auto tensors = load_tensors(path);
  auto get = [&](const std::string& name) -> const Tensor& {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::FormatVersionMismatch, "model lacks tensor '" + name + "'");
    return it->second;
  };
  Model m;
  for (int l = 0; l < 4; ++l) {
    m.params.W[l] = detail::to_matrix(get(kParamBlockNames[2 * l]), kParamBlockNames[2 * l]);
    m.params.b[l] = detail::to_vector(get(kParamBlockNames[2 * l + 1]), kParamBlockNames[2 * l + 1]);
  }
  m.params.S = detail::to_matrix(get("S"), "S");
  m.stats.mean = detail::to_vector(get("theta_mean"), "theta_mean");
  m.stats.std = detail::to_vector(get("theta_std"), "theta_std");

  const NetConfig cfg = m.params.config();
  bool consistent = m.stats.size() == cfg.n && m.stats.std.size() == cfg.n && cfg.N > 0 &&
                    m.params.W[0].cols() == cfg.input_size() && m.params.W[3].rows() == cfg.n_m;
  for (int l = 0; l < 4 && consistent; ++l) {
    consistent = m.params.b[l].size() == m.params.W[l].rows() && (l == 0 || m.params.W[l].cols() == m.params.W[l - 1].rows());
  }
  if (!consistent) throw Error(ErrorCode::FormatVersionMismatch, "model tensor shapes are inconsistent");
  return m;
}

// --- inference ----------------------------------------------------------------

struct Prediction {
  RegMatrix P;               ///< in the normalized data scale
  ScaleRecord scale;
  Vector weights;            ///< softmax-with-one output
  Vector theta_ls_norm;      ///< LS estimate, normalized data scale
  Vector theta_hat_norm;     ///< regularized estimate, normalized data scale

  Vector theta_hat_raw() const { return scale.denormalize_theta(theta_hat_norm); }
  Vector theta_ls_raw() const { return scale.denormalize_theta(theta_ls_norm); }
};

/// Normalized example -> LS -> standardized LS -> network (eval mode) -> P.
inline Prediction predict_normalized(const Model& model, const Vector& u_norm, const Vector& y_norm) {
  const NetConfig cfg = model.config();
  if (u_norm.size() != cfg.N || y_norm.size() != cfg.N)
    throw Error(ErrorCode::InvalidArgument, "model expects sequences of length " + std::to_string(cfg.N));
  Prediction pred;
  RegressionData rd = build_regression(u_norm, y_norm, cfg.n);
  pred.theta_ls_norm = least_squares(rd);
  const Vector x = network_input(u_norm, y_norm, normalize_theta_ls(pred.theta_ls_norm, model.stats));
  const Matrix mask = Matrix::Ones(cfg.n_m, 1);
  const ForwardTrace t = forward_with_mask(model.params, x, {std::move(rd)}, mask);
  pred.P = t.P[0];
  pred.weights = t.Wd.col(0);
  pred.theta_hat_norm = t.Theta.col(0);
  return pred;
}

/// Full inference path from raw (u, y).
inline Prediction predict_P(const Model& model, const Vector& u, const Vector& y) {
  const ScaleRecord scale = compute_scale(u, y);
  const Vector u_norm = (u.array() - scale.mu_u) / scale.s_u;
  const Vector y_norm = (y.array() - scale.mu_y) / scale.s_y;
  Prediction pred = predict_normalized(model, u_norm, y_norm);
  pred.scale = scale;
  return pred;
}

inline Prediction predict_P(const Model& model, const Example& raw) { return predict_P(model, raw.u, raw.y); }

}  // namespace impreg
