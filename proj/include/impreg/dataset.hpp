#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "impreg/binary_io.hpp"
#include "impreg/error.hpp"
#include "impreg/lti_sysgen.hpp"
#include "impreg/parallel.hpp"
#include "impreg/random.hpp"
#include "impreg/types.hpp"

namespace impreg {

/// One simulated identification experiment: input, noisy output, the true
/// truncated impulse response, the noise variance and the drawn SNR.
struct Example {
  Vector u;
  Vector y;
  Vector theta0;
  double sigma2 = 0.0;
  double snr = 1.0;
};

inline constexpr std::uint8_t kDatasetVersion = 1;

struct DatasetMeta {
  std::uint32_t N = 125;
  std::uint32_t n = 50;
  std::uint64_t seed = 0;
  std::uint8_t version = kDatasetVersion;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

/// Per-coefficient statistics of the normalized true impulse responses of a
/// training set.
struct ThetaStats {
  Vector mean;
  Vector std;

  Eigen::Index size() const { return mean.size(); }
};

struct GeneratorConfig {
  int order = 30;
  int N = 125;
  int n = 50;
  double snr_min = 1.0;
  double snr_max = 10.0;

  void validate() const {
    if (order < 1) throw Error(ErrorCode::InvalidArgument, "order must be >= 1");
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "FIR order n must be >= 1");
    if (N <= n) throw Error(ErrorCode::InvalidArgument, "sequence length N must exceed n");
    if (!(snr_min >= 1.0 && snr_min <= snr_max && snr_max <= 10.0))
      throw Error(ErrorCode::InvalidArgument, "SNR range must satisfy 1 <= min <= max <= 10");
  }
};

inline double mean_of(const Vector& v) { return v.size() ? v.mean() : 0.0; }

/// Population variance (divides by the count).
inline double variance_of(const Vector& v) {
  if (v.size() == 0) return 0.0;
  return (v.array() - v.mean()).square().mean();
}

/// State recursion from x(1) = 0: y(t) = Cd x(t), x(t+1) = Ad x(t) + Bd u(t).
inline Vector simulate_noise_free(const DiscreteStateSpace& dsys, const Vector& u) {
  Vector y(u.size());
  Vector x = Vector::Zero(dsys.order());
  for (Eigen::Index t = 0; t < u.size(); ++t) {
    y[t] = dsys.Cd.dot(x) + dsys.Dd * u[t];
    x = dsys.Ad * x + dsys.Bd * u[t];
  }
  return y;
}

struct SimulatedIO {
  Vector u;
  Vector y;
  Vector y_clean;
  double sigma2 = 0.0;
};

/// White standard-normal input, noise variance var(y*)/snr.
inline SimulatedIO simulate_io(const DiscreteStateSpace& dsys, int N, double snr, Rng& rng) {
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
  if (!(snr >= 1.0 && snr <= 10.0)) throw Error(ErrorCode::InvalidArgument, "snr must lie in [1, 10]");
  SimulatedIO io;
  io.u = standard_normal_vector(N, rng);
  io.y_clean = simulate_noise_free(dsys, io.u);
  io.sigma2 = variance_of(io.y_clean) / snr;
  io.y = io.y_clean + std::sqrt(io.sigma2) * standard_normal_vector(N, rng);
  return io;
}

inline Example generate_example(const GeneratorConfig& cfg, Rng& rng) {
  SystemConfig sys_cfg;
  sys_cfg.order = cfg.order;
  sys_cfg.fir_order = cfg.n;
  const SampledSystem sys = sample_true_system(sys_cfg, rng);

  std::uniform_real_distribution<double> snr_dist(cfg.snr_min, cfg.snr_max);
  const double snr = cfg.snr_min == cfg.snr_max ? cfg.snr_min : snr_dist(rng);
  SimulatedIO io = simulate_io(sys.discrete, cfg.N, snr, rng);

  Example ex;
  ex.u = std::move(io.u);
  ex.y = std::move(io.y);
  ex.theta0 = sys.theta0.coefficients;
  ex.sigma2 = io.sigma2;
  ex.snr = snr;
  return ex;
}

/// M examples from M freshly sampled systems. Example i uses the stream
/// derive_rng(seed, i), so the result does not depend on the thread count.
inline Dataset generate_dataset(std::size_t M, const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.meta.N = static_cast<std::uint32_t>(cfg.N);
  ds.meta.n = static_cast<std::uint32_t>(cfg.n);
  ds.meta.seed = seed;
  ds.examples.resize(M);
  parallel_for(M, [&](std::size_t i) {
    Rng rng = derive_rng(seed, i);
    ds.examples[i] = generate_example(cfg, rng);
  });
  return ds;
}

// --- normalization ---------------------------------------------------------

/// Per-example affine transform of (u, y); enough to map estimates back.
struct ScaleRecord {
  double mu_u = 0.0;
  double s_u = 1.0;
  double mu_y = 0.0;
  double s_y = 1.0;

  /// theta in normalized units -> raw units.
  Vector denormalize_theta(const Vector& theta) const { return theta * (s_y / s_u); }
  Vector normalize_theta(const Vector& theta) const { return theta * (s_u / s_y); }
};

struct NormalizedExample {
  Example example;
  ScaleRecord scale;
};

inline constexpr double kDegenerateStd = 1e-12;

inline ScaleRecord compute_scale(const Vector& u, const Vector& y) {
  ScaleRecord s;
  s.mu_u = mean_of(u);
  s.s_u = std::sqrt(variance_of(u));
  s.mu_y = mean_of(y);
  s.s_y = std::sqrt(variance_of(y));
  if (!(s.s_u >= kDegenerateStd)) throw Error(ErrorCode::DegenerateSequence, "std(u) below 1e-12");
  if (!(s.s_y >= kDegenerateStd)) throw Error(ErrorCode::DegenerateSequence, "std(y) below 1e-12");
  return s;
}

/// u' = (u - mean)/std, y' likewise, theta0' = theta0 std(u)/std(y),
/// sigma2' = sigma2/var(y). Population standard deviations throughout.
inline NormalizedExample normalize_example(const Example& ex) {
  NormalizedExample out;
  out.scale = compute_scale(ex.u, ex.y);
  const ScaleRecord& s = out.scale;
  out.example.u = (ex.u.array() - s.mu_u) / s.s_u;
  out.example.y = (ex.y.array() - s.mu_y) / s.s_y;
  out.example.theta0 = s.normalize_theta(ex.theta0);
  out.example.sigma2 = ex.sigma2 / (s.s_y * s.s_y);
  out.example.snr = ex.snr;
  return out;
}

struct NormalizedDataset {
  Dataset data;
  std::vector<ScaleRecord> scales;
  /// Indices into the source dataset, one per kept example.
  std::vector<std::size_t> source_index;
  std::size_t skipped = 0;
};

/// Normalizes every example; degenerate ones are dropped and counted.
inline NormalizedDataset normalize_dataset(const Dataset& ds) {
  NormalizedDataset out;
  out.data.meta = ds.meta;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    try {
      NormalizedExample ne = normalize_example(ds.examples[i]);
      out.data.examples.push_back(std::move(ne.example));
      out.scales.push_back(ne.scale);
      out.source_index.push_back(i);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateSequence) throw;
      ++out.skipped;
    }
  }
  return out;
}

inline constexpr double kThetaStdFloor = 1e-12;

/// Per-index mean and population std of theta0 over (normalized) examples.
inline ThetaStats compute_theta_stats(const std::vector<Example>& examples) {
  if (examples.empty()) throw Error(ErrorCode::EmptyDataset, "cannot compute statistics of an empty set");
  const Eigen::Index n = examples.front().theta0.size();
  ThetaStats stats;
  stats.mean = Vector::Zero(n);
  for (const Example& ex : examples) stats.mean += ex.theta0;
  stats.mean /= static_cast<double>(examples.size());
  Vector sq = Vector::Zero(n);
  for (const Example& ex : examples) sq += (ex.theta0 - stats.mean).cwiseAbs2();
  stats.std = (sq / static_cast<double>(examples.size())).cwiseSqrt().cwiseMax(kThetaStdFloor);
  return stats;
}

inline ThetaStats compute_theta_stats(const Dataset& ds) { return compute_theta_stats(ds.examples); }

// --- persistence ------------------------------------------------------------
//
// IRDS: "IRDS" u8 version u32 N u32 n u64 M u64 seed, then M records of
// f64 snr, f64 sigma2, f64[N] u, f64[N] y, f64[n] theta0, then the CRC32 of
// every preceding byte. All little-endian.

inline void save_dataset(const Dataset& ds, const std::string& path) {
  for (const Example& ex : ds.examples) {
    if (ex.u.size() != ds.meta.N || ex.y.size() != ds.meta.N || ex.theta0.size() != ds.meta.n)
      throw Error(ErrorCode::InvalidArgument, "example shape disagrees with dataset meta");
  }
  std::ofstream out = io::open_for_write(path);
  io::Writer w(out);
  w.text("IRDS");
  w.u8(kDatasetVersion);
  w.u32(ds.meta.N);
  w.u32(ds.meta.n);
  w.u64(ds.size());
  w.u64(ds.meta.seed);
  for (const Example& ex : ds.examples) {
    w.f64(ex.snr);
    w.f64(ex.sigma2);
    w.f64s(ex.u);
    w.f64s(ex.y);
    w.f64s(ex.theta0);
  }
  w.finish_with_crc();
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in = io::open_for_read(path);
  io::Reader r(in);
  io::expect_magic(r, "IRDS", path);
  Dataset ds;
  ds.meta.version = r.u8();
  if (ds.meta.version != kDatasetVersion)
    throw Error(ErrorCode::FormatVersionMismatch,
                "'" + path + "' has dataset version " + std::to_string(ds.meta.version));
  ds.meta.N = r.u32();
  ds.meta.n = r.u32();
  const std::uint64_t M = r.u64();
  ds.meta.seed = r.u64();

  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(4 + 1 + 4 + 4 + 8 + 8, std::ios::beg);
  const std::uint64_t record = 8ull * (2ull + 2ull * ds.meta.N + ds.meta.n);
  if (M > file_size / record || file_size != 29ull + M * record + 4ull)
    throw Error(ErrorCode::ChecksumMismatch, "'" + path + "' size does not match its header");

  ds.examples.resize(M);
  for (Example& ex : ds.examples) {
    ex.snr = r.f64();
    ex.sigma2 = r.f64();
    ex.u = r.f64_vector(ds.meta.N);
    ex.y = r.f64_vector(ds.meta.N);
    ex.theta0 = r.f64_vector(ds.meta.n);
  }
  r.verify_crc();
  return ds;
}

// IRTS: "IRTS" u8 version u32 n f64[n] mean f64[n] std.

inline void save_theta_stats(const ThetaStats& stats, const std::string& path) {
  std::ofstream out = io::open_for_write(path);
  io::Writer w(out);
  w.text("IRTS");
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(stats.size()));
  w.f64s(stats.mean);
  w.f64s(stats.std);
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

inline ThetaStats load_theta_stats(const std::string& path) {
  std::ifstream in = io::open_for_read(path);
  io::Reader r(in);
  io::expect_magic(r, "IRTS", path);
  if (const auto v = r.u8(); v != 1)
    throw Error(ErrorCode::FormatVersionMismatch, "unsupported theta-stats version " + std::to_string(v));
  const std::uint32_t n = r.u32();
  ThetaStats stats;
  stats.mean = r.f64_vector(n);
  stats.std = r.f64_vector(n);
  return stats;
}

}  // namespace impreg
