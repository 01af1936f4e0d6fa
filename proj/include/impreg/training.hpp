#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "impreg/dataset.hpp"
#include "impreg/model.hpp"
#include "impreg/neuralreg.hpp"
#include "impreg/parallel.hpp"

namespace impreg {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int max_epochs = 100;
  double dropout = 0.3;
  int patience = 5;
  std::uint64_t seed = 0;
  /// Fixed-size gradient chunks reduced in index order: results do not
  /// depend on the thread count. Otherwise one chunk per worker.
  bool deterministic = true;
  int chunk_size = 16;
  std::array<int, 3> hidden{600, 300, 200};
  int n_m = 500;

  void validate() const {
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout must be in [0, 1)");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
    if (max_epochs < 0) throw Error(ErrorCode::InvalidArgument, "max epochs must be >= 0");
    if (patience < 1) throw Error(ErrorCode::InvalidArgument, "patience must be >= 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0");
    if (n_m < 1 || std::any_of(hidden.begin(), hidden.end(), [](int h) { return h < 1; }))
      throw Error(ErrorCode::InvalidArgument, "layer sizes must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  /// Epoch 0: eval-mode loss of the initial parameters on the training set.
  /// Later epochs: mean of the train-mode minibatch losses.
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  bool improved = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  double wall_seconds = 0.0;
};

/// Normalized example ready for the network: input vector and target.
struct PreparedExample {
  Vector input;
  Vector theta0;
  double snr = 0.0;
};

struct PreparedSet {
  int N = 0;
  int n = 0;
  std::vector<PreparedExample> examples;

  std::size_t size() const { return examples.size(); }

  RegressionData regression(std::size_t i) const {
    const Vector& x = examples[i].input;
    return build_regression(x.head(N), x.segment(N, N), n);
  }
};

/// Builds network inputs from normalized examples.
inline PreparedSet prepare(const Dataset& normalized, const ThetaStats& stats) {
  PreparedSet set;
  set.N = static_cast<int>(normalized.meta.N);
  set.n = static_cast<int>(normalized.meta.n);
  set.examples.resize(normalized.size());
  parallel_for(normalized.size(), [&](std::size_t i) {
    const Example& ex = normalized.examples[i];
    const RegressionData rd = build_regression(ex.u, ex.y, set.n);
    set.examples[i].input = network_input(ex.u, ex.y, normalize_theta_ls(least_squares(rd), stats));
    set.examples[i].theta0 = ex.theta0;
    set.examples[i].snr = ex.snr;
  });
  return set;
}

namespace detail {

inline Matrix gather_inputs(const PreparedSet& set, const std::vector<std::size_t>& idx) {
  Matrix X(set.examples.front().input.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = set.examples[idx[j]].input;
  return X;
}

inline Matrix gather_targets(const PreparedSet& set, const std::vector<std::size_t>& idx) {
  Matrix T(set.n, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) T.col(static_cast<Eigen::Index>(j)) = set.examples[idx[j]].theta0;
  return T;
}

inline std::vector<RegressionData> gather_regressions(const PreparedSet& set, const std::vector<std::size_t>& idx) {
  std::vector<RegressionData> rds;
  rds.reserve(idx.size());
  for (std::size_t i : idx) rds.push_back(set.regression(i));
  return rds;
}

}  // namespace detail

/// Per-example eval-mode losses (dropout off).
inline std::vector<double> eval_losses(const NetParams& params, const PreparedSet& set, int chunk = 32) {
  std::vector<double> losses(set.size());
  const std::size_t chunks = (set.size() + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = c * chunk; i < std::min(set.size(), (c + 1) * chunk); ++i) idx.push_back(i);
    const Matrix X = detail::gather_inputs(set, idx);
    const Matrix mask = Matrix::Ones(params.S.cols(), X.cols());
    const ForwardTrace t = forward_with_mask(params, X, detail::gather_regressions(set, idx), mask);
    const Matrix T = detail::gather_targets(set, idx);
    for (std::size_t j = 0; j < idx.size(); ++j)
      losses[idx[j]] = (t.Theta.col(static_cast<Eigen::Index>(j)) - T.col(static_cast<Eigen::Index>(j))).squaredNorm();
  });
  return losses;
}

inline double mean_eval_loss(const NetParams& params, const PreparedSet& set) {
  if (set.size() == 0) return 0.0;
  const auto l = eval_losses(params, set);
  return std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
}

class Adam {
 public:
  Adam(const NetParams& shape, const TrainConfig& cfg) : cfg_(cfg), m_(zeros_like(shape)), v_(zeros_like(shape)) {}

  void step(NetParams& params, const NetParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    std::vector<double*> m_blocks, v_blocks;
    std::vector<const double*> g_blocks;
    m_.for_each_block([&](const std::string&, double* d, std::size_t) { m_blocks.push_back(d); });
    v_.for_each_block([&](const std::string&, double* d, std::size_t) { v_blocks.push_back(d); });
    grad.for_each_block([&](const std::string&, const double* d, std::size_t) { g_blocks.push_back(d); });
    std::size_t b = 0;
    params.for_each_block([&](const std::string&, double* p, std::size_t size) {
      double* m = m_blocks[b];
      double* v = v_blocks[b];
      const double* g = g_blocks[b];
      for (std::size_t i = 0; i < size; ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
      ++b;
    });
  }

  long long steps() const { return t_; }

 private:
  static NetParams zeros_like(const NetParams& p) {
    NetParams z = p;
    z.for_each_block([](const std::string&, double* d, std::size_t n) { std::fill(d, d + n, 0.0); });
    return z;
  }

  TrainConfig cfg_;
  NetParams m_;
  NetParams v_;
  long long t_ = 0;
};

struct BatchResult {
  NetParams grad;  ///< of the mean loss over the batch
  double mean_loss = 0.0;
};

/// Mean-loss gradient of one minibatch, computed in column chunks whose
/// partial sums are reduced in chunk order.
inline BatchResult batch_gradient(const NetParams& params, const PreparedSet& set, const std::vector<std::size_t>& idx,
                                  const Matrix& mask, int chunk_size) {
  const std::size_t B = idx.size();
  chunk_size = std::max(1, chunk_size);
  const std::size_t chunks = (B + chunk_size - 1) / chunk_size;
  std::vector<NetParams> partial(chunks);
  std::vector<double> partial_loss(chunks, 0.0);
  const double scale = 1.0 / static_cast<double>(B);

  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * chunk_size;
    const std::size_t hi = std::min(B, lo + chunk_size);
    const std::vector<std::size_t> sub(idx.begin() + lo, idx.begin() + hi);
    const Matrix X = detail::gather_inputs(set, sub);
    const Matrix T = detail::gather_targets(set, sub);
    const ForwardTrace t = forward_with_mask(params, X, detail::gather_regressions(set, sub),
                                             mask.middleCols(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)));
    partial_loss[c] = (t.Theta - T).colwise().squaredNorm().sum();
    partial[c] = backward(params, t, T, scale);
  });

  BatchResult out;
  out.grad = std::move(partial[0]);
  out.mean_loss = partial_loss[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    out.grad.add_scaled(partial[c], 1.0);
    out.mean_loss += partial_loss[c];
  }
  out.mean_loss *= scale;
  return out;
}

struct TrainResult {
  Model model;
  TrainLog log;
};

/// Minibatch Adam on the mean squared estimation error with early stopping
/// on the validation loss; returns the best parameters seen. `initial`
/// resumes from existing parameters instead of a fresh initialization.
inline TrainResult train(const PreparedSet& train_set, const PreparedSet& val_set, const ThetaStats& stats,
                         const TrainConfig& cfg, std::optional<NetParams> initial = std::nullopt,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  NetConfig net;
  net.N = train_set.N;
  net.n = train_set.n;
  net.hidden = cfg.hidden;
  net.n_m = cfg.n_m;

  Rng rng = derive_rng(cfg.seed, 0x7261696eULL);
  NetParams params;
  if (initial) {
    params = std::move(*initial);
    if (!(params.config() == net)) throw Error(ErrorCode::InvalidArgument, "initial parameters do not match the data/config");
  } else {
    params = init_params(net, stats, rng);
  }

  const PreparedSet& monitor = val_set.size() ? val_set : train_set;
  TrainResult result;
  TrainLog& log = result.log;
  {
    EpochRecord rec;
    rec.train_loss = mean_eval_loss(params, train_set);
    rec.val_loss = mean_eval_loss(params, monitor);
    rec.improved = true;
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    log.epochs.push_back(rec);
    log.best_val_loss = rec.val_loss;
    if (on_epoch) on_epoch(rec);
  }
  NetParams best = params;
  Adam adam(params, cfg);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const int chunk = cfg.deterministic ? cfg.chunk_size
                                      : static_cast<int>((cfg.batch_size + thread_count() - 1) / thread_count());

  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size, ++batches) {
      const std::vector<std::size_t> idx(order.begin() + lo,
                                         order.begin() + std::min(order.size(), lo + cfg.batch_size));
      const Matrix mask = dropout_mask(params.S.cols(), static_cast<Eigen::Index>(idx.size()), cfg.dropout, rng);
      BatchResult br;
      try {
        br = batch_gradient(params, train_set, idx, mask, chunk);
      } catch (const Error& e) {
        throw Error(e.code(), "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + ": " + e.what());
      }
      adam.step(params, br.grad);
      if (!params.all_finite())
        throw Error(ErrorCode::NonFiniteGradient,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + ": parameters diverged");
      loss_sum += br.mean_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = mean_eval_loss(params, monitor);
    rec.improved = rec.val_loss < log.best_val_loss;
    rec.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.improved) {
      log.best_val_loss = rec.val_loss;
      log.best_epoch = epoch;
      best = params;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      log.early_stopped = true;
      break;
    }
  }
  log.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  result.model.params = std::move(best);
  result.model.stats = stats;
  return result;
}

/// Normalizes both sets, computes theta statistics on the training set and
/// trains.
inline TrainResult train(const Dataset& train_raw, const Dataset& val_raw, const TrainConfig& cfg,
                         std::optional<NetParams> initial = std::nullopt,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const NormalizedDataset tn = normalize_dataset(train_raw);
  const NormalizedDataset vn = normalize_dataset(val_raw);
  const ThetaStats stats = compute_theta_stats(tn.data);
  return train(prepare(tn.data, stats), prepare(vn.data, stats), stats, cfg, std::move(initial), on_epoch);
}

}  // namespace impreg
