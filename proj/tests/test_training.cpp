#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace impreg;
using impreg::testing::toy_dataset;

namespace {

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.hidden = {32, 16, 16};
  cfg.n_m = 16;
  cfg.batch_size = 64;
  return cfg;
}

struct Prepared {
  PreparedSet train;
  PreparedSet val;
  ThetaStats stats;
};

Prepared prepared_toy(std::size_t m_train, std::size_t m_val, std::uint64_t seed, int N = 40, int n = 10) {
  const NormalizedDataset tn = normalize_dataset(toy_dataset(m_train, N, n, seed));
  const NormalizedDataset vn = normalize_dataset(toy_dataset(m_val, N, n, seed + 1000));
  Prepared p;
  p.stats = compute_theta_stats(tn.data);
  p.train = prepare(tn.data, p.stats);
  p.val = prepare(vn.data, p.stats);
  return p;
}

bool same_params(const NetParams& a, const NetParams& b) {
  for (int l = 0; l < 4; ++l)
    if (a.W[l] != b.W[l] || a.b[l] != b.b[l]) return false;
  return a.S == b.S;
}

class ThreadGuard {
 public:
  explicit ThreadGuard(unsigned n) { set_thread_count(n); }
  ~ThreadGuard() { set_thread_count(0); }
};

}  // namespace

TEST(Adam, FirstTwoStepsMatchHandComputation) {
  NetConfig cfg;
  cfg.N = 2;
  cfg.n = 1;
  cfg.hidden = {1, 1, 1};
  cfg.n_m = 1;
  NetParams p = NetParams::zeros(cfg);
  p.S(0, 0) = 1.0;
  NetParams g = NetParams::zeros(cfg);
  TrainConfig tc;
  tc.learning_rate = 0.1;
  Adam adam(p, tc);

  g.S(0, 0) = 2.0;
  adam.step(p, g);
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(p.S(0, 0), 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.W[0](0, 0), 0.0);

  const double before = p.S(0, 0);
  g.S(0, 0) = -1.0;
  adam.step(p, g);
  const double m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0;
  const double v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
  const double expected = before - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p.S(0, 0), expected, 1e-14);
  EXPECT_EQ(adam.steps(), 2);
}

TEST(BatchGradient, ChunkingDoesNotChangeTheResult) {
  const Prepared data = prepared_toy(50, 1, 1);
  Rng rng = derive_rng(2, 0);
  TrainConfig tc = small_config(2);
  NetConfig net{40, 10, tc.hidden, tc.n_m};
  const NetParams params = init_params(net, data.stats, rng);
  std::vector<std::size_t> idx(50);
  std::iota(idx.begin(), idx.end(), 0);
  const Matrix mask = dropout_mask(tc.n_m, 50, 0.3, rng);

  // Oracle: per-example forward and backward, summed in index order.
  NetParams oracle = NetParams::zeros(net);
  double oracle_loss = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const ForwardTrace t = forward_with_mask(params, data.train.examples[i].input, {data.train.regression(i)},
                                             mask.col(static_cast<Eigen::Index>(i)));
    oracle.add_scaled(backward(params, t, data.train.examples[i].theta0, 1.0 / 50.0), 1.0);
    oracle_loss += (t.Theta.col(0) - data.train.examples[i].theta0).squaredNorm() / 50.0;
  }

  for (int chunk : {1, 7, 16, 64}) {
    const BatchResult br = batch_gradient(params, data.train, idx, mask, chunk);
    EXPECT_NEAR(br.mean_loss, oracle_loss, 1e-12 * oracle_loss);
    EXPECT_LT((br.grad.S - oracle.S).norm(), 1e-12 * oracle.S.norm()) << chunk;
    for (int l = 0; l < 4; ++l) EXPECT_LT((br.grad.W[l] - oracle.W[l]).norm(), 1e-12 * (1e-30 + oracle.W[l].norm()));
  }
}

TEST(Train, ReducesTrainingLossAcrossSeeds) {
  const Prepared data = prepared_toy(512, 128, 3);
  int reduced = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TrainConfig tc = small_config(seed);
    tc.max_epochs = 20;
    tc.patience = 20;
    tc.learning_rate = 1e-3;
    const TrainResult r = train(data.train, data.val, data.stats, tc);
    if (mean_eval_loss(r.model.params, data.train) < r.log.epochs.front().train_loss) ++reduced;
  }
  EXPECT_GE(reduced, 19);
}

TEST(Train, IdenticalAcrossRunsAndThreadCounts) {
  const Prepared data = prepared_toy(200, 50, 4);
  TrainConfig tc = small_config(5);
  tc.max_epochs = 2;
  TrainResult a, b, c;
  {
    ThreadGuard g(1);
    a = train(data.train, data.val, data.stats, tc);
    b = train(data.train, data.val, data.stats, tc);
  }
  {
    ThreadGuard g(4);
    c = train(data.train, data.val, data.stats, tc);
  }
  EXPECT_TRUE(same_params(a.model.params, b.model.params));
  EXPECT_TRUE(same_params(a.model.params, c.model.params));
  ASSERT_EQ(a.log.epochs.size(), c.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    EXPECT_EQ(a.log.epochs[i].train_loss, c.log.epochs[i].train_loss);
    EXPECT_EQ(a.log.epochs[i].val_loss, c.log.epochs[i].val_loss);
  }
}

TEST(Train, EpochZeroRecordsInitialEvalLoss) {
  const Prepared data = prepared_toy(100, 40, 6);
  TrainConfig tc = small_config(6);
  tc.max_epochs = 0;
  const TrainResult r = train(data.train, data.val, data.stats, tc);
  ASSERT_EQ(r.log.epochs.size(), 1u);
  NetConfig net{40, 10, tc.hidden, tc.n_m};
  Rng rng = derive_rng(tc.seed, 0x7261696eULL);
  const NetParams init = init_params(net, data.stats, rng);
  EXPECT_TRUE(same_params(init, r.model.params));
  EXPECT_EQ(r.log.epochs[0].train_loss, mean_eval_loss(init, data.train));
  EXPECT_EQ(r.log.epochs[0].val_loss, mean_eval_loss(init, data.val));
  EXPECT_EQ(r.log.best_epoch, 0);
}

TEST(Train, EarlyStoppingKeepsBestParameters) {
  const Prepared data = prepared_toy(128, 32, 7);
  TrainConfig tc = small_config(7);
  tc.learning_rate = 3e-2;
  tc.max_epochs = 300;
  tc.patience = 3;
  const TrainResult r = train(data.train, data.val, data.stats, tc);
  const auto& epochs = r.log.epochs;
  ASSERT_TRUE(r.log.early_stopped);
  EXPECT_EQ(static_cast<int>(epochs.size()) - 1 - r.log.best_epoch, tc.patience);
  for (int e = r.log.best_epoch + 1; e < static_cast<int>(epochs.size()); ++e)
    EXPECT_GE(epochs[e].val_loss, r.log.best_val_loss);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : epochs) best = std::min(best, rec.val_loss);
  EXPECT_EQ(best, r.log.best_val_loss);
  EXPECT_EQ(mean_eval_loss(r.model.params, data.val), r.log.best_val_loss);
}

TEST(Train, ResumeStartsFromGivenParameters) {
  const Prepared data = prepared_toy(100, 30, 8);
  TrainConfig tc = small_config(8);
  tc.max_epochs = 3;
  const TrainResult first = train(data.train, data.val, data.stats, tc);
  tc.max_epochs = 0;
  const TrainResult resumed = train(data.train, data.val, data.stats, tc, first.model.params);
  EXPECT_TRUE(same_params(first.model.params, resumed.model.params));
  EXPECT_EQ(resumed.log.epochs[0].val_loss, first.log.best_val_loss);

  TrainConfig other = tc;
  other.n_m = 8;
  try {
    train(data.train, data.val, data.stats, other, first.model.params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(Train, RejectsBadConfigurationAndEmptyData) {
  const Prepared data = prepared_toy(10, 5, 9);
  auto code = [&](TrainConfig tc) {
    try {
      train(data.train, data.val, data.stats, tc);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  TrainConfig tc = small_config(9);
  tc.max_epochs = 0;
  EXPECT_EQ(code([&] { auto c = tc; c.dropout = 1.0; return c; }()), ErrorCode::InvalidArgument);
  EXPECT_EQ(code([&] { auto c = tc; c.batch_size = 0; return c; }()), ErrorCode::InvalidArgument);
  EXPECT_EQ(code([&] { auto c = tc; c.learning_rate = 0.0; return c; }()), ErrorCode::InvalidArgument);
  EXPECT_EQ(code([&] { auto c = tc; c.patience = 0; return c; }()), ErrorCode::InvalidArgument);
  EXPECT_EQ(code([&] { auto c = tc; c.hidden[1] = 0; return c; }()), ErrorCode::InvalidArgument);
  try {
    train(PreparedSet{}, data.val, data.stats, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Train, WithoutValidationMonitorsTrainingSet) {
  const Prepared data = prepared_toy(64, 1, 10);
  TrainConfig tc = small_config(10);
  tc.max_epochs = 2;
  const TrainResult r = train(data.train, PreparedSet{}, data.stats, tc);
  EXPECT_EQ(r.log.epochs[0].val_loss, r.log.epochs[0].train_loss);
}

TEST(Train, RawDatasetOverloadNormalizesFirst) {
  const Dataset raw = toy_dataset(64, 40, 10, 11);
  Dataset scaled = raw;
  for (auto& ex : scaled.examples) {
    ex.y *= 1e3;
    ex.theta0 *= 1e3;
  }
  TrainConfig tc = small_config(11);
  tc.max_epochs = 1;
  const TrainResult a = train(raw, Dataset{}, tc);
  const TrainResult b = train(scaled, Dataset{}, tc);
  EXPECT_LT(std::abs(a.log.epochs[1].train_loss - b.log.epochs[1].train_loss), 1e-9 * a.log.epochs[1].train_loss);
  EXPECT_LT((a.model.stats.mean - b.model.stats.mean).norm(), 1e-9 * a.model.stats.mean.norm());
}
