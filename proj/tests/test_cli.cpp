#include <gtest/gtest.h>

#include <sys/wait.h>

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace impreg;
using impreg::testing::read_bytes;
using impreg::testing::TempDir;
using impreg::testing::toy_dataset;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const std::string out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
  const std::string cmd = env + " '" + std::string(IMPREG_CLI_PATH) + "' " + args + " > '" + out + "' 2> '" + err + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_bytes(out);
  r.err = read_bytes(err);
  return r;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

Matrix read_matrix(const std::string& path) {
  const auto rows = read_csv(path);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = std::stod(rows[i][j]);
  return m;
}

void write_io(const std::string& path, const Vector& u, const Vector& y) {
  std::ofstream out(path);
  out << "# u,y\n";
  for (Eigen::Index t = 0; t < u.size(); ++t) out << format_double(u[t]) << ',' << format_double(y[t]) << '\n';
}

/// Toy train/val files and a tiny model trained from them (N=40, n=10).
struct Fixture {
  TempDir dir{"cli"};
  std::string train, val, model;

  Fixture() {
    train = dir.file("train.irds");
    val = dir.file("val.irds");
    model = dir.file("m.irnn");
    save_dataset(toy_dataset(96, 40, 10, 1), train);
    save_dataset(toy_dataset(24, 40, 10, 2), val);
  }

  CliRun train_model(const std::string& extra = "", const std::string& globals = "") {
    return cli(dir, globals + " --seed 1 --deterministic train --train '" + train + "' --val '" + val + "' --out '" + model +
                        "' --epochs 2 --batch 32 --hidden 8,6,5 --nm 4 " + extra);
  }
};

}  // namespace

TEST(Cli, HelpAndBadUsage) {
  TempDir dir("usage");
  EXPECT_EQ(cli(dir, "--help").code, 0);
  EXPECT_EQ(cli(dir, "").code, 2);
  EXPECT_EQ(cli(dir, "train --no-such-flag").code, 2);
  EXPECT_EQ(cli(dir, "gen-data --train-m notanumber").code, 2);
  const CliRun r = cli(dir, "evaluate --val '" + dir.file("missing.irds") + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.irds"), std::string::npos);
}

TEST(Cli, GenDataIsDeterministic) {
  TempDir dir("gen");
  const std::string args = " gen-data --train-m 3 --val-m 2 --out ";
  ASSERT_EQ(cli(dir, "--seed 5" + args + "'" + dir.file("a") + "'").code, 0);
  ASSERT_EQ(cli(dir, "--seed 5 --threads 1" + args + "'" + dir.file("b") + "'").code, 0);
  ASSERT_EQ(cli(dir, "--seed 6" + args + "'" + dir.file("c") + "'").code, 0);
  EXPECT_EQ(read_bytes(dir.file("a/train.irds")), read_bytes(dir.file("b/train.irds")));
  EXPECT_EQ(read_bytes(dir.file("a/val.irds")), read_bytes(dir.file("b/val.irds")));
  EXPECT_NE(read_bytes(dir.file("a/train.irds")), read_bytes(dir.file("c/train.irds")));
  EXPECT_NE(read_bytes(dir.file("a/train.irds")), read_bytes(dir.file("a/val.irds")));
  const Dataset ds = load_dataset(dir.file("a/train.irds"));
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.meta.N, 125u);
  EXPECT_EQ(ds.meta.n, 50u);
  EXPECT_EQ(cli(dir, "gen-data --out '" + dir.file("d") + "'").code, 2);
  EXPECT_EQ(cli(dir, "gen-data --train-m 1 --snr-min 5 --snr-max 1 --out '" + dir.file("d") + "'").code, 2);
}

TEST(Cli, TrainIsDeterministicAndResumes) {
  Fixture f;
  ASSERT_EQ(f.train_model().code, 0);
  const std::string first = read_bytes(f.model);
  const std::string log1 = read_bytes(f.model + ".log.json");
  ASSERT_EQ(f.train_model().code, 0);
  EXPECT_EQ(read_bytes(f.model), first);
  EXPECT_EQ(read_bytes(f.model + ".log.json"), log1);
  ASSERT_EQ(f.train_model("", "--threads 3").code, 0);
  EXPECT_EQ(read_bytes(f.model), first);

  const auto log = nlohmann::json::parse(log1);
  ASSERT_EQ(log["epochs"].size(), 3u);
  EXPECT_EQ(log["epochs"][0]["epoch"], 0);

  const Model m = load_model(f.model);
  EXPECT_EQ(m.config().n_m, 4);
  EXPECT_EQ(m.config().N, 40);

  const std::string resumed = f.dir.file("r.irnn");
  ASSERT_EQ(cli(f.dir, "--seed 2 --deterministic train --train '" + f.train + "' --val '" + f.val + "' --out '" +
                           resumed + "' --resume '" + f.model + "' --log '" + f.model + ".log.json' --epochs 2")
                .code,
            0);
  const auto log2 = nlohmann::json::parse(read_bytes(f.model + ".log.json"));
  ASSERT_EQ(log2["epochs"].size(), 5u);
  for (int e = 0; e < 5; ++e) EXPECT_EQ(log2["epochs"][e]["epoch"], e);
  EXPECT_EQ(log2["runs"].size(), 2u);
  EXPECT_EQ(load_model(resumed).config().n_m, 4);
}

TEST(Cli, TrainRejectsMismatchedValidation) {
  Fixture f;
  save_dataset(toy_dataset(4, 50, 10, 3), f.val);
  EXPECT_EQ(f.train_model().code, 2);
}

TEST(Cli, EvaluateLeastSquaresAndCsv) {
  Fixture f;
  const std::string before = read_bytes(f.val);
  const CliRun r = cli(f.dir, "evaluate --val '" + f.val + "' --methods ls,or --report '" + f.dir.file("rep.json") +
                               "' --csv '" + f.dir.file("rec.csv") + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_bytes(f.val), before);
  const auto rep = nlohmann::json::parse(read_bytes(f.dir.file("rep.json")));
  ASSERT_EQ(rep["reports"].size(), 2u);
  EXPECT_NEAR(rep["reports"][0]["S_low"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(rep["reports"][0]["S_high"].get<double>(), 1.0, 1e-12);
  EXPECT_LT(rep["reports"][1]["S_all"].get<double>(), 1.0);
  const auto rows = read_csv(f.dir.file("rec_ls.csv"));
  ASSERT_EQ(rows.size(), 25u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"id", "snr", "err_method", "err_ls", "ratio"}));
  EXPECT_FALSE(read_bytes(f.dir.file("rec_or.csv")).empty());
}

TEST(Cli, EvaluateArgumentErrors) {
  Fixture f;
  EXPECT_EQ(cli(f.dir, "evaluate --val '" + f.val + "' --methods dl").code, 2);
  EXPECT_EQ(cli(f.dir, "evaluate --val '" + f.val + "' --methods ls,bogus").code, 2);
}

TEST(Cli, EvaluateWithModel) {
  Fixture f;
  ASSERT_EQ(f.train_model().code, 0);
  const CliRun r = cli(f.dir, "evaluate --val '" + f.val + "' --methods dl --model '" + f.model + "'");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("dl"), std::string::npos);
}

TEST(Cli, EstimateRecoversFiniteImpulseResponse) {
  TempDir dir("estimate");
  Rng rng = derive_rng(4, 0);
  const Vector theta = (Vector(3) << 0.8, -0.4, 0.1).finished();
  const Vector u = standard_normal_vector(200, rng);
  Vector y = Vector::Zero(200);
  for (int t = 0; t < 200; ++t)
    for (int k = 1; k <= 3 && k <= t; ++k) y[t] += theta[k - 1] * u[t - k];
  write_io(dir.file("io.csv"), u, y);
  const CliRun r = cli(dir, "estimate --input '" + dir.file("io.csv") + "' --n 3 --gp --out '" + dir.file("th.csv") + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(dir.file("th.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "theta_ls", "theta_gp"}));
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(rows[k + 1][0], std::to_string(k + 1));
    EXPECT_NEAR(std::stod(rows[k + 1][1]), theta[k], 1e-6);
  }
}

TEST(Cli, EstimateWithModel) {
  Fixture f;
  ASSERT_EQ(f.train_model().code, 0);
  Rng rng = derive_rng(5, 0);
  const Vector u = standard_normal_vector(60, rng);
  const Vector y = 5.0 * standard_normal_vector(60, rng).array() + 3.0;
  write_io(f.dir.file("io.csv"), u, y);
  const CliRun r = cli(f.dir, "estimate --input '" + f.dir.file("io.csv") + "' --model '" + f.model + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "index,theta_ls,theta_dl");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 10);

  write_io(f.dir.file("short.csv"), u.head(20), y.head(20));
  EXPECT_EQ(cli(f.dir, "estimate --input '" + f.dir.file("short.csv") + "' --model '" + f.model + "'").code, 2);
}

TEST(Cli, EstimateInputErrors) {
  TempDir dir("badinput");
  write_io(dir.file("const.csv"), Vector::Ones(100), Vector::LinSpaced(100, 0.0, 1.0));
  EXPECT_EQ(cli(dir, "estimate --input '" + dir.file("const.csv") + "' --n 5").code, 2);
  {
    std::ofstream out(dir.file("bad.csv"));
    out << "1,2\n3,4\nx,5\n";
  }
  const CliRun r = cli(dir, "estimate --input '" + dir.file("bad.csv") + "' --n 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.csv:3"), std::string::npos) << r.err;
}

TEST(Cli, InspectModelAndExample) {
  Fixture f;
  ASSERT_EQ(f.train_model().code, 0);
  const std::string out = f.dir.file("insp");
  const std::string base = "inspect --model '" + f.model + "' --data '" + f.val + "' --out '" + out + "'";
  ASSERT_EQ(cli(f.dir, base + " --top 3 --example 2").code, 0);
  for (int r = 1; r <= 3; ++r) {
    const Matrix m = read_matrix(out + "/s_top" + std::to_string(r) + ".csv");
    EXPECT_EQ(m.rows(), 10);
    EXPECT_NEAR(m.cwiseAbs().maxCoeff(), 1.0, 1e-15);
  }
  const auto idx = read_csv(out + "/top_weights.csv");
  ASSERT_EQ(idx.size(), 4u);
  EXPECT_GE(std::stod(idx[1][2]), std::stod(idx[2][2]));
  const auto est = read_csv(out + "/estimates.csv");
  EXPECT_EQ(est[0], (std::vector<std::string>{"index", "gp", "dl", "ls", "true"}));
  EXPECT_EQ(est.size(), 11u);
  EXPECT_EQ(read_matrix(out + "/P_DL.csv").rows(), 10);

  EXPECT_EQ(cli(f.dir, base + " --example 24").code, 2);
  EXPECT_EQ(cli(f.dir, base + " --top 5").code, 2);
  EXPECT_EQ(cli(f.dir, "inspect --top 1 --out '" + out + "'").code, 2);
}

TEST(Cli, InspectSystem) {
  TempDir dir("system");
  const CliRun r = cli(dir, "--seed 3 inspect --system --order 6 --fir-order 20 --out '" + dir.file("sys") + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const Matrix A = read_matrix(dir.file("sys/A.csv"));
  EXPECT_EQ(A.rows(), 6);
  EXPECT_EQ(A.cols(), 6);
  EXPECT_EQ(read_matrix(dir.file("sys/B.csv")).rows(), 6);
  EXPECT_EQ(read_matrix(dir.file("sys/C.csv")).cols(), 6);
  EXPECT_EQ(read_csv(dir.file("sys/impulse_response.csv")).size(), 21u);
}

TEST(Cli, ThreadsFromEnvironment) {
  TempDir dir("env");
  ASSERT_EQ(cli(dir, "--seed 8 gen-data --train-m 2 --out '" + dir.file("a") + "'", "IMPREG_THREADS=1").code, 0);
  ASSERT_EQ(cli(dir, "--seed 8 gen-data --train-m 2 --out '" + dir.file("b") + "'", "IMPREG_THREADS=2").code, 0);
  EXPECT_EQ(read_bytes(dir.file("a/train.irds")), read_bytes(dir.file("b/train.irds")));
}
