// impreg command-line harness: gen-data, train, evaluate, estimate, inspect.
//
// Exit codes: 0 success, 1 internal or numerical failure, 2 usage or input
// error.

#include <impreg.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace impreg;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool deterministic = false;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::ofstream open_text(const std::string& path) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  return out;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out = open_text(path);
  out << j.dump(2) << '\n';
}

void write_matrix_csv(const Matrix& m, const std::string& path) {
  std::ofstream out = open_text(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << '\n';
  }
}

/// Two numeric columns (u, y) separated by commas and/or whitespace. Blank
/// lines and lines starting with '#' are skipped.
std::pair<Vector, Vector> read_io_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::vector<double> u, y;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    const auto first = line.find_first_not_of(" \r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<double> values;
    for (std::string tok; fields >> tok;) {
      if (tok == "\r") continue;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
        throw Error(ErrorCode::Parse, path + ":" + std::to_string(lineno) + ": not a number: '" + tok + "'");
      values.push_back(v);
    }
    if (values.size() != 2)
      throw Error(ErrorCode::Parse, path + ":" + std::to_string(lineno) + ": expected 2 columns, found " +
                                        std::to_string(values.size()));
    u.push_back(values[0]);
    y.push_back(values[1]);
  }
  return {Eigen::Map<Vector>(u.data(), static_cast<Eigen::Index>(u.size())),
          Eigen::Map<Vector>(y.data(), static_cast<Eigen::Index>(y.size()))};
}

std::shared_ptr<const Model> load_model_ptr(const std::string& path) {
  return std::make_shared<const Model>(load_model(path));
}

// --- gen-data ---------------------------------------------------------------

struct GenOptions {
  std::size_t train_m = 0;
  std::size_t val_m = 0;
  std::string out = ".";
  GeneratorConfig gen;
};

std::vector<double> deciles(std::vector<double> v) {
  std::vector<double> q;
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  for (int k = 0; k <= 10; ++k) {
    const double pos = k / 10.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    q.push_back(v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]));
  }
  return q;
}

std::string cell(double v, int width, int precision) {
  std::ostringstream os;
  if (std::isfinite(v))
    os << std::fixed << std::setprecision(precision) << std::setw(width) << v;
  else
    os << std::setw(width) << "n/a";
  return os.str();
}

void summarize(const std::string& name, const Dataset& ds, const std::string& path) {
  std::vector<double> snr;
  std::size_t low = 0;
  for (const Example& ex : ds.examples) {
    snr.push_back(ex.snr);
    if (ex.snr < kSnrSplit) ++low;
  }
  std::cout << name << ": M=" << ds.size() << " N=" << ds.meta.N << " n=" << ds.meta.n << " -> " << path << '\n';
  std::cout << "  SNR<5.5: " << low << "  SNR>5.5: " << ds.size() - low << '\n';
  const auto q = deciles(snr);
  if (!q.empty()) {
    std::cout << "  SNR deciles:";
    for (double v : q) std::cout << ' ' << cell(v, 0, 2);
    std::cout << '\n';
  }
}

int run_gen_data(const Globals& g, const GenOptions& o) {
  o.gen.validate();
  if (o.train_m == 0 && o.val_m == 0) throw Error(ErrorCode::InvalidArgument, "nothing to generate: set --train-m and/or --val-m");
  fs::create_directories(o.out);
  Rng seeds = derive_rng(g.seed, 0x67656eULL);
  const std::uint64_t train_seed = seeds();
  const std::uint64_t val_seed = seeds();
  if (o.train_m) {
    const Dataset ds = generate_dataset(o.train_m, o.gen, train_seed);
    const std::string path = (fs::path(o.out) / "train.irds").string();
    save_dataset(ds, path);
    summarize("train", ds, path);
  }
  if (o.val_m) {
    const Dataset ds = generate_dataset(o.val_m, o.gen, val_seed);
    const std::string path = (fs::path(o.out) / "val.irds").string();
    save_dataset(ds, path);
    summarize("val", ds, path);
  }
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainOptions {
  std::string train_path;
  std::string val_path;
  std::string out = "model.irnn";
  std::string log;
  std::string resume;
  std::string hidden = "600,300,200";
  TrainConfig cfg;
};

json epoch_json(const EpochRecord& r, bool with_time) {
  json j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"improved", r.improved}};
  if (with_time) j["seconds"] = r.seconds;
  return j;
}

int run_train(const Globals& g, TrainOptions o) {
  TrainConfig cfg = o.cfg;
  cfg.seed = g.seed;
  cfg.deterministic = g.deterministic;
  const auto widths = split(o.hidden, ',');
  if (widths.size() != 3) throw Error(ErrorCode::InvalidArgument, "--hidden needs three comma-separated widths");
  for (int l = 0; l < 3; ++l) cfg.hidden[l] = std::stoi(widths[l]);
  const std::string log_path = o.log.empty() ? o.out + ".log.json" : o.log;

  const Dataset train_raw = load_dataset(o.train_path);
  const Dataset val_raw = o.val_path.empty() ? Dataset{} : load_dataset(o.val_path);
  if (train_raw.size() == 0) throw Error(ErrorCode::EmptyDataset, "training set '" + o.train_path + "' is empty");
  if (val_raw.size() && (val_raw.meta.N != train_raw.meta.N || val_raw.meta.n != train_raw.meta.n))
    throw Error(ErrorCode::InvalidArgument, "training and validation sets disagree on N or n");
  const NormalizedDataset tn = normalize_dataset(train_raw);
  NormalizedDataset vn = normalize_dataset(val_raw);
  vn.data.meta = train_raw.meta;
  if (tn.skipped || vn.skipped)
    std::cout << "skipped degenerate examples: train " << tn.skipped << ", val " << vn.skipped << '\n';

  std::optional<NetParams> initial;
  ThetaStats stats;
  json log_json = {{"epochs", json::array()}, {"runs", json::array()}};
  int epoch_offset = 0;
  if (!o.resume.empty()) {
    Model m = load_model(o.resume);
    const NetConfig net = m.config();
    if (net.N != static_cast<int>(train_raw.meta.N) || net.n != static_cast<int>(train_raw.meta.n))
      throw Error(ErrorCode::InvalidArgument, "model and dataset disagree on N or n");
    cfg.hidden = net.hidden;
    cfg.n_m = net.n_m;
    stats = m.stats;
    initial = std::move(m.params);
    if (std::ifstream prev(log_path); prev) {
      try {
        log_json = json::parse(prev);
        if (!log_json["epochs"].empty()) epoch_offset = log_json["epochs"].back().value("epoch", 0);
      } catch (const json::exception&) {
        throw Error(ErrorCode::Parse, "cannot parse existing log '" + log_path + "'");
      }
    }
  } else {
    stats = compute_theta_stats(tn.data);
  }
  const PreparedSet train_set = prepare(tn.data, stats);
  const PreparedSet val_set = prepare(vn.data, stats);

  const bool timed = !g.deterministic;
  auto on_epoch = [&](const EpochRecord& r) {
    if (epoch_offset && r.epoch == 0) return;
    std::cout << "epoch " << r.epoch + epoch_offset << "  train " << r.train_loss << "  val " << r.val_loss
              << (r.improved ? "  *" : "");
    if (timed) {
      std::ostringstream secs;
      secs << std::fixed << std::setprecision(1) << r.seconds;
      std::cout << "  (" << secs.str() << " s)";
    }
    std::cout << std::endl;
  };
  const TrainResult res = train(train_set, val_set, stats, cfg, std::move(initial), on_epoch);
  save_model(res.model, o.out);

  for (EpochRecord r : res.log.epochs) {
    if (epoch_offset && r.epoch == 0) continue;
    r.epoch += epoch_offset;
    log_json["epochs"].push_back(epoch_json(r, timed));
  }
  json run = {{"seed", g.seed},
              {"resumed_from", o.resume.empty() ? json(nullptr) : json(o.resume)},
              {"first_epoch", epoch_offset},
              {"best_epoch", res.log.best_epoch + epoch_offset},
              {"best_val_loss", res.log.best_val_loss},
              {"early_stopped", res.log.early_stopped},
              {"train_examples", train_set.size()},
              {"val_examples", val_set.size()},
              {"config",
               {{"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size},
                {"max_epochs", cfg.max_epochs},
                {"dropout", cfg.dropout},
                {"patience", cfg.patience},
                {"hidden", cfg.hidden},
                {"n_m", cfg.n_m},
                {"deterministic", cfg.deterministic}}}};
  if (timed) run["wall_seconds"] = res.log.wall_seconds;
  log_json["runs"].push_back(run);
  log_json["best_epoch"] = res.log.best_epoch + epoch_offset;
  log_json["best_val_loss"] = res.log.best_val_loss;
  log_json["early_stopped"] = res.log.early_stopped;
  write_json(log_json, log_path);
  std::cout << "best epoch " << res.log.best_epoch + epoch_offset << " (val " << res.log.best_val_loss << ")"
            << (res.log.early_stopped ? ", early stopped" : "") << "\nmodel -> " << o.out << "\nlog -> " << log_path
            << '\n';
  return 0;
}

// --- evaluate -------------------------------------------------------------------

struct EvalOptions {
  std::string val_path;
  std::string model;
  std::string methods;  ///< empty: ls,or,gp plus dl when a model is given
  std::string report;
  std::string csv;
};

std::string csv_path_for(const std::string& base, const std::string& method, bool several) {
  if (!several) return base;
  const fs::path p(base);
  return (p.parent_path() / (p.stem().string() + "_" + method + p.extension().string())).string();
}

int run_evaluate(const Globals&, const EvalOptions& o) {
  const auto names = split(o.methods.empty() ? (o.model.empty() ? "ls,or,gp" : "ls,or,gp,dl") : o.methods, ',');
  if (names.empty()) throw Error(ErrorCode::InvalidArgument, "--methods is empty");
  std::vector<Method> methods;
  std::shared_ptr<const Model> model;
  for (const std::string& name : names) {
    if (name == "ls")
      methods.push_back(ls_method());
    else if (name == "or")
      methods.push_back(oracle_method());
    else if (name == "gp")
      methods.push_back(gp_method());
    else if (name == "dl") {
      if (o.model.empty()) throw Error(ErrorCode::InvalidArgument, "method dl needs --model");
      if (!model) model = load_model_ptr(o.model);
      methods.push_back(dl_method(model));
    } else
      throw Error(ErrorCode::InvalidArgument, "unknown method '" + name + "' (expected ls, or, gp, dl)");
  }

  const Dataset raw = load_dataset(o.val_path);
  if (raw.size() == 0) throw Error(ErrorCode::EmptyDataset, "validation set '" + o.val_path + "' is empty");
  if (model && (model->config().N != static_cast<int>(raw.meta.N) || model->config().n != static_cast<int>(raw.meta.n)))
    throw Error(ErrorCode::InvalidArgument, "model and dataset disagree on N or n");
  const NormalizedDataset nd = normalize_dataset(raw);
  if (nd.skipped) std::cout << "skipped degenerate examples: " << nd.skipped << '\n';

  json reports = json::array();
  std::cout << std::left << std::setw(36) << "method" << std::right << std::setw(12) << "S SNR<5.5" << std::setw(12)
            << "S SNR>5.5" << std::setw(12) << "S~ SNR<5.5" << std::setw(12) << "S~ SNR>5.5" << std::setw(9)
            << "failed" << '\n';
  for (const Method& m : methods) {
    const EvalReport rep = evaluate_method(m, nd.data);
    json j = to_json(rep);
    j["dataset"] = o.val_path;
    j["skipped_degenerate"] = nd.skipped;
    reports.push_back(j);
    std::cout << std::left << std::setw(36) << (m.name + "  " + m.label) << std::right << cell(rep.low.S, 12, 4)
              << cell(rep.high.S, 12, 4) << cell(rep.low.Stilde, 12, 1) << cell(rep.high.Stilde, 12, 1)
              << std::setw(9) << rep.failures << '\n';
    if (!o.csv.empty()) {
      std::ofstream out = open_text(csv_path_for(o.csv, m.name, methods.size() > 1));
      write_records_csv(rep, out);
    }
  }
  std::cout << "examples: " << nd.data.size() << '\n';
  if (!o.report.empty()) write_json({{"reports", reports}}, o.report);
  return 0;
}

// --- estimate -------------------------------------------------------------------

struct EstimateOptions {
  std::string input;
  std::string model;
  std::string out;
  int n = 50;
  bool gp = false;
};

int run_estimate(const Globals&, const EstimateOptions& o) {
  const auto [u, y] = read_io_file(o.input);
  std::shared_ptr<const Model> model;
  Eigen::Index n = o.n;
  if (!o.model.empty()) {
    model = load_model_ptr(o.model);
    n = model->config().n;
  }
  if (u.size() <= n)
    throw Error(ErrorCode::SequenceTooShort, "'" + o.input + "' has " + std::to_string(u.size()) +
                                                 " samples; more than " + std::to_string(n) + " are needed");
  const ScaleRecord scale = compute_scale(u, y);
  const Vector theta_ls = least_squares(build_regression(u, y, n));

  Vector theta_dl, theta_gp;
  if (model) {
    const Eigen::Index N = model->config().N;
    if (u.size() < N)
      throw Error(ErrorCode::SequenceTooShort, "the model needs " + std::to_string(N) + " samples, '" + o.input +
                                                   "' has " + std::to_string(u.size()));
    const Prediction pred = predict_P(*model, u.tail(N), y.tail(N));
    theta_dl = pred.theta_hat_raw();
  }
  if (o.gp) {
    const Vector un = (u.array() - scale.mu_u) / scale.s_u;
    const Vector yn = (y.array() - scale.mu_y) / scale.s_y;
    const GPFit fit = fit_empirical_bayes(un, yn, n);
    theta_gp = scale.denormalize_theta(estimate(fit.P, build_regression(un, yn, n)));
  }

  std::ofstream file;
  if (!o.out.empty()) file = open_text(o.out);
  std::ostream& out = o.out.empty() ? std::cout : file;
  out << "index,theta_ls" << (model ? ",theta_dl" : "") << (o.gp ? ",theta_gp" : "") << '\n';
  for (Eigen::Index k = 0; k < n; ++k) {
    out << k + 1 << ',' << format_double(theta_ls[k]);
    if (model) out << ',' << format_double(theta_dl[k]);
    if (o.gp) out << ',' << format_double(theta_gp[k]);
    out << '\n';
  }
  return 0;
}

// --- inspect --------------------------------------------------------------------

struct InspectOptions {
  bool system = false;
  int order = 30;
  int fir_order = 50;
  std::string model;
  std::string data;
  int top = 0;
  long long example = -1;
  std::string out = "inspect";
};

Matrix rescale_unit(const Matrix& m) {
  const double peak = m.cwiseAbs().maxCoeff();
  return peak > 0.0 ? Matrix(m / peak) : m;
}

void inspect_system(const Globals& g, const InspectOptions& o) {
  SystemConfig sc;
  sc.order = o.order;
  sc.fir_order = o.fir_order;
  Rng rng = derive_rng(g.seed, 0x737973ULL);
  const SampledSystem s = sample_true_system(sc, rng);
  const fs::path dir(o.out);
  write_matrix_csv(s.continuous.A, (dir / "A.csv").string());
  write_matrix_csv(s.continuous.B, (dir / "B.csv").string());
  write_matrix_csv(s.continuous.C, (dir / "C.csv").string());
  write_matrix_csv(Matrix::Constant(1, 1, s.continuous.D), (dir / "D.csv").string());
  std::ofstream ir = open_text((dir / "impulse_response.csv").string());
  ir << "k,g\n";
  for (Eigen::Index k = 0; k < s.theta0.coefficients.size(); ++k)
    ir << k + 1 << ',' << format_double(s.theta0.coefficients[k]) << '\n';
  std::cout << "system of order " << o.order << ": bandwidth " << s.bandwidth << " rad/s, sample time "
            << s.discrete.sample_time << " s -> " << dir.string() << '\n';
}

void inspect_top(const InspectOptions& o, const Model& model, const Dataset& normalized) {
  const NetConfig cfg = model.config();
  if (o.top > cfg.n_m) throw Error(ErrorCode::IndexOutOfRange, "--top exceeds the number of matrices (" + std::to_string(cfg.n_m) + ")");
  Vector avg = Vector::Zero(cfg.n_m);
  for (const Example& ex : normalized.examples) avg += predict_normalized(model, ex.u, ex.y).weights;
  avg /= static_cast<double>(std::max<std::size_t>(1, normalized.size()));
  std::vector<int> order(cfg.n_m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return avg[a] > avg[b]; });

  const fs::path dir(o.out);
  std::ofstream index = open_text((dir / "top_weights.csv").string());
  index << "rank,matrix,avg_weight,file\n";
  for (int r = 0; r < o.top; ++r) {
    const int i = order[r];
    const Vector s = model.params.S.col(i);
    const std::string name = "s_top" + std::to_string(r + 1) + ".csv";
    write_matrix_csv(rescale_unit(s * s.transpose()), (dir / name).string());
    index << r + 1 << ',' << i << ',' << format_double(avg[i]) << ',' << name << '\n';
  }
  std::cout << o.top << " matrices -> " << dir.string() << '\n';
}

void inspect_example(const InspectOptions& o, const Model& model, const Dataset& normalized) {
  if (o.example < 0 || static_cast<std::size_t>(o.example) >= normalized.size())
    throw Error(ErrorCode::IndexOutOfRange, "example " + std::to_string(o.example) + " is outside [0, " +
                                                std::to_string(normalized.size()) + ")");
  const Example& ex = normalized.examples[static_cast<std::size_t>(o.example)];
  const Eigen::Index n = ex.theta0.size();
  const RegressionData rd = build_regression(ex.u, ex.y, n);
  const Vector ls = least_squares(rd);
  const RegMatrix p_or = optimal_P(ex.theta0, ex.sigma2);
  const GPFit gp = fit_empirical_bayes(ex.u, ex.y, n);
  const Prediction dl = predict_normalized(model, ex.u, ex.y);
  const Vector th_gp = estimate(gp.P, rd);

  const fs::path dir(o.out);
  write_matrix_csv(p_or.P, (dir / "P_OR.csv").string());
  write_matrix_csv(dl.P.P, (dir / "P_DL.csv").string());
  write_matrix_csv(gp.P.P, (dir / "P_GP.csv").string());
  std::ofstream curves = open_text((dir / "estimates.csv").string());
  curves << "index,gp,dl,ls,true\n";
  for (Eigen::Index k = 0; k < n; ++k)
    curves << k + 1 << ',' << format_double(th_gp[k]) << ',' << format_double(dl.theta_hat_norm[k]) << ','
           << format_double(ls[k]) << ',' << format_double(ex.theta0[k]) << '\n';
  std::cout << "example " << o.example << " (snr " << ex.snr << ") -> " << dir.string() << '\n';
}

int run_inspect(const Globals& g, const InspectOptions& o) {
  if (!o.system && o.top <= 0 && o.example < 0)
    throw Error(ErrorCode::InvalidArgument, "choose at least one of --system, --top K, --example ID");
  if (o.system) inspect_system(g, o);
  if (o.top > 0 || o.example >= 0) {
    if (o.model.empty() || o.data.empty()) throw Error(ErrorCode::InvalidArgument, "--top and --example need --model and --data");
    const Model model = load_model(o.model);
    const Dataset raw = load_dataset(o.data);
    if (model.config().N != static_cast<int>(raw.meta.N) || model.config().n != static_cast<int>(raw.meta.n))
      throw Error(ErrorCode::InvalidArgument, "model and dataset disagree on N or n");
    const NormalizedDataset nd = normalize_dataset(raw);
    if (o.top > 0) inspect_top(o, model, nd.data);
    if (o.example >= 0) inspect_example(o, model, nd.data);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"impreg: learned regularization for FIR impulse-response estimation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; command-line flags take precedence");

  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (default: IMPREG_THREADS or all cores)");
  app.add_flag("--deterministic", g.deterministic, "thread-count independent reductions, no timings in outputs");

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "simulate training/validation datasets");
  gen_cmd->add_option("--train-m", gen.train_m, "training examples");
  gen_cmd->add_option("--val-m", gen.val_m, "validation examples");
  gen_cmd->add_option("--out", gen.out, "output directory (train.irds, val.irds)")->capture_default_str();
  gen_cmd->add_option("--order", gen.gen.order, "system order")->capture_default_str();
  gen_cmd->add_option("--N", gen.gen.N, "sequence length")->capture_default_str();
  gen_cmd->add_option("--n", gen.gen.n, "FIR order")->capture_default_str();
  gen_cmd->add_option("--snr-min", gen.gen.snr_min)->capture_default_str();
  gen_cmd->add_option("--snr-max", gen.gen.snr_max)->capture_default_str();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train the regularization network");
  train_cmd->add_option("--train", tr.train_path, "training dataset")->required();
  train_cmd->add_option("--val", tr.val_path, "validation dataset for early stopping");
  train_cmd->add_option("--out", tr.out, "model file")->capture_default_str();
  train_cmd->add_option("--log", tr.log, "JSON log (default <out>.log.json)");
  train_cmd->add_option("--resume", tr.resume, "continue from this model");
  train_cmd->add_option("--epochs", tr.cfg.max_epochs, "maximum epochs")->capture_default_str();
  train_cmd->add_option("--batch", tr.cfg.batch_size, "minibatch size")->capture_default_str();
  train_cmd->add_option("--lr", tr.cfg.learning_rate, "Adam step size")->capture_default_str();
  train_cmd->add_option("--patience", tr.cfg.patience, "early-stopping patience")->capture_default_str();
  train_cmd->add_option("--dropout", tr.cfg.dropout, "dropout probability")->capture_default_str();
  train_cmd->add_option("--hidden", tr.hidden, "hidden widths a,b,c")->capture_default_str();
  train_cmd->add_option("--nm", tr.cfg.n_m, "number of rank-one matrices")->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "score methods with S and S~ split at SNR 5.5");
  eval_cmd->add_option("--val", ev.val_path, "validation dataset")->required();
  eval_cmd->add_option("--methods", ev.methods, "subset of ls,or,gp,dl (default ls,or,gp, plus dl with --model)");
  eval_cmd->add_option("--model", ev.model, "model file (for dl)");
  eval_cmd->add_option("--report", ev.report, "JSON report");
  eval_cmd->add_option("--csv", ev.csv, "per-example CSV (suffixed _<method> when several)");

  EstimateOptions es;
  auto* est_cmd = app.add_subcommand("estimate", "estimate an impulse response from a u,y file");
  est_cmd->add_option("--input", es.input, "two-column u,y file")->required();
  est_cmd->add_option("--model", es.model, "model file (adds theta_dl)");
  est_cmd->add_option("--n", es.n, "FIR order when no model is given")->capture_default_str();
  est_cmd->add_flag("--gp", es.gp, "add the empirical-Bayes estimate");
  est_cmd->add_option("--out", es.out, "output CSV (default stdout)");

  InspectOptions in;
  auto* insp_cmd = app.add_subcommand("inspect", "dump systems, learned matrices and per-example comparisons");
  insp_cmd->add_flag("--system", in.system, "sample one system and dump A, B, C, D, impulse response");
  insp_cmd->add_option("--order", in.order, "system order for --system")->capture_default_str();
  insp_cmd->add_option("--fir-order", in.fir_order, "impulse response length for --system")->capture_default_str();
  insp_cmd->add_option("--model", in.model, "model file");
  insp_cmd->add_option("--data", in.data, "reference dataset");
  insp_cmd->add_option("--top", in.top, "dump the K rank-one matrices with the largest average weight");
  insp_cmd->add_option("--example", in.example, "dump P_OR, P_DL, P_GP and estimates for this example");
  insp_cmd->add_option("--out", in.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    set_thread_count(g.threads);
    if (gen_cmd->parsed()) return run_gen_data(g, gen);
    if (train_cmd->parsed()) return run_train(g, tr);
    if (eval_cmd->parsed()) return run_evaluate(g, ev);
    if (est_cmd->parsed()) return run_estimate(g, es);
    if (insp_cmd->parsed()) return run_inspect(g, in);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return is_input_error(e.code()) ? 2 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid value: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
