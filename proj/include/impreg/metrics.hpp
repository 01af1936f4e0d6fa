#pragma once

// Normalized estimation-error metrics and per-method evaluation sweeps.

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "impreg/dataset.hpp"
#include "impreg/gp_reg.hpp"
#include "impreg/model.hpp"
#include "impreg/parallel.hpp"
#include "impreg/regls.hpp"

namespace impreg {

inline constexpr double kMinDenominator = 1e-20;
inline constexpr double kSnrSplit = 5.5;

struct MetricResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  /// One entry per example; NaN where the example was excluded.
  std::vector<double> terms;
  std::vector<std::size_t> excluded;
  std::size_t used = 0;
};

/// S = mean_i ||theta_i - theta0_i||^2 / ||theta_LS_i - theta0_i||^2.
/// Examples with an LS error below 1e-20 are excluded and listed.
inline MetricResult score_S(const std::vector<Vector>& estimates, const std::vector<Vector>& ls_estimates,
                            const std::vector<Vector>& truths) {
  if (estimates.size() != truths.size() || ls_estimates.size() != truths.size())
    throw Error(ErrorCode::InvalidArgument, "score_S inputs are not aligned");
  MetricResult r;
  r.terms.assign(truths.size(), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const double den = (ls_estimates[i] - truths[i]).squaredNorm();
    if (!(den >= kMinDenominator)) {
      r.excluded.push_back(i);
      continue;
    }
    r.terms[i] = (estimates[i] - truths[i]).squaredNorm() / den;
    sum += r.terms[i];
    ++r.used;
  }
  if (r.used) r.value = sum / static_cast<double>(r.used);
  return r;
}

/// Model-fit average: mean_i 100 (1 - ||theta_i - theta0_i||^2 / ||theta0_i - mean(theta0_i)||^2).
inline MetricResult score_Stilde(const std::vector<Vector>& estimates, const std::vector<Vector>& truths) {
  if (estimates.size() != truths.size()) throw Error(ErrorCode::InvalidArgument, "score_Stilde inputs are not aligned");
  MetricResult r;
  r.terms.assign(truths.size(), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const double den = (truths[i].array() - truths[i].mean()).square().sum();
    if (!(den >= kMinDenominator)) {
      r.excluded.push_back(i);
      continue;
    }
    r.terms[i] = 100.0 * (1.0 - (estimates[i] - truths[i]).squaredNorm() / den);
    sum += r.terms[i];
    ++r.used;
  }
  if (r.used) r.value = sum / static_cast<double>(r.used);
  return r;
}

// --- methods -------------------------------------------------------------

/// Produces an estimate for one normalized example given its regression data
/// and LS estimate.
struct Method {
  std::string name;   ///< ls, or, gp, dl
  std::string label;  ///< human-readable
  std::function<Vector(const Example& ex_norm, const RegressionData& rd, const Vector& theta_ls)> estimate;
};

inline Method ls_method() {
  return {"ls", "least squares", [](const Example&, const RegressionData&, const Vector& theta_ls) { return theta_ls; }};
}

inline Method oracle_method() {
  return {"or", "oracle (lower bound)", [](const Example& ex, const RegressionData& rd, const Vector&) {
            return estimate(optimal_P(ex.theta0, ex.sigma2), rd);
          }};
}

inline Method gp_method(GPSearchBox box = {}) {
  return {"gp", "gaussian process (empirical Bayes)", [box](const Example& ex, const RegressionData& rd, const Vector&) {
            const GPFit fit = fit_empirical_bayes(ex.u, ex.y, rd.order(), box);
            return estimate(fit.P, rd);
          }};
}

inline Method dl_method(std::shared_ptr<const Model> model) {
  return {"dl", "deep learning", [model](const Example& ex, const RegressionData& rd, const Vector& theta_ls) {
            const Vector x = network_input(ex.u, ex.y, normalize_theta_ls(theta_ls, model->stats));
            const Matrix mask = Matrix::Ones(model->params.S.cols(), 1);
            const ForwardTrace t = forward_with_mask(model->params, x, {rd}, mask);
            return Vector(t.Theta.col(0));
          }};
}

struct ExampleRecord {
  std::size_t id = 0;
  double snr = 0.0;
  double err_method = std::numeric_limits<double>::quiet_NaN();
  double err_ls = std::numeric_limits<double>::quiet_NaN();
  double ratio = std::numeric_limits<double>::quiet_NaN();
  double fit = std::numeric_limits<double>::quiet_NaN();  ///< S-tilde term
  std::string failure;                                     ///< empty on success
};

struct SplitScores {
  double S = std::numeric_limits<double>::quiet_NaN();
  double Stilde = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;         ///< examples in the split
  std::size_t used_S = 0;        ///< terms averaged into S
  std::size_t used_Stilde = 0;
};

struct EvalReport {
  std::string method;
  std::string label;
  SplitScores low;   ///< SNR < 5.5
  SplitScores high;  ///< SNR > 5.5
  SplitScores all;
  std::size_t failures = 0;
  std::size_t excluded_S = 0;
  std::size_t excluded_Stilde = 0;
  std::vector<ExampleRecord> records;
};

/// Runs `method` on every normalized example and scores it. Per-example
/// failures are recorded and excluded; the sweep never aborts.
inline EvalReport evaluate_method(const Method& method, const Dataset& normalized) {
  EvalReport rep;
  rep.method = method.name;
  rep.label = method.label;
  const std::size_t M = normalized.size();
  rep.records.resize(M);
  std::vector<Vector> est(M), ls(M);

  parallel_for(M, [&](std::size_t i) {
    const Example& ex = normalized.examples[i];
    ExampleRecord& rec = rep.records[i];
    rec.id = i;
    rec.snr = ex.snr;
    try {
      const RegressionData rd = build_regression(ex.u, ex.y, ex.theta0.size());
      ls[i] = least_squares(rd);
      est[i] = method.estimate(ex, rd, ls[i]);
      if (!est[i].allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite estimate");
    } catch (const std::exception& e) {
      rec.failure = e.what();
    }
  });

  auto accumulate = [&](auto pick) {
    SplitScores s;
    double sum_S = 0.0, sum_T = 0.0;
    for (const ExampleRecord& r : rep.records) {
      if (!pick(r)) continue;
      ++s.count;
      if (std::isfinite(r.ratio)) {
        sum_S += r.ratio;
        ++s.used_S;
      }
      if (std::isfinite(r.fit)) {
        sum_T += r.fit;
        ++s.used_Stilde;
      }
    }
    if (s.used_S) s.S = sum_S / static_cast<double>(s.used_S);
    if (s.used_Stilde) s.Stilde = sum_T / static_cast<double>(s.used_Stilde);
    return s;
  };

  std::vector<Vector> ok_est, ok_ls, ok_truth;
  std::vector<std::size_t> ok_id;
  for (std::size_t i = 0; i < M; ++i) {
    if (!rep.records[i].failure.empty()) {
      ++rep.failures;
      continue;
    }
    ok_est.push_back(est[i]);
    ok_ls.push_back(ls[i]);
    ok_truth.push_back(normalized.examples[i].theta0);
    ok_id.push_back(i);
  }
  const MetricResult S = score_S(ok_est, ok_ls, ok_truth);
  const MetricResult T = score_Stilde(ok_est, ok_truth);
  rep.excluded_S = S.excluded.size();
  rep.excluded_Stilde = T.excluded.size();
  for (std::size_t k = 0; k < ok_id.size(); ++k) {
    ExampleRecord& r = rep.records[ok_id[k]];
    r.err_method = (ok_est[k] - ok_truth[k]).squaredNorm();
    r.err_ls = (ok_ls[k] - ok_truth[k]).squaredNorm();
    r.ratio = S.terms[k];
    r.fit = T.terms[k];
  }

  rep.all = accumulate([](const ExampleRecord&) { return true; });
  rep.low = accumulate([](const ExampleRecord& r) { return r.snr < kSnrSplit; });
  rep.high = accumulate([](const ExampleRecord& r) { return r.snr > kSnrSplit; });
  return rep;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const SplitScores& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"S", num(s.S)}, {"Stilde", num(s.Stilde)}, {"count", s.count}, {"used_S", s.used_S},
          {"used_Stilde", s.used_Stilde}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"method", r.method},
          {"label", r.label},
          {"snr_split", kSnrSplit},
          {"S_low", to_json(r.low)["S"]},
          {"S_high", to_json(r.high)["S"]},
          {"S_all", to_json(r.all)["S"]},
          {"Stilde_low", to_json(r.low)["Stilde"]},
          {"Stilde_high", to_json(r.high)["Stilde"]},
          {"Stilde_all", to_json(r.all)["Stilde"]},
          {"low", to_json(r.low)},
          {"high", to_json(r.high)},
          {"all", to_json(r.all)},
          {"failures", r.failures},
          {"excluded_S", r.excluded_S},
          {"excluded_Stilde", r.excluded_Stilde}};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Columns id,snr,err_method,err_ls,ratio; failed examples are omitted.
inline void write_records_csv(const EvalReport& r, std::ostream& out) {
  out << "id,snr,err_method,err_ls,ratio\n";
  for (const ExampleRecord& rec : r.records) {
    if (!rec.failure.empty()) continue;
    out << rec.id << ',' << format_double(rec.snr) << ',' << format_double(rec.err_method) << ','
        << format_double(rec.err_ls) << ',' << format_double(rec.ratio) << '\n';
  }
}

}  // namespace impreg
