#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "impreg/types.hpp"

namespace impreg {

struct NelderMeadOptions {
  int max_evaluations = 200;
  /// Stop once every vertex lies within this distance of the best one.
  double diameter_tolerance = 1e-4;
};

struct NelderMeadResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
};

/// Minimizes f starting from the simplex {x0, x0 + steps_i e_i}. Non-finite
/// values (e.g. points outside a feasible box) rank as worse than any finite
/// value.
template <class Objective>
NelderMeadResult nelder_mead(Objective&& f, const Vector& x0, const Vector& steps,
                             const NelderMeadOptions& opts = {}) {
  const Eigen::Index dim = x0.size();
  NelderMeadResult result;

  auto eval = [&](const Vector& x) {
    ++result.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> pts(dim + 1, x0);
  std::vector<double> vals(dim + 1);
  for (Eigen::Index i = 0; i < dim; ++i) pts[i + 1][i] += steps[i];
  for (Eigen::Index i = 0; i <= dim && result.evaluations < opts.max_evaluations; ++i) vals[i] = eval(pts[i]);
  if (result.evaluations <= dim) {
    const auto best = std::min_element(vals.begin(), vals.begin() + result.evaluations) - vals.begin();
    result.x = pts[best];
    result.value = vals[best];
    return result;
  }

  std::vector<std::size_t> order(dim + 1);
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<Vector> p2(dim + 1);
    std::vector<double> v2(dim + 1);
    for (Eigen::Index i = 0; i <= dim; ++i) {
      p2[i] = pts[order[i]];
      v2[i] = vals[order[i]];
    }
    pts.swap(p2);
    vals.swap(v2);
  };
  auto diameter = [&] {
    double d = 0.0;
    for (Eigen::Index i = 1; i <= dim; ++i) d = std::max(d, (pts[i] - pts[0]).norm());
    return d;
  };

  sort_simplex();
  while (result.evaluations < opts.max_evaluations) {
    if (diameter() < opts.diameter_tolerance) {
      result.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) centroid += pts[i];
    centroid /= static_cast<double>(dim);
    const Vector& worst = pts[dim];

    const Vector reflected = centroid + (centroid - worst);
    const double fr = eval(reflected);
    if (fr < vals[0]) {
      if (result.evaluations >= opts.max_evaluations) {
        pts[dim] = reflected;
        vals[dim] = fr;
      } else {
        const Vector expanded = centroid + 2.0 * (centroid - worst);
        const double fe = eval(expanded);
        if (fe < fr) {
          pts[dim] = expanded;
          vals[dim] = fe;
        } else {
          pts[dim] = reflected;
          vals[dim] = fr;
        }
      }
    } else if (fr < vals[dim - 1]) {
      pts[dim] = reflected;
      vals[dim] = fr;
    } else {
      if (result.evaluations >= opts.max_evaluations) break;
      const bool outside = fr < vals[dim];
      const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                        : Vector(centroid + 0.5 * (worst - centroid));
      const double fc = eval(contracted);
      if (fc < (outside ? fr : vals[dim])) {
        pts[dim] = contracted;
        vals[dim] = fc;
      } else {
        for (Eigen::Index i = 1; i <= dim && result.evaluations < opts.max_evaluations; ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          vals[i] = eval(pts[i]);
        }
      }
    }
    sort_simplex();
  }
  if (!result.converged && diameter() < opts.diameter_tolerance) result.converged = true;

  result.x = pts[0];
  result.value = vals[0];
  return result;
}

}  // namespace impreg
