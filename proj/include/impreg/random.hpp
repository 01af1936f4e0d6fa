#pragma once

#include <cstdint>
#include <random>

#include "impreg/types.hpp"

namespace impreg {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream index); used so per-example work
/// does not depend on scheduling.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x1badb002u};
  return Rng(seq);
}

inline Vector standard_normal_vector(Eigen::Index size, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  // column-major fill order is part of the determinism contract
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

}  // namespace impreg
