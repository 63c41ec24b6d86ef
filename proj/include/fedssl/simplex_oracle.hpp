// SPDX-License-Identifier: Apache-2.0
//
// Numerical minimiser for the per-sample pseudo-label subproblem
//
//   min_v  alpha0 * <v, -log p> + alpha1 * KL(v, uniform)   s.t. v in simplex
//
// solved by entropic mirror descent in log coordinates. The objective is
// alpha1-smooth relative to the entropy, so the fixed step 1 / (2 alpha1)
// contracts the log-coordinate error by half per iteration. Iterates stay
// strictly inside the simplex, so solutions with entries far below machine
// epsilon are reached without boundary stalls. It never uses the closed form
// and exists to cross-check `sharpen`.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedssl/mlp.hpp"

namespace fedssl {

class OracleFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OracleOptions {
  std::size_t max_iterations = 100000;
  double tolerance = 1e-14;  // log-coordinate step relative to the largest |log v|
};

/// z - logsumexp(z), so exp of the result lies on the simplex.
inline void normalize_log(std::vector<double>& z) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double x : z) total += std::exp(x - top);
  const double lse = top + std::log(total);
  for (double& x : z) x -= lse;
}

inline std::vector<double> oracle_solve(std::span<const double> p, double alpha0, double alpha1,
                                        OracleOptions options = {}) {
  if (!(alpha1 > 0.0)) throw OracleFailure("oracle_solve requires alpha1 > 0");
  if (p.empty()) throw OracleFailure("oracle_solve requires at least one class");
  const std::size_t c = p.size();
  const double log_c = std::log(static_cast<double>(c));

  std::vector<double> neg_log_p(c);
  for (std::size_t j = 0; j < c; ++j) neg_log_p[j] = -safe_log(p[j]);

  // z holds log v.
  std::vector<double> z(c, -log_c);
  std::vector<double> next(c);
  const double step = 0.5 / alpha1;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    double moved = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double g = alpha0 * neg_log_p[j] + alpha1 * (z[j] + log_c + 1.0);
      next[j] = z[j] - step * g;
    }
    normalize_log(next);
    for (std::size_t j = 0; j < c; ++j) moved = std::max(moved, std::abs(next[j] - z[j]));
    z.swap(next);
    if (moved < options.tolerance * std::max(1.0, std::abs(*std::min_element(z.begin(), z.end())))) {
      std::vector<double> v(c);
      for (std::size_t j = 0; j < c; ++j) v[j] = std::exp(z[j]);
      return v;
    }
  }
  throw OracleFailure("oracle_solve did not converge");
}

}  // namespace fedssl
