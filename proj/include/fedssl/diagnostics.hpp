// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "fedssl/error.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/objective.hpp"
#include "fedssl/rng.hpp"

namespace fedssl {

/// g_t = ||grad_theta F(theta^t, v^{t+1})||^2 + sum_k omega_k ||v_k^{t+1} - v_k^t||_F^2.
/// The label-motion norm is the unnormalised Frobenius norm of the stacked
/// rows, so it grows with M_k.
struct GapSample {
  std::size_t round = 0;
  double grad_norm_sq = 0.0;
  double label_motion = 0.0;
  double gap = 0.0;
};

/// `clients` must carry the refreshed labels v^{t+1}; `previous` holds v^t in
/// the same client order. The expectation is realised as the exact full
/// gradient.
inline GapSample optimality_gap(std::span<const ClientObjectiveContext> clients,
                                std::span<const double> omegas, const ModelParams& theta,
                                std::span<const PseudoLabelTable> previous, std::size_t round = 0) {
  if (previous.size() != clients.size()) throw ConfigError("one previous table per client");
  GapSample s;
  s.round = round;
  s.grad_norm_sq = global_gradient(clients, omegas, theta).flat().squaredNorm();
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& next = clients[k].vhat.rows;
    const auto& prev = previous[k].rows;
    if (next.rows() != prev.rows() || next.cols() != prev.cols()) {
      throw ConfigError("pseudo-label tables changed shape between rounds");
    }
    s.label_motion += omegas[k] * (next - prev).squaredNorm();
  }
  s.gap = s.grad_norm_sq + s.label_motion;
  return s;
}

/// Fraction of rows whose argmax prediction (smallest index on ties) matches.
inline double test_accuracy(const ModelParams& params, const DenseMatrix& features,
                            std::span<const int> labels) {
  if (labels.empty()) throw ConfigError("test_accuracy: empty test set");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ConfigError("test_accuracy: feature rows and label count differ");
  }
  const DenseMatrix probs = forward(params, features);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Per-round population standard deviation across seeds (divisor = seed count).
inline std::vector<double> accuracy_std(const std::vector<std::vector<double>>& per_seed) {
  if (per_seed.size() < 2) throw ConfigError("accuracy_std needs at least two seeds");
  const std::size_t rounds = per_seed.front().size();
  for (const auto& s : per_seed) {
    if (s.size() != rounds) throw ConfigError("accuracy_std: series lengths differ");
  }
  const auto n = static_cast<double>(per_seed.size());
  std::vector<double> out(rounds);
  for (std::size_t t = 0; t < rounds; ++t) {
    double mean = 0.0;
    for (const auto& s : per_seed) mean += s[t];
    mean /= n;
    double ss = 0.0;
    for (const auto& s : per_seed) ss += (s[t] - mean) * (s[t] - mean);
    out[t] = std::sqrt(ss / n);
  }
  return out;
}

struct GridSpec {
  double radius = 1.0;           // beta in [-radius, radius] on both axes
  std::size_t points = 21;       // per axis, odd so the anchor is a grid point
};

struct LandscapeGrid {
  std::vector<double> beta1;
  std::vector<double> beta2;
  DenseMatrix q;  // q(i, j) = F(anchor + beta1[i] d1 + beta2[j] d2)
  std::uint64_t direction_seed = 0;
  Vector delta1;
  Vector delta2;
};

/// Two Gaussian directions, each normalised to unit Euclidean norm.
inline std::pair<Vector, Vector> landscape_directions(std::size_t dim, std::uint64_t seed) {
  Rng rng = derive_rng(seed, StreamTag::kDirections);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector d1(static_cast<Eigen::Index>(dim));
  Vector d2(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < d1.size(); ++i) d1[i] = normal(rng);
  for (Eigen::Index i = 0; i < d2.size(); ++i) d2[i] = normal(rng);
  d1.normalize();
  d2.normalize();
  return {d1, d2};
}

inline std::vector<double> grid_axis(const GridSpec& spec) {
  if (spec.points < 1 || spec.points % 2 == 0) {
    throw ConfigError("landscape grid needs an odd number of points per axis");
  }
  std::vector<double> axis(spec.points);
  const auto half = static_cast<std::ptrdiff_t>(spec.points / 2);
  for (std::size_t i = 0; i < spec.points; ++i) {
    const auto offset = static_cast<std::ptrdiff_t>(i) - half;
    axis[i] = half == 0 ? 0.0 : spec.radius * static_cast<double>(offset) / static_cast<double>(half);
  }
  return axis;
}

/// Full-batch F on a 2-D slice through `anchor`; the anchor pseudo labels are
/// held fixed inside `clients`.
inline LandscapeGrid landscape_slice(std::span<const ClientObjectiveContext> clients,
                                     std::span<const double> omegas, const ModelParams& anchor,
                                     const GridSpec& spec, std::uint64_t direction_seed) {
  LandscapeGrid grid;
  grid.direction_seed = direction_seed;
  grid.beta1 = grid_axis(spec);
  grid.beta2 = grid.beta1;
  std::tie(grid.delta1, grid.delta2) =
      landscape_directions(anchor.shape().parameter_count(), direction_seed);
  grid.q.resize(static_cast<Eigen::Index>(spec.points), static_cast<Eigen::Index>(spec.points));
  for (std::size_t i = 0; i < spec.points; ++i) {
    for (std::size_t j = 0; j < spec.points; ++j) {
      ModelParams point = anchor;
      point.flat() += grid.beta1[i] * grid.delta1 + grid.beta2[j] * grid.delta2;
      grid.q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          global_objective(clients, omegas, point);
    }
  }
  return grid;
}

}  // namespace fedssl
