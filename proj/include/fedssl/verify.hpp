// SPDX-License-Identifier: Apache-2.0
//
// Self-checks of algebraic identities the simulator relies on. Each returns
// the observed worst-case value next to its threshold.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedssl/dataset.hpp"
#include "fedssl/objective.hpp"
#include "fedssl/pseudo_label.hpp"
#include "fedssl/server.hpp"
#include "fedssl/simplex_oracle.hpp"

namespace fedssl {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

namespace detail {

/// Blob data cut into clients with the given (labeled, unlabeled) sizes.
inline std::vector<ClientData> toy_clients(std::size_t classes, std::size_t dim,
                                           const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                           std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& [n, m] : sizes) total += n + m;
  const Dataset ds = synth_blobs(classes, (total + classes - 1) / classes, dim, 0.2, seed);
  std::vector<ClientData> out;
  std::size_t row = 0;
  for (const auto& [n, m] : sizes) {
    std::vector<std::size_t> lab(n);
    std::vector<std::size_t> unl(m);
    for (auto& r : lab) r = row++;
    for (auto& r : unl) r = row++;
    Dataset l = subset(ds, lab);
    ClientData d;
    d.labeled = make_labeled_shard(std::move(l.features), std::move(l.labels), classes);
    d.unlabeled.features = gather_rows(ds.features, unl);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace detail

/// max over 20 rounds of ||sum_k omega_k d_k||_inf, four clients with unequal tau.
inline CheckResult check_correction_sum(std::uint64_t seed = 0) {
  const std::size_t classes = 3;
  const std::size_t dim = 10;
  auto data = detail::toy_clients(classes, dim, {{8, 40}, {12, 90}, {6, 20}, {10, 150}}, seed);
  Rng init = derive_rng(seed, StreamTag::kModelInit);
  auto theta0 = ModelParams::glorot({dim, 16, classes}, init);
  Fleet fleet = make_fleet(std::move(theta0), std::move(data), LossWeights{}, Variant::kFedSHVR,
                           0.05, {}, 8, 8, Sampling::kEpochShuffle, seed);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) worst = std::max(worst, run_round(fleet).correction_residual);
  return {"correction_sum", worst, 1e-10, worst < 1e-10};
}

/// Recursive and gradient-memory corrections on a full-batch two-client toy:
/// largest |difference| between the corrections and the uploads over 3 rounds.
inline CheckResult check_saga_equivalence(std::uint64_t seed = 0) {
  const std::size_t classes = 3;
  const std::size_t dim = 6;
  const std::vector<std::pair<std::size_t, std::size_t>> sizes{{10, 30}, {14, 60}};
  auto make = [&](CorrectionForm form) {
    Rng init = derive_rng(seed, StreamTag::kModelInit);
    auto theta0 = ModelParams::glorot({dim, 8, classes}, init);
    RoundOptions options;
    options.local_epochs = 3;
    options.correction_form = form;
    return make_fleet(std::move(theta0), detail::toy_clients(classes, dim, sizes, seed),
                      LossWeights{}, Variant::kFedSHVR, 0.05, options, 1000, 1000,
                      Sampling::kEpochShuffle, seed);
  };
  Fleet recursive = make(CorrectionForm::kRecursive);
  Fleet memory = make(CorrectionForm::kGradientMemory);
  double worst = 0.0;
  for (int t = 0; t < 3; ++t) {
    run_round(recursive);
    run_round(memory);
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      const auto& a = recursive.clients[k];
      const auto& b = memory.clients[k];
      worst = std::max(worst, (a.correction - b.correction).cwiseAbs().maxCoeff());
      worst = std::max(worst, (a.last_upload - b.last_upload).cwiseAbs().maxCoeff());
    }
  }
  return {"saga_equivalence", worst, 1e-9, worst < 1e-9};
}

/// Closed-form sharpening against the mirror-descent oracle on random
/// (p, alpha0, alpha1) with 2 to 6 classes.
inline CheckResult check_sharpening_oracle(std::size_t trials = 200, std::uint64_t seed = 0) {
  Rng rng = derive_rng(seed, StreamTag::kDirections, 7);
  std::uniform_int_distribution<int> classes(2, 6);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  std::uniform_real_distribution<double> alpha(0.2, 2.0);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::vector<double> p(static_cast<std::size_t>(classes(rng)));
    double sum = 0.0;
    for (auto& v : p) sum += v = unit(rng);
    for (auto& v : p) v /= sum;
    const double a0 = alpha(rng);
    const double a1 = alpha(rng);
    const auto closed = sharpen(p, a0 / a1);
    const auto oracle = oracle_solve(p, a0, a1);
    for (std::size_t c = 0; c < p.size(); ++c) worst = std::max(worst, std::abs(closed[c] - oracle[c]));
  }
  return {"sharpening_oracle", worst, 1e-5, worst < 1e-5};
}

/// Central differences (h = 1e-5) of the local objective on a 5-4-3 network
/// with every loss term active. Reports the worst relative error
/// |g - fd| / max(|g|, |fd|, 1e-6).
inline CheckResult check_gradient(std::uint64_t seed = 0) {
  auto data = detail::toy_clients(3, 5, {{6, 7}}, seed);
  Rng init = derive_rng(seed, StreamTag::kModelInit);
  const auto params = ModelParams::glorot({5, 4, 3}, init);
  const auto vhat = update_pseudo_labels(params, data[0].unlabeled.features, 0.8, 0.6, 0);
  const LossWeights w{0.8, 0.6, 0.3, 0};
  const ClientObjectiveContext ctx{data[0].labeled, data[0].unlabeled, vhat, w};
  const Vector g = full_gradient(ctx, params).flat();
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    ModelParams plus = params;
    ModelParams minus = params;
    plus.flat()[i] += h;
    minus.flat()[i] -= h;
    const double fd = (local_objective(ctx, plus) - local_objective(ctx, minus)) / (2 * h);
    const double scale = std::max({std::abs(g[i]), std::abs(fd), 1e-6});
    worst = std::max(worst, std::abs(g[i] - fd) / scale);
  }
  return {"gradient_check", worst, 1e-4, worst < 1e-4};
}

inline std::vector<CheckResult> run_all_checks(std::uint64_t seed = 0) {
  return {check_correction_sum(seed), check_saga_equivalence(seed), check_sharpening_oracle(200, seed),
          check_gradient(seed)};
}

}  // namespace fedssl
