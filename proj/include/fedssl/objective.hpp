// SPDX-License-Identifier: Apache-2.0
//
// Client and global semi-supervised objectives:
//
//   F_k(theta, v) = CE(theta; labeled) + alpha0 * CE(theta; unlabeled, v)
//                   + alpha1 * r1(v) + alpha2 * r2(theta)
//   F(theta, v)   = sum_k omega_k F_k
//
// r1 is the mean KL(v_i, uniform) over pseudo-label rows and r2 the mean
// KL(f_theta(u_i), uniform) over the unlabeled rows in play (full shard for
// diagnostics, the minibatch during training).
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fedssl/error.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/pseudo_label.hpp"

namespace fedssl {

struct LossWeights {
  double alpha0 = 1.0;  // final value after the ramp
  double alpha1 = 0.75;
  double alpha2 = 0.1;
  std::size_t alpha0_ramp_epochs = 50;
};

/// alpha0 after `epochs_done` local epochs: linear from 0 to the final value
/// over the ramp, constant afterwards.
inline double ramped_alpha0(const LossWeights& w, std::size_t epochs_done) {
  if (w.alpha0_ramp_epochs == 0 || epochs_done >= w.alpha0_ramp_epochs) return w.alpha0;
  return w.alpha0 * static_cast<double>(epochs_done) / static_cast<double>(w.alpha0_ramp_epochs);
}

struct LabeledShard {
  DenseMatrix features;
  std::vector<int> labels;
  DenseMatrix targets;  // one-hot rows of `labels`

  std::size_t size() const { return labels.size(); }
};

/// Training view of unlabeled data: features only, no ground truth.
struct UnlabeledShard {
  DenseMatrix features;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

inline DenseMatrix one_hot(std::span<const int> labels, std::size_t classes) {
  DenseMatrix out = DenseMatrix::Zero(static_cast<Eigen::Index>(labels.size()),
                                      static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " outside [0, classes)");
    }
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

inline LabeledShard make_labeled_shard(DenseMatrix features, std::vector<int> labels,
                                       std::size_t classes) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ConfigError("labeled shard: feature rows and label count differ");
  }
  DenseMatrix targets = one_hot(labels, classes);
  return {std::move(features), std::move(labels), std::move(targets)};
}

inline DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::size_t> rows) {
  DenseMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

/// -(1/N) sum_i <y_i, log p_i>, logs floored at 1e-12. Zero for N = 0.
inline double cross_entropy(const DenseMatrix& targets, const DenseMatrix& predictions) {
  if (targets.rows() != predictions.rows() || targets.cols() != predictions.cols()) {
    throw ConfigError("cross_entropy: target/prediction shapes differ");
  }
  if (targets.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      if (targets(i, j) != 0.0) total -= targets(i, j) * safe_log(predictions(i, j));
    }
  }
  return total / static_cast<double>(targets.rows());
}

/// KL(p, uniform) = sum_j p_j log(C p_j), with 0 log 0 = 0.
inline double kl_to_uniform(std::span<const double> p) {
  const double log_c = std::log(static_cast<double>(p.size()));
  double kl = 0.0;
  for (double pj : p) {
    if (pj > 0.0) kl += pj * (safe_log(pj) + log_c);
  }
  return kl;
}

inline double mean_row_kl(const DenseMatrix& rows) {
  if (rows.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    total += kl_to_uniform({rows.row(i).data(), static_cast<std::size_t>(rows.cols())});
  }
  return total / static_cast<double>(rows.rows());
}

/// Pseudo-label regularizer; 0 for a client without unlabeled data.
inline double r1(const PseudoLabelTable& vhat) { return mean_row_kl(vhat.rows); }

/// Model-output regularizer over `unlabeled`; 0 for an empty batch.
inline double r2(const ModelParams& params, const DenseMatrix& unlabeled) {
  if (unlabeled.rows() == 0) return 0.0;
  return mean_row_kl(forward(params, unlabeled));
}

/// Everything F_k needs. `alpha0` here is the value in force (post-ramp).
struct ClientObjectiveContext {
  const LabeledShard& labeled;
  const UnlabeledShard& unlabeled;
  const PseudoLabelTable& vhat;
  LossWeights weights;
};

inline void check_context(const ClientObjectiveContext& ctx) {
  if (ctx.vhat.size() != ctx.unlabeled.size()) {
    throw ConfigError("pseudo-label table has " + std::to_string(ctx.vhat.size()) +
                      " rows for " + std::to_string(ctx.unlabeled.size()) + " unlabeled samples");
  }
}

/// Full-shard F_k.
inline double local_objective(const ClientObjectiveContext& ctx, const ModelParams& params) {
  check_context(ctx);
  const auto& w = ctx.weights;
  double value = 0.0;
  if (ctx.labeled.size() > 0) {
    value += cross_entropy(ctx.labeled.targets, forward(params, ctx.labeled.features));
  }
  if (ctx.unlabeled.size() > 0) {
    const DenseMatrix probs = forward(params, ctx.unlabeled.features);
    value += w.alpha0 * cross_entropy(ctx.vhat.rows, probs);
    value += w.alpha1 * r1(ctx.vhat);
    value += w.alpha2 * mean_row_kl(probs);
  }
  return value;
}

/// Gradient of F_k restricted to the given labeled/unlabeled rows. r1 does not
/// depend on theta and contributes nothing.
inline ModelParams stochastic_gradient(const ClientObjectiveContext& ctx, const ModelParams& params,
                                       std::span<const std::size_t> labeled_rows,
                                       std::span<const std::size_t> unlabeled_rows) {
  check_context(ctx);
  if (labeled_rows.empty() && ctx.labeled.size() > 0) {
    throw std::logic_error("empty labeled minibatch from a nonempty shard");
  }
  if (unlabeled_rows.empty() && ctx.unlabeled.size() > 0) {
    throw std::logic_error("empty unlabeled minibatch from a nonempty shard");
  }
  ModelParams grad(params.shape());
  if (!labeled_rows.empty()) {
    grad.flat() += backward(params, gather_rows(ctx.labeled.features, labeled_rows),
                            gather_rows(ctx.labeled.targets, labeled_rows), {1.0, 0.0})
                       .flat();
  }
  const auto& w = ctx.weights;
  if (!unlabeled_rows.empty() && (w.alpha0 != 0.0 || w.alpha2 != 0.0)) {
    grad.flat() += backward(params, gather_rows(ctx.unlabeled.features, unlabeled_rows),
                            gather_rows(ctx.vhat.rows, unlabeled_rows), {w.alpha0, w.alpha2})
                       .flat();
  }
  return grad;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

/// Exact gradient of the full-shard F_k.
inline ModelParams full_gradient(const ClientObjectiveContext& ctx, const ModelParams& params) {
  const auto lab = all_rows(ctx.labeled.size());
  const auto unl = all_rows(ctx.unlabeled.size());
  ModelParams grad(params.shape());
  if (!lab.empty()) {
    grad.flat() += backward(params, ctx.labeled.features, ctx.labeled.targets, {1.0, 0.0}).flat();
  }
  const auto& w = ctx.weights;
  if (!unl.empty() && (w.alpha0 != 0.0 || w.alpha2 != 0.0)) {
    grad.flat() +=
        backward(params, ctx.unlabeled.features, ctx.vhat.rows, {w.alpha0, w.alpha2}).flat();
  }
  return grad;
}

/// F = sum_k omega_k F_k.
inline double global_objective(std::span<const ClientObjectiveContext> clients,
                               std::span<const double> omegas, const ModelParams& params) {
  if (clients.size() != omegas.size()) throw ConfigError("one weight per client required");
  double total = 0.0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    total += omegas[k] * local_objective(clients[k], params);
  }
  return total;
}

inline ModelParams global_gradient(std::span<const ClientObjectiveContext> clients,
                                   std::span<const double> omegas, const ModelParams& params) {
  if (clients.size() != omegas.size()) throw ConfigError("one weight per client required");
  ModelParams grad(params.shape());
  for (std::size_t k = 0; k < clients.size(); ++k) {
    grad.flat() += omegas[k] * full_gradient(clients[k], params).flat();
  }
  return grad;
}

}  // namespace fedssl
