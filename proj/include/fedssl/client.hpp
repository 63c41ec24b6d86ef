// SPDX-License-Identifier: Apache-2.0
//
// Client side of a communication round: local iteration count, the gradient
// correction recursion
//
//   d_k^t = d_k^{t-1} + (theta^{t-1} - theta^t) / (eta tau_bar)
//                     - (theta^{t-1} - theta_k^{t-1,tau_k}) / (eta tau_k)
//
// and tau_k corrected SGD steps theta <- theta - eta (g_k(theta) + d_k^t).
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedssl/error.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/objective.hpp"
#include "fedssl/pseudo_label.hpp"
#include "fedssl/rng.hpp"

namespace fedssl {

/// max(floor(M_k E / B_u), floor(N_k E / B_l)), at least 1.
inline std::size_t compute_tau(std::size_t labeled, std::size_t unlabeled, std::size_t epochs,
                               std::size_t batch_labeled, std::size_t batch_unlabeled) {
  if (labeled == 0 && unlabeled == 0) throw ConfigError("client has no data");
  if (epochs == 0 || batch_labeled == 0 || batch_unlabeled == 0) {
    throw ConfigError("epochs and batch sizes must be >= 1");
  }
  const std::size_t from_unlabeled = unlabeled * epochs / batch_unlabeled;
  const std::size_t from_labeled = labeled * epochs / batch_labeled;
  return std::max<std::size_t>({from_unlabeled, from_labeled, 1});
}

inline Vector update_correction(const Vector& correction, const Vector& theta_prev,
                                const Vector& theta_new, const Vector& theta_local_end, double eta,
                                double tau_bar, std::size_t tau_k) {
  if (correction.size() != theta_prev.size() || theta_new.size() != theta_prev.size() ||
      theta_local_end.size() != theta_prev.size()) {
    throw ConfigError("update_correction: parameter vectors differ in length");
  }
  if (!(eta > 0.0) || !(tau_bar > 0.0) || tau_k == 0) {
    throw ConfigError("update_correction: eta, tau_bar and tau_k must be positive");
  }
  return correction + (theta_prev - theta_new) / (eta * tau_bar) -
         (theta_prev - theta_local_end) / (eta * static_cast<double>(tau_k));
}

enum class Sampling { kEpochShuffle, kWithReplacement };

/// Minibatch index stream over one shard. Epoch-shuffle mode walks a fresh
/// permutation per epoch and wraps mid-batch; batches larger than the shard
/// are clamped to the shard size.
class MinibatchSampler {
 public:
  MinibatchSampler() = default;
  MinibatchSampler(std::size_t shard_size, std::size_t batch, Sampling mode)
      : size_(shard_size), batch_(std::min(batch, shard_size)), mode_(mode) {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = size_;  // forces a shuffle on first use
  }

  std::size_t batch_size() const { return batch_; }

  std::vector<std::size_t> next(Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    if (mode_ == Sampling::kWithReplacement) {
      std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
      for (std::size_t i = 0; i < batch_; ++i) out.push_back(pick(rng));
      return out;
    }
    while (out.size() < batch_) {
      if (cursor_ == size_) {
        std::shuffle(order_.begin(), order_.end(), rng);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::size_t size_ = 0;
  std::size_t batch_ = 0;
  Sampling mode_ = Sampling::kEpochShuffle;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct ClientState {
  int id = 0;
  LabeledShard labeled;
  UnlabeledShard unlabeled;
  PseudoLabelTable vhat;
  Vector correction;  // d_k, zero before the first round
  std::size_t tau = 1;
  double omega = 0.0;
  Rng rng;
  MinibatchSampler labeled_sampler;
  MinibatchSampler unlabeled_sampler;
  Vector last_upload;         // theta_k^{t-1,tau_k}
  Vector previous_mean_grad;  // (1/tau_k) sum_q g_k over the last local run
};

struct LocalRunResult {
  ModelParams theta_end;
  std::size_t steps_taken = 0;
  std::vector<double> loss_trace;  // minibatch objective before each step
  Vector mean_gradient;            // (1/tau) sum_q g_k, correction excluded
};

/// Core loop shared by every variant: `tau` steps of
/// theta <- theta - eta (gradient(theta, step) + correction).
template <class GradientFn>
LocalRunResult corrected_sgd(const ModelParams& theta_start, std::size_t tau, double eta,
                             const Vector& correction, GradientFn&& gradient) {
  LocalRunResult result{theta_start, 0, {}, Vector::Zero(theta_start.flat().size())};
  result.loss_trace.reserve(tau);
  for (std::size_t q = 0; q < tau; ++q) {
    double loss = 0.0;
    const Vector g = gradient(result.theta_end, q, loss);
    result.loss_trace.push_back(loss);
    result.mean_gradient += g;
    if (correction.size() > 0) {
      result.theta_end.flat() -= eta * (g + correction);
    } else {
      result.theta_end.flat() -= eta * g;
    }
    ++result.steps_taken;
  }
  if (tau > 0) result.mean_gradient /= static_cast<double>(tau);
  return result;
}

/// Minibatch objective value (CE terms, alpha2 r2; r1 is constant in theta).
inline double minibatch_loss(const ClientObjectiveContext& ctx, const ModelParams& params,
                             std::span<const std::size_t> lab, std::span<const std::size_t> unl) {
  double loss = 0.0;
  if (!lab.empty()) {
    loss += cross_entropy(gather_rows(ctx.labeled.targets, lab),
                          forward(params, gather_rows(ctx.labeled.features, lab)));
  }
  if (!unl.empty()) {
    const DenseMatrix probs = forward(params, gather_rows(ctx.unlabeled.features, unl));
    loss += ctx.weights.alpha0 * cross_entropy(gather_rows(ctx.vhat.rows, unl), probs);
    loss += ctx.weights.alpha2 * mean_row_kl(probs);
  }
  return loss;
}

struct LocalRunOptions {
  bool use_correction = true;
  bool record_loss = false;
};

/// tau_k corrected minibatch SGD steps from theta_start using the client's own
/// RNG stream. `weights.alpha0` must already be the ramped value for the round
/// and the pseudo labels refreshed.
inline LocalRunResult local_sgd_run(ClientState& state, const ModelParams& theta_start,
                                    const LossWeights& weights, double eta,
                                    LocalRunOptions options = {},
                                    const Vector* correction_override = nullptr) {
  const ClientObjectiveContext ctx{state.labeled, state.unlabeled, state.vhat, weights};
  const Vector empty;
  const Vector& correction = correction_override != nullptr ? *correction_override
                             : options.use_correction       ? state.correction
                                                            : empty;
  return corrected_sgd(theta_start, state.tau, eta, correction,
                       [&](const ModelParams& theta, std::size_t, double& loss) {
                         std::vector<std::size_t> lab;
                         std::vector<std::size_t> unl;
                         if (state.labeled.size() > 0) lab = state.labeled_sampler.next(state.rng);
                         if (state.unlabeled.size() > 0) {
                           unl = state.unlabeled_sampler.next(state.rng);
                         }
                         if (options.record_loss) loss = minibatch_loss(ctx, theta, lab, unl);
                         return stochastic_gradient(ctx, theta, lab, unl).flat();
                       });
}

}  // namespace fedssl
