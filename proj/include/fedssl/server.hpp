// SPDX-License-Identifier: Apache-2.0
//
// Server aggregation and the synchronous round loop. Variants differ along
// three switches: whether clients apply the gradient correction, whether the
// server normalises each client's delta by 1/tau_k, and how pseudo labels are
// formed.
//
//   normalised:  theta^t = theta^{t-1} - eta tau_bar sum_k omega_k
//                          (theta^{t-1} - theta_k) / (eta tau_k)
//   plain:       theta^t = sum_k omega_k theta_k
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fedssl/client.hpp"
#include "fedssl/diagnostics.hpp"
#include "fedssl/error.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/objective.hpp"
#include "fedssl/pseudo_label.hpp"

namespace fedssl {

enum class Variant { kFedSHVR, kFedSH, kFedSVR, kFedAvgSupervised, kFedPseudo };

enum class LabelRule { kFromWeights, kHard, kNone };

struct VariantTraits {
  bool correction;
  bool normalized;
  LabelRule labels;
};

constexpr VariantTraits traits(Variant v) {
  switch (v) {
    case Variant::kFedSHVR: return {true, true, LabelRule::kFromWeights};
    case Variant::kFedSH: return {false, true, LabelRule::kFromWeights};
    case Variant::kFedSVR: return {true, false, LabelRule::kFromWeights};
    case Variant::kFedAvgSupervised: return {false, false, LabelRule::kNone};
    case Variant::kFedPseudo: return {false, false, LabelRule::kHard};
  }
  return {true, true, LabelRule::kFromWeights};
}

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kFedSHVR: return "fed-shvr";
    case Variant::kFedSH: return "fed-sh";
    case Variant::kFedSVR: return "fed-svr";
    case Variant::kFedAvgSupervised: return "fedavg";
    case Variant::kFedPseudo: return "fed-pseudo";
  }
  return "fed-shvr";
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (auto v : {Variant::kFedSHVR, Variant::kFedSH, Variant::kFedSVR, Variant::kFedAvgSupervised,
                 Variant::kFedPseudo}) {
    if (name == to_string(v)) return v;
  }
  return std::nullopt;
}

/// Loss weights a variant actually optimises: FedAvg is purely supervised and
/// Fed-Pseudo is plain pseudo-labelling without either regularizer.
inline LossWeights effective_weights(Variant v, LossWeights w) {
  if (v == Variant::kFedAvgSupervised) {
    w.alpha0 = w.alpha1 = w.alpha2 = 0.0;
  } else if (v == Variant::kFedPseudo) {
    w.alpha1 = w.alpha2 = 0.0;
  }
  return w;
}

/// How the correction term is formed. kRecursive is the stored-d_k update;
/// kGradientMemory rebuilds d_k = sum_l omega_l gbar_l - gbar_k from each
/// client's mean local gradient of the previous round. The two agree under
/// normalised aggregation and exist side by side for cross-checking.
enum class CorrectionForm { kRecursive, kGradientMemory };

struct ServerState {
  ModelParams theta;  // theta^t, last broadcast
  Vector theta_prev;  // theta^{t-1}
  std::size_t round = 0;
  double eta = 0.01;
  double tau_bar = 1.0;
  std::vector<double> omegas;
  std::vector<std::size_t> taus;
  Variant variant = Variant::kFedSHVR;
};

struct Upload {
  int client_id = 0;
  Vector theta;
};

inline Vector aggregate(const ServerState& server, std::span<const Upload> uploads) {
  const std::size_t k_count = server.omegas.size();
  if (uploads.size() != k_count) {
    throw ProtocolError("expected " + std::to_string(k_count) + " uploads, got " +
                        std::to_string(uploads.size()));
  }
  std::vector<const Vector*> by_client(k_count, nullptr);
  for (const auto& u : uploads) {
    if (u.client_id < 0 || static_cast<std::size_t>(u.client_id) >= k_count) {
      throw ProtocolError("upload from unknown client " + std::to_string(u.client_id));
    }
    if (by_client[static_cast<std::size_t>(u.client_id)] != nullptr) {
      throw ProtocolError("duplicate upload from client " + std::to_string(u.client_id));
    }
    if (u.theta.size() != server.theta.flat().size()) {
      throw ProtocolError("upload from client " + std::to_string(u.client_id) +
                          " has the wrong parameter count");
    }
    by_client[static_cast<std::size_t>(u.client_id)] = &u.theta;
  }

  const bool homogeneous =
      std::adjacent_find(server.taus.begin(), server.taus.end(), std::not_equal_to<>()) ==
      server.taus.end();
  const Vector& prev = server.theta.flat();
  if (!traits(server.variant).normalized || homogeneous) {
    // Equal tau_k make the normalised update the plain weighted mean.
    Vector out = Vector::Zero(prev.size());
    for (std::size_t k = 0; k < k_count; ++k) out += server.omegas[k] * *by_client[k];
    return out;
  }
  Vector direction = Vector::Zero(prev.size());
  for (std::size_t k = 0; k < k_count; ++k) {
    direction += server.omegas[k] * (prev - *by_client[k]) /
                 (server.eta * static_cast<double>(server.taus[k]));
  }
  return prev - server.eta * server.tau_bar * direction;
}

struct RoundOptions {
  std::size_t local_epochs = 2;
  std::size_t gap_interval = 0;  // 0 disables g_t
  std::size_t threads = 1;
  CorrectionForm correction_form = CorrectionForm::kRecursive;
};

struct Fleet {
  ServerState server;
  std::vector<ClientState> clients;
  LossWeights weights;  // already passed through effective_weights
  RoundOptions options;
};

struct RoundMetrics {
  std::size_t round = 0;
  double alpha0 = 0.0;
  double train_loss = 0.0;  // F(theta after aggregation, current labels)
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::optional<GapSample> gap;
  double correction_residual = 0.0;  // ||sum_k omega_k d_k||_inf
  double wall_ms = 0.0;
};

struct EvalSet {
  const DenseMatrix& features;
  std::span<const int> labels;
};

struct ClientData {
  LabeledShard labeled;
  UnlabeledShard unlabeled;
};

/// Wires clients and server for round 1: d_k = 0, uniform pseudo labels, all
/// last uploads equal to theta0 so the first aggregation is a fixed point.
inline Fleet make_fleet(ModelParams theta0, std::vector<ClientData> data, LossWeights weights,
                        Variant variant, double eta, RoundOptions options,
                        std::size_t batch_labeled, std::size_t batch_unlabeled, Sampling sampling,
                        std::uint64_t seed) {
  if (data.empty()) throw ConfigError("fleet needs at least one client");
  if (!(eta > 0.0)) throw ConfigError("learning rate must be positive");
  Fleet fleet;
  fleet.weights = effective_weights(variant, weights);
  fleet.options = options;
  fleet.server.variant = variant;
  fleet.server.eta = eta;

  const bool supervised_only = traits(variant).labels == LabelRule::kNone;
  double total = 0.0;
  for (auto& d : data) {
    if (supervised_only) d.unlabeled.features.resize(0, d.labeled.features.cols());
    total += static_cast<double>(d.labeled.size() + d.unlabeled.size());
  }
  const std::size_t classes = theta0.shape().classes;
  const Vector zero = Vector::Zero(theta0.flat().size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    ClientState c;
    c.id = static_cast<int>(k);
    c.labeled = std::move(data[k].labeled);
    c.unlabeled = std::move(data[k].unlabeled);
    c.tau = compute_tau(c.labeled.size(), c.unlabeled.size(), options.local_epochs, batch_labeled,
                        batch_unlabeled);
    c.omega = static_cast<double>(c.labeled.size() + c.unlabeled.size()) / total;
    c.vhat = uniform_table(c.id, c.unlabeled.size(), classes);
    c.correction = zero;
    c.previous_mean_grad = zero;
    c.last_upload = theta0.flat();
    c.rng = derive_rng(seed, StreamTag::kClient, k);
    if (c.labeled.size() > 0) c.labeled_sampler = {c.labeled.size(), batch_labeled, sampling};
    if (c.unlabeled.size() > 0) {
      c.unlabeled_sampler = {c.unlabeled.size(), batch_unlabeled, sampling};
    }
    fleet.server.omegas.push_back(c.omega);
    fleet.server.taus.push_back(c.tau);
    fleet.clients.push_back(std::move(c));
  }
  fleet.server.tau_bar = 0.0;
  for (std::size_t k = 0; k < fleet.clients.size(); ++k) {
    fleet.server.tau_bar += fleet.server.omegas[k] * static_cast<double>(fleet.server.taus[k]);
  }
  fleet.server.theta_prev = theta0.flat();
  fleet.server.theta = std::move(theta0);
  return fleet;
}

inline std::vector<Upload> collect_uploads(const Fleet& fleet) {
  std::vector<Upload> uploads;
  uploads.reserve(fleet.clients.size());
  for (const auto& c : fleet.clients) uploads.push_back({c.id, c.last_upload});
  return uploads;
}

inline std::vector<ClientObjectiveContext> objective_contexts(const Fleet& fleet,
                                                              const LossWeights& weights) {
  std::vector<ClientObjectiveContext> out;
  out.reserve(fleet.clients.size());
  for (const auto& c : fleet.clients) out.push_back({c.labeled, c.unlabeled, c.vhat, weights});
  return out;
}

inline double correction_residual(const Fleet& fleet) {
  Vector sum = Vector::Zero(fleet.server.theta.flat().size());
  for (const auto& c : fleet.clients) sum += c.omega * c.correction;
  return sum.size() == 0 ? 0.0 : sum.cwiseAbs().maxCoeff();
}

/// Model the server would broadcast next, from the uploads now held.
inline ModelParams pending_global_model(const Fleet& fleet) {
  const auto uploads = collect_uploads(fleet);
  return ModelParams(fleet.server.theta.shape(), aggregate(fleet.server, uploads));
}

/// Runs body(k) for every client, on `threads` workers when > 1. Client work
/// touches only its own state, so the schedule does not affect results.
template <class Body>
void for_each_client(std::size_t count, std::size_t threads, Body&& body) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(threads, count); ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < count; k = next++) {
          try {
            body(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// One communication round in listing order: aggregate the previous uploads
/// and broadcast, then per client refresh pseudo labels, update d_k, run tau_k
/// local steps and upload.
inline RoundMetrics run_round(Fleet& fleet, const EvalSet* eval = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  auto& server = fleet.server;
  const VariantTraits vt = traits(server.variant);
  const std::size_t t = ++server.round;

  {
    const auto uploads = collect_uploads(fleet);
    Vector next = aggregate(server, uploads);
    server.theta_prev = server.theta.flat();
    server.theta.flat() = std::move(next);
  }

  LossWeights round_weights = fleet.weights;
  round_weights.alpha0 = ramped_alpha0(fleet.weights, t * fleet.options.local_epochs);

  const bool want_gap = fleet.options.gap_interval > 0 && t % fleet.options.gap_interval == 0;
  std::vector<PseudoLabelTable> previous;
  if (want_gap) {
    for (const auto& c : fleet.clients) previous.push_back(c.vhat);
  }

  Vector memory_mean;
  if (vt.correction && fleet.options.correction_form == CorrectionForm::kGradientMemory) {
    memory_mean = Vector::Zero(server.theta.flat().size());
    for (const auto& c : fleet.clients) memory_mean += c.omega * c.previous_mean_grad;
  }

  for_each_client(fleet.clients.size(), fleet.options.threads, [&](std::size_t k) {
    ClientState& c = fleet.clients[k];
    if (vt.labels != LabelRule::kNone && c.unlabeled.size() > 0) {
      const double a1 = vt.labels == LabelRule::kHard ? 0.0 : round_weights.alpha1;
      c.vhat = update_pseudo_labels(server.theta, c.unlabeled.features, round_weights.alpha0, a1,
                                    c.id);
    }
    if (vt.correction) {
      if (fleet.options.correction_form == CorrectionForm::kRecursive) {
        c.correction = update_correction(c.correction, server.theta_prev, server.theta.flat(),
                                         c.last_upload, server.eta, server.tau_bar, c.tau);
      } else {
        c.correction = memory_mean - c.previous_mean_grad;
      }
    }
    LocalRunResult run = local_sgd_run(c, server.theta, round_weights, server.eta,
                                       {.use_correction = vt.correction});
    c.last_upload = std::move(run.theta_end.flat());
    c.previous_mean_grad = std::move(run.mean_gradient);
  });

  RoundMetrics m;
  m.round = t;
  m.alpha0 = round_weights.alpha0;
  if (vt.correction) m.correction_residual = correction_residual(fleet);
  const auto contexts = objective_contexts(fleet, round_weights);
  if (want_gap) {
    m.gap = optimality_gap(contexts, server.omegas, server.theta, previous, t);
  }
  const ModelParams global = pending_global_model(fleet);
  m.train_loss = global_objective(contexts, server.omegas, global);
  if (eval != nullptr) m.test_accuracy = test_accuracy(global, eval->features, eval->labels);
  m.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return m;
}

}  // namespace fedssl
