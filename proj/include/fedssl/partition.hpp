// SPDX-License-Identifier: Apache-2.0
//
// Federated partitioning of a dataset into per-client labeled and unlabeled
// index lists. All shards are disjoint. Ground-truth labels of unlabeled rows
// stay in the Dataset; `materialize` hands clients features only.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedssl/dataset.hpp"
#include "fedssl/error.hpp"
#include "fedssl/objective.hpp"
#include "fedssl/rng.hpp"
#include "fedssl/server.hpp"

namespace fedssl {

struct ClientIndices {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<int> seen_classes;  // empty when every class may be labeled
};

struct FederatedSplit {
  std::vector<ClientIndices> clients;
};

/// Uniform shuffle, then contiguous blocks of `samples_per_client` (0 means
/// floor(n / K)); the first `labeled_per_client` of each block are labeled.
inline FederatedSplit split_iid(const Dataset& ds, std::size_t clients,
                                std::size_t labeled_per_client, std::size_t samples_per_client,
                                std::uint64_t seed) {
  if (clients == 0) throw ConfigError("split_iid: need at least one client");
  if (samples_per_client == 0) samples_per_client = ds.size() / clients;
  if (clients * samples_per_client > ds.size() || samples_per_client == 0) {
    throw DataError("split_iid: " + std::to_string(clients) + " x " +
                    std::to_string(samples_per_client) + " samples exceed dataset size " +
                    std::to_string(ds.size()));
  }
  if (labeled_per_client > samples_per_client) {
    throw DataError("split_iid: more labeled samples than a client holds");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = derive_rng(seed, StreamTag::kPartition);
  std::shuffle(order.begin(), order.end(), rng);

  FederatedSplit split;
  for (std::size_t k = 0; k < clients; ++k) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(k * samples_per_client);
    const auto mid = first + static_cast<std::ptrdiff_t>(labeled_per_client);
    const auto last = first + static_cast<std::ptrdiff_t>(samples_per_client);
    split.clients.push_back({{first, mid}, {mid, last}, {}});
  }
  return split;
}

namespace detail {

/// Per-class queues of still-unassigned indices, each shuffled once.
class ClassPools {
 public:
  ClassPools(const Dataset& ds, Rng& rng) : pools_(ds.classes) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      pools_[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    for (auto& p : pools_) std::shuffle(p.begin(), p.end(), rng);
  }

  std::size_t available(int c) const { return pools_[static_cast<std::size_t>(c)].size(); }

  std::vector<std::size_t> take(int c, std::size_t n) {
    auto& p = pools_[static_cast<std::size_t>(c)];
    if (n > p.size()) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(p.size()) +
                      " samples left, " + std::to_string(n) + " requested");
    }
    std::vector<std::size_t> out(p.end() - static_cast<std::ptrdiff_t>(n), p.end());
    p.resize(p.size() - n);
    return out;
  }

  /// Uniformly random `n` indices drawn from the union of `classes`.
  std::vector<std::size_t> take_from(const std::vector<int>& classes, std::size_t n, Rng& rng) {
    std::vector<std::pair<int, std::size_t>> candidates;
    for (int c : classes) {
      for (std::size_t i = 0; i < available(c); ++i) candidates.emplace_back(c, i);
    }
    if (n > candidates.size()) {
      throw DataError("pool exhausted: " + std::to_string(n) + " samples requested, " +
                      std::to_string(candidates.size()) + " left in the requested classes");
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(n);
    std::vector<std::size_t> counts(pools_.size(), 0);
    for (const auto& [c, i] : candidates) ++counts[static_cast<std::size_t>(c)];
    std::vector<std::size_t> out;
    for (int c : classes) {
      auto part = take(c, counts[static_cast<std::size_t>(c)]);
      counts[static_cast<std::size_t>(c)] = 0;
      out.insert(out.end(), part.begin(), part.end());
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }

  std::vector<std::size_t> remaining() const {
    std::vector<std::size_t> out;
    for (const auto& p : pools_) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  std::size_t classes() const { return pools_.size(); }

 private:
  std::vector<std::vector<std::size_t>> pools_;
};

/// Classes {k*s, ..., k*s + s - 1} mod C for client k.
inline std::vector<int> rotating_classes(std::size_t client, std::size_t per_client,
                                         std::size_t classes) {
  std::vector<int> out;
  for (std::size_t j = 0; j < per_client; ++j) {
    out.push_back(static_cast<int>((client * per_client + j) % classes));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Labeled shard of `count` samples spread evenly over `classes`.
inline std::vector<std::size_t> take_labeled(ClassPools& pools, const std::vector<int>& classes,
                                             std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < classes.size(); ++j) {
    const std::size_t n = count / classes.size() + (j < count % classes.size() ? 1 : 0);
    auto part = pools.take(classes[j], n);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

/// Dirichlet(concentration) proportions over `k` parts via normalised Gamma draws.
inline std::vector<double> dirichlet(std::size_t k, double concentration, Rng& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> q(k);
  for (;;) {
    double total = 0.0;
    for (auto& v : q) total += (v = gamma(rng));
    if (total > 0.0) {
      for (auto& v : q) v /= total;
      return q;
    }
  }
}

/// floor(q_i * n) with the residue handed to the largest fractional parts
/// (lower index first on ties).
inline std::vector<std::size_t> apportion(const std::vector<double>& q, std::size_t n) {
  std::vector<std::size_t> counts(q.size());
  std::vector<std::pair<double, std::size_t>> fractions;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double exact = q[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    fractions.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(fractions.begin(), fractions.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[fractions[r % q.size()].second];
  return counts;
}

}  // namespace detail

struct LabeledSpec {
  std::size_t classes_per_client = 2;
  std::size_t labeled_per_client = 60;
};

/// Labeled shards come from each client's rotating class set; the remaining
/// pool (optionally capped at `unlabeled_total`) is spread class by class with
/// Dirichlet(concentration) proportions across clients.
inline FederatedSplit split_dirichlet_unlabeled(const Dataset& ds, std::size_t clients,
                                                double concentration, const LabeledSpec& spec,
                                                std::size_t unlabeled_total, std::uint64_t seed) {
  if (clients == 0) throw ConfigError("split_dirichlet_unlabeled: need at least one client");
  if (!(concentration > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
  if (spec.classes_per_client == 0 || spec.classes_per_client > ds.classes) {
    throw ConfigError("classes_per_client must be in [1, classes]");
  }
  Rng rng = derive_rng(seed, StreamTag::kPartition);
  detail::ClassPools pools(ds, rng);
  FederatedSplit split;
  split.clients.resize(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    auto& c = split.clients[k];
    c.seen_classes = detail::rotating_classes(k, spec.classes_per_client, ds.classes);
    c.labeled = detail::take_labeled(pools, c.seen_classes, spec.labeled_per_client);
  }

  std::vector<std::size_t> pool = pools.remaining();
  std::sort(pool.begin(), pool.end());
  std::shuffle(pool.begin(), pool.end(), rng);
  if (unlabeled_total > 0) {
    if (unlabeled_total > pool.size()) {
      throw DataError("requested " + std::to_string(unlabeled_total) + " unlabeled samples, " +
                      std::to_string(pool.size()) + " available");
    }
    pool.resize(unlabeled_total);
  }
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i : pool) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (const auto& members : by_class) {
    const auto counts = detail::apportion(detail::dirichlet(clients, concentration, rng),
                                          members.size());
    std::size_t offset = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      auto& u = split.clients[k].unlabeled;
      u.insert(u.end(), members.begin() + static_cast<std::ptrdiff_t>(offset),
               members.begin() + static_cast<std::ptrdiff_t>(offset + counts[k]));
      offset += counts[k];
    }
  }
  for (auto& c : split.clients) std::shuffle(c.unlabeled.begin(), c.unlabeled.end(), rng);
  return split;
}

struct MismatchSpec {
  std::size_t seen_classes_per_client = 2;
  std::size_t labeled_per_client = 60;
  std::size_t unlabeled_per_client = 500;
  double ratio = 0.5;          // fraction of each unlabeled shard from unseen classes
  double concentration = 0.0;  // > 0: Dirichlet-sized shards with the same total
};

/// Each client's labeled shard uses only its seen classes; round(ratio * M_k)
/// of its unlabeled shard comes from the other classes and the rest from its
/// seen classes. With concentration > 0 the shard sizes M_k are drawn first.
inline FederatedSplit split_mismatch_ratio(const Dataset& ds, std::size_t clients,
                                           const MismatchSpec& spec, std::uint64_t seed) {
  if (clients == 0) throw ConfigError("split_mismatch_ratio: need at least one client");
  if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0)) throw ConfigError("mismatch ratio must be in [0, 1]");
  if (spec.seen_classes_per_client == 0 || spec.seen_classes_per_client > ds.classes) {
    throw ConfigError("seen_classes_per_client must be in [1, classes]");
  }
  Rng rng = derive_rng(seed, StreamTag::kPartition);
  detail::ClassPools pools(ds, rng);
  FederatedSplit split;
  split.clients.resize(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    auto& c = split.clients[k];
    c.seen_classes = detail::rotating_classes(k, spec.seen_classes_per_client, ds.classes);
    c.labeled = detail::take_labeled(pools, c.seen_classes, spec.labeled_per_client);
  }
  std::vector<std::size_t> sizes(clients, spec.unlabeled_per_client);
  if (spec.concentration > 0.0) {
    sizes = detail::apportion(detail::dirichlet(clients, spec.concentration, rng),
                              clients * spec.unlabeled_per_client);
  }
  for (std::size_t k = 0; k < clients; ++k) {
    auto& c = split.clients[k];
    std::vector<int> unseen;
    for (std::size_t cls = 0; cls < ds.classes; ++cls) {
      if (!std::binary_search(c.seen_classes.begin(), c.seen_classes.end(), static_cast<int>(cls))) {
        unseen.push_back(static_cast<int>(cls));
      }
    }
    const auto n_unseen = static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(sizes[k])));
    if (n_unseen > 0 && unseen.empty()) {
      throw DataError("client " + std::to_string(k) + " has no unseen classes to draw from");
    }
    auto from_unseen = pools.take_from(unseen, n_unseen, rng);
    auto from_seen = pools.take_from(c.seen_classes, sizes[k] - n_unseen, rng);
    c.unlabeled = std::move(from_seen);
    c.unlabeled.insert(c.unlabeled.end(), from_unseen.begin(), from_unseen.end());
    std::shuffle(c.unlabeled.begin(), c.unlabeled.end(), rng);
  }
  return split;
}

/// Training view of a split: labeled features + labels, unlabeled features only.
inline std::vector<ClientData> materialize(const Dataset& ds, const FederatedSplit& split) {
  std::vector<ClientData> out;
  out.reserve(split.clients.size());
  for (const auto& c : split.clients) {
    Dataset lab = subset(ds, c.labeled);
    ClientData d;
    d.labeled = make_labeled_shard(std::move(lab.features), std::move(lab.labels), ds.classes);
    d.unlabeled.features = gather_rows(ds.features, c.unlabeled);
    out.push_back(std::move(d));
  }
  return out;
}

inline nlohmann::json to_json(const FederatedSplit& split) {
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t k = 0; k < split.clients.size(); ++k) {
    const auto& c = split.clients[k];
    clients.push_back({{"client", k},
                       {"labeled", c.labeled},
                       {"unlabeled", c.unlabeled},
                       {"seen_classes", c.seen_classes}});
  }
  return {{"clients", clients}};
}

}  // namespace fedssl
