// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and scalar reference implementations. The references use
// plain loops over std::vector so they share no code with the library paths
// they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedssl/fedssl.hpp"

namespace fedssl::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedssl_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DenseMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline ModelParams random_params(MlpShape shape, std::uint64_t seed) {
  Rng rng(seed);
  return ModelParams::glorot(shape, rng);
}

/// Labeled and unlabeled shards for one client drawn from blob data.
inline ClientData toy_client(std::size_t classes, std::size_t dim, std::size_t labeled,
                             std::size_t unlabeled, std::uint64_t seed) {
  const Dataset ds = synth_blobs(classes, (labeled + unlabeled) / classes + 1, dim, 0.2, seed);
  std::vector<std::size_t> lab(labeled);
  std::vector<std::size_t> unl(unlabeled);
  for (std::size_t i = 0; i < labeled; ++i) lab[i] = i;
  for (std::size_t i = 0; i < unlabeled; ++i) unl[i] = labeled + i;
  Dataset l = subset(ds, lab);
  ClientData d;
  d.labeled = make_labeled_shard(std::move(l.features), std::move(l.labels), classes);
  d.unlabeled.features = gather_rows(ds.features, unl);
  return d;
}

inline std::vector<ClientData> toy_clients(std::size_t classes, std::size_t dim,
                                           const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                           std::uint64_t seed) {
  std::vector<ClientData> out;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    out.push_back(toy_client(classes, dim, sizes[k].first, sizes[k].second, seed + 101 * k));
  }
  return out;
}

/// Softmax probabilities of a one-hidden-layer ReLU network, one row at a
/// time, reading weights straight from the flat layout W1, b1, W2, b2.
inline std::vector<double> reference_probs(const ModelParams& p, const double* x) {
  const auto s = p.shape();
  const double* w = p.flat().data();
  const double* w1 = w;
  const double* b1 = w1 + s.hidden * s.input;
  const double* w2 = b1 + s.hidden;
  const double* b2 = w2 + s.classes * s.hidden;
  std::vector<double> h(s.hidden);
  for (std::size_t j = 0; j < s.hidden; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < s.input; ++i) a += w1[j * s.input + i] * x[i];
    h[j] = a > 0.0 ? a : 0.0;
  }
  std::vector<double> z(s.classes);
  double zmax = -INFINITY;
  for (std::size_t c = 0; c < s.classes; ++c) {
    double a = b2[c];
    for (std::size_t j = 0; j < s.hidden; ++j) a += w2[c * s.hidden + j] * h[j];
    z[c] = a;
    zmax = std::max(zmax, a);
  }
  double total = 0.0;
  for (auto& v : z) total += v = std::exp(v - zmax);
  for (auto& v : z) v /= total;
  return z;
}

inline double reference_kl_uniform(const std::vector<double>& p) {
  const double c = static_cast<double>(p.size());
  double kl = 0.0;
  for (double v : p) {
    if (v > 0.0) kl += v * std::log(v * c);
  }
  return kl;
}

/// F_k from first principles: mean CE on labeled rows, alpha0 mean CE against
/// the pseudo labels, alpha1 mean KL(v, u), alpha2 mean KL(f(u), u).
inline double reference_objective(const ModelParams& p, const ClientData& d,
                                  const DenseMatrix& vhat, const LossWeights& w) {
  double total = 0.0;
  const auto n = static_cast<std::size_t>(d.labeled.features.rows());
  if (n > 0) {
    double ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = d.labeled.features.row(static_cast<Eigen::Index>(i)).eval();
      const auto probs = reference_probs(p, row.data());
      ce -= std::log(std::max(probs[static_cast<std::size_t>(d.labeled.labels[i])], 1e-12));
    }
    total += ce / static_cast<double>(n);
  }
  const auto m = static_cast<std::size_t>(d.unlabeled.features.rows());
  if (m > 0) {
    double ce = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto row = d.unlabeled.features.row(static_cast<Eigen::Index>(i)).eval();
      const auto probs = reference_probs(p, row.data());
      std::vector<double> v(probs.size());
      for (std::size_t c = 0; c < probs.size(); ++c) {
        v[c] = vhat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        ce -= v[c] * std::log(std::max(probs[c], 1e-12));
      }
      r1 += reference_kl_uniform(v);
      r2 += reference_kl_uniform(probs);
    }
    total += (w.alpha0 * ce + w.alpha1 * r1 + w.alpha2 * r2) / static_cast<double>(m);
  }
  return total;
}

/// Central-difference gradient of any scalar function of the flat parameters.
template <class F>
Vector finite_difference(const ModelParams& p, F&& f, double h = 1e-5) {
  Vector g(p.flat().size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    ModelParams plus = p;
    ModelParams minus = p;
    plus.flat()[i] += h;
    minus.flat()[i] -= h;
    g[i] = (f(plus) - f(minus)) / (2.0 * h);
  }
  return g;
}

inline double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace fedssl::testing
