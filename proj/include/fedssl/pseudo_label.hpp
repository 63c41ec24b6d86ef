// SPDX-License-Identifier: Apache-2.0
//
// Pseudo-label prediction for unlabeled samples. With a positive pseudo-label
// regularizer weight alpha1 the optimal labels are the sharpened model
// predictions p^(alpha0/alpha1) / sum(p^(alpha0/alpha1)); with alpha1 = 0 they
// collapse to one-hot argmax labels.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fedssl/mlp.hpp"

namespace fedssl {

/// One probability-vector row per unlabeled sample of a client, index-aligned
/// with that client's unlabeled shard.
struct PseudoLabelTable {
  int client_id = 0;
  DenseMatrix rows;

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
};

inline PseudoLabelTable uniform_table(int client_id, std::size_t count, std::size_t classes) {
  return {client_id, DenseMatrix::Constant(static_cast<Eigen::Index>(count),
                                           static_cast<Eigen::Index>(classes),
                                           1.0 / static_cast<double>(classes))};
}

/// One-hot at the argmax; ties go to the smallest index.
inline std::vector<double> hard_label(std::span<const double> p) {
  std::vector<double> out(p.size(), 0.0);
  if (p.empty()) return out;
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.size(); ++j) {
    if (p[j] > p[best]) best = j;
  }
  out[best] = 1.0;
  return out;
}

/// p^ratio renormalised, evaluated as exp(ratio * log p) with the log floor.
/// Undefined for ratio <= 0; callers with alpha1 == 0 use hard_label.
inline std::vector<double> sharpen(std::span<const double> p, double ratio) {
  if (ratio == 1.0) return {p.begin(), p.end()};
  std::vector<double> out(p.size());
  if (p.empty()) return out;
  // Shift by the max exponent so the largest entry is exp(0) = 1.
  double max_exp = -INFINITY;
  for (std::size_t j = 0; j < p.size(); ++j) {
    out[j] = ratio * safe_log(p[j]);
    max_exp = std::max(max_exp, out[j]);
  }
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - max_exp);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

/// Refreshes a client's labels from the current model: sharpen with exponent
/// alpha0/alpha1 when alpha1 > 0, hard labels otherwise.
inline PseudoLabelTable update_pseudo_labels(const ModelParams& params,
                                             const DenseMatrix& unlabeled, double alpha0,
                                             double alpha1, int client_id) {
  PseudoLabelTable table{client_id, DenseMatrix(unlabeled.rows(),
                                                static_cast<Eigen::Index>(params.shape().classes))};
  if (unlabeled.rows() == 0) return table;
  const DenseMatrix probs = forward(params, unlabeled);
  const auto classes = static_cast<std::size_t>(probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    std::span<const double> row(probs.row(i).data(), classes);
    const auto label = alpha1 > 0.0 ? sharpen(row, alpha0 / alpha1) : hard_label(row);
    for (std::size_t j = 0; j < classes; ++j) table.rows(i, static_cast<Eigen::Index>(j)) = label[j];
  }
  return table;
}

}  // namespace fedssl
