// SPDX-License-Identifier: Apache-2.0
//
// One-hidden-layer ReLU/softmax classifier with an analytic backward pass.
// Parameters live in a single flat vector so the server can average them and
// the landscape code can perturb them without knowing the layer structure.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>

#include "fedssl/error.hpp"
#include "fedssl/rng.hpp"

namespace fedssl {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Floor applied before every log of a probability.
inline constexpr double kLogFloor = 1e-12;

inline double safe_log(double p) { return std::log(p < kLogFloor ? kLogFloor : p); }

struct MlpShape {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t classes = 0;

  std::size_t parameter_count() const {
    return hidden * input + hidden + classes * hidden + classes;
  }
  bool operator==(const MlpShape&) const = default;
};

/// theta = (W1: hidden x input, b1, W2: classes x hidden, b2), stored flat in
/// that order with row-major weight blocks.
class ModelParams {
 public:
  using MatrixMap = Eigen::Map<DenseMatrix>;
  using ConstMatrixMap = Eigen::Map<const DenseMatrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  ModelParams() = default;

  explicit ModelParams(MlpShape shape)
      : shape_(shape), flat_(Vector::Zero(static_cast<Eigen::Index>(shape.parameter_count()))) {
    if (shape.input == 0 || shape.hidden == 0 || shape.classes < 2) {
      throw ConfigError("MLP needs input >= 1, hidden >= 1 and classes >= 2");
    }
  }

  ModelParams(MlpShape shape, Vector flat) : shape_(shape), flat_(std::move(flat)) {
    if (static_cast<std::size_t>(flat_.size()) != shape.parameter_count()) {
      throw ConfigError("unflatten: expected " + std::to_string(shape.parameter_count()) +
                        " values, got " + std::to_string(flat_.size()));
    }
  }

  /// Glorot-uniform weights, zero biases.
  static ModelParams glorot(MlpShape shape, Rng& rng) {
    ModelParams p(shape);
    auto fill = [&rng](auto block, std::size_t fan_in, std::size_t fan_out) {
      const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-s, s);
      for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = dist(rng);
    };
    fill(p.w1(), shape.input, shape.hidden);
    fill(p.w2(), shape.hidden, shape.classes);
    return p;
  }

  const MlpShape& shape() const { return shape_; }
  const Vector& flat() const { return flat_; }
  Vector& flat() { return flat_; }

  MatrixMap w1() { return {flat_.data() + w1_offset(), rows(shape_.hidden), rows(shape_.input)}; }
  ConstMatrixMap w1() const {
    return {flat_.data() + w1_offset(), rows(shape_.hidden), rows(shape_.input)};
  }
  VectorMap b1() { return {flat_.data() + b1_offset(), rows(shape_.hidden)}; }
  ConstVectorMap b1() const { return {flat_.data() + b1_offset(), rows(shape_.hidden)}; }
  MatrixMap w2() {
    return {flat_.data() + w2_offset(), rows(shape_.classes), rows(shape_.hidden)};
  }
  ConstMatrixMap w2() const {
    return {flat_.data() + w2_offset(), rows(shape_.classes), rows(shape_.hidden)};
  }
  VectorMap b2() { return {flat_.data() + b2_offset(), rows(shape_.classes)}; }
  ConstVectorMap b2() const { return {flat_.data() + b2_offset(), rows(shape_.classes)}; }

 private:
  static Eigen::Index rows(std::size_t n) { return static_cast<Eigen::Index>(n); }
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return shape_.hidden * shape_.input; }
  std::size_t w2_offset() const { return b1_offset() + shape_.hidden; }
  std::size_t b2_offset() const { return w2_offset() + shape_.classes * shape_.hidden; }

  MlpShape shape_{};
  Vector flat_;
};

inline Vector flatten(const ModelParams& params) { return params.flat(); }

inline ModelParams unflatten(MlpShape shape, Vector flat) {
  return ModelParams(shape, std::move(flat));
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  DenseMatrix hidden;  // post-ReLU, batch x hidden
  DenseMatrix probs;   // batch x classes
};

inline void softmax_rows_inplace(DenseMatrix& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

inline void check_batch(const ModelParams& params, const DenseMatrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != params.shape().input) {
    throw ConfigError("batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                      std::to_string(params.shape().input));
  }
}

inline ForwardCache forward_cached(const ModelParams& params, const DenseMatrix& batch) {
  check_batch(params, batch);
  ForwardCache cache;
  cache.hidden.noalias() = batch * params.w1().transpose();
  cache.hidden.rowwise() += params.b1().transpose();
  cache.hidden = cache.hidden.cwiseMax(0.0);
  cache.probs.noalias() = cache.hidden * params.w2().transpose();
  cache.probs.rowwise() += params.b2().transpose();
  softmax_rows_inplace(cache.probs);
  return cache;
}

/// Row i of the result is the predicted class distribution for batch row i.
inline DenseMatrix forward(const ModelParams& params, const DenseMatrix& batch) {
  return forward_cached(params, batch).probs;
}

/// Weights of the two per-row loss terms handled by `backward`:
///   ce * mean_i CE(target_i, p_i) + kl * mean_i KL(p_i, uniform).
struct LossCoefficients {
  double cross_entropy = 1.0;
  double kl_to_uniform = 0.0;
};

/// Gradient of the logits for the composite row loss, already divided by the
/// batch size.
inline DenseMatrix logit_gradient(const DenseMatrix& probs, const DenseMatrix& targets,
                                  LossCoefficients coeff) {
  const auto n = static_cast<double>(probs.rows());
  DenseMatrix grad = DenseMatrix::Zero(probs.rows(), probs.cols());
  if (coeff.cross_entropy != 0.0) grad += coeff.cross_entropy * (probs - targets);
  if (coeff.kl_to_uniform != 0.0) {
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      double entropy_term = 0.0;  // sum_j p_j log p_j
      for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        entropy_term += probs(i, j) * safe_log(probs(i, j));
      }
      for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        grad(i, j) += coeff.kl_to_uniform * probs(i, j) * (safe_log(probs(i, j)) - entropy_term);
      }
    }
  }
  return grad / n;
}

/// Backpropagates a logit gradient through the network.
inline ModelParams backprop(const ModelParams& params, const DenseMatrix& batch,
                            const ForwardCache& cache, const DenseMatrix& dlogits) {
  ModelParams grad(params.shape());
  grad.w2().noalias() = dlogits.transpose() * cache.hidden;
  grad.b2() = dlogits.colwise().sum().transpose();
  DenseMatrix dhidden = dlogits * params.w2();
  dhidden = dhidden.cwiseProduct((cache.hidden.array() > 0.0).cast<double>().matrix());
  grad.w1().noalias() = dhidden.transpose() * batch;
  grad.b1() = dhidden.colwise().sum().transpose();
  return grad;
}

/// Gradient of the composite minibatch loss described by `coeff`. Target rows
/// must be probability vectors; an empty batch contributes nothing.
inline ModelParams backward(const ModelParams& params, const DenseMatrix& batch,
                            const DenseMatrix& targets, LossCoefficients coeff) {
  check_batch(params, batch);
  if (batch.rows() == 0 || (coeff.cross_entropy == 0.0 && coeff.kl_to_uniform == 0.0)) {
    return ModelParams(params.shape());
  }
  if (coeff.cross_entropy != 0.0 &&
      (targets.rows() != batch.rows() ||
       static_cast<std::size_t>(targets.cols()) != params.shape().classes)) {
    throw ConfigError("targets shape does not match batch and class count");
  }
  const ForwardCache cache = forward_cached(params, batch);
  const DenseMatrix& t = coeff.cross_entropy != 0.0 ? targets : cache.probs;
  return backprop(params, batch, cache, logit_gradient(cache.probs, t, coeff));
}

}  // namespace fedssl
