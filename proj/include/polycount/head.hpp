#pragma once

// Small MLP embedding head: input -> [tanh hidden] -> d, rows l2-normalized.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "polycount/error.hpp"

namespace polycount {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct HeadConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;  // 0 means a single linear layer
  std::size_t embedding_dim = 128;

  void validate() const {
    if (input_dim == 0) throw UsageError("head input_dim must be positive");
    if (embedding_dim == 0) throw UsageError("head embedding_dim must be positive");
  }
};

class EmbeddingHead {
 public:
  struct Trace {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer, B x in_l
    Eigen::MatrixXd raw;                  // last layer output before normalization
    Eigen::VectorXd norms;
    Eigen::MatrixXd output;               // unit rows
  };

  EmbeddingHead() = default;
  explicit EmbeddingHead(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    check_shapes();
  }

  // Glorot-uniform weights, zero biases.
  static EmbeddingHead initialize(const HeadConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> dims{cfg.input_dim};
    if (cfg.hidden_dim > 0) dims.push_back(cfg.hidden_dim);
    dims.push_back(cfg.embedding_dim);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(dims[l]);
      const auto out = static_cast<Eigen::Index>(dims[l + 1]);
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-limit, limit);
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = u(rng);
      layers.push_back(std::move(layer));
    }
    return EmbeddingHead(std::move(layers));
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::size_t input_dim() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
  }
  std::size_t output_dim() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
  }

  Trace forward(const Eigen::MatrixXd& x) const {
    if (layers_.empty()) throw UsageError("embedding head has no layers");
    if (static_cast<std::size_t>(x.cols()) != input_dim())
      throw DataError("feature dimension " + std::to_string(x.cols()) +
                      " does not match head input " + std::to_string(input_dim()));
    Trace t;
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      t.inputs.push_back(a);
      Eigen::MatrixXd z = a * layers_[l].weight.transpose();
      z.rowwise() += layers_[l].bias.transpose();
      if (l + 1 < layers_.size())
        a = z.array().tanh().matrix();
      else
        t.raw = std::move(z);
    }
    t.norms = t.raw.rowwise().norm();
    for (Eigen::Index i = 0; i < t.norms.size(); ++i)
      if (!(t.norms(i) > 0.0) || !std::isfinite(t.norms(i)))
        throw NumericalError("embedding head produced a zero or non-finite row");
    t.output = t.norms.asDiagonal().inverse() * t.raw;
    return t;
  }

  Eigen::MatrixXd embed(const Eigen::MatrixXd& x) const { return forward(x).output; }

  // Parameter gradients given d loss / d output (unit rows).
  std::vector<DenseLayer> backward(const Trace& t, const Eigen::MatrixXd& grad_output) const {
    // Through y = u / |u|: du = (g - y (y.g)) / |u|.
    const Eigen::VectorXd dots = (grad_output.array() * t.output.array()).rowwise().sum();
    Eigen::MatrixXd dz = grad_output - dots.asDiagonal() * t.output;
    dz = t.norms.asDiagonal().inverse() * dz;

    std::vector<DenseLayer> grads(layers_.size());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      grads[l].weight = dz.transpose() * t.inputs[l];
      grads[l].bias = dz.colwise().sum().transpose();
      if (l == 0) break;
      const Eigen::MatrixXd da = dz * layers_[l].weight;
      // inputs[l] = tanh(z_{l-1})
      dz = (da.array() * (1.0 - t.inputs[l].array().square())).matrix();
    }
    return grads;
  }

  bool finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

 private:
  void check_shapes() const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weight.rows())
        throw DataError("head layer " + std::to_string(l) + " bias/weight mismatch");
      if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
        throw DataError("head layer " + std::to_string(l) + " input mismatch");
    }
  }

  std::vector<DenseLayer> layers_;
};

// Normalized mean of fragment embeddings.
inline Eigen::VectorXd aggregate_embedding(const Eigen::MatrixXd& fragment_embeddings) {
  if (fragment_embeddings.rows() == 0) throw DataError("no fragments to aggregate");
  Eigen::VectorXd mean = fragment_embeddings.colwise().mean().transpose();
  const double n = mean.norm();
  if (!(n > 0.0)) throw NumericalError("fragment embeddings cancel to zero mean");
  return mean / n;
}

}  // namespace polycount
