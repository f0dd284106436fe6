#pragma once

// Central finite-difference verification of the loss gradient and of the
// head backward pass.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "polycount/head.hpp"
#include "polycount/loss.hpp"
#include "polycount/trainer.hpp"

namespace polycount {

// max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf)
inline double max_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
  if (scale == 0.0) return diff;
  return diff / scale;
}

struct RandomBatchSpec {
  std::size_t min_rows = 4;
  std::size_t max_rows = 16;
  std::size_t min_dim = 2;
  std::size_t max_dim = 8;
};

// Random unit-row batch with 2-4 entities, random timestamps and spans, and
// view tags pairing consecutive rows of the same entity.
inline EmbeddingBatch random_batch(std::mt19937_64& rng, const RandomBatchSpec& spec = {}) {
  std::uniform_int_distribution<std::size_t> rows_d(spec.min_rows, spec.max_rows);
  std::uniform_int_distribution<std::size_t> dim_d(spec.min_dim, spec.max_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t b = rows_d(rng), d = dim_d(rng);
  const std::size_t n_entities = std::uniform_int_distribution<std::size_t>(2, 4)(rng);

  EmbeddingBatch batch;
  batch.embeddings.resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < batch.embeddings.rows(); ++i) {
    for (Eigen::Index k = 0; k < batch.embeddings.cols(); ++k) batch.embeddings(i, k) = normal(rng);
    batch.embeddings.row(i).normalize();
  }
  for (std::size_t e = 0; e < n_entities; ++e)
    batch.entity_spans["e" + std::to_string(e)] = 0.05 + 0.95 * unit(rng);
  std::vector<std::size_t> label(b);
  for (std::size_t i = 0; i < b; ++i) {
    label[i] = i < 2 ? 0 : std::uniform_int_distribution<std::size_t>(0, n_entities - 1)(rng);
    batch.entity_ids.push_back("e" + std::to_string(label[i]));
    batch.timestamps.push_back(unit(rng));
  }
  batch.view_tags.assign(b, -1);
  long tag = 0;
  for (std::size_t i = 0; i + 1 < b; ++i)
    if (batch.view_tags[i] < 0 && label[i] == label[i + 1]) {
      batch.view_tags[i] = batch.view_tags[i + 1] = tag++;
    }
  if (tag == 0) batch.view_tags[0] = batch.view_tags[1] = 0;  // rows 0 and 1 share entity 0
  return batch;
}

inline Eigen::MatrixXd numeric_loss_gradient(const EmbeddingBatch& batch, const LossConfig& cfg,
                                             double eps) {
  EmbeddingBatch probe = batch;
  Eigen::MatrixXd g(batch.embeddings.rows(), batch.embeddings.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index k = 0; k < g.cols(); ++k) {
      const double x = batch.embeddings(i, k);
      probe.embeddings(i, k) = x + eps;
      const double up = contrastive_loss(probe, cfg, false).loss;
      probe.embeddings(i, k) = x - eps;
      const double down = contrastive_loss(probe, cfg, false).loss;
      probe.embeddings(i, k) = x;
      g(i, k) = (up - down) / (2.0 * eps);
    }
  return g;
}

inline double loss_gradient_error(const EmbeddingBatch& batch, const LossConfig& cfg,
                                  double eps = 1e-5) {
  const auto analytic = contrastive_loss(batch, cfg).gradient;
  return max_relative_error(analytic, numeric_loss_gradient(batch, cfg, eps));
}

// Compares head parameter gradients (through normalization and every layer)
// with central differences of the batch loss.
inline double head_gradient_error(const EmbeddingHead& head, const BatchInputs& inputs,
                                  const LossConfig& cfg, double eps = 1e-5) {
  const auto analytic = head_loss_and_gradient(head, inputs, cfg).grads;
  double worst = 0.0;
  EmbeddingHead probe = head;
  for (std::size_t l = 0; l < head.layers().size(); ++l) {
    auto& w = probe.layers()[l].weight;
    Eigen::MatrixXd nw(w.rows(), w.cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double x = w(r, c);
        w(r, c) = x + eps;
        const double up = evaluate_batch_loss(probe, inputs, cfg);
        w(r, c) = x - eps;
        const double down = evaluate_batch_loss(probe, inputs, cfg);
        w(r, c) = x;
        nw(r, c) = (up - down) / (2.0 * eps);
      }
    auto& b = probe.layers()[l].bias;
    Eigen::VectorXd nb(b.size());
    for (Eigen::Index r = 0; r < b.size(); ++r) {
      const double x = b(r);
      b(r) = x + eps;
      const double up = evaluate_batch_loss(probe, inputs, cfg);
      b(r) = x - eps;
      const double down = evaluate_batch_loss(probe, inputs, cfg);
      b(r) = x;
      nb(r) = (up - down) / (2.0 * eps);
    }
    worst = std::max(worst, max_relative_error(analytic[l].weight, nw));
    worst = std::max(worst, max_relative_error(analytic[l].bias, nb));
  }
  return worst;
}

// Tiny head (input 4, hidden 5, output 3) on a random batch of raw inputs.
inline double random_head_gradient_error(std::mt19937_64& rng, const LossConfig& cfg,
                                         double eps = 1e-5) {
  const auto seed = rng();
  HeadConfig hc{4, 5, 3};
  EmbeddingHead head = EmbeddingHead::initialize(hc, seed);
  EmbeddingBatch layout = random_batch(rng, {6, 10, 2, 2});
  BatchInputs in;
  std::normal_distribution<double> normal(0.0, 1.0);
  in.features.resize(layout.embeddings.rows(), 4);
  for (Eigen::Index i = 0; i < in.features.rows(); ++i)
    for (Eigen::Index k = 0; k < 4; ++k) in.features(i, k) = normal(rng);
  in.entity_ids = layout.entity_ids;
  in.timestamps = layout.timestamps;
  in.entity_spans = layout.entity_spans;
  in.view_tags = layout.view_tags;
  return head_gradient_error(head, in, cfg, eps);
}

struct GradientCheckReport {
  std::size_t batches = 0;
  double max_error_self_supervised = 0.0;
  double max_error_supervised = 0.0;
  double max_error_temporally_aware = 0.0;
  double max_error_head = 0.0;

  double max_loss_error() const {
    return std::max({max_error_self_supervised, max_error_supervised, max_error_temporally_aware});
  }
};

inline GradientCheckReport run_gradient_check(std::size_t batches, std::uint64_t seed,
                                              double tau = 0.1, double lambda = 1.0,
                                              double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  GradientCheckReport rep;
  rep.batches = batches;
  for (std::size_t n = 0; n < batches; ++n) {
    const EmbeddingBatch batch = random_batch(rng);
    for (LossMode mode : {LossMode::self_supervised, LossMode::supervised, LossMode::temporally_aware}) {
      const LossConfig cfg{tau, lambda, mode};
      const double err = loss_gradient_error(batch, cfg, eps);
      double& slot = mode == LossMode::self_supervised ? rep.max_error_self_supervised
                     : mode == LossMode::supervised    ? rep.max_error_supervised
                                                       : rep.max_error_temporally_aware;
      slot = std::max(slot, err);
    }
    const LossConfig head_cfg{tau, lambda, static_cast<LossMode>(n % 3)};
    rep.max_error_head = std::max(rep.max_error_head, random_head_gradient_error(rng, head_cfg, eps));
  }
  return rep;
}

}  // namespace polycount
