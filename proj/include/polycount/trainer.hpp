#pragma once

// Batch sampling with several views per entity, and the training loop for
// the embedding head.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "polycount/error.hpp"
#include "polycount/head.hpp"
#include "polycount/loss.hpp"

namespace polycount {

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw UsageError("unknown optimizer '" + s + "'");
}

struct TrainerConfig {
  std::size_t batch_size = 56;
  std::size_t views_per_polyp = 14;
  std::size_t polyps_per_batch = 3;
  std::size_t epochs = 50;
  std::size_t steps_per_epoch = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;

  void validate() const {
    if (batch_size < 4) throw UsageError("batch_size must be >= 4");
    if (views_per_polyp < 2) throw UsageError("views_per_polyp must be >= 2");
    if (polyps_per_batch < 1) throw UsageError("polyps_per_batch must be >= 1");
    if (views_per_polyp * polyps_per_batch > batch_size)
      throw UsageError("views_per_polyp * polyps_per_batch exceeds batch_size");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw UsageError("learning_rate must be >= 0");
  }
};

struct FragmentSample {
  Eigen::VectorXd features;  // mean of the fragment's frame features
  std::string tracklet_id;
  double timestamp = 0.0;
};

// All fragments of one entity. Entity ids must be unique across videos.
struct EntityGroup {
  std::string entity_id;
  double span = 0.0;
  std::vector<FragmentSample> fragments;
};

using TrainingSet = std::vector<EntityGroup>;

struct BatchInputs {
  Eigen::MatrixXd features;
  std::vector<std::string> entity_ids;
  std::vector<double> timestamps;
  std::map<std::string, double> entity_spans;
  std::vector<long> view_tags;

  EmbeddingBatch with_embeddings(Eigen::MatrixXd embeddings) const {
    return {std::move(embeddings), entity_ids, timestamps, entity_spans, view_tags};
  }
};

namespace detail {

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// k distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> choose_distinct(std::mt19937_64& rng, std::size_t n,
                                                std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

// k indices from [0, n): without replacement when possible.
inline std::vector<std::size_t> choose_views(std::mt19937_64& rng, std::size_t n,
                                             std::size_t k) {
  if (n >= k) return choose_distinct(rng, n, k);
  std::vector<std::size_t> out(k);
  for (auto& v : out) v = uniform_index(rng, n);
  return out;
}

}  // namespace detail

// Picks polyps_per_batch entities uniformly without replacement and
// views_per_polyp fragments of each. In self-supervised mode the views come
// in pairs drawn from a single tracklet and each pair carries its own tag.
inline BatchInputs sample_batch(const TrainingSet& set, const TrainerConfig& cfg,
                                LossMode mode, std::mt19937_64& rng) {
  cfg.validate();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (!set[i].fragments.empty()) eligible.push_back(i);
  if (eligible.size() < cfg.polyps_per_batch)
    throw DataError("only " + std::to_string(eligible.size()) +
                    " entities with fragments available, need " +
                    std::to_string(cfg.polyps_per_batch) + " per batch");
  const auto dim = set[eligible.front()].fragments.front().features.size();

  BatchInputs b;
  const auto rows = static_cast<Eigen::Index>(cfg.views_per_polyp * cfg.polyps_per_batch);
  b.features.resize(rows, dim);
  Eigen::Index row = 0;
  long tag = 0;
  auto push = [&](const EntityGroup& g, const FragmentSample& f, long view_tag) {
    if (f.features.size() != dim) throw DataError("inconsistent feature dimensions");
    b.features.row(row++) = f.features.transpose();
    b.entity_ids.push_back(g.entity_id);
    b.timestamps.push_back(f.timestamp);
    b.view_tags.push_back(view_tag);
  };

  for (std::size_t pick : detail::choose_distinct(rng, eligible.size(), cfg.polyps_per_batch)) {
    const EntityGroup& g = set[eligible[pick]];
    b.entity_spans[g.entity_id] = g.span;
    if (mode != LossMode::self_supervised) {
      for (std::size_t v : detail::choose_views(rng, g.fragments.size(), cfg.views_per_polyp))
        push(g, g.fragments[v], -1);
      continue;
    }
    std::map<std::string, std::vector<std::size_t>> by_tracklet;
    for (std::size_t i = 0; i < g.fragments.size(); ++i)
      by_tracklet[g.fragments[i].tracklet_id].push_back(i);
    std::vector<const std::vector<std::size_t>*> tracklets;
    for (const auto& [id, idx] : by_tracklet) tracklets.push_back(&idx);
    std::size_t remaining = cfg.views_per_polyp;
    while (remaining > 0) {
      const auto& members = *tracklets[detail::uniform_index(rng, tracklets.size())];
      const std::size_t take = std::min<std::size_t>(2, remaining);
      for (std::size_t v : detail::choose_views(rng, members.size(), take))
        push(g, g.fragments[members[v]], take == 2 ? tag : -1);
      ++tag;
      remaining -= take;
    }
  }
  return b;
}

struct AdamState {
  std::vector<DenseLayer> m;
  std::vector<DenseLayer> v;
  std::size_t step = 0;
};

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, const EmbeddingHead& head)
      : kind_(kind), lr_(lr) {
    for (const auto& l : head.layers()) {
      DenseLayer z{Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                   Eigen::VectorXd::Zero(l.bias.size())};
      state_.m.push_back(z);
      state_.v.push_back(z);
    }
  }

  void step(EmbeddingHead& head, const std::vector<DenseLayer>& grads) {
    auto& layers = head.layers();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weight -= lr_ * grads[l].weight;
        layers[l].bias -= lr_ * grads[l].bias;
      }
      return;
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state_.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state_.step));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
      param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].weight, state_.m[l].weight, state_.v[l].weight, grads[l].weight);
      update(layers[l].bias, state_.m[l].bias, state_.v[l].bias, grads[l].bias);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  AdamState state_;
};

struct StepResult {
  double loss = 0.0;
  std::vector<DenseLayer> grads;
};

// Loss and parameter gradients of the head on one batch.
inline StepResult head_loss_and_gradient(const EmbeddingHead& head, const BatchInputs& batch,
                                         const LossConfig& loss_cfg) {
  const auto trace = head.forward(batch.features);
  const auto out = contrastive_loss(batch.with_embeddings(trace.output), loss_cfg);
  return {out.loss, head.backward(trace, out.gradient)};
}

inline double evaluate_batch_loss(const EmbeddingHead& head, const BatchInputs& batch,
                                  const LossConfig& loss_cfg) {
  return contrastive_loss(batch.with_embeddings(head.embed(batch.features)), loss_cfg).loss;
}

struct TrainResult {
  EmbeddingHead head;
  std::vector<double> epoch_loss;    // mean training loss per epoch
  std::vector<double> heldout_loss;  // fixed held-out batch, after each epoch
};

inline TrainResult train(const TrainingSet& set, EmbeddingHead head,
                         const LossConfig& loss_cfg, const TrainerConfig& cfg) {
  cfg.validate();
  loss_cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 heldout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const BatchInputs heldout = sample_batch(set, cfg, loss_cfg.mode, heldout_rng);

  Optimizer opt(cfg.optimizer, cfg.learning_rate, head);
  TrainResult res;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
      const BatchInputs batch = sample_batch(set, cfg, loss_cfg.mode, rng);
      StepResult step = head_loss_and_gradient(head, batch, loss_cfg);
      if (!std::isfinite(step.loss))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                             "; learning rate too high?");
      opt.step(head, step.grads);
      if (!head.finite())
        throw NumericalError("non-finite head parameters at epoch " +
                             std::to_string(epoch) + "; learning rate too high?");
      sum += step.loss;
    }
    res.epoch_loss.push_back(cfg.steps_per_epoch ? sum / static_cast<double>(cfg.steps_per_epoch)
                                                 : 0.0);
    const double h = evaluate_batch_loss(head, heldout, loss_cfg);
    if (!std::isfinite(h)) throw NumericalError("non-finite held-out loss");
    res.heldout_loss.push_back(h);
  }
  res.head = std::move(head);
  return res;
}

}  // namespace polycount
