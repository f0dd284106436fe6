#pragma once

// Multi-positive contrastive loss with temporally weighted soft targets.
//
// Every batch row is used as an anchor against the remaining B-1 rows.
// The match distribution q is a temperature-scaled softmax over dot products;
// the target distribution p puts mass on matching candidates, weighted by
// exp(-lambda * d) where d is the time gap to the anchor divided by the
// anchor entity's span. The per-anchor loss is the cross-entropy H(p, q).

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "polycount/error.hpp"

namespace polycount {

enum class LossMode { self_supervised, supervised, temporally_aware };

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::self_supervised: return "self_supervised";
    case LossMode::supervised: return "supervised";
    case LossMode::temporally_aware: return "temporally_aware";
  }
  return "unknown";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "self_supervised") return LossMode::self_supervised;
  if (s == "supervised") return LossMode::supervised;
  if (s == "temporally_aware") return LossMode::temporally_aware;
  throw UsageError("unknown loss mode '" + s + "'");
}

struct LossConfig {
  double tau = 0.1;
  double lambda = 1.0;
  LossMode mode = LossMode::temporally_aware;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw UsageError("tau must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw UsageError("lambda must be >= 0");
  }

  // Supervised and self-supervised targets are uniform over matches.
  double effective_lambda() const {
    return mode == LossMode::temporally_aware ? lambda : 0.0;
  }
};

struct EmbeddingBatch {
  Eigen::MatrixXd embeddings;  // B x d, unit rows
  std::vector<std::string> entity_ids;
  std::vector<double> timestamps;
  std::map<std::string, double> entity_spans;
  // View-pair tags for self-supervised matching; -1 means untagged.
  std::vector<long> view_tags;

  std::size_t size() const { return static_cast<std::size_t>(embeddings.rows()); }

  // unit_rows=false skips the norm check; finite-difference probes move rows
  // off the sphere.
  void validate(bool unit_rows = true) const {
    const auto b = size();
    if (b < 2) throw DataError("embedding batch needs at least 2 rows");
    if (entity_ids.size() != b || timestamps.size() != b)
      throw DataError("embedding batch metadata length mismatch");
    if (!view_tags.empty() && view_tags.size() != b)
      throw DataError("view_tags length mismatch");
    for (std::size_t i = 0; i < b; ++i) {
      const double n = embeddings.row(static_cast<Eigen::Index>(i)).norm();
      if (unit_rows && !(std::abs(n - 1.0) <= 1e-6))
        throw DataError("embedding row " + std::to_string(i) + " is not unit norm");
      auto it = entity_spans.find(entity_ids[i]);
      if (it == entity_spans.end())
        throw DataError("missing span for entity " + entity_ids[i]);
      if (!(it->second > 0.0))
        throw DataError("span of entity " + entity_ids[i] + " must be positive");
    }
  }
};

struct LossOutput {
  double loss = 0.0;
  std::vector<double> per_anchor;   // 0 for anchors without matches
  std::vector<bool> valid_anchor;   // false for anchors without matches
  Eigen::MatrixXd gradient;         // d loss / d embeddings (unit rows)
};

// Probability of the anchor matching each other row. The returned vector is
// indexed by batch row; the anchor's own slot is 0.
inline Eigen::VectorXd match_distribution(std::size_t anchor,
                                          const EmbeddingBatch& batch,
                                          double tau) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (b < 2) throw DataError("match distribution needs at least one candidate");
  const auto a = static_cast<Eigen::Index>(anchor);
  Eigen::VectorXd logits = batch.embeddings * batch.embeddings.row(a).transpose() / tau;
  logits(a) = -std::numeric_limits<double>::infinity();
  const double mx = logits.maxCoeff();
  Eigen::VectorXd q = (logits.array() - mx).exp().matrix();
  q(a) = 0.0;  // vectorized exp does not map -inf to exactly zero
  q /= q.sum();
  return q;
}

inline Eigen::VectorXd temporal_distances(std::size_t anchor,
                                          const EmbeddingBatch& batch) {
  auto it = batch.entity_spans.find(batch.entity_ids.at(anchor));
  if (it == batch.entity_spans.end())
    throw DataError("missing span for entity " + batch.entity_ids[anchor]);
  if (!(it->second > 0.0)) throw DataError("entity span must be positive");
  const double span = it->second;
  const double t0 = batch.timestamps[anchor];
  Eigen::VectorXd d(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j)
    d(static_cast<Eigen::Index>(j)) = std::abs(batch.timestamps[j] - t0) / span;
  return d;
}

inline bool is_match(std::size_t anchor, std::size_t cand,
                     const EmbeddingBatch& batch, LossMode mode) {
  if (anchor == cand) return false;
  if (mode == LossMode::self_supervised) {
    if (batch.view_tags.empty())
      throw DataError("self-supervised mode requires view tags");
    return batch.view_tags[anchor] >= 0 &&
           batch.view_tags[anchor] == batch.view_tags[cand];
  }
  return batch.entity_ids[anchor] == batch.entity_ids[cand];
}

// Soft target distribution over rows (anchor slot 0). Returns an all-zero
// vector when the anchor has no match.
inline Eigen::VectorXd target_distribution(std::size_t anchor,
                                           const EmbeddingBatch& batch,
                                           const LossConfig& cfg) {
  const Eigen::VectorXd d = temporal_distances(anchor, batch);
  const double lambda = cfg.effective_lambda();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(d.size());
  double z = 0.0;
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    if (!is_match(anchor, static_cast<std::size_t>(j), batch, cfg.mode)) continue;
    p(j) = std::exp(-lambda * d(j));
    z += p(j);
  }
  if (z > 0.0) p /= z;
  return p;
}

inline LossOutput contrastive_loss(const EmbeddingBatch& batch, const LossConfig& cfg,
                                   bool require_unit_rows = true) {
  cfg.validate();
  batch.validate(require_unit_rows);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const Eigen::MatrixXd& e = batch.embeddings;
  const Eigen::MatrixXd logits_all = (e * e.transpose()) / cfg.tau;

  LossOutput out;
  out.per_anchor.assign(batch.size(), 0.0);
  out.valid_anchor.assign(batch.size(), false);
  out.gradient = Eigen::MatrixXd::Zero(b, e.cols());

  // dL_i / dlogit_ij = q_ij - p_ij, collected before scaling by 1/n_valid.
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(b, b);
  std::size_t n_valid = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto ai = static_cast<std::size_t>(i);
    const Eigen::VectorXd p = target_distribution(ai, batch, cfg);
    if (p.sum() <= 0.0) continue;

    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b; ++j)
      if (j != i) mx = std::max(mx, logits_all(i, j));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < b; ++j)
      if (j != i) sum += std::exp(logits_all(i, j) - mx);
    const double log_z = mx + std::log(sum);

    double h = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == i) continue;
      const double log_q = logits_all(i, j) - log_z;
      if (p(j) > 0.0) h -= p(j) * log_q;
      coef(i, j) = std::exp(log_q) - p(j);
    }
    out.per_anchor[ai] = h;
    out.valid_anchor[ai] = true;
    total += h;
    ++n_valid;
  }
  if (n_valid == 0)
    throw DataError("degenerate batch: no anchor has a matching candidate");

  out.loss = total / static_cast<double>(n_valid);
  // logit_ij = e_i . e_j / tau, so row i collects coef(i,:) e and coef(:,i)^T e.
  const double scale = 1.0 / (cfg.tau * static_cast<double>(n_valid));
  out.gradient = scale * ((coef + coef.transpose()) * e);
  return out;
}

}  // namespace polycount
