#pragma once

// Tracklet re-association: visual similarity V, temporal adjacency T, their
// convex combination S, and clustering by Affinity Propagation or by
// thresholded connected components.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "polycount/error.hpp"

namespace polycount {

struct TrackletDescriptor {
  std::string tracklet_id;
  Eigen::VectorXd embedding;  // unit norm
  double position = 0.0;      // tracklet midpoint / video length
};

enum class ClusterAlgorithm { threshold, ap, temporal_ap };

inline const char* to_string(ClusterAlgorithm a) {
  switch (a) {
    case ClusterAlgorithm::threshold: return "threshold";
    case ClusterAlgorithm::ap: return "ap";
    case ClusterAlgorithm::temporal_ap: return "temporal_ap";
  }
  return "unknown";
}

inline ClusterAlgorithm parse_cluster_algorithm(const std::string& s) {
  if (s == "threshold") return ClusterAlgorithm::threshold;
  if (s == "ap") return ClusterAlgorithm::ap;
  if (s == "temporal_ap") return ClusterAlgorithm::temporal_ap;
  throw UsageError("unknown clustering algorithm '" + s + "'");
}

struct ClusteringConfig {
  ClusterAlgorithm algorithm = ClusterAlgorithm::temporal_ap;
  double threshold = 0.5;
  double preference = 0.0;
  double gamma = 1.0;
  double alpha = 0.5;
  double damping = 0.5;
  std::size_t max_iterations = 200;
  std::size_t convergence_window = 15;

  void validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
    if (!std::isfinite(preference)) throw UsageError("preference must be finite");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw UsageError("gamma must be > 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
    if (!(damping >= 0.5 && damping < 1.0)) throw UsageError("damping must lie in [0.5, 1)");
    if (max_iterations < 1) throw UsageError("max_iterations must be >= 1");
    if (convergence_window < 1) throw UsageError("convergence_window must be >= 1");
  }
};

struct SimilarityBundle {
  Eigen::MatrixXd visual;    // V
  Eigen::MatrixXd temporal;  // T
  Eigen::MatrixXd combined;  // S
  double gamma = 1.0;
  double alpha = 1.0;
};

// Cosine similarity mapped from [-1, 1] onto [0, 1].
inline Eigen::MatrixXd visual_similarity(const std::vector<TrackletDescriptor>& descriptors) {
  if (descriptors.empty()) throw DataError("visual_similarity needs at least one descriptor");
  const auto n = static_cast<Eigen::Index>(descriptors.size());
  const auto dim = descriptors.front().embedding.size();
  Eigen::MatrixXd e(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = descriptors[static_cast<std::size_t>(i)].embedding;
    if (v.size() != dim) throw DataError("descriptor embedding dimensions differ");
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DataError("zero embedding for " + descriptors[static_cast<std::size_t>(i)].tracklet_id);
    e.row(i) = v.transpose() / norm;
  }
  Eigen::MatrixXd v = e * e.transpose();
  v = ((v.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
  v = 0.5 * (v + v.transpose()).eval();
  v.diagonal().setOnes();
  return v;
}

inline Eigen::MatrixXd temporal_adjacency(const std::vector<TrackletDescriptor>& descriptors,
                                          double gamma) {
  if (!(gamma > 0.0)) throw UsageError("gamma must be > 0");
  const auto n = static_cast<Eigen::Index>(descriptors.size());
  Eigen::MatrixXd t(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      t(i, j) = std::exp(-gamma * std::abs(descriptors[static_cast<std::size_t>(i)].position -
                                           descriptors[static_cast<std::size_t>(j)].position));
  return t;
}

inline Eigen::MatrixXd combine(const Eigen::MatrixXd& v, const Eigen::MatrixXd& t, double alpha) {
  if (v.rows() != t.rows() || v.cols() != t.cols())
    throw DataError("combine: V and T shapes differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  return alpha * v + (1.0 - alpha) * t;
}

inline SimilarityBundle similarity_bundle(const std::vector<TrackletDescriptor>& descriptors,
                                          double gamma, double alpha) {
  SimilarityBundle b;
  b.visual = visual_similarity(descriptors);
  b.temporal = temporal_adjacency(descriptors, gamma);
  b.combined = combine(b.visual, b.temporal, alpha);
  b.gamma = gamma;
  b.alpha = alpha;
  return b;
}

struct ApResult {
  std::vector<int> labels;             // cluster index per point
  std::vector<std::size_t> exemplars;  // exemplar point per cluster
  bool converged = false;
  std::size_t iterations = 0;
};

// Frey-Dueck responsibility/availability message passing on similarities s
// (higher is more similar). The scalar preference replaces the diagonal.
inline ApResult affinity_propagation(const Eigen::MatrixXd& similarity, double preference,
                                     double damping = 0.5, std::size_t max_iterations = 200,
                                     std::size_t convergence_window = 15) {
  if (similarity.rows() != similarity.cols())
    throw DataError("affinity_propagation: similarity matrix is not square");
  if (!similarity.allFinite() || !std::isfinite(preference))
    throw DataError("affinity_propagation: non-finite similarity");
  if (!(damping >= 0.5 && damping < 1.0)) throw UsageError("damping must lie in [0.5, 1)");
  const Eigen::Index n = similarity.rows();
  ApResult res;
  if (n == 0) {
    res.converged = true;
    return res;
  }

  Eigen::MatrixXd s = similarity;
  s.diagonal().setConstant(preference);
  // Fixed index-dependent jitter breaks exact ties reproducibly.
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      s(i, j) += 1e-12 * static_cast<double>(i + j * n);

  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  std::vector<char> exemplar(static_cast<std::size_t>(n), 0), previous;
  std::size_t stable = 0;

  for (std::size_t it = 0; it < max_iterations; ++it) {
    res.iterations = it + 1;
    // responsibilities
    for (Eigen::Index i = 0; i < n; ++i) {
      double first = -INFINITY, second = -INFINITY;
      Eigen::Index arg = 0;
      for (Eigen::Index k = 0; k < n; ++k) {
        const double v = a(i, k) + s(i, k);
        if (v > first) {
          second = first;
          first = v;
          arg = k;
        } else if (v > second) {
          second = v;
        }
      }
      for (Eigen::Index k = 0; k < n; ++k) {
        const double fresh = s(i, k) - (k == arg ? second : first);
        r(i, k) = damping * r(i, k) + (1.0 - damping) * fresh;
      }
    }
    // availabilities
    for (Eigen::Index k = 0; k < n; ++k) {
      double col = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) col += i == k ? r(k, k) : std::max(0.0, r(i, k));
      for (Eigen::Index i = 0; i < n; ++i) {
        double fresh;
        if (i == k)
          fresh = col - r(k, k);
        else
          fresh = std::min(0.0, col - std::max(0.0, r(i, k)));
        a(i, k) = damping * a(i, k) + (1.0 - damping) * fresh;
      }
    }

    bool any = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      exemplar[static_cast<std::size_t>(k)] = (a(k, k) + r(k, k)) > 0.0;
      any = any || exemplar[static_cast<std::size_t>(k)];
    }
    stable = exemplar == previous ? stable + 1 : 1;
    previous = exemplar;
    if (any && stable >= convergence_window) {
      res.converged = true;
      break;
    }
  }

  std::vector<std::size_t> ex;
  for (Eigen::Index k = 0; k < n; ++k)
    if (exemplar[static_cast<std::size_t>(k)]) ex.push_back(static_cast<std::size_t>(k));
  if (ex.empty()) {
    // No exemplar emerged: fall back to the best single exemplar.
    Eigen::Index best = 0;
    s.colwise().sum().maxCoeff(&best);
    ex.push_back(static_cast<std::size_t>(best));
  }

  auto assign = [&](const std::vector<std::size_t>& exemplars) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      for (std::size_t c = 1; c < exemplars.size(); ++c)
        if (s(i, static_cast<Eigen::Index>(exemplars[c])) >
            s(i, static_cast<Eigen::Index>(exemplars[static_cast<std::size_t>(best)])))
          best = static_cast<int>(c);
      labels[static_cast<std::size_t>(i)] = best;
    }
    for (std::size_t c = 0; c < exemplars.size(); ++c) labels[exemplars[c]] = static_cast<int>(c);
    return labels;
  };

  // Refinement: within each cluster, the member with the largest summed
  // similarity to the other members becomes the exemplar.
  std::vector<int> labels = assign(ex);
  for (std::size_t c = 0; c < ex.size(); ++c) {
    std::vector<Eigen::Index> members;
    for (Eigen::Index i = 0; i < n; ++i)
      if (labels[static_cast<std::size_t>(i)] == static_cast<int>(c)) members.push_back(i);
    double best_sum = -INFINITY;
    for (Eigen::Index j : members) {
      double sum = 0.0;
      for (Eigen::Index i : members) sum += s(i, j);
      if (sum > best_sum) {
        best_sum = sum;
        ex[c] = static_cast<std::size_t>(j);
      }
    }
  }
  std::sort(ex.begin(), ex.end());
  ex.erase(std::unique(ex.begin(), ex.end()), ex.end());
  res.labels = assign(ex);
  res.exemplars = std::move(ex);
  return res;
}

// Connected components of the graph with an edge wherever s_ij >= theta.
// Labels are numbered in order of first appearance.
inline std::vector<int> threshold_clustering(const Eigen::MatrixXd& similarity, double theta) {
  if (similarity.rows() != similarity.cols())
    throw DataError("threshold_clustering: similarity matrix is not square");
  if (!(theta >= 0.0 && theta <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
  const auto n = static_cast<std::size_t>(similarity.rows());
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (similarity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= theta) {
        const auto ri = find(i), rj = find(j);
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
      }
  std::vector<int> labels(n, -1), root_label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    labels[i] = root_label[r];
  }
  return labels;
}

inline std::size_t count_entities(const std::vector<int>& labels) {
  return std::set<int>(labels.begin(), labels.end()).size();
}

struct ClusterResult {
  std::vector<int> labels;
  std::vector<std::size_t> exemplars;  // empty for threshold clustering
  bool converged = true;
  std::size_t iterations = 0;
  std::size_t entity_count = 0;
};

// Clusters on a precomputed similarity; threshold uses cfg.threshold, the AP
// variants use the AP fields of cfg.
inline ClusterResult cluster_similarity(const Eigen::MatrixXd& s, const ClusteringConfig& cfg) {
  ClusterResult out;
  if (cfg.algorithm == ClusterAlgorithm::threshold) {
    out.labels = threshold_clustering(s, cfg.threshold);
  } else {
    auto ap = affinity_propagation(s, cfg.preference, cfg.damping, cfg.max_iterations,
                                   cfg.convergence_window);
    out.labels = std::move(ap.labels);
    out.exemplars = std::move(ap.exemplars);
    out.converged = ap.converged;
    out.iterations = ap.iterations;
  }
  out.entity_count = count_entities(out.labels);
  return out;
}

// Threshold and plain AP cluster on V; temporal AP on alpha V + (1 - alpha) T.
inline ClusterResult cluster_tracklets(const std::vector<TrackletDescriptor>& descriptors,
                                       const ClusteringConfig& cfg) {
  cfg.validate();
  if (descriptors.empty()) return {};
  const Eigen::MatrixXd v = visual_similarity(descriptors);
  if (cfg.algorithm != ClusterAlgorithm::temporal_ap) return cluster_similarity(v, cfg);
  return cluster_similarity(combine(v, temporal_adjacency(descriptors, cfg.gamma), cfg.alpha),
                            cfg);
}

}  // namespace polycount
