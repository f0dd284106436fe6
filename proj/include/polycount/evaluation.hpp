#pragma once

// Fragmentation rate, pair-level false positive rate, grid search over
// clustering hyperparameters, FPR-targeted selection and leave-one-video-out
// cross-validation.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "polycount/clustering.hpp"
#include "polycount/error.hpp"
#include "polycount/parallel.hpp"

namespace polycount {

// One evaluation video: tracklet descriptors and the true entity of each.
struct VideoInstance {
  std::string video_id;
  std::vector<TrackletDescriptor> descriptors;
  std::vector<std::string> entity_ids;

  std::size_t size() const { return descriptors.size(); }
};

inline std::vector<int> singleton_labels(std::size_t n) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i);
  return labels;
}

inline void check_aligned(const std::vector<int>& labels, const std::vector<std::string>& truth) {
  if (labels.empty()) throw DataError("no clustered tracklets");
  if (labels.size() != truth.size())
    throw DataError("labels and ground truth have different lengths");
}

// |C| / |E|
inline double fragmentation_rate(const std::vector<int>& labels,
                                 const std::vector<std::string>& truth) {
  check_aligned(labels, truth);
  const std::set<int> clusters(labels.begin(), labels.end());
  const std::set<std::string> entities(truth.begin(), truth.end());
  return static_cast<double>(clusters.size()) / static_cast<double>(entities.size());
}

enum class FprMetric {
  pair_impurity,  // impure same-cluster pairs / same-cluster pairs
  wrong_merge,    // tracklets outside their cluster's majority entity / tracklets
};

inline const char* to_string(FprMetric m) {
  return m == FprMetric::pair_impurity ? "pair_impurity" : "wrong_merge";
}

inline FprMetric parse_fpr_metric(const std::string& s) {
  if (s == "pair_impurity") return FprMetric::pair_impurity;
  if (s == "wrong_merge") return FprMetric::wrong_merge;
  throw UsageError("unknown FPR metric '" + s + "'");
}

inline double false_positive_rate(const std::vector<int>& labels,
                                  const std::vector<std::string>& truth,
                                  FprMetric metric = FprMetric::pair_impurity) {
  check_aligned(labels, truth);
  std::map<int, std::map<std::string, std::size_t>> composition;
  for (std::size_t i = 0; i < labels.size(); ++i) ++composition[labels[i]][truth[i]];

  if (metric == FprMetric::wrong_merge) {
    std::size_t wrong = 0;
    for (const auto& [label, counts] : composition) {
      std::size_t size = 0, majority = 0;
      for (const auto& [entity, c] : counts) {
        size += c;
        majority = std::max(majority, c);
      }
      wrong += size - majority;
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
  }

  auto pairs = [](std::size_t k) { return k * (k - 1) / 2; };
  std::size_t total = 0, pure = 0;
  for (const auto& [label, counts] : composition) {
    std::size_t size = 0;
    for (const auto& [entity, c] : counts) {
      size += c;
      pure += pairs(c);
    }
    total += pairs(size);
  }
  if (total == 0) return 0.0;
  return static_cast<double>(total - pure) / static_cast<double>(total);
}

// Evenly stepped values lo, lo+step, ..., hi (inclusive).
inline std::vector<double> stepped_range(double lo, double hi, double step) {
  const auto count = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = lo + static_cast<double>(i) * step;
  return v;
}

struct GridSpec {
  std::vector<double> thresholds;
  std::vector<double> preferences;
  std::vector<double> gammas;
  std::vector<double> alphas;

  static GridSpec full() {
    GridSpec g;
    g.thresholds = stepped_range(0.0, 1.0, 0.01);
    g.preferences = stepped_range(-5.0, 5.0, 0.25);
    g.gammas = stepped_range(0.1, 0.9, 0.1);
    const auto upper = stepped_range(1.0, 10.0, 0.375);
    g.gammas.insert(g.gammas.end(), upper.begin(), upper.end());
    g.alphas = stepped_range(0.0, 1.0, 0.05);
    return g;
  }

  // A smaller grid with the same bounds, for quick runs.
  static GridSpec coarse() {
    GridSpec g;
    g.thresholds = stepped_range(0.0, 1.0, 0.05);
    g.preferences = stepped_range(-5.0, 5.0, 0.5);
    g.gammas = {0.1, 0.5, 1.0, 2.5, 5.0, 10.0};
    g.alphas = stepped_range(0.0, 1.0, 0.25);
    return g;
  }

  static GridSpec named(const std::string& name) {
    if (name == "full") return full();
    if (name == "coarse") return coarse();
    throw UsageError("unknown grid '" + name + "'");
  }

  // Configurations in deterministic order: gamma, then alpha, then preference.
  std::vector<ClusteringConfig> configs(ClusterAlgorithm algorithm,
                                        const ClusteringConfig& base) const {
    std::vector<ClusteringConfig> out;
    auto with = [&](auto&& edit) {
      ClusteringConfig c = base;
      c.algorithm = algorithm;
      edit(c);
      out.push_back(c);
    };
    switch (algorithm) {
      case ClusterAlgorithm::threshold:
        for (double t : thresholds) with([&](auto& c) { c.threshold = t; });
        break;
      case ClusterAlgorithm::ap:
        for (double p : preferences) with([&](auto& c) { c.preference = p; });
        break;
      case ClusterAlgorithm::temporal_ap:
        for (double g : gammas)
          for (double a : alphas)
            for (double p : preferences)
              with([&](auto& c) {
                c.gamma = g;
                c.alpha = a;
                c.preference = p;
              });
        break;
    }
    if (out.empty()) throw UsageError("empty hyperparameter grid");
    return out;
  }
};

struct VideoScore {
  double fr = 0.0;
  double fpr = 0.0;
  std::size_t clusters = 0;
};

struct GridSearchResult {
  ClusterAlgorithm algorithm = ClusterAlgorithm::temporal_ap;
  std::vector<ClusteringConfig> configs;
  std::vector<std::string> video_ids;
  std::vector<std::vector<VideoScore>> scores;  // [config][video]
};

inline VideoScore score_labels(const std::vector<int>& labels, const VideoInstance& video,
                               FprMetric metric) {
  return {fragmentation_rate(labels, video.entity_ids),
          false_positive_rate(labels, video.entity_ids, metric), count_entities(labels)};
}

inline GridSearchResult grid_search(const std::vector<VideoInstance>& videos,
                                    ClusterAlgorithm algorithm, const GridSpec& grid,
                                    const ClusteringConfig& base = {}, std::size_t jobs = 1,
                                    FprMetric metric = FprMetric::pair_impurity) {
  if (videos.empty()) throw DataError("grid search needs at least one video");
  GridSearchResult res;
  res.algorithm = algorithm;
  res.configs = grid.configs(algorithm, base);
  for (const auto& c : res.configs) c.validate();
  for (const auto& v : videos) {
    if (v.descriptors.empty()) throw DataError("video " + v.video_id + " has no tracklets");
    res.video_ids.push_back(v.video_id);
  }
  res.scores.assign(res.configs.size(), std::vector<VideoScore>(videos.size()));

  // One work unit per (video, gamma) so T is built once per gamma.
  const std::size_t per_gamma =
      algorithm == ClusterAlgorithm::temporal_ap ? grid.alphas.size() * grid.preferences.size()
                                                 : res.configs.size();
  const std::size_t n_gamma =
      algorithm == ClusterAlgorithm::temporal_ap ? grid.gammas.size() : 1;

  std::vector<Eigen::MatrixXd> visual(videos.size());
  parallel_for(videos.size(), jobs,
               [&](std::size_t v) { visual[v] = visual_similarity(videos[v].descriptors); });

  parallel_for(videos.size() * n_gamma, jobs, [&](std::size_t unit) {
    const std::size_t v = unit / n_gamma;
    const std::size_t g = unit % n_gamma;
    const VideoInstance& video = videos[v];
    Eigen::MatrixXd temporal;
    if (algorithm == ClusterAlgorithm::temporal_ap)
      temporal = temporal_adjacency(video.descriptors, grid.gammas[g]);
    Eigen::MatrixXd s;
    double last_alpha = NAN;
    for (std::size_t k = 0; k < per_gamma; ++k) {
      const std::size_t idx = g * per_gamma + k;
      const ClusteringConfig& cfg = res.configs[idx];
      const Eigen::MatrixXd* sim = &visual[v];
      if (algorithm == ClusterAlgorithm::temporal_ap) {
        if (!(cfg.alpha == last_alpha)) {
          s = combine(visual[v], temporal, cfg.alpha);
          last_alpha = cfg.alpha;
        }
        sim = &s;
      }
      res.scores[idx][v] = score_labels(cluster_similarity(*sim, cfg).labels, video, metric);
    }
  });
  return res;
}

struct Selection {
  std::size_t index = 0;
  double mean_fr = 0.0;
  double mean_fpr = 0.0;
};

// Unweighted per-video means of one config over a subset of videos.
inline Selection mean_scores(const GridSearchResult& grid, std::size_t config,
                             const std::vector<std::size_t>& subset) {
  Selection s{config, 0.0, 0.0};
  for (std::size_t v : subset) {
    s.mean_fr += grid.scores[config][v].fr;
    s.mean_fpr += grid.scores[config][v].fpr;
  }
  s.mean_fr /= static_cast<double>(subset.size());
  s.mean_fpr /= static_cast<double>(subset.size());
  return s;
}

enum class SelectionRule {
  closest_fpr,  // minimize |FPR - rho|, then FR
  fpr_budget,   // minimize FR subject to FPR <= rho, then FPR
};

inline const char* to_string(SelectionRule r) {
  return r == SelectionRule::closest_fpr ? "closest_fpr" : "fpr_budget";
}

inline SelectionRule parse_selection_rule(const std::string& s) {
  if (s == "closest_fpr") return SelectionRule::closest_fpr;
  if (s == "fpr_budget") return SelectionRule::fpr_budget;
  throw UsageError("unknown selection rule '" + s + "'");
}

// Tie order between configs with equal scores: the one that merges less comes
// first (higher threshold, higher preference, higher gamma), then grid order.
inline bool merges_less(const ClusteringConfig& a, std::size_t ia, const ClusteringConfig& b,
                        std::size_t ib) {
  if (a.threshold != b.threshold) return a.threshold > b.threshold;
  if (a.preference != b.preference) return a.preference > b.preference;
  if (a.gamma != b.gamma) return a.gamma > b.gamma;
  return ia < ib;
}

// Picks one grid config from its mean scores over `subset`. Keys are compared
// with a 1e-12 tolerance; remaining ties follow merges_less. fpr_budget falls
// back to closest_fpr when no config meets the budget.
inline Selection select_hyperparams(const GridSearchResult& grid,
                                    const std::vector<std::size_t>& subset, double rho,
                                    SelectionRule rule = SelectionRule::fpr_budget) {
  if (grid.configs.empty()) throw DataError("no grid results to select from");
  if (subset.empty()) throw DataError("selection needs at least one validation video");
  constexpr double tie = 1e-12;
  auto better = [&](double a, double b) { return a < b - tie; };
  auto same = [&](double a, double b) { return std::abs(a - b) <= tie; };

  std::vector<Selection> all;
  all.reserve(grid.configs.size());
  for (std::size_t c = 0; c < grid.configs.size(); ++c) all.push_back(mean_scores(grid, c, subset));
  auto first = [&](const Selection& a, const Selection& b) {
    return merges_less(grid.configs[a.index], a.index, grid.configs[b.index], b.index);
  };

  if (rule == SelectionRule::fpr_budget) {
    const Selection* best = nullptr;
    for (const auto& cand : all) {
      if (cand.mean_fpr > rho + tie) continue;
      if (!best || better(cand.mean_fr, best->mean_fr) ||
          (same(cand.mean_fr, best->mean_fr) &&
           (better(cand.mean_fpr, best->mean_fpr) ||
            (same(cand.mean_fpr, best->mean_fpr) && first(cand, *best)))))
        best = &cand;
    }
    if (best) return *best;
  }

  const Selection* best = &all.front();
  for (const auto& cand : all) {
    const double gap_c = std::abs(cand.mean_fpr - rho);
    const double gap_b = std::abs(best->mean_fpr - rho);
    if (better(gap_c, gap_b) ||
        (same(gap_c, gap_b) && (better(cand.mean_fr, best->mean_fr) ||
                                (same(cand.mean_fr, best->mean_fr) && first(cand, *best)))))
      best = &cand;
  }
  return *best;
}

struct FoldResult {
  std::string video_id;
  ClusteringConfig selected;
  double validation_fr = 0.0;
  double validation_fpr = 0.0;
  double fr = 0.0;
  double fpr = 0.0;
  std::size_t tracklets = 0;
  std::size_t entities = 0;
  std::size_t clusters = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(xs.size()));
  return m;
}

struct EvaluationReport {
  ClusterAlgorithm algorithm = ClusterAlgorithm::temporal_ap;
  double rho = 0.05;
  SelectionRule rule = SelectionRule::fpr_budget;
  std::vector<FoldResult> folds;
  MeanStd fr;
  MeanStd fpr;
  MeanStd alpha;  // of the selected configs

  void aggregate() {
    std::vector<double> frs, fprs, alphas;
    for (const auto& f : folds) {
      frs.push_back(f.fr);
      fprs.push_back(f.fpr);
      alphas.push_back(f.selected.alpha);
    }
    fr = mean_std(frs);
    fpr = mean_std(fprs);
    alpha = mean_std(alphas);
  }
};

inline std::size_t distinct_entities(const VideoInstance& v) {
  return std::set<std::string>(v.entity_ids.begin(), v.entity_ids.end()).size();
}

// Leave-one-video-out: select on the other videos, score the held-out one.
inline EvaluationReport loocv(const GridSearchResult& grid, const std::vector<VideoInstance>& videos,
                              double rho, SelectionRule rule = SelectionRule::fpr_budget) {
  if (videos.size() < 2) throw DataError("LOOCV needs at least 2 videos");
  if (grid.video_ids.size() != videos.size()) throw DataError("grid results do not match videos");
  EvaluationReport rep;
  rep.algorithm = grid.algorithm;
  rep.rho = rho;
  rep.rule = rule;
  for (std::size_t held = 0; held < videos.size(); ++held) {
    std::vector<std::size_t> validation;
    for (std::size_t v = 0; v < videos.size(); ++v)
      if (v != held) validation.push_back(v);
    const Selection sel = select_hyperparams(grid, validation, rho, rule);
    const VideoScore& score = grid.scores[sel.index][held];
    rep.folds.push_back({videos[held].video_id, grid.configs[sel.index], sel.mean_fr,
                         sel.mean_fpr, score.fr, score.fpr, videos[held].size(),
                         distinct_entities(videos[held]), score.clusters});
  }
  rep.aggregate();
  return rep;
}

inline EvaluationReport loocv(const std::vector<VideoInstance>& videos, ClusterAlgorithm algorithm,
                              const GridSpec& grid, double rho, const ClusteringConfig& base = {},
                              std::size_t jobs = 1, FprMetric metric = FprMetric::pair_impurity,
                              SelectionRule rule = SelectionRule::fpr_budget) {
  if (videos.size() < 2) throw DataError("LOOCV needs at least 2 videos");
  return loocv(grid_search(videos, algorithm, grid, base, jobs, metric), videos, rho, rule);
}

}  // namespace polycount
