#pragma once

// Synthetic videos with planted entities. Each entity has a feature centroid
// and a drift direction; its tracklets occupy disjoint time intervals inside
// one window of the video, and every frame carries a smoothly moving box and
// the feature centroid + beta * (frame / video_length) * drift + N(0, sigma^2).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "polycount/error.hpp"
#include "polycount/tracklets.hpp"

namespace polycount {

template <typename T>
struct Range {
  T lo{};
  T hi{};
  bool valid() const { return lo <= hi; }
};

struct ScenarioConfig {
  std::size_t n_videos = 6;        // evaluation videos
  std::size_t n_train_videos = 6;  // videos used only to train the head
  Range<std::size_t> entities_per_video{2, 4};
  Range<std::size_t> tracklets_per_entity{2, 4};
  Range<std::size_t> tracklet_length{40, 100};
  Range<std::size_t> tracklet_gap{5, 80};  // frames between tracklets of one entity
  std::int64_t video_length = 3000;
  std::size_t feature_dim = 32;
  double sigma = 0.0;
  double beta = 0.0;
  // 0: drift directions are isotropic. r > 0: drift directions lie in an
  // r-dimensional subspace shared by every entity of the scenario.
  std::size_t drift_rank = 0;
  double inter_entity_min_distance = 4.0;
  double frame_width = 640.0;
  double frame_height = 480.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_videos == 0) throw UsageError("n_videos must be positive");
    if (!entities_per_video.valid() || entities_per_video.lo == 0)
      throw UsageError("entities_per_video must be a nonempty positive range");
    if (!tracklets_per_entity.valid() || tracklets_per_entity.lo == 0)
      throw UsageError("tracklets_per_entity must be a nonempty positive range");
    if (!tracklet_length.valid() || tracklet_length.lo == 0)
      throw UsageError("tracklet_length must be a nonempty positive range");
    if (!tracklet_gap.valid() || tracklet_gap.lo < 2)
      throw UsageError("tracklet_gap must be a nonempty range with lo >= 2");
    if (video_length <= 0) throw UsageError("video_length must be positive");
    if (feature_dim == 0) throw UsageError("feature_dim must be positive");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw UsageError("sigma must be finite and >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw UsageError("beta must be finite and >= 0");
    if (drift_rank > feature_dim) throw UsageError("drift_rank exceeds feature_dim");
    if (!(inter_entity_min_distance > 0.0))
      throw UsageError("inter_entity_min_distance must be positive");
    if (!(frame_width > 200.0 && frame_height > 200.0))
      throw UsageError("frame must be larger than 200x200");
  }
};

struct VideoInfo {
  std::string video_id;
  std::int64_t length = 0;
  std::string split;  // "train" or "eval"
  double width = 0.0;
  double height = 0.0;
};

struct PlantedTracklet {
  std::string tracklet_id;
  std::string video_id;
  std::string entity_id;
  std::int64_t first_frame = 0;
  std::int64_t last_frame = 0;
};

struct Scenario {
  std::vector<VideoInfo> videos;
  std::vector<DetectionRecord> detections;
  std::vector<PlantedTracklet> truth;
};

inline std::vector<std::string> scenario_presets() {
  return {"easy", "drift", "noisy", "paper-scale-ish"};
}

inline ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig c;
  if (name == "easy") return c;
  if (name == "drift") {
    // long videos with many revisits; all entities drift along one shared
    // direction, so appearance change is partly explained by time
    c.n_videos = 10;
    c.n_train_videos = 16;
    c.tracklets_per_entity = {5, 15};
    c.tracklet_gap = {5, 150};
    c.video_length = 8000;
    c.sigma = 0.3;
    c.beta = 80.0;
    c.drift_rank = 1;
    return c;
  }
  if (name == "noisy") {
    c.sigma = 1.5;
    return c;
  }
  if (name == "paper-scale-ish") {
    c.n_videos = 19;
    c.n_train_videos = 19;
    c.entities_per_video = {1, 4};
    c.sigma = 0.5;
    c.beta = 10.0;
    return c;
  }
  throw UsageError("unknown scenario preset '" + name + "'");
}

namespace detail {

template <typename T>
T draw(std::mt19937_64& rng, Range<T> r) {
  return std::uniform_int_distribution<T>(r.lo, r.hi)(rng);
}

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t dim, double scale) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = scale * n(rng);
  return v;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline std::string video_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, i);
  return buf;
}

// Rows span the shared drift subspace (orthonormalized).
inline std::vector<std::vector<double>> drift_basis(const ScenarioConfig& cfg) {
  std::vector<std::vector<double>> basis;
  if (cfg.drift_rank == 0) return basis;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0u, 0u};
  std::mt19937_64 rng(seq);
  while (basis.size() < cfg.drift_rank) {
    auto v = gaussian_vector(rng, cfg.feature_dim, 1.0);
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

inline std::vector<double> drift_direction(std::mt19937_64& rng, const ScenarioConfig& cfg,
                                           const std::vector<std::vector<double>>& basis) {
  std::vector<double> dir;
  if (basis.empty()) {
    dir = gaussian_vector(rng, cfg.feature_dim, 1.0);
  } else {
    const auto coeff = gaussian_vector(rng, basis.size(), 1.0);
    dir.assign(cfg.feature_dim, 0.0);
    for (std::size_t r = 0; r < basis.size(); ++r)
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += coeff[r] * basis[r][i];
  }
  double n = 0.0;
  for (double x : dir) n += x * x;
  n = std::sqrt(n);
  for (auto& x : dir) x /= n;
  return dir;
}

inline void generate_video(const ScenarioConfig& cfg, const VideoInfo& info,
                           const std::vector<std::vector<double>>& basis,
                           std::mt19937_64& rng, Scenario& out) {
  const std::size_t n_entities = draw(rng, cfg.entities_per_video);
  std::vector<std::vector<double>> centroids;
  for (std::size_t e = 0; e < n_entities; ++e) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      auto c = gaussian_vector(rng, cfg.feature_dim, 1.0);
      placed = std::all_of(centroids.begin(), centroids.end(), [&](const auto& o) {
        return distance(c, o) >= cfg.inter_entity_min_distance;
      });
      if (placed) centroids.push_back(std::move(c));
    }
    if (!placed)
      throw DataError("cannot place " + std::to_string(n_entities) +
                      " centroids at separation " + std::to_string(cfg.inter_entity_min_distance) +
                      " in dimension " + std::to_string(cfg.feature_dim) +
                      "; use a larger feature_dim");
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t e = 0; e < n_entities; ++e) {
    const std::string entity = "p" + std::to_string(e);
    const auto drift = drift_direction(rng, cfg, basis);

    const std::size_t n_tracklets = draw(rng, cfg.tracklets_per_entity);
    std::vector<std::size_t> lengths(n_tracklets), gaps(n_tracklets, 0);
    std::int64_t total = 0;
    for (std::size_t k = 0; k < n_tracklets; ++k) {
      lengths[k] = draw(rng, cfg.tracklet_length);
      if (k > 0) gaps[k] = draw(rng, cfg.tracklet_gap);
      total += static_cast<std::int64_t>(lengths[k] + gaps[k]);
    }
    if (total > info.length)
      throw UsageError("video_length " + std::to_string(info.length) +
                       " too short for an entity needing " + std::to_string(total) + " frames");
    std::int64_t frame = std::uniform_int_distribution<std::int64_t>(0, info.length - total)(rng);

    for (std::size_t k = 0; k < n_tracklets; ++k) {
      frame += static_cast<std::int64_t>(gaps[k]);
      PlantedTracklet planted{make_tracklet_id(info.video_id, entity, k), info.video_id, entity,
                              frame, frame + static_cast<std::int64_t>(lengths[k]) - 1};
      // box random walk with bounded velocity, kept inside the frame
      double w = 40.0 + 80.0 * unit(rng), h = 40.0 + 80.0 * unit(rng);
      double cx = w + (info.width - 2.0 * w) * unit(rng);
      double cy = h + (info.height - 2.0 * h) * unit(rng);
      double vx = 4.0 * unit(rng) - 2.0, vy = 4.0 * unit(rng) - 2.0;
      for (std::size_t f = 0; f < lengths[k]; ++f, ++frame) {
        DetectionRecord d;
        d.video_id = info.video_id;
        d.frame_index = frame;
        d.entity_id = entity;
        d.bbox = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
        const double t = static_cast<double>(frame) / static_cast<double>(info.length);
        d.feature.resize(cfg.feature_dim);
        for (std::size_t i = 0; i < cfg.feature_dim; ++i) {
          d.feature[i] = centroids[e][i] + cfg.beta * t * drift[i];
          if (cfg.sigma > 0.0) d.feature[i] += cfg.sigma * noise(rng);
        }
        out.detections.push_back(std::move(d));

        vx = std::clamp(vx + 0.5 * (unit(rng) - 0.5), -2.0, 2.0);
        vy = std::clamp(vy + 0.5 * (unit(rng) - 0.5), -2.0, 2.0);
        cx += vx;
        cy += vy;
        if (cx < w || cx > info.width - w) vx = -vx, cx = std::clamp(cx, w, info.width - w);
        if (cy < h || cy > info.height - h) vy = -vy, cy = std::clamp(cy, h, info.height - h);
      }
      out.truth.push_back(planted);
    }
  }
}

}  // namespace detail

inline Scenario generate(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario out;
  const auto basis = detail::drift_basis(cfg);
  auto add_split = [&](const char* prefix, const char* split, std::size_t count,
                       std::uint64_t stream) {
    for (std::size_t i = 0; i < count; ++i) {
      VideoInfo info{detail::video_name(prefix, i), cfg.video_length, split, cfg.frame_width,
                     cfg.frame_height};
      // per-video sub-seed
      std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                        static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(i)};
      std::mt19937_64 rng(seq);
      detail::generate_video(cfg, info, basis, rng, out);
      out.videos.push_back(info);
    }
  };
  add_split("train", "train", cfg.n_train_videos, 1);
  add_split("video", "eval", cfg.n_videos, 2);
  return out;
}

}  // namespace polycount
