#pragma once

// Glue from detections to training fragments and to per-video tracklet
// descriptors for clustering.

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "polycount/clustering.hpp"
#include "polycount/error.hpp"
#include "polycount/evaluation.hpp"
#include "polycount/head.hpp"
#include "polycount/synth.hpp"
#include "polycount/trainer.hpp"
#include "polycount/tracklets.hpp"

namespace polycount {

struct PreparedVideo {
  VideoInfo info;
  std::vector<Tracklet> tracklets;               // subsampled
  std::vector<std::vector<Fragment>> fragments;  // per tracklet
  std::vector<std::string> skipped;              // tracklets shorter than kappa
  std::map<std::string, double> entity_spans;    // normalized by video length
};

// Span of an entity: last - first + 1 frames over all of its tracklets.
inline std::vector<PreparedVideo> prepare_videos(const std::vector<DetectionRecord>& detections,
                                                 const std::vector<VideoInfo>& videos,
                                                 const FragmentConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::size_t> index;
  std::vector<PreparedVideo> out(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].length <= 0) throw DataError("video " + videos[i].video_id + " has no length");
    if (!index.emplace(videos[i].video_id, i).second)
      throw DataError("duplicate video " + videos[i].video_id);
    out[i].info = videos[i];
  }
  std::vector<std::vector<DetectionRecord>> per_video(videos.size());
  for (const auto& d : detections) {
    auto it = index.find(d.video_id);
    if (it == index.end()) throw DataError("detection references unknown video " + d.video_id);
    if (d.frame_index < 0 || d.frame_index >= videos[it->second].length)
      throw DataError("frame " + std::to_string(d.frame_index) + " outside video " + d.video_id);
    per_video[it->second].push_back(d);
  }

  for (std::size_t v = 0; v < videos.size(); ++v) {
    auto& pv = out[v];
    const auto chained = chain_detections(std::move(per_video[v]), cfg);
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> extent;
    for (const auto& t : chained) {
      auto [it, fresh] = extent.try_emplace(t.entity_id, t.first_frame(), t.last_frame());
      if (!fresh) {
        it->second.first = std::min(it->second.first, t.first_frame());
        it->second.second = std::max(it->second.second, t.last_frame());
      }
      pv.tracklets.push_back(subsample(t, cfg.sampling_stride));
    }
    for (const auto& [entity, e] : extent)
      pv.entity_spans[entity] =
          static_cast<double>(e.second - e.first + 1) / static_cast<double>(pv.info.length);
    for (const auto& t : pv.tracklets) {
      auto res = fragment_tracklet(t, cfg, pv.info.length);
      if (res.skipped) pv.skipped.push_back(t.tracklet_id);
      pv.fragments.push_back(std::move(res.fragments));
    }
  }
  return out;
}

inline Eigen::VectorXd fragment_input(const Fragment& f) {
  const auto mean = f.mean_feature();
  if (mean.empty()) throw DataError("fragment of " + f.parent + " carries no frame features");
  return Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
}

inline std::string qualified_entity(const std::string& video, const std::string& entity) {
  return video + "/" + entity;
}

// Uses videos of the given split; when no video carries that split, all
// videos are used.
inline TrainingSet training_set(const std::vector<PreparedVideo>& videos,
                                const std::string& split = "train") {
  const bool any = std::any_of(videos.begin(), videos.end(),
                               [&](const auto& v) { return v.info.split == split; });
  std::map<std::string, EntityGroup> groups;
  for (const auto& pv : videos) {
    if (any && pv.info.split != split) continue;
    for (std::size_t t = 0; t < pv.tracklets.size(); ++t) {
      const auto& tr = pv.tracklets[t];
      const std::string key = qualified_entity(pv.info.video_id, tr.entity_id);
      auto& g = groups[key];
      g.entity_id = key;
      g.span = pv.entity_spans.at(tr.entity_id);
      for (const auto& f : pv.fragments[t])
        g.fragments.push_back({fragment_input(f), tr.tracklet_id, f.timestamp});
    }
  }
  TrainingSet set;
  for (auto& [key, g] : groups)
    if (!g.fragments.empty()) set.push_back(std::move(g));
  return set;
}

inline std::size_t feature_dim(const std::vector<PreparedVideo>& videos) {
  for (const auto& pv : videos)
    for (const auto& frags : pv.fragments)
      if (!frags.empty()) return static_cast<std::size_t>(fragment_input(frags.front()).size());
  throw DataError("no fragments with features in the data set");
}

struct EmbeddedTracklet {
  std::string tracklet_id;
  std::string entity_id;
  double position = 0.0;
  Eigen::VectorXd embedding;
};

struct EmbeddedVideo {
  std::string video_id;
  std::int64_t length = 0;
  std::vector<EmbeddedTracklet> tracklets;
  std::vector<std::string> skipped;
};

inline double tracklet_position(const Tracklet& t, std::int64_t video_length) {
  return 0.5 * static_cast<double>(t.first_frame() + t.last_frame()) /
         static_cast<double>(video_length);
}

// Tracklet embedding = normalized mean of its fragment embeddings.
inline EmbeddedVideo embed_video(const EmbeddingHead& head, const PreparedVideo& pv) {
  EmbeddedVideo ev{pv.info.video_id, pv.info.length, {}, pv.skipped};
  for (std::size_t t = 0; t < pv.tracklets.size(); ++t) {
    const auto& frags = pv.fragments[t];
    if (frags.empty()) continue;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(frags.size()), static_cast<Eigen::Index>(head.input_dim()));
    for (std::size_t f = 0; f < frags.size(); ++f)
      x.row(static_cast<Eigen::Index>(f)) = fragment_input(frags[f]).transpose();
    const auto& tr = pv.tracklets[t];
    ev.tracklets.push_back({tr.tracklet_id, tr.entity_id, tracklet_position(tr, pv.info.length),
                            aggregate_embedding(head.embed(x))});
  }
  return ev;
}

inline std::vector<EmbeddedVideo> embed_videos(const EmbeddingHead& head,
                                               const std::vector<PreparedVideo>& videos,
                                               const std::string& split = "eval") {
  const bool any = std::any_of(videos.begin(), videos.end(),
                               [&](const auto& v) { return v.info.split == split; });
  std::vector<EmbeddedVideo> out;
  for (const auto& pv : videos)
    if (!any || pv.info.split == split) out.push_back(embed_video(head, pv));
  return out;
}

inline VideoInstance to_instance(const EmbeddedVideo& ev) {
  VideoInstance v;
  v.video_id = ev.video_id;
  for (const auto& t : ev.tracklets) {
    v.descriptors.push_back({t.tracklet_id, t.embedding, t.position});
    v.entity_ids.push_back(t.entity_id);
  }
  return v;
}

inline std::vector<VideoInstance> to_instances(const std::vector<EmbeddedVideo>& videos) {
  std::vector<VideoInstance> out;
  for (const auto& ev : videos)
    if (!ev.tracklets.empty()) out.push_back(to_instance(ev));
  return out;
}

}  // namespace polycount
