#pragma once

// Detection ingestion, IoU chaining into tracklets, and fixed-length
// fragmentation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "polycount/error.hpp"

namespace polycount {

struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double diagonal() const { return std::hypot(width(), height()); }
  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) &&
           std::isfinite(x_max) && std::isfinite(y_max) && x_min < x_max &&
           y_min < y_max;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct DetectionRecord {
  std::string video_id;
  std::int64_t frame_index = 0;
  std::string entity_id;
  BBox bbox;
  std::vector<double> feature;  // empty when no frame feature was supplied

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

struct Tracklet {
  std::string tracklet_id;
  std::string video_id;
  std::string entity_id;
  std::vector<DetectionRecord> frames;

  std::size_t length() const { return frames.size(); }
  std::int64_t first_frame() const { return frames.front().frame_index; }
  std::int64_t last_frame() const { return frames.back().frame_index; }
};

struct Fragment {
  std::string parent;  // tracklet_id
  std::size_t index = 0;
  std::vector<DetectionRecord> frames;
  double timestamp = 0.0;  // normalized by video length

  // Mean of the per-frame features; empty if the frames carry none.
  std::vector<double> mean_feature() const {
    if (frames.empty() || frames.front().feature.empty()) return {};
    std::vector<double> mean(frames.front().feature.size(), 0.0);
    for (const auto& f : frames) {
      if (f.feature.size() != mean.size())
        throw DataError("fragment of " + parent +
                        " mixes feature dimensions");
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += f.feature[k];
    }
    for (auto& v : mean) v /= static_cast<double>(frames.size());
    return mean;
  }
};

struct FragmentConfig {
  std::size_t kappa = 8;
  std::size_t sampling_stride = 4;
  double iou_min = 0.1;
  double psi = 5.0;

  void validate() const {
    if (kappa < 1) throw UsageError("kappa must be >= 1");
    if (sampling_stride < 1) throw UsageError("sampling_stride must be >= 1");
    if (!(iou_min >= 0.0 && iou_min <= 1.0))
      throw UsageError("iou_min must lie in [0, 1]");
    if (!(psi >= 1.0)) throw UsageError("psi must be >= 1");
  }
};

inline void require_valid(const BBox& b, const char* what) {
  if (!b.valid())
    throw DataError(std::string(what) + ": degenerate or non-finite bbox");
}

inline double iou(const BBox& a, const BBox& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct FrameBounds {
  double width = 0.0;
  double height = 0.0;
};

// Same center, both sides scaled by psi, then clamped to the frame.
inline BBox scale_bbox(const BBox& b, double psi) {
  require_valid(b, "enlarge_bbox");
  if (!(psi >= 1.0)) throw UsageError("psi must be >= 1");
  const double cx = 0.5 * (b.x_min + b.x_max);
  const double cy = 0.5 * (b.y_min + b.y_max);
  const double hw = 0.5 * psi * b.width();
  const double hh = 0.5 * psi * b.height();
  return {cx - hw, cy - hh, cx + hw, cy + hh};
}

inline BBox enlarge_bbox(const BBox& b, double psi, FrameBounds bounds) {
  BBox s = scale_bbox(b, psi);
  s.x_min = std::clamp(s.x_min, 0.0, bounds.width);
  s.x_max = std::clamp(s.x_max, 0.0, bounds.width);
  s.y_min = std::clamp(s.y_min, 0.0, bounds.height);
  s.y_max = std::clamp(s.y_max, 0.0, bounds.height);
  return s;
}

inline std::string make_tracklet_id(const std::string& video,
                                    const std::string& entity,
                                    std::size_t ordinal) {
  return video + ":" + entity + ":" + std::to_string(ordinal);
}

// IoU chaining without subsampling. Each returned tracklet is a maximal run
// of consecutive frames whose neighbouring boxes overlap by at least iou_min.
inline std::vector<Tracklet> chain_detections(std::vector<DetectionRecord> records,
                                              const FragmentConfig& cfg) {
  cfg.validate();
  std::stable_sort(records.begin(), records.end(),
                   [](const DetectionRecord& a, const DetectionRecord& b) {
                     return std::tie(a.video_id, a.entity_id, a.frame_index) <
                            std::tie(b.video_id, b.entity_id, b.frame_index);
                   });

  std::vector<Tracklet> out;
  std::size_t ordinal = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    require_valid(r.bbox, "detection");
    bool start_new = true;
    if (i > 0) {
      const auto& prev = records[i - 1];
      const bool same_stream =
          prev.video_id == r.video_id && prev.entity_id == r.entity_id;
      if (same_stream) {
        if (prev.frame_index == r.frame_index)
          throw DataError("duplicate frame_index " +
                          std::to_string(r.frame_index) + " for entity " +
                          r.entity_id + " in video " + r.video_id);
        start_new = r.frame_index != prev.frame_index + 1 ||
                    iou(prev.bbox, r.bbox) < cfg.iou_min;
        if (start_new) ++ordinal;
      } else {
        ordinal = 0;
      }
    }
    if (start_new) {
      out.push_back({make_tracklet_id(r.video_id, r.entity_id, ordinal),
                     r.video_id, r.entity_id, {}});
    }
    out.back().frames.push_back(r);
  }
  return out;
}

// Keeps every stride-th frame of the tracklet, starting with the first.
inline Tracklet subsample(const Tracklet& t, std::size_t stride) {
  Tracklet s{t.tracklet_id, t.video_id, t.entity_id, {}};
  for (std::size_t i = 0; i < t.frames.size(); i += stride)
    s.frames.push_back(t.frames[i]);
  return s;
}

inline std::vector<Tracklet> build_tracklets(std::vector<DetectionRecord> records,
                                             const FragmentConfig& cfg) {
  auto chained = chain_detections(std::move(records), cfg);
  std::vector<Tracklet> out;
  out.reserve(chained.size());
  for (const auto& t : chained) out.push_back(subsample(t, cfg.sampling_stride));
  return out;
}

struct FragmentationResult {
  std::vector<Fragment> fragments;
  std::size_t dropped_frames = 0;
  bool skipped = false;  // tracklet shorter than kappa
};

inline FragmentationResult fragment_tracklet(const Tracklet& t,
                                             const FragmentConfig& cfg,
                                             std::int64_t video_length) {
  cfg.validate();
  if (video_length <= 0) throw DataError("video_length must be positive");
  FragmentationResult res;
  const std::size_t m = t.length() / cfg.kappa;
  res.dropped_frames = t.length() - m * cfg.kappa;
  res.skipped = m == 0;
  for (std::size_t i = 0; i < m; ++i) {
    Fragment f;
    f.parent = t.tracklet_id;
    f.index = i;
    f.frames.assign(t.frames.begin() + static_cast<std::ptrdiff_t>(i * cfg.kappa),
                    t.frames.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.kappa));
    // midpoint of the fragment's time span
    const double mid = 0.5 * static_cast<double>(f.frames.front().frame_index +
                                                 f.frames.back().frame_index);
    f.timestamp = mid / static_cast<double>(video_length);
    if (f.timestamp < 0.0 || f.timestamp > 1.0)
      throw DataError("frame index outside video length for tracklet " +
                      t.tracklet_id);
    res.fragments.push_back(std::move(f));
  }
  return res;
}

}  // namespace polycount
