#include <gtest/gtest.h>

#include <random>

#include "polycount/tracklets.hpp"

using namespace polycount;

namespace {

DetectionRecord det(std::int64_t frame, BBox box, const std::string& entity = "p0",
                    const std::string& video = "v") {
  return {video, frame, entity, box, {}};
}

// Independent IoU oracle on integer-aligned boxes: count unit cells.
double cell_iou(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1) {
  long inter = 0, uni = 0;
  for (int x = std::min(ax0, bx0); x < std::max(ax1, bx1); ++x)
    for (int y = std::min(ay0, by0); y < std::max(ay1, by1); ++y) {
      const bool in_a = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
      const bool in_b = x >= bx0 && x < bx1 && y >= by0 && y < by1;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST(Iou, Identity) { EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0); }

TEST(Iou, Disjoint) { EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {20, 20, 30, 30}), 0.0); }

TEST(Iou, HalfOverlap) { EXPECT_NEAR(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0, 1e-15); }

TEST(Iou, DegenerateBoxIsDataError) {
  EXPECT_THROW(iou({0, 0, 0, 10}, {0, 0, 10, 10}), DataError);
  EXPECT_THROW(iou({5, 0, 1, 10}, {0, 0, 10, 10}), DataError);
}

TEST(IouProperty, MatchesCellCountingAndIsSymmetric) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> c(0, 20), s(1, 12);
  for (int n = 0; n < 300; ++n) {
    const int ax = c(rng), ay = c(rng), aw = s(rng), ah = s(rng);
    const int bx = c(rng), by = c(rng), bw = s(rng), bh = s(rng);
    const BBox a{double(ax), double(ay), double(ax + aw), double(ay + ah)};
    const BBox b{double(bx), double(by), double(bx + bw), double(by + bh)};
    const double v = iou(a, b);
    EXPECT_NEAR(v, cell_iou(ax, ay, ax + aw, ay + ah, bx, by, bx + bw, by + bh), 1e-12);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Enlarge, PsiOneIsIdentity) {
  EXPECT_EQ(enlarge_bbox({10, 10, 20, 20}, 1.0, {100, 100}), (BBox{10, 10, 20, 20}));
}

TEST(Enlarge, DoublesAroundCenter) {
  EXPECT_EQ(enlarge_bbox({10, 10, 20, 20}, 2.0, {100, 100}), (BBox{5, 5, 25, 25}));
}

TEST(Enlarge, ClampsToFrame) {
  EXPECT_EQ(scale_bbox({0, 0, 10, 10}, 5.0), (BBox{-20, -20, 30, 30}));
  EXPECT_EQ(enlarge_bbox({0, 0, 10, 10}, 5.0, {20, 20}), (BBox{0, 0, 20, 20}));
}

TEST(Enlarge, RejectsPsiBelowOne) { EXPECT_THROW(scale_bbox({0, 0, 1, 1}, 0.5), UsageError); }

TEST(EnlargeProperty, ContainsOriginalInsideFrame) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < 200; ++n) {
    const double x0 = 90 * u(rng), y0 = 90 * u(rng);
    const BBox b{x0, y0, x0 + 1 + 9 * u(rng), y0 + 1 + 9 * u(rng)};
    const double psi = 1.0 + 6.0 * u(rng);
    const BBox e = enlarge_bbox(b, psi, {100, 100});
    EXPECT_LE(e.x_min, b.x_min);
    EXPECT_LE(e.y_min, b.y_min);
    EXPECT_GE(e.x_max, b.x_max);
    EXPECT_GE(e.y_max, b.y_max);
    EXPECT_GE(e.x_min, 0.0);
    EXPECT_LE(e.x_max, 100.0);
    const BBox s = scale_bbox(b, psi);
    EXPECT_NEAR(s.width(), psi * b.width(), 1e-9);
    EXPECT_NEAR(0.5 * (s.x_min + s.x_max), 0.5 * (b.x_min + b.x_max), 1e-9);
  }
}

TEST(BuildTracklets, EightFramesStrideFour) {
  // 10x10 boxes shifted by 0.5 px: consecutive IoU = 9.5*10 / (10.5*10) > 0.9
  std::vector<DetectionRecord> r;
  for (int f = 0; f < 8; ++f) r.push_back(det(f, {0.5 * f, 0, 0.5 * f + 10, 10}));
  const auto ts = build_tracklets(r, FragmentConfig{});
  ASSERT_EQ(ts.size(), 1u);
  ASSERT_EQ(ts[0].length(), 2u);
  EXPECT_EQ(ts[0].frames[0].frame_index, 0);
  EXPECT_EQ(ts[0].frames[1].frame_index, 4);
  EXPECT_EQ(ts[0].tracklet_id, "v:p0:0");
}

TEST(BuildTracklets, FrameGapSplits) {
  std::vector<DetectionRecord> r;
  for (int f : {0, 1, 2, 3, 10, 11, 12, 13}) r.push_back(det(f, {0, 0, 10, 10}));
  const auto ts = chain_detections(r, FragmentConfig{});
  ASSERT_EQ(ts.size(), 2u);
  EXPECT_EQ(ts[0].last_frame(), 3);
  EXPECT_EQ(ts[1].first_frame(), 10);
  EXPECT_EQ(ts[1].tracklet_id, "v:p0:1");
}

TEST(BuildTracklets, LowIouSplits) {
  std::vector<DetectionRecord> r;
  for (int f = 0; f < 6; ++f) {
    // frames 3.. jump so that IoU(frame2, frame3) = 5/195 < 0.1
    const double x = f < 3 ? 0.0 : 9.5;
    r.push_back(det(f, {x, 0, x + 10, 10}));
  }
  ASSERT_LT(iou(r[2].bbox, r[3].bbox), 0.1);
  const auto ts = chain_detections(r, FragmentConfig{});
  ASSERT_EQ(ts.size(), 2u);
  EXPECT_EQ(ts[0].last_frame(), 2);
  EXPECT_EQ(ts[1].first_frame(), 3);
}

TEST(BuildTracklets, DuplicateFrameIsDataError) {
  std::vector<DetectionRecord> r{det(0, {0, 0, 10, 10}), det(0, {0, 0, 10, 10})};
  EXPECT_THROW(chain_detections(r, FragmentConfig{}), DataError);
}

TEST(BuildTracklets, EntitiesAndVideosAreSeparated) {
  std::vector<DetectionRecord> r;
  for (int f = 0; f < 4; ++f) {
    r.push_back(det(f, {0, 0, 10, 10}, "p1"));
    r.push_back(det(f, {0, 0, 10, 10}, "p0"));
    r.push_back(det(f, {0, 0, 10, 10}, "p0", "w"));
  }
  const auto ts = chain_detections(r, FragmentConfig{});
  ASSERT_EQ(ts.size(), 3u);
  for (const auto& t : ts) EXPECT_EQ(t.length(), 4u);
}

TEST(BuildTrackletsProperty, ChainingIsIdempotentAndOrderFree) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<DetectionRecord> r;
    double x = 0;
    for (int f = 0; f < 60; ++f) {
      if (u(rng) < 0.05) continue;          // occasional missing frame
      x += u(rng) < 0.05 ? 9.5 : 0.3;       // occasional jump
      r.push_back(det(f, {x, 0, x + 10, 10}, u(rng) < 0.5 ? "p0" : "p1"));
    }
    const FragmentConfig cfg{8, 1, 0.1, 5.0};
    const auto once = chain_detections(r, cfg);
    // re-chaining the frames of each tracklet returns that tracklet
    for (const auto& t : once) {
      const auto again = chain_detections(t.frames, cfg);
      ASSERT_EQ(again.size(), 1u);
      EXPECT_EQ(again[0].frames, t.frames);
    }
    std::shuffle(r.begin(), r.end(), rng);
    const auto shuffled = chain_detections(r, cfg);
    ASSERT_EQ(shuffled.size(), once.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < once.size(); ++i) {
      EXPECT_EQ(shuffled[i].frames, once[i].frames);
      total += once[i].length();
    }
    EXPECT_EQ(total, r.size());
  }
}

namespace {

Tracklet straight_tracklet(std::size_t n) {
  Tracklet t{"v:p0:0", "v", "p0", {}};
  for (std::size_t i = 0; i < n; ++i)
    t.frames.push_back(det(static_cast<std::int64_t>(4 * i), {0, 0, 10, 10}));
  return t;
}

}  // namespace

TEST(Fragments, ExactDivision) {
  const auto res = fragment_tracklet(straight_tracklet(16), FragmentConfig{}, 1000);
  ASSERT_EQ(res.fragments.size(), 2u);
  EXPECT_EQ(res.dropped_frames, 0u);
  EXPECT_FALSE(res.skipped);
  EXPECT_EQ(res.fragments[0].frames.front().frame_index, 0);
  EXPECT_EQ(res.fragments[0].frames.back().frame_index, 28);
  EXPECT_EQ(res.fragments[1].frames.front().frame_index, 32);
  EXPECT_EQ(res.fragments[1].index, 1u);
}

TEST(Fragments, RemainderDropped) {
  const auto res = fragment_tracklet(straight_tracklet(19), FragmentConfig{}, 1000);
  EXPECT_EQ(res.fragments.size(), 2u);
  EXPECT_EQ(res.dropped_frames, 3u);
}

TEST(Fragments, TooShortIsSkipped) {
  const auto res = fragment_tracklet(straight_tracklet(5), FragmentConfig{}, 1000);
  EXPECT_TRUE(res.fragments.empty());
  EXPECT_TRUE(res.skipped);
}

TEST(Fragments, TimestampIsNormalizedMidpoint) {
  const auto res = fragment_tracklet(straight_tracklet(8), FragmentConfig{}, 100);
  ASSERT_EQ(res.fragments.size(), 1u);
  EXPECT_DOUBLE_EQ(res.fragments[0].timestamp, 0.14);  // (0 + 28) / 2 / 100
}

TEST(Fragments, FrameBeyondVideoIsDataError) {
  EXPECT_THROW(fragment_tracklet(straight_tracklet(8), FragmentConfig{}, 10), DataError);
}

TEST(FragmentsProperty, CountsAndTimestampBounds) {
  for (std::size_t n = 0; n < 70; ++n)
    for (std::size_t kappa : {1u, 3u, 8u}) {
      FragmentConfig cfg;
      cfg.kappa = kappa;
      Tracklet t = straight_tracklet(n);
      if (n == 0) continue;
      const auto res = fragment_tracklet(t, cfg, 4 * static_cast<std::int64_t>(n));
      EXPECT_EQ(res.fragments.size(), n / kappa);
      EXPECT_EQ(res.fragments.size() * kappa + res.dropped_frames, n);
      double prev = -1.0;
      for (const auto& f : res.fragments) {
        EXPECT_EQ(f.frames.size(), kappa);
        EXPECT_GE(f.timestamp, 0.0);
        EXPECT_LE(f.timestamp, 1.0);
        EXPECT_GT(f.timestamp, prev);
        prev = f.timestamp;
      }
    }
}

TEST(Fragments, MeanFeature) {
  Fragment f;
  f.frames.push_back({"v", 0, "p", {0, 0, 1, 1}, {1.0, 2.0}});
  f.frames.push_back({"v", 1, "p", {0, 0, 1, 1}, {3.0, 6.0}});
  EXPECT_EQ(f.mean_feature(), (std::vector<double>{2.0, 4.0}));
  f.frames.push_back({"v", 2, "p", {0, 0, 1, 1}, {3.0}});
  EXPECT_THROW(f.mean_feature(), DataError);
}
