#include <gtest/gtest.h>

#include <map>
#include <set>

#include "polycount/io.hpp"
#include "polycount/pipeline.hpp"
#include "polycount/synth.hpp"

using namespace polycount;

namespace {

ScenarioConfig small(std::uint64_t seed) {
  ScenarioConfig c;
  c.n_videos = 2;
  c.n_train_videos = 1;
  c.feature_dim = 8;
  c.seed = seed;
  return c;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(Generate, SameSeedSameBytes) {
  const auto a = generate(small(11)), b = generate(small(11));
  EXPECT_EQ(io::detections_jsonl(a.detections), io::detections_jsonl(b.detections));
  EXPECT_EQ(io::dump(io::scenario_json(a)), io::dump(io::scenario_json(b)));
  EXPECT_NE(io::detections_jsonl(a.detections), io::detections_jsonl(generate(small(12)).detections));
}

TEST(Generate, SplitsAndVideoCount) {
  const auto s = generate(small(1));
  ASSERT_EQ(s.videos.size(), 3u);
  EXPECT_EQ(s.videos[0].split, "train");
  EXPECT_EQ(s.videos[1].split, "eval");
  EXPECT_EQ(s.videos[2].split, "eval");
}

TEST(Generate, NoiseFreeFeaturesAreIdenticalPerEntity) {
  const auto s = generate(small(2));  // sigma = beta = 0
  std::map<std::string, const DetectionRecord*> first;
  for (const auto& d : s.detections) {
    auto [it, fresh] = first.emplace(d.video_id + "/" + d.entity_id, &d);
    if (!fresh) {
      EXPECT_EQ(d.feature, it->second->feature);
      EXPECT_EQ(cosine(d.feature, it->second->feature), 1.0);
    }
  }
}

TEST(Generate, DriftAlongSharedSubspace) {
  auto c = small(3);
  c.beta = 10.0;
  c.drift_rank = 1;
  c.feature_dim = 6;
  const auto s = generate(c);
  // with rank 1 every entity drifts along the same line, up to sign
  std::vector<std::vector<double>> dirs;
  std::map<std::string, const DetectionRecord*> first;
  for (const auto& d : s.detections) {
    auto [it, fresh] = first.emplace(d.video_id + "/" + d.entity_id, &d);
    if (!fresh && d.frame_index > it->second->frame_index + 50) {
      std::vector<double> delta(d.feature.size());
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = d.feature[i] - it->second->feature[i];
      dirs.push_back(delta);
      first.erase(it);
      first.emplace(d.video_id + "/" + d.entity_id, &d);
    }
  }
  ASSERT_GE(dirs.size(), 2u);
  for (const auto& d : dirs) EXPECT_NEAR(std::abs(cosine(d, dirs[0])), 1.0, 1e-9);
  c.drift_rank = 7;
  EXPECT_THROW(generate(c), UsageError);
}

TEST(GenerateProperty, DetectionsSatisfyTrackletPreconditions) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate(small(seed));
    std::map<std::string, std::int64_t> length;
    for (const auto& v : s.videos) length[v.video_id] = v.length;
    for (const auto& d : s.detections) {
      EXPECT_LT(d.bbox.x_min, d.bbox.x_max);
      EXPECT_LT(d.bbox.y_min, d.bbox.y_max);
      EXPECT_GE(d.bbox.x_min, 0.0);
      EXPECT_GE(d.bbox.y_min, 0.0);
      EXPECT_LE(d.bbox.x_max, 640.0);
      EXPECT_LE(d.bbox.y_max, 480.0);
      EXPECT_GE(d.frame_index, 0);
      EXPECT_LT(d.frame_index, length.at(d.video_id));
    }
  }
}

TEST(GenerateProperty, ChainingRecoversPlantedTracklets) {
  FragmentConfig fc;
  fc.sampling_stride = 1;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate(small(seed));
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> planted;
    for (const auto& t : s.truth) planted[t.tracklet_id] = {t.first_frame, t.last_frame};
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> recovered;
    for (const auto& pv : prepare_videos(s.detections, s.videos, fc))
      for (const auto& t : pv.tracklets) recovered[t.tracklet_id] = {t.first_frame(), t.last_frame()};
    EXPECT_EQ(recovered, planted) << "seed " << seed;
  }
}

TEST(GenerateProperty, TruthCoversEveryTracklet) {
  const auto s = generate(small(4));
  std::set<std::string> truth;
  for (const auto& t : s.truth) truth.insert(t.tracklet_id);
  for (const auto& pv : prepare_videos(s.detections, s.videos, FragmentConfig{}))
    for (const auto& t : pv.tracklets) EXPECT_TRUE(truth.count(t.tracklet_id)) << t.tracklet_id;
}

TEST(GenerateProperty, EntitiesAreSeparated) {
  auto c = small(5);
  c.inter_entity_min_distance = 3.0;
  const auto s = generate(c);
  std::map<std::string, std::map<std::string, std::vector<double>>> centroid;
  for (const auto& d : s.detections) centroid[d.video_id].emplace(d.entity_id, d.feature);
  for (const auto& [video, entities] : centroid)
    for (const auto& [a, fa] : entities)
      for (const auto& [b, fb] : entities)
        if (a < b) {
          double d2 = 0;
          for (std::size_t i = 0; i < fa.size(); ++i) d2 += (fa[i] - fb[i]) * (fa[i] - fb[i]);
          EXPECT_GE(std::sqrt(d2), 3.0);
        }
}

TEST(Presets, Known) {
  EXPECT_EQ(scenario_preset("easy").sigma, 0.0);
  EXPECT_EQ(scenario_preset("easy").beta, 0.0);
  EXPECT_EQ(scenario_preset("easy").n_videos, 6u);
  EXPECT_GT(scenario_preset("drift").beta, 0.0);
  EXPECT_GT(scenario_preset("drift").drift_rank, 0u);
  EXPECT_GT(scenario_preset("noisy").sigma, 0.0);
  EXPECT_EQ(scenario_preset("paper-scale-ish").n_videos, 19u);
  for (const auto& name : scenario_presets()) EXPECT_NO_THROW(scenario_preset(name).validate());
  EXPECT_THROW(scenario_preset("hard"), UsageError);
}

TEST(ScenarioConfig, Validation) {
  auto c = small(0);
  c.n_videos = 0;
  EXPECT_THROW(generate(c), UsageError);
  c = small(0);
  c.sigma = -1.0;
  EXPECT_THROW(generate(c), UsageError);
  c = small(0);
  c.tracklet_gap = {1, 3};
  EXPECT_THROW(generate(c), UsageError);
  c = small(0);
  c.video_length = 50;
  EXPECT_THROW(generate(c), UsageError);
  c = small(0);
  c.feature_dim = 1;
  c.entities_per_video = {4, 4};
  c.inter_entity_min_distance = 100.0;
  EXPECT_THROW(generate(c), DataError);
}

TEST(Io, DetectionsRoundTrip) {
  const auto s = generate(small(6));
  std::istringstream in(io::detections_jsonl(s.detections));
  EXPECT_EQ(io::read_detections(in, "mem"), s.detections);
}

TEST(Io, MalformedDetectionNamesTheLine) {
  std::istringstream in("{\"video_id\": \"v\"}\n");
  try {
    io::read_detections(in, "input.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("input.jsonl"), std::string::npos);
  }
}
