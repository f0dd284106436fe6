#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "polycount/clustering.hpp"

using namespace polycount;
using namespace polycount::testing;

namespace {

TrackletDescriptor desc(std::initializer_list<double> e, double pos, const std::string& id = "t") {
  Eigen::VectorXd v(static_cast<Eigen::Index>(e.size()));
  Eigen::Index i = 0;
  for (double x : e) v(i++) = x;
  return {id, v, pos};
}

}  // namespace

TEST(Visual, IdenticalEmbeddings) {
  const auto v = visual_similarity({desc({1, 0}, 0), desc({1, 0}, 0), desc({2, 0}, 0)});
  EXPECT_TRUE((v.array() == 1.0).all());
}

TEST(Visual, OrthogonalAndAntipodal) {
  const auto v = visual_similarity({desc({1, 0}, 0), desc({0, 1}, 0), desc({-1, 0}, 0)});
  EXPECT_NEAR(v(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(v(0, 2), 0.0, 1e-15);
  EXPECT_EQ(v(0, 1), v(1, 0));
}

TEST(Visual, RejectsZeroOrMismatchedEmbeddings) {
  EXPECT_THROW(visual_similarity({desc({0, 0}, 0)}), DataError);
  EXPECT_THROW(visual_similarity({desc({1, 0}, 0), desc({1}, 0)}), DataError);
}

TEST(Temporal, Examples) {
  const auto t = temporal_adjacency({desc({1}, 0.2), desc({1}, 0.2), desc({1}, 1.0), desc({1}, 0.0)}, 1.0);
  EXPECT_EQ(t(0, 1), 1.0);
  EXPECT_NEAR(t(2, 3), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(t(2, 3), 0.3679, 1e-4);
  const auto flat = temporal_adjacency({desc({1}, 0.0), desc({1}, 1.0)}, 1e-12);
  EXPECT_NEAR(flat(0, 1), 1.0, 1e-11);
  EXPECT_THROW(temporal_adjacency({}, 0.0), UsageError);
}

TEST(Combine, Endpoints) {
  Eigen::MatrixXd v(2, 2), t(2, 2);
  v << 1, 0.8, 0.8, 1;
  t << 1, 0.4, 0.4, 1;
  EXPECT_TRUE((combine(v, t, 1.0).array() == v.array()).all());
  EXPECT_TRUE((combine(v, t, 0.0).array() == t.array()).all());
  EXPECT_NEAR(combine(v, t, 0.5)(0, 1), 0.6, 1e-15);
  EXPECT_THROW(combine(v, t, 1.5), UsageError);
}

TEST(SimilarityProperty, RangeSymmetryAndGammaMonotonicity) {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 50; ++n) {
    const auto ds = random_descriptors(rng, 2 + std::size_t(n % 7), 4);
    const auto b = similarity_bundle(ds, 0.5 + n % 3, 0.3);
    for (const auto* m : {&b.visual, &b.temporal, &b.combined}) {
      EXPECT_GE(m->minCoeff(), 0.0);
      EXPECT_LE(m->maxCoeff(), 1.0);
      EXPECT_LT((*m - m->transpose()).cwiseAbs().maxCoeff(), 1e-15);
      EXPECT_TRUE((m->diagonal().array() == 1.0).all());
    }
    const auto lo = temporal_adjacency(ds, 0.5), hi = temporal_adjacency(ds, 2.0);
    EXPECT_TRUE((hi.array() <= lo.array()).all());
  }
}

TEST(SimilarityProperty, PermutationEquivariant) {
  std::mt19937_64 rng(4);
  for (int n = 0; n < 30; ++n) {
    auto ds = random_descriptors(rng, 6, 3);
    const auto s = similarity_bundle(ds, 1.3, 0.4).combined;
    std::vector<std::size_t> perm(ds.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<TrackletDescriptor> pd;
    for (auto p : perm) pd.push_back(ds[p]);
    const auto ps = similarity_bundle(pd, 1.3, 0.4).combined;
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < perm.size(); ++j)
        EXPECT_NEAR(ps(Eigen::Index(i), Eigen::Index(j)), s(Eigen::Index(perm[i]), Eigen::Index(perm[j])), 1e-15);
  }
}

TEST(AffinityPropagation, SinglePoint) {
  const auto r = affinity_propagation(Eigen::MatrixXd::Ones(1, 1), 0.0);
  EXPECT_EQ(r.labels, std::vector<int>{0});
  EXPECT_EQ(r.exemplars, std::vector<std::size_t>{0});
}

TEST(AffinityPropagation, TwoSeparatedGroups) {
  std::vector<TrackletDescriptor> ds;
  for (int i = 0; i < 3; ++i) ds.push_back(desc({1.0, 0.02 * i, 0}, 0));
  for (int i = 0; i < 3; ++i) ds.push_back(desc({0, 1.0, 0.02 * i}, 0));
  const auto s = visual_similarity(ds);
  const auto r = affinity_propagation(s, 0.5);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(count_entities(r.labels), 2u);
  EXPECT_EQ(r.labels[0], r.labels[1]);
  EXPECT_EQ(r.labels[1], r.labels[2]);
  EXPECT_EQ(r.labels[3], r.labels[4]);
  EXPECT_NE(r.labels[0], r.labels[3]);
  EXPECT_NEAR(net_similarity(s, 0.5, r.exemplars), brute_force_optimum(s, 0.5).value, 1e-9);
}

TEST(AffinityPropagation, LargePreferenceMakesSingletons) {
  std::mt19937_64 rng(6);
  for (int n = 0; n < 20; ++n) {
    const auto s = visual_similarity(random_descriptors(rng, 2 + std::size_t(n % 7), 3));
    const auto r = affinity_propagation(s, 100.0);
    EXPECT_EQ(count_entities(r.labels), std::size_t(s.rows()));
    EXPECT_EQ(brute_force_optimum(s, 100.0).exemplars.size(), std::size_t(s.rows()));
  }
}

TEST(AffinityPropagation, ExemplarsLabelThemselves) {
  std::mt19937_64 rng(7);
  for (int n = 0; n < 50; ++n) {
    const auto s = visual_similarity(random_descriptors(rng, 3 + std::size_t(n % 10), 3));
    const auto r = affinity_propagation(s, 0.2 + 0.02 * n);
    ASSERT_EQ(r.labels.size(), std::size_t(s.rows()));
    for (std::size_t c = 0; c < r.exemplars.size(); ++c) EXPECT_EQ(r.labels[r.exemplars[c]], int(c));
    EXPECT_EQ(count_entities(r.labels), r.exemplars.size());
    EXPECT_TRUE(std::is_sorted(r.exemplars.begin(), r.exemplars.end()));
  }
}

TEST(AffinityPropagation, Deterministic) {
  std::mt19937_64 rng(8);
  const auto s = visual_similarity(random_descriptors(rng, 9, 3));
  const auto a = affinity_propagation(s, 0.5), b = affinity_propagation(s, 0.5);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(AffinityPropagation, TiedSimilaritiesStillResolve) {
  const auto r = affinity_propagation(Eigen::MatrixXd::Ones(4, 4), 0.5);
  EXPECT_FALSE(r.exemplars.empty());
  for (int l : r.labels) EXPECT_GE(l, 0);
}

TEST(AffinityPropagation, RejectsBadInput) {
  EXPECT_THROW(affinity_propagation(Eigen::MatrixXd::Ones(2, 3), 0.0), DataError);
  Eigen::MatrixXd s = Eigen::MatrixXd::Ones(2, 2);
  s(0, 1) = NAN;
  EXPECT_THROW(affinity_propagation(s, 0.0), DataError);
  EXPECT_THROW(affinity_propagation(Eigen::MatrixXd::Ones(2, 2), 0.0, 0.3), UsageError);
}

TEST(AffinityPropagationProperty, PlantedInstancesReachBruteForceOptimum) {
  std::mt19937_64 rng(101);
  for (int n = 0; n < 100; ++n) {
    const auto inst = planted_instance(rng);
    const auto r = affinity_propagation(inst.similarity, inst.preference);
    const auto best = brute_force_optimum(inst.similarity, inst.preference);
    EXPECT_NEAR(net_similarity(inst.similarity, inst.preference, r.exemplars), best.value, 1e-9)
        << "instance " << n;
  }
}

TEST(AffinityPropagationProperty, PermutationEquivariantOnPlantedInstances) {
  std::mt19937_64 rng(102);
  for (int n = 0; n < 50; ++n) {
    const auto inst = planted_instance(rng);
    const auto N = inst.similarity.rows();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd ps(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j) ps(i, j) = inst.similarity(perm[size_t(i)], perm[size_t(j)]);
    const auto a = affinity_propagation(inst.similarity, inst.preference);
    const auto b = affinity_propagation(ps, inst.preference);
    // same partition up to relabeling
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j)
        EXPECT_EQ(b.labels[size_t(i)] == b.labels[size_t(j)],
                  a.labels[size_t(perm[size_t(i)])] == a.labels[size_t(perm[size_t(j)])]);
  }
}

TEST(Threshold, Examples) {
  Eigen::MatrixXd s(3, 3);
  s << 1, 0.8, 0.2, 0.8, 1, 0.7, 0.2, 0.7, 1;
  EXPECT_EQ(count_entities(threshold_clustering(s, 0.0)), 1u);
  EXPECT_EQ(count_entities(threshold_clustering(s, 0.81)), 3u);
  EXPECT_EQ(threshold_clustering(s, 0.7), (std::vector<int>{0, 0, 0}));  // chain through B
  EXPECT_EQ(threshold_clustering(s, 0.75), (std::vector<int>{0, 0, 1}));
  EXPECT_THROW(threshold_clustering(s, 1.5), UsageError);
}

TEST(ThresholdProperty, MonotoneInTheta) {
  std::mt19937_64 rng(9);
  for (int n = 0; n < 30; ++n) {
    const auto s = visual_similarity(random_descriptors(rng, 8, 3));
    std::size_t prev = 1;
    for (double theta = 0.0; theta <= 1.0; theta += 0.05) {
      const auto k = count_entities(threshold_clustering(s, theta));
      EXPECT_GE(k, prev);
      prev = k;
    }
  }
}

TEST(Count, Examples) {
  EXPECT_EQ(count_entities({3, 3, 3}), 1u);
  EXPECT_EQ(count_entities({0, 1, 2, 3}), 4u);
  EXPECT_EQ(count_entities({0, 0, 1, 2, 2, 2}), 3u);
}

TEST(ClusterTracklets, AlphaOneTemporalApEqualsAp) {
  std::mt19937_64 rng(10);
  for (int n = 0; n < 50; ++n) {
    const auto ds = random_descriptors(rng, 2 + std::size_t(n % 7), 3);
    ClusteringConfig ap;
    ap.algorithm = ClusterAlgorithm::ap;
    ap.preference = -1.0 + 0.05 * n;
    ClusteringConfig tap = ap;
    tap.algorithm = ClusterAlgorithm::temporal_ap;
    tap.alpha = 1.0;
    tap.gamma = 0.1 + n;
    EXPECT_EQ(cluster_tracklets(ds, ap).labels, cluster_tracklets(ds, tap).labels);
  }
}

TEST(ClusterTracklets, TemporalTermSeparatesLookAlikes) {
  // identical appearance, far apart in time
  std::vector<TrackletDescriptor> ds{desc({1, 0}, 0.0), desc({1, 0}, 0.05), desc({1, 0}, 0.9),
                                     desc({1, 0}, 0.95)};
  ClusteringConfig cfg;
  cfg.alpha = 0.5;
  cfg.gamma = 10.0;
  cfg.preference = 0.6;
  const auto r = cluster_tracklets(ds, cfg);
  EXPECT_EQ(r.entity_count, 2u);
  cfg.algorithm = ClusterAlgorithm::ap;
  EXPECT_EQ(cluster_tracklets(ds, cfg).entity_count, 1u);
}

TEST(ClusterTracklets, EmptyInput) { EXPECT_EQ(cluster_tracklets({}, {}).entity_count, 0u); }

TEST(ClusteringConfig, ParseAndValidate) {
  for (auto a : {ClusterAlgorithm::threshold, ClusterAlgorithm::ap, ClusterAlgorithm::temporal_ap})
    EXPECT_EQ(parse_cluster_algorithm(to_string(a)), a);
  EXPECT_THROW(parse_cluster_algorithm("kmeans"), UsageError);
  ClusteringConfig c;
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
  c = {};
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), UsageError);
}
