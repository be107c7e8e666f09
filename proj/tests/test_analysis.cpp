#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hhae/analysis.hpp"

using namespace hhae;

namespace {

// Points scattered tightly around +u and -u.
std::vector<Embedding> antipodal_blobs(std::size_t per_blob, std::size_t dim, double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Embedding u(dim);
  for (auto& v : u) v = g(rng);
  std::vector<Embedding> x;
  for (double sign : {1.0, -1.0})
    for (std::size_t i = 0; i < per_blob; ++i) {
      Embedding e(dim);
      for (std::size_t k = 0; k < dim; ++k) e[k] = sign * u[k] + spread * g(rng);
      x.push_back(e);
    }
  return x;
}

std::vector<int> blob_labels(std::size_t per_blob, std::size_t blobs) {
  std::vector<int> l;
  for (std::size_t b = 0; b < blobs; ++b) l.insert(l.end(), per_blob, static_cast<int>(b));
  return l;
}

const std::vector<Embedding> kFourPoints{{0}, {1}, {10}, {11}};
const std::vector<int> kFourLabels{0, 0, 1, 1};

Model<float> tiny_model() { return Model<float>(ModelConfig::tiny(), 4); }

ad::Tensor<float> tiny_window(std::uint64_t seed) {
  SynthConfig sc;
  sc.family = "bimanual";
  sc.frames = 8;
  return to_tensor<float>(HandHeadSequence{synth_generate(sc, seed).relative, 30.0});
}

}  // namespace

TEST(Cluster, AntipodalBlobsGiveTwoClustersNoNoise) {
  const auto x = antipodal_blobs(50, 16, 0.02, 1);
  // Fixture check: every within-blob distance is below every between-blob distance.
  double within = 0, between = 2;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double d = cosine_distance(x[i], x[j]);
      if ((i < 50) == (j < 50))
        within = std::max(within, d);
      else
        between = std::min(between, d);
    }
  ASSERT_LT(within, between);
  const auto r = cluster(x, 10);
  EXPECT_EQ(r.n_clusters, 2);
  EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), -1), 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r.labels[i], i < 50 ? 0 : 1);
  EXPECT_EQ(r.sizes, (std::vector<std::size_t>{50, 50}));
}

TEST(Cluster, RobustAcrossSeedsAndSizes) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = antipodal_blobs(30 + 5 * seed, 8, 0.05, seed + 10);
    const auto r = cluster(x, 10);
    EXPECT_EQ(r.n_clusters, 2) << seed;
    EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), -1), 0) << seed;
  }
}

TEST(Cluster, IdenticalPointsFormOneCluster) {
  const std::vector<Embedding> x(20, Embedding{1.0, 2.0, 3.0});
  const auto r = cluster(x, 5);
  EXPECT_EQ(r.n_clusters, 1);
  for (int l : r.labels) EXPECT_EQ(l, 0);
}

TEST(Cluster, ErrorsAndLabelInvariants) {
  const std::vector<Embedding> five(5, Embedding{1.0, 0.0});
  EXPECT_THROW(cluster(five, 10), TooFew);
  EXPECT_THROW(cluster(five, 1), BadConfig);
  const auto x = antipodal_blobs(20, 4, 0.3, 3);
  const auto r = cluster(x, 5);
  ASSERT_EQ(r.labels.size(), x.size());
  for (int k = 0; k < r.n_clusters; ++k) EXPECT_EQ(r.labels[r.representatives[static_cast<std::size_t>(k)]], k);
  EXPECT_EQ(cluster(x, 5).labels, r.labels);
}

TEST(Dbi, Fixtures) {
  EXPECT_NEAR(dbi(kFourPoints, kFourLabels), 0.1, 1e-12);
  EXPECT_EQ(dbi({{0, 0}, {0, 0}, {5, 5}, {5, 5}}, {0, 0, 1, 1}), 0.0);
  EXPECT_THROW(dbi(kFourPoints, {0, 0, 0, 0}), NeedTwoClusters);
  EXPECT_THROW(dbi(kFourPoints, {0, 0, -1, -1}), NeedTwoClusters);
}

TEST(Chi, Fixtures) {
  EXPECT_NEAR(chi(kFourPoints, kFourLabels), 200.0, 1e-9);
  const double s = chi({{0, 0}, {0, 0}, {5, 5}, {5, 5}}, {0, 0, 1, 1});
  EXPECT_TRUE(is_saturated(s));
  EXPECT_THROW(chi(kFourPoints, {1, 1, 1, 1}), NeedTwoClusters);
}

TEST(Scores, TrueLabelsBeatShuffled) {
  const auto x = antipodal_blobs(40, 8, 0.3, 5);
  const auto truth = blob_labels(40, 2);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = truth;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_LT(dbi(x, truth), dbi(x, shuffled));
    EXPECT_GT(chi(x, truth), chi(x, shuffled));
  }
}

TEST(Representative, Rules) {
  EXPECT_EQ(representative(kFourPoints, {0, 0, 1, 2}, 2), 3u);
  EXPECT_EQ(representative({{-1}, {1}}, {0, 0}, 0), 0u);
  EXPECT_THROW(representative(kFourPoints, kFourLabels, 7), UnknownCluster);
}

TEST(Representative, MatchesBruteForceScan) {
  const std::vector<Embedding> x{{0, 0}, {2, 1}, {1, 1}, {5, 5}, {0.9, 0.8}};
  const std::vector<int> labels{0, 0, 0, 1, 0};
  // centroid of cluster 0 = (0.975, 0.7)
  std::size_t best = 0;
  double bd = 1e300;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (labels[i] != 0) continue;
    const double d = std::hypot(x[i][0] - 0.975, x[i][1] - 0.7);
    if (d < bd) bd = d, best = i;
  }
  EXPECT_EQ(representative(x, labels, 0), best);
  EXPECT_EQ(representative(x, labels, 1), 3u);
}

TEST(ClusterReport, Fields) {
  const auto x = antipodal_blobs(20, 8, 0.02, 7);
  const auto j = cluster_report(x, cluster(x, 5));
  EXPECT_EQ(j["n_clusters"], 2);
  EXPECT_EQ(j["n_noise"], 0);
  EXPECT_EQ(j["labels"].size(), 40u);
  EXPECT_TRUE(j["dbi"].is_number());
  EXPECT_TRUE(j["chi"].is_number());
  EXPECT_EQ(j["chi_saturated"], false);
  const std::vector<Embedding> same(10, Embedding{1, 1});
  const auto one = cluster_report(same, cluster(same, 3));
  EXPECT_TRUE(one["dbi"].is_null());
}

TEST(Generate, ZeroBetaEqualsReconstruction) {
  const auto m = tiny_model();
  const auto sched = make_schedule(1000, 1e-4, 0.02, 10);
  const auto h = tiny_window(1);
  EXPECT_EQ(generate_variants(m, h, 0.0, 5, sched).data, reconstruct(m, h, sched).data);
  EXPECT_EQ(generate_variants(m, h, 0.3, 5, sched).data, generate_variants(m, h, 0.3, 5, sched).data);
  EXPECT_NE(generate_variants(m, h, 0.3, 5, sched).data, generate_variants(m, h, 0.3, 6, sched).data);
  EXPECT_THROW(generate_variants(m, h, -0.1, 5, sched), BadConfig);
}

TEST(Generate, DeviationGrowsWithBeta) {
  const auto m = tiny_model();
  const auto sched = make_schedule(1000, 1e-4, 0.02, 10);
  const auto h = tiny_window(2);
  const auto base = generate_variants(m, h, 0.0, 0, sched);
  std::vector<double> medians;
  for (double beta : {0.0, 0.1, 0.3}) {
    std::vector<double> dev;
    for (std::uint64_t seed = 0; seed < 10; ++seed) dev.push_back(mean_abs_diff(generate_variants(m, h, beta, seed, sched), base));
    std::nth_element(dev.begin(), dev.begin() + 5, dev.end());
    medians.push_back(dev[5]);
  }
  EXPECT_EQ(medians[0], 0.0);
  EXPECT_LT(medians[0], medians[1]);
  EXPECT_LT(medians[1], medians[2]);
}

TEST(Generate, FromNoiseShapeAndUnitHead) {
  const auto m = tiny_model();
  const auto sched = make_schedule(1000, 1e-4, 0.02, 10);
  const auto esem = m.embed(tiny_window(3));
  const auto a = generate_from_noise(m, esem, 9, sched);
  EXPECT_EQ(a.shape, (ad::Shape{9, 8}));
  EXPECT_EQ(a.data, generate_from_noise(m, esem, 9, sched).data);
  for (std::size_t t = 0; t < 8; ++t) {
    const double n = std::sqrt(a.at(6, t) * a.at(6, t) + a.at(7, t) * a.at(7, t) + a.at(8, t) * a.at(8, t));
    EXPECT_NEAR(n, 1.0, 1e-6);
  }
}

TEST(Generate, VaeModelsRejected) {
  auto cfg = ModelConfig::tiny();
  cfg.set_model("vae-mlp");
  Model<float> m(cfg, 0);
  EXPECT_THROW(generate_variants(m, tiny_window(1), 0.1, 0, make_schedule()), BadConfig);
}
