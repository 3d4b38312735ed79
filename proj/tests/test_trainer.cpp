#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lln/error.hpp"
#include "lln/synthetic.hpp"
#include "lln/trainer.hpp"
#include "oracles.hpp"

using namespace lln;
using namespace lln::testing;

namespace {

Dataset make_dataset(const std::vector<std::string>& locations, std::mt19937_64& rng, int h = 3, int w = 3,
                     int c = 4) {
  Dataset d;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    ManifestEntry e;
    e.id = "img" + std::to_string(i);
    e.path = e.id + ".fmap";
    e.location = locations[i];
    d.manifest.entries.push_back(e);
    d.features.push_back(random_map(rng, h, w, c, 0.0, 1.0));
  }
  return d;
}

std::vector<Embedding> embeddings_from(const std::vector<std::vector<double>>& vs) {
  std::vector<Embedding> out;
  for (const auto& v : vs) out.push_back({v, true, false});
  return out;
}

double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Scalar re-evaluation of the hinge sum.
double triplet_oracle(const std::vector<double>& q, const std::vector<double>& p,
                      const std::vector<std::vector<double>>& negs, double m) {
  double s = 0.0;
  for (const auto& n : negs) s += std::max(0.0, euclid(q, p) + m - euclid(q, n));
  return s;
}

LLNParams micro_params(std::uint64_t seed, int in_c) {
  const std::vector<int> ks{1, 3};
  LLNParams p = LLNParams::xavier(in_c, ks, 2, seed);
  std::vector<double> flat = p.flatten();
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  for (double& v : flat) v += u(rng);
  p.assign(flat);
  return p;
}

}  // namespace

TEST(TripletLoss, SatisfiedMarginIsZero) {
  const std::vector<double> q{1.0, 0.0};
  const TripletLoss l = triplet_loss(q, q, {{0.0, 1.0}, {-1.0, 0.0}}, 0.3);
  EXPECT_EQ(l.loss, 0.0);
  EXPECT_EQ(l.active_terms, 0);
  for (double v : l.grad_query) EXPECT_EQ(v, 0.0);
}

TEST(TripletLoss, AllIdenticalGivesKTimesMargin) {
  const std::vector<double> q{0.6, 0.8};
  const TripletLoss l = triplet_loss(q, q, {q, q, q, q}, 0.3);
  EXPECT_NEAR(l.loss, 1.2, 1e-15);
  EXPECT_EQ(l.active_terms, 4);
  for (double v : l.grad_query) EXPECT_TRUE(std::isfinite(v));
}

TEST(TripletLoss, DimensionMismatchIsConfigError) {
  const std::vector<double> q{1.0, 0.0};
  EXPECT_THROW(triplet_loss(q, std::vector<double>{1.0}, {{0.0, 1.0}}, 0.3), ConfigError);
  EXPECT_THROW(triplet_loss(q, q, {{0.0}}, 0.3), ConfigError);
}

TEST(TripletLoss, MatchesScalarOracleAndFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = l2_normalize(random_vector(rng, 5));
    const auto p = l2_normalize(random_vector(rng, 5));
    std::vector<std::vector<double>> negs;
    for (int k = 0; k < 4; ++k) negs.push_back(l2_normalize(random_vector(rng, 5)));
    const double m = 0.3 + 0.5 * (trial % 3);
    const TripletLoss l = triplet_loss(q, p, negs, m);
    EXPECT_NEAR(l.loss, triplet_oracle(q, p, negs, m), 1e-12);
    EXPECT_GE(l.loss, 0.0);

    const auto fd_q = numeric_gradient([&](const std::vector<double>& x) { return triplet_oracle(x, p, negs, m); }, q,
                                       1e-6);
    const auto fd_p = numeric_gradient([&](const std::vector<double>& x) { return triplet_oracle(q, x, negs, m); }, p,
                                       1e-6);
    if (l.active_terms > 0) {
      EXPECT_LT(relative_error(l.grad_query, fd_q), 1e-4);
      EXPECT_LT(relative_error(l.grad_positive, fd_p), 1e-4);
    }
    for (int k = 0; k < 4; ++k) {
      const auto fd_n = numeric_gradient(
          [&](const std::vector<double>& x) {
            auto ns = negs;
            ns[k] = x;
            return triplet_oracle(q, p, ns, m);
          },
          negs[k], 1e-6);
      double norm = 0.0;
      for (double v : fd_n) norm += v * v;
      if (norm > 0.0) EXPECT_LT(relative_error(l.grad_negatives[k], fd_n), 1e-4);
      else for (double v : l.grad_negatives[k]) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(TripletLoss, ZeroIffAllTripletsSatisfied) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_vector(rng, 3), p = random_vector(rng, 3);
    std::vector<std::vector<double>> negs{random_vector(rng, 3), random_vector(rng, 3)};
    const bool satisfied = std::all_of(negs.begin(), negs.end(),
                                       [&](const auto& n) { return euclid(q, p) + 0.3 <= euclid(q, n); });
    EXPECT_EQ(triplet_loss(q, p, negs, 0.3).loss == 0.0, satisfied);
  }
}

TEST(Mining, EqualEmbeddingsBreakTiesBySmallerId) {
  std::mt19937_64 rng(3);
  // Ids sort as img0 < img1 < img2 < img3 < img4 < img5.
  Dataset d = make_dataset({"a", "a", "b", "b", "b", "b"}, rng);
  const auto emb = embeddings_from(std::vector<std::vector<double>>(6, {1.0, 0.0}));
  EXPECT_EQ(mine_hard_negatives(0, d, emb, 3), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_EQ(mine_hard_negatives(0, d, emb, 3), mine_hard_negatives(0, d, emb, 3));
}

TEST(Mining, TieBreakUsesIdNotIndex) {
  std::mt19937_64 rng(4);
  Dataset d = make_dataset({"a", "b", "b"}, rng);
  d.manifest.entries[1].id = "zeta";
  d.manifest.entries[2].id = "alpha";
  const auto emb = embeddings_from(std::vector<std::vector<double>>(3, {1.0, 0.0}));
  EXPECT_EQ(mine_hard_negatives(0, d, emb, 1), (std::vector<std::size_t>{2}));
}

TEST(Mining, NearestOtherLocationRankedFirst) {
  std::mt19937_64 rng(5);
  Dataset d = make_dataset({"a", "a", "b", "b", "c"}, rng);
  const auto emb = embeddings_from({{0.0, 0.0}, {0.0, 0.05}, {3.0, 0.0}, {0.1, 0.0}, {1.0, 1.0}});
  EXPECT_EQ(mine_hard_negatives(0, d, emb, 3), (std::vector<std::size_t>{3, 4, 2}));
}

TEST(Mining, MatchesExhaustiveSortOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> locs;
    for (int i = 0; i < 12; ++i) locs.push_back(std::string(1, static_cast<char>('a' + rng() % 4)));
    locs[0] = "a";
    locs[1] = "b";
    locs[2] = "c";
    Dataset d = make_dataset(locs, rng, 1, 1, 1);
    std::vector<std::vector<double>> vs;
    // Coarse values so distance ties occur.
    for (int i = 0; i < 12; ++i) vs.push_back({static_cast<double>(rng() % 3), static_cast<double>(rng() % 3)});
    const auto emb = embeddings_from(vs);
    const std::size_t q = rng() % 12;

    std::vector<std::pair<double, std::string>> all;
    for (std::size_t i = 0; i < 12; ++i) {
      if (locs[i] != locs[q]) all.emplace_back(euclid(vs[q], vs[i]), d.entry(i).id);
    }
    std::sort(all.begin(), all.end());
    const int k = std::min<int>(3, static_cast<int>(all.size()));
    const auto got = mine_hard_negatives(q, d, emb, k);
    for (int i = 0; i < k; ++i) EXPECT_EQ(d.entry(got[i]).id, all[i].second);
  }
}

TEST(Mining, TooFewCandidatesIsDatasetError) {
  std::mt19937_64 rng(7);
  Dataset d = make_dataset({"a", "a", "b"}, rng);
  const auto emb = embeddings_from(std::vector<std::vector<double>>(3, {1.0}));
  EXPECT_THROW(mine_hard_negatives(0, d, emb, 2), DatasetError);
}

TEST(BuildTuples, TwoByTwoWithOneNegativeIsForced) {
  std::mt19937_64 rng(8);
  Dataset d = make_dataset({"a", "a", "b", "b"}, rng);
  const std::vector<std::size_t> queries{0, 1, 2, 3};
  std::map<std::size_t, std::vector<std::size_t>> negs{{0, {2}}, {1, {3}}, {2, {0}}, {3, {1}}};
  std::mt19937_64 r(1);
  auto tuples = build_tuples(d, queries, negs, r);
  std::sort(tuples.begin(), tuples.end(), [](const auto& a, const auto& b) { return a.query < b.query; });
  const std::vector<TrainingTuple> expect{{0, 1, {2}}, {1, 0, {3}}, {2, 3, {0}}, {3, 2, {1}}};
  EXPECT_EQ(tuples, expect);
}

TEST(BuildTuples, SeededRngIsDeterministic) {
  std::mt19937_64 rng(9);
  Dataset d = make_dataset({"a", "a", "a", "b", "b", "b", "c", "c"}, rng);
  const std::vector<std::size_t> queries{0, 1, 2, 3, 4, 5, 6, 7};
  std::map<std::size_t, std::vector<std::size_t>> negs;
  for (std::size_t q : queries) negs[q] = {q < 3 ? std::size_t{6} : std::size_t{0}};
  std::mt19937_64 r1(42), r2(42);
  EXPECT_EQ(build_tuples(d, queries, negs, r1), build_tuples(d, queries, negs, r2));
}

TEST(BuildTuples, PinnedPositiveIsUsed) {
  std::mt19937_64 rng(10);
  Dataset d = make_dataset({"a", "a", "a", "b"}, rng);
  d.manifest.entries[0].positive = "img2";
  const std::vector<std::size_t> queries{0};
  std::map<std::size_t, std::vector<std::size_t>> negs{{0, {3}}};
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 r(s);
    EXPECT_EQ(build_tuples(d, queries, negs, r).front().positive, 2u);
  }
}

TEST(BuildTuples, SingletonLocationQueryIsDatasetError) {
  std::mt19937_64 rng(11);
  Dataset d = make_dataset({"a", "b", "b"}, rng);
  const std::vector<std::size_t> queries{0};
  std::map<std::size_t, std::vector<std::size_t>> negs{{0, {1}}};
  std::mt19937_64 r(0);
  EXPECT_THROW(build_tuples(d, queries, negs, r), DatasetError);
}

TEST(BuildTuples, InvariantsHoldOnRandomManifests) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 12);
    const int nloc = 2 + static_cast<int>(rng() % 4);
    std::vector<std::string> locs;
    for (int i = 0; i < n; ++i) locs.push_back("L" + std::to_string(i % nloc));
    std::shuffle(locs.begin(), locs.end(), rng);
    Dataset d = make_dataset(locs, rng, 1, 1, 1);
    const auto queries = default_queries(d);
    std::map<std::size_t, std::vector<std::size_t>> negs;
    const std::vector<Embedding> emb = embeddings_from([&] {
      std::vector<std::vector<double>> vs;
      for (int i = 0; i < n; ++i) vs.push_back(random_vector(rng, 3));
      return vs;
    }());
    int k = n;
    for (std::size_t q : queries) {
      int others = 0;
      for (int i = 0; i < n; ++i) others += locs[i] != locs[q];
      k = std::min(k, others);
    }
    k = std::min(k, 4);
    for (std::size_t q : queries) negs[q] = mine_hard_negatives(q, d, emb, k);
    auto tuples = build_tuples(d, queries, negs, rng);
    ASSERT_EQ(tuples.size(), queries.size());
    std::set<std::size_t> seen;
    for (const auto& t : tuples) {
      seen.insert(t.query);
      EXPECT_NE(t.positive, t.query);
      EXPECT_EQ(locs[t.positive], locs[t.query]);
      EXPECT_EQ(t.negatives.size(), static_cast<std::size_t>(k));
      for (std::size_t neg : t.negatives) EXPECT_NE(locs[neg], locs[t.query]);
    }
    EXPECT_EQ(seen.size(), queries.size());
  }
}

TEST(DefaultQueries, SkipsSingletonLocations) {
  std::mt19937_64 rng(13);
  Dataset d = make_dataset({"a", "b", "b", "c"}, rng);
  EXPECT_EQ(default_queries(d), (std::vector<std::size_t>{1, 2}));
}

TEST(BatchLoss, GradientMatchesFiniteDifferencesOnMicroDataset) {
  std::mt19937_64 rng(14);
  Dataset d = make_dataset({"a", "a", "b", "b"}, rng, 3, 3, 3);
  const LLNParams p = micro_params(99, 3);
  const std::vector<TrainingTuple> tuples{{0, 1, {2, 3}}, {2, 3, {0, 1}}};
  const double margin = 1.5;  // keep every hinge active
  LLNParams grads = p.zeros_like();
  const double loss = batch_loss(d, p, tuples, margin, &grads);
  ASSERT_GT(loss, 0.0);
  const auto fd = numeric_gradient(
      [&](const std::vector<double>& flat) {
        LLNParams q = p;
        q.assign(flat);
        return batch_loss(d, q, tuples, margin, nullptr);
      },
      p.flatten(), 1e-6);
  EXPECT_LT(relative_error(grads.flatten(), fd), 1e-4);
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  std::mt19937_64 rng(15);
  Dataset d = make_dataset({"a", "a", "b", "b", "c", "c"}, rng);
  const LLNParams p = micro_params(3, 4);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.num_negatives = 2;
  cfg.epochs = 3;
  cfg.seed = 5;
  const TrainResult r = train(d, cfg, p);
  EXPECT_EQ(r.params, p);
  const auto means = r.epoch_means();
  ASSERT_EQ(means.size(), 3u);
  // Positives are forced and negatives fixed; only the summation order moves.
  EXPECT_NEAR(means[0], means[1], 1e-12);
  EXPECT_NEAR(means[1], means[2], 1e-12);
}

TEST(Train, HingeInactiveMeansNoUpdates) {
  // Same-location images share identical features; different locations live
  // in orthogonal channels, so |q - p| = 0 and |q - n| = sqrt(2) > m.
  Dataset d;
  for (int i = 0; i < 6; ++i) {
    ManifestEntry e;
    e.id = "img" + std::to_string(i);
    e.path = e.id;
    e.location = "L" + std::to_string(i / 2);
    d.manifest.entries.push_back(e);
    FeatureMap f(2, 2, 3);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) f.at(y, x, i / 2) = 1.0 + y + x;
    d.features.push_back(f);
  }
  LLNParams p = micro_params(4, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.num_negatives = 2;
  cfg.epochs = 2;
  const TrainResult r = train(d, cfg, p);
  for (const auto& s : r.history) EXPECT_EQ(s.loss, 0.0);
  EXPECT_EQ(r.params, p);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  std::mt19937_64 rng(16);
  Dataset d = make_dataset({"a", "a", "b", "b"}, rng);
  for (double& v : d.features[0].data()) v = std::numeric_limits<double>::max();
  // Positive weights make the overflow reach the activation map as +inf.
  LLNParams p = micro_params(5, 4);
  std::vector<double> flat = p.flatten();
  for (double& v : flat) v = std::abs(v) + 0.01;
  p.assign(flat);
  TrainConfig cfg;
  cfg.num_negatives = 1;
  try {
    train(d, cfg, p);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step"), std::string::npos);
    EXPECT_NE(msg.find("img"), std::string::npos);
  }
}

TEST(Train, NeedsTwoLocations) {
  std::mt19937_64 rng(17);
  Dataset d = make_dataset({"a", "a", "a"}, rng);
  EXPECT_THROW(train(d, TrainConfig{}, micro_params(6, 4)), DatasetError);
}

TEST(Train, InvalidConfigRejected) {
  TrainConfig cfg;
  cfg.margin = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.num_negatives = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, BitReproducibleAndThreadIndependent) {
  SyntheticConfig sc;
  sc.locations = 4;
  sc.views = 3;
  sc.grid_width = 4;
  sc.grid_height = 4;
  sc.channels = 6;
  sc.structure_channels = 3;
  sc.prototypes = 2;
  sc.distractors = 1;
  sc.seed = 3;
  Dataset d;
  for (const auto& v : generate_synthetic(sc)) {
    ManifestEntry e;
    e.id = "l" + std::to_string(v.location) + "v" + std::to_string(v.view);
    e.path = e.id;
    e.location = "loc" + std::to_string(v.location);
    d.manifest.entries.push_back(e);
    d.features.push_back(v.features);
  }
  const std::vector<int> ks{3};
  // Seed 1 happens to give an all-zero activation map (dead combiner).
  const LLNParams init = LLNParams::xavier(6, ks, 3, 2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.num_negatives = 2;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 11;
  const TrainResult a = train(d, cfg, init);
  const TrainResult b = train(d, cfg, init);
  cfg.threads = 3;
  const TrainResult c = train(d, cfg, init);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params, c.params);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].loss, b.history[i].loss);
  EXPECT_NE(a.params, init);
}

TEST(Train, EpochCallbackReceivesMeans) {
  std::mt19937_64 rng(18);
  Dataset d = make_dataset({"a", "a", "b", "b", "c", "c"}, rng);
  TrainConfig cfg;
  cfg.num_negatives = 2;
  cfg.epochs = 2;
  std::vector<double> seen;
  const TrainResult r = train(d, cfg, micro_params(7, 4), [&](int, double m) { seen.push_back(m); });
  const auto means = r.epoch_means();
  ASSERT_EQ(seen.size(), 2u);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(seen[i], means[i], 1e-12);
}

TEST(Train, SyntheticLossDescendsOverFirstEpochs) {
  SyntheticConfig sc;
  sc.seed = 1;
  Dataset d;
  for (const auto& v : generate_synthetic(sc)) {
    if (v.view >= 6) continue;
    ManifestEntry e;
    e.id = "loc" + std::to_string(v.location) + "_view" + std::to_string(v.view);
    e.path = e.id;
    e.location = "loc" + std::to_string(v.location);
    d.manifest.entries.push_back(e);
    d.features.push_back(v.features);
  }
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 5;
  cfg.seed = 1;
  const std::vector<int> ks{1, 3, 5};
  const auto means = train(d, cfg, LLNParams::xavier(sc.channels, ks, 16, 101)).epoch_means();
  ASSERT_EQ(means.size(), 5u);
  for (std::size_t i = 1; i < means.size(); ++i) EXPECT_LT(means[i], means[i - 1]) << "epoch " << i + 1;
}
