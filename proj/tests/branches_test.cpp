#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "elc/branches.hpp"
#include "elc/splitter.hpp"
#include "elc/synth.hpp"
#include "oracles.hpp"

using namespace elc;

namespace {

FeatureMatrix gaussian(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix f(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) f(i, j) = g(rng);
  return f;
}

BranchModel random_model(BranchShape shape, std::uint64_t seed) {
  Rng rng(seed);
  return BranchModel::random(shape, rng);
}

BranchModel with_theta(const BranchModel& m, std::span<const double> theta) {
  return BranchModel(m.shape(), std::vector<double>(theta.begin(), theta.end()));
}

}  // namespace

TEST(Forward, ZeroModelIsUniform) {
  const BranchModel m({3, 4, 5}, std::vector<double>(BranchShape{3, 4, 5}.parameter_count(), 0.0));
  std::mt19937_64 rng(1);
  const auto f = forward(m, gaussian(6, 3, rng));
  for (double p : f.probs) EXPECT_DOUBLE_EQ(p, 0.2);
}

TEST(Forward, DominantHeadBias) {
  BranchModel m({2, 3, 4}, std::vector<double>(BranchShape{2, 3, 4}.parameter_count(), 0.0));
  m.head_bias()[0] = 10.0;
  std::mt19937_64 rng(2);
  const auto x = gaussian(3, 2, rng);
  const auto f = forward(m, x);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_GT(f.prob_row(r, 4)[0], 0.9998);
  }
  for (ClassId c : predict(m, x)) EXPECT_EQ(c, 0u);
}

TEST(Forward, RowsSumToOneAndDimensionChecked) {
  const BranchModel m = random_model({5, 7, 3}, 3);
  std::mt19937_64 rng(3);
  const auto f = forward(m, gaussian(50, 5, rng));
  for (std::size_t r = 0; r < 50; ++r) {
    const auto p = f.prob_row(r, 3);
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-9);
  }
  EXPECT_THROW(forward(m, gaussian(2, 4, rng)), Error);
}

TEST(Forward, SoftmaxShiftInvariance) {
  BranchModel m = random_model({4, 3, 3}, 4);
  std::mt19937_64 rng(4);
  const auto x = gaussian(20, 4, rng);
  const auto f1 = forward(m, x);
  for (double& b : m.head_bias()) b += 37.5;
  const auto f2 = forward(m, x);
  for (std::size_t k = 0; k < f1.probs.size(); ++k) EXPECT_NEAR(f1.probs[k], f2.probs[k], 1e-9);
  const std::vector<ClassId> y(20, 1);
  const std::vector<double> w(20, 0.7);
  EXPECT_NEAR(loss_pseudo(f1.probs, 3, y, w), loss_pseudo(f2.probs, 3, y, w), 1e-9);
}

TEST(Losses, PseudoExamples) {
  const std::vector<double> certain{0.0, 1.0, 1.0, 0.0};
  EXPECT_EQ(loss_pseudo(certain, 2, std::vector<ClassId>{1, 0}, std::vector<double>{1.0, 1.0}), 0.0);
  const std::vector<double> half{0.5, 0.5};
  EXPECT_NEAR(loss_pseudo(half, 2, std::vector<ClassId>{0}, std::vector<double>{0.5}), -0.5 * std::log(0.5), 1e-15);
  EXPECT_NEAR(loss_pseudo(half, 2, std::vector<ClassId>{0}, std::vector<double>{0.5}), 0.34657, 1e-5);
  const std::vector<double> bad{1.0, 0.0, 0.3, 0.7};
  EXPECT_EQ(loss_pseudo(bad, 2, std::vector<ClassId>{1, 0}, std::vector<double>{0.0, 0.0}), 0.0);
  // Zero probability is floored rather than infinite.
  EXPECT_TRUE(std::isfinite(loss_pseudo(bad, 2, std::vector<ClassId>{1, 0}, std::vector<double>{1.0, 1.0})));
}

TEST(Losses, NoisyExamples) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_EQ(loss_noisy(p, 2, std::vector<ClassId>{0}, std::vector<ClassId>{0}, std::vector<double>{1.0}), 0.0);
  const std::vector<double> q{0.3, 0.7};
  EXPECT_EQ(loss_noisy(q, 2, std::vector<ClassId>{0}, std::vector<ClassId>{1}, std::vector<double>{1.0}), 0.0);
  const std::vector<double> h{0.5, 0.5};
  const double v = loss_noisy(h, 2, std::vector<ClassId>{0}, std::vector<ClassId>{1}, std::vector<double>{0.25});
  EXPECT_NEAR(v, 0.75 * std::log(2.0), 1e-15);
  EXPECT_NEAR(v, 0.51986, 1e-5);
}

TEST(Losses, GraphSmoothExamples) {
  const std::vector<double> a{0.2, 0.3, 0.5}, e0{1, 0, 0}, e1{0, 1, 0};
  for (double alpha : {0.1, 1.0, 7.0})
    EXPECT_DOUBLE_EQ(pair_smoothness({a, a, 1.0, 1.0}, alpha), 1.0);
  EXPECT_NEAR(pair_smoothness({e0, e1, 1.0, 1.0}, 1.0), std::exp(-std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(pair_smoothness({e0, e1, 1.0, 1.0}, 1.0), 0.24312, 1e-5);
  EXPECT_EQ(pair_smoothness({e0, e1, 0.0, 0.8}, 1.0), 0.0);
  const std::vector<ProbPair> pairs{{a, a, 1, 1}, {e0, e1, 1, 1}};
  EXPECT_NEAR(loss_graph_smooth(pairs, 1.0), 1.0 + std::exp(-std::sqrt(2.0)), 1e-15);
}

TEST(Losses, GraphSmoothGeometricMeanLinearity) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> ps{u(rng), u(rng), u(rng)}, pt{u(rng), u(rng), u(rng)};
    const double ws = u(rng), wt = u(rng), c = u(rng);
    const double base = pair_smoothness({ps, pt, ws, wt}, 1.3);
    EXPECT_NEAR(pair_smoothness({ps, pt, c * ws, c * wt}, 1.3), c * base, 1e-14);
  }
}

TEST(Losses, TotalIsSum) {
  EXPECT_EQ(loss_total(0, 0, 0), 0.0);
  EXPECT_NEAR(loss_total(0.2, 0.3, 0.5), 1.0, 1e-15);
  EXPECT_NEAR(loss_total(0.5, 0.2, 0.3), loss_total(0.3, 0.5, 0.2), 1e-12);
}

// Analytic gradients of the three losses against central differences on 20
// random instances with D=4, H=3, C=3.
TEST(Gradients, PseudoLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const BranchModel m = random_model({4, 3, 3}, seed);
    const auto x = gaussian(6, 4, rng);
    std::vector<ClassId> y(6);
    std::vector<double> w(6);
    for (std::size_t i = 0; i < 6; ++i) {
      y[i] = static_cast<ClassId>(rng() % 3);
      w[i] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    const auto an = pseudo_loss_gradient(m, x, y, w);
    const auto num = oracle::numeric_gradient(
        [&](std::span<const double> th) { return loss_pseudo(forward(with_theta(m, th), x).probs, 3, y, w); },
        std::vector<double>(m.parameters().begin(), m.parameters().end()));
    EXPECT_NEAR(an.loss, loss_pseudo(forward(m, x).probs, 3, y, w), 1e-12);
    EXPECT_LE(oracle::max_relative_error(an.grad, num), 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, NoisyLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const BranchModel m = random_model({4, 3, 3}, 50 + seed);
    const auto x = gaussian(6, 4, rng);
    std::vector<ClassId> y(6), yb(6);
    std::vector<double> w(6);
    for (std::size_t i = 0; i < 6; ++i) {
      y[i] = static_cast<ClassId>(rng() % 3);
      yb[i] = rng() % 2 ? y[i] : static_cast<ClassId>(rng() % 3);
      w[i] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    const auto an = noisy_loss_gradient(m, x, y, yb, w);
    const auto num = oracle::numeric_gradient(
        [&](std::span<const double> th) { return loss_noisy(forward(with_theta(m, th), x).probs, 3, y, yb, w); },
        std::vector<double>(m.parameters().begin(), m.parameters().end()));
    EXPECT_LE(oracle::max_relative_error(an.grad, num), 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, GraphSmoothMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const BranchShape shape{4, 3, 3};
    const std::vector<BranchModel> models{random_model(shape, 70 + seed), random_model(shape, 90 + seed)};
    const std::vector<FeatureMatrix> inputs{gaussian(5, 4, rng), gaussian(4, 4, rng)};
    std::vector<PairRef> pairs;
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int k = 0; k < 8; ++k)
      pairs.push_back({rng() % 2, 0, rng() % 2, 0, u(rng), u(rng)});
    for (auto& p : pairs) {
      p.row_s = rng() % inputs[p.branch_s].rows();
      p.row_t = rng() % inputs[p.branch_t].rows();
      if (p.branch_s == p.branch_t && p.row_s == p.row_t) p.row_t = (p.row_t + 1) % inputs[p.branch_t].rows();
    }
    const double alpha = 0.5 + static_cast<double>(seed % 3);
    // Independent loss evaluation through ProbPair.
    auto loss_of = [&](const std::vector<BranchModel>& ms) {
      const auto f0 = forward(ms[0], inputs[0]);
      const auto f1 = forward(ms[1], inputs[1]);
      const ForwardPass* fs[2] = {&f0, &f1};
      std::vector<ProbPair> pp;
      for (const auto& p : pairs)
        pp.push_back({fs[p.branch_s]->prob_row(p.row_s, 3), fs[p.branch_t]->prob_row(p.row_t, 3), p.omega_s,
                      p.omega_t});
      return loss_graph_smooth(pp, alpha);
    };
    const auto [loss, grads] = graph_smooth_gradient(models, inputs, pairs, alpha);
    EXPECT_NEAR(loss, loss_of(models), 1e-12);
    for (std::size_t b = 0; b < 2; ++b) {
      const auto num = oracle::numeric_gradient(
          [&](std::span<const double> th) {
            auto ms = models;
            ms[b] = with_theta(models[b], th);
            return loss_of(ms);
          },
          std::vector<double>(models[b].parameters().begin(), models[b].parameters().end()));
      EXPECT_LE(oracle::max_relative_error(grads[b], num), 1e-4) << "seed " << seed << " branch " << b;
    }
  }
}

TEST(Gradients, IdenticalPairHasZeroGradient) {
  const BranchModel m = random_model({4, 3, 3}, 1);
  std::mt19937_64 rng(1);
  const std::vector<BranchModel> models{m};
  const std::vector<FeatureMatrix> inputs{gaussian(2, 4, rng)};
  const std::vector<PairRef> pairs{{0, 0, 0, 0, 1.0, 1.0}};
  const auto [loss, grads] = graph_smooth_gradient(models, inputs, pairs, 1.0);
  EXPECT_EQ(loss, 1.0);
  for (double g : grads[0]) EXPECT_EQ(g, 0.0);
}

TEST(Sgd, LearningRateSchedule) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.rate_at(1), 0.01);
  EXPECT_DOUBLE_EQ(c.rate_at(5), 0.01);
  EXPECT_NEAR(c.rate_at(6), 0.001, 1e-18);
  EXPECT_NEAR(c.rate_at(11), 0.0001, 1e-18);
}

namespace {

struct Toy {
  FeatureMatrix x;
  std::vector<ClassId> y;
  SplitAssignment split;
  LabelState state;
};

Toy toy(std::size_t M, double separation, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_classes = 2;
  sc.per_class = 150;
  sc.dim = 6;
  sc.class_separation = separation;
  sc.noise_rate = 0.0;
  sc.rng_seed = seed;
  Blobs b = make_blobs(sc);
  Toy t{b.features, b.labels, {}, LabelState::initial(b.labels, 2)};
  t.split = split_dataset(t.x, t.y, 2, SplitConfig{M, 2, seed});
  return t;
}

}  // namespace

TEST(TrainEpoch, ZeroLearningRateLeavesParameters) {
  const Toy t = toy(3, 4.0, 1);
  Rng rng(1);
  BranchSet set = init_branches({6, 8, 2}, 3, rng);
  const BranchSet before = set;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.hidden_width = 8;
  train_epoch(set, t.split, t.x, t.state, cfg, 1, 9);
  EXPECT_TRUE(std::ranges::equal(set.noisy.model.parameters(), before.noisy.model.parameters()));
  EXPECT_TRUE(std::ranges::equal(set.corrected.model.parameters(), before.corrected.model.parameters()));
  for (std::size_t m = 0; m < 3; ++m)
    EXPECT_TRUE(std::ranges::equal(set.ensemble[m].model.parameters(), before.ensemble[m].model.parameters()));
}

TEST(TrainEpoch, SeparableBlobReachesOracleAccuracy) {
  const Toy t = toy(1, 10.0, 2);
  const double oracle_acc = oracle::logistic_accuracy(t.x, t.y, 2);
  ASSERT_GE(oracle_acc, 0.99);
  TrainConfig cfg;
  cfg.hidden_width = 16;
  Rng rng(2);
  BranchSet set = init_branches({6, 16, 2}, 1, rng);
  for (std::size_t e = 1; e <= 5; ++e) train_epoch(set, t.split, t.x, t.state, cfg, e, 100 + e);
  const auto pred = predict(set.corrected.model, t.x);
  std::size_t hit = 0;
  for (Index i = 0; i < pred.size(); ++i) hit += pred[i] == t.y[i];
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(pred.size()), 0.99);
}

TEST(TrainEpoch, BitwiseDeterministic) {
  const Toy t = toy(2, 3.0, 3);
  TrainConfig cfg;
  cfg.hidden_width = 8;
  auto run = [&] {
    Rng rng(3);
    BranchSet set = init_branches({6, 8, 2}, 2, rng);
    for (std::size_t e = 1; e <= 2; ++e) train_epoch(set, t.split, t.x, t.state, cfg, e, 55);
    return set;
  };
  const BranchSet a = run(), b = run();
  EXPECT_TRUE(std::ranges::equal(a.noisy.model.parameters(), b.noisy.model.parameters()));
  EXPECT_TRUE(std::ranges::equal(a.corrected.model.parameters(), b.corrected.model.parameters()));
  for (std::size_t m = 0; m < 2; ++m)
    EXPECT_TRUE(std::ranges::equal(a.ensemble[m].model.parameters(), b.ensemble[m].model.parameters()));
}

TEST(TrainEpoch, NonFiniteLossAborts) {
  const Toy t = toy(1, 3.0, 4);
  TrainConfig cfg;
  cfg.hidden_width = 4;
  cfg.learning_rate = 1e200;
  Rng rng(4);
  BranchSet set = init_branches({6, 4, 2}, 1, rng);
  try {
    for (std::size_t e = 1; e <= 3; ++e) train_epoch(set, t.split, t.x, t.state, cfg, e, 1);
    FAIL() << "expected a numerical error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
}

TEST(Mixing, ZeroAlphaReproducesPseudoModel) {
  const BranchModel pseudo = random_model({5, 6, 3}, 7), noisy = random_model({5, 6, 3}, 8);
  const BranchModel mixed(pseudo.shape(), mix_parameters(pseudo.parameters(), noisy.parameters(), 0.0));
  std::mt19937_64 rng(7);
  const auto x = gaussian(10, 5, rng);
  EXPECT_EQ(forward(mixed, x).probs, forward(pseudo, x).probs);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "elc_branches_test";
  std::filesystem::create_directories(dir);
  const BranchModel m = random_model({5, 6, 3}, 9);
  const std::string path = (dir / "model.bin").string();
  save_checkpoint(path, m);
  const BranchModel back = load_checkpoint(path);
  EXPECT_EQ(back.shape().input, 5u);
  EXPECT_EQ(back.shape().hidden, 6u);
  EXPECT_EQ(back.shape().classes, 3u);
  ASSERT_EQ(back.parameters().size(), m.parameters().size());
  for (std::size_t k = 0; k < m.parameters().size(); ++k)
    EXPECT_EQ(back.parameters()[k], static_cast<double>(static_cast<float>(m.parameters()[k])));
}
