#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "elc/splitter.hpp"

using namespace elc;

namespace {

FeatureMatrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix f(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) f(i, j) = g(rng);
  return f;
}

std::vector<ClassId> balanced_labels(std::size_t classes, std::size_t per_class) {
  std::vector<ClassId> y;
  for (std::size_t c = 0; c < classes; ++c) y.insert(y.end(), per_class, static_cast<ClassId>(c));
  return y;
}

// Brute-force cosine between raw rows, independent of unit_rows.
double raw_cosine(const FeatureMatrix& f, Index a, Index b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t j = 0; j < f.cols(); ++j) {
    ab += f(a, j) * f(b, j);
    aa += f(a, j) * f(a, j);
    bb += f(b, j) * f(b, j);
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(PackageSize, FloorDivision) {
  EXPECT_EQ(package_size(1000, 5, 4), 50u);
  EXPECT_EQ(package_size(7, 2, 2), 1u);
  EXPECT_EQ(package_size(3, 5, 4), 1u);
}

TEST(PackageClass, ThousandMembersGiveTwentyPackagesOfFifty) {
  const FeatureMatrix f = unit_rows(gaussian(1000, 6, 1));
  std::vector<Index> members(1000);
  std::iota(members.begin(), members.end(), 0);
  Rng rng(3);
  const auto packs = package_class(f, members, 0, 5, 4, rng);
  ASSERT_EQ(packs.size(), 20u);
  for (const auto& p : packs) {
    EXPECT_EQ(p.members.size(), 50u);
    EXPECT_FALSE(p.remainder);
  }
}

TEST(PackageClass, SevenMembersGiveSingletons) {
  const FeatureMatrix f = unit_rows(gaussian(7, 3, 2));
  std::vector<Index> members(7);
  std::iota(members.begin(), members.end(), 0);
  Rng rng(4);
  const auto packs = package_class(f, members, 0, 2, 2, rng);
  ASSERT_EQ(packs.size(), 7u);
  std::set<Index> seen;
  for (const auto& p : packs) {
    EXPECT_EQ(p.members.size(), 1u);
    EXPECT_EQ(p.members[0], p.seed);
    seen.insert(p.seed);
  }
  EXPECT_EQ(seen.size(), 7u);
}

// Points (i, 1) for i = 0..9: the offset keeps every vector nonzero and gives
// a strictly monotone angle, so cosine ranking from index 0 is by index.
TEST(PackageClass, LinePointsFromSeedZero) {
  FeatureMatrix f(10, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    f(i, 0) = static_cast<double>(i);
    f(i, 1) = 1.0;
  }
  std::vector<Index> pool(10);
  std::iota(pool.begin(), pool.end(), 0);
  // Oracle: sort all others by raw cosine to the seed.
  std::vector<Index> ranked(pool.begin() + 1, pool.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](Index a, Index b) { return raw_cosine(f, 0, a) > raw_cosine(f, 0, b); });
  std::set<Index> expect{0};
  for (std::size_t r = 0; r < 4; ++r) expect.insert(ranked[r]);
  EXPECT_EQ(expect, (std::set<Index>{0, 1, 2, 3, 4}));

  ASSERT_EQ(package_size(10, 2, 1), 5u);
  const auto got = gather_package(unit_rows(f), pool, 0, 5);
  EXPECT_EQ(std::set<Index>(got.begin(), got.end()), expect);
  EXPECT_EQ(got.front(), 0u);
}

// Every full package is the seed's k-1 nearest remaining neighbours at the
// time it was drawn, replayed against an all-pairs oracle.
TEST(PackageClass, LocalityAgainstBruteForce) {
  for (std::uint64_t trial = 0; trial < 8; ++trial) {
    const std::size_t n = 60 + 55 * trial;  // up to 445
    const FeatureMatrix raw = gaussian(n, 5, 100 + trial);
    const FeatureMatrix unit = unit_rows(raw);
    std::vector<Index> members(n);
    std::iota(members.begin(), members.end(), 0);
    const std::size_t M = 1 + trial % 4, B = 1 + trial % 3;
    Rng rng(trial);
    const auto packs = package_class(unit, members, 0, M, B, rng);
    const std::size_t k = package_size(n, M, B);
    std::set<Index> pool(members.begin(), members.end());
    for (const auto& p : packs) {
      if (p.remainder) {
        EXPECT_LT(p.members.size(), k);
        EXPECT_EQ(std::set<Index>(p.members.begin(), p.members.end()), pool);
        pool.clear();
        continue;
      }
      ASSERT_EQ(p.members.size(), k);
      ASSERT_TRUE(pool.count(p.seed));
      std::vector<std::pair<double, Index>> all;
      for (Index s : pool)
        if (s != p.seed) all.emplace_back(raw_cosine(raw, p.seed, s), s);
      std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
      });
      std::set<Index> expect{p.seed};
      for (std::size_t r = 0; r + 1 < k; ++r) expect.insert(all[r].second);
      EXPECT_EQ(std::set<Index>(p.members.begin(), p.members.end()), expect) << "trial " << trial;
      for (Index s : p.members) pool.erase(s);
    }
    EXPECT_TRUE(pool.empty());
  }
}

TEST(SplitDataset, SingleBranchTakesEverything) {
  const FeatureMatrix f = gaussian(90, 4, 5);
  const auto y = balanced_labels(3, 30);
  SplitConfig cfg{1, 4, 9};
  const auto a = split_dataset(f, y, 3, cfg);
  for (std::size_t b : a.branch_of) EXPECT_EQ(b, 0u);
}

TEST(SplitDataset, FortyPerClassPerBranch) {
  const FeatureMatrix f = gaussian(800, 8, 6);
  const auto y = balanced_labels(4, 200);
  const auto a = split_dataset(f, y, 4, SplitConfig{5, 4, 123});
  for (std::size_t m = 0; m < 5; ++m)
    for (ClassId c = 0; c < 4; ++c) {
      std::size_t cnt = 0;
      for (Index i = 0; i < 800; ++i) cnt += a.branch_of[i] == m && y[i] == c;
      EXPECT_EQ(cnt, 40u);
    }
  for (const auto& p : a.packages) EXPECT_FALSE(p.remainder);
  EXPECT_EQ(a.packages.size(), 4u * 20u);
}

TEST(SplitDataset, Deterministic) {
  const FeatureMatrix f = gaussian(300, 5, 7);
  const auto y = balanced_labels(3, 100);
  const SplitConfig cfg{5, 4, 77};
  const auto a = split_dataset(f, y, 3, cfg);
  const auto b = split_dataset(f, y, 3, cfg);
  EXPECT_EQ(a, b);
  std::ostringstream sa, sb;
  write_split(sa, a, y);
  write_split(sb, b, y);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(SplitDataset, EmptyClassNamed) {
  const FeatureMatrix f = gaussian(4, 2, 8);
  const std::vector<ClassId> y{0, 0, 2, 2};
  try {
    split_dataset(f, y, 3, SplitConfig{2, 1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
  }
}

TEST(SplitDataset, ResplitVariesWithSeed) {
  const FeatureMatrix f = gaussian(400, 6, 9);
  const auto y = balanced_labels(4, 100);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = split_dataset(f, y, 4, SplitConfig{5, 4, 1000 + s});
    const auto b = split_dataset(f, y, 4, SplitConfig{5, 4, 2000 + s});
    std::size_t diff = 0;
    for (Index i = 0; i < y.size(); ++i) diff += a.branch_of[i] != b.branch_of[i];
    EXPECT_GE(diff, 1u);
  }
}

// Partition and class-balance invariants over random shapes.
TEST(SplitDataset, PartitionProperty) {
  std::mt19937_64 meta(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + meta() % 4;
    std::vector<ClassId> y;
    for (std::size_t c = 0; c < C; ++c) y.insert(y.end(), 1 + meta() % 60, static_cast<ClassId>(c));
    std::shuffle(y.begin(), y.end(), meta);
    const FeatureMatrix f = gaussian(y.size(), 3, meta());
    const SplitConfig cfg{1 + meta() % 6, 1 + meta() % 5, meta()};
    const auto a = split_dataset(f, y, C, cfg);
    std::vector<int> hits(y.size(), 0);
    for (const auto& p : a.packages)
      for (Index s : p.members) {
        ++hits[s];
        EXPECT_EQ(y[s], p.class_id);
        EXPECT_EQ(a.branch_of[s], p.branch);
      }
    for (int h : hits) EXPECT_EQ(h, 1);
    std::size_t total = 0;
    for (std::size_t m = 0; m < cfg.n_branches; ++m) total += a.subset(m).size();
    EXPECT_EQ(total, y.size());
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t nc = std::count(y.begin(), y.end(), static_cast<ClassId>(c));
      const std::size_t k = package_size(nc, cfg.n_branches, cfg.packages_per_class_per_branch);
      std::vector<std::size_t> size(cfg.n_branches, 0);
      for (Index i = 0; i < y.size(); ++i)
        if (y[i] == c) ++size[a.branch_of[i]];
      const auto [lo, hi] = std::minmax_element(size.begin(), size.end());
      EXPECT_LE(*hi - *lo, k);
    }
  }
}

TEST(MixParameters, EndpointsAndMidpoint) {
  const std::vector<double> p{0.1, -3.0, 7.25}, q{2.0, 0.3, -1.0};
  EXPECT_EQ(mix_parameters(p, q, 0.0), p);
  EXPECT_EQ(mix_parameters(p, q, 1.0), q);
  EXPECT_EQ(mix_parameters(std::vector<double>{0, 2}, std::vector<double>{2, 0}, 0.5),
            (std::vector<double>{1, 1}));
}

TEST(MixParameters, Errors) {
  const std::vector<double> p{1.0}, q{1.0, 2.0};
  EXPECT_THROW(mix_parameters(p, q, 0.5), Error);
  EXPECT_THROW(mix_parameters(p, p, 1.5), Error);
}
