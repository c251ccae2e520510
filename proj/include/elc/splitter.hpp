#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "similarity.hpp"

namespace elc {

struct SplitConfig {
  std::size_t n_branches = 5;                     // M
  std::size_t packages_per_class_per_branch = 4;  // B
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (n_branches < 1) throw Error(ErrorKind::usage, "split: n_branches must be >= 1");
    if (packages_per_class_per_branch < 1)
      throw Error(ErrorKind::usage, "split: packages_per_class_per_branch must be >= 1");
  }
};

// A seed sample plus its nearest same-class neighbours. members[0] is the
// seed; the rest follow in neighbour rank order.
struct Package {
  ClassId class_id = 0;
  Index seed = 0;
  std::vector<Index> members;
  bool remainder = false;
  std::size_t branch = 0;

  friend bool operator==(const Package&, const Package&) = default;
};

struct SplitAssignment {
  std::size_t n_branches = 0;
  std::vector<std::size_t> branch_of;
  std::vector<std::size_t> package_of;
  std::vector<Package> packages;

  std::vector<Index> subset(std::size_t m) const {
    std::vector<Index> out;
    for (Index i = 0; i < branch_of.size(); ++i)
      if (branch_of[i] == m) out.push_back(i);
    return out;
  }

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

inline std::size_t package_size(std::size_t class_size, std::size_t n_branches,
                                std::size_t packages_per_branch) {
  return std::max<std::size_t>(1, class_size / (n_branches * packages_per_branch));
}

// The seed followed by its k-1 most cosine-similar members of `pool`
// (excluding the seed), ties to the lower sample index. Rows of
// `unit_features` must be unit length or zero.
inline std::vector<Index> gather_package(const FeatureMatrix& unit_features, std::span<const Index> pool,
                                         Index seed, std::size_t k) {
  std::vector<Index> members{seed};
  if (k <= 1) return members;
  const auto fs = unit_features.row(seed);
  std::vector<std::pair<double, Index>> ranked;
  ranked.reserve(pool.size());
  for (Index s : pool)
    if (s != seed) ranked.emplace_back(dot(fs, unit_features.row(s)), s);
  const std::size_t take = std::min(k - 1, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  for (std::size_t r = 0; r < take; ++r) members.push_back(ranked[r].second);
  return members;
}

// k-NN packaging of one class. Seeds are drawn without replacement from the
// remaining pool; each package takes the seed's k-1 nearest remaining
// neighbours by cosine similarity (ties to the lower sample index). Fewer
// than k leftover samples form one final remainder package.
inline std::vector<Package> package_class(const FeatureMatrix& unit_features,
                                          std::span<const Index> class_members, ClassId class_id,
                                          std::size_t n_branches, std::size_t packages_per_branch,
                                          Rng& rng) {
  std::vector<Package> out;
  if (class_members.empty()) return out;
  const std::size_t k = package_size(class_members.size(), n_branches, packages_per_branch);
  std::vector<Index> pool(class_members.begin(), class_members.end());
  while (!pool.empty()) {
    Package p;
    p.class_id = class_id;
    if (pool.size() < k) {
      p.seed = pool.front();
      p.members = pool;
      p.remainder = true;
      pool.clear();
      out.push_back(std::move(p));
      break;
    }
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const Index seed = pool[pick(rng)];
    p.seed = seed;
    p.members = gather_package(unit_features, pool, seed, k);
    std::vector<Index> taken = p.members;
    std::sort(taken.begin(), taken.end());
    std::erase_if(pool, [&](Index s) { return std::binary_search(taken.begin(), taken.end(), s); });
    out.push_back(std::move(p));
  }
  return out;
}

// Packages every class and scatters its packages over the branches: full
// packages round-robin over a random branch order (B per branch when the
// class divides evenly), the remainder package to a random branch among
// those holding the fewest full packages.
inline SplitAssignment split_dataset(const FeatureMatrix& features, std::span<const ClassId> labels,
                                     std::size_t n_classes, const SplitConfig& cfg) {
  cfg.validate();
  check_pairing(features, labels);
  std::vector<std::vector<Index>> by_class(n_classes);
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes)
      throw Error(ErrorKind::data, "split: label out of range at sample " + std::to_string(i));
    by_class[labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < n_classes; ++c)
    if (by_class[c].empty())
      throw Error(ErrorKind::data, "split: class " + std::to_string(c) + " has no samples");

  const FeatureMatrix unit = unit_rows(features);
  const std::size_t M = cfg.n_branches;
  SplitAssignment a;
  a.n_branches = M;
  a.branch_of.assign(labels.size(), 0);
  a.package_of.assign(labels.size(), 0);

  for (std::size_t c = 0; c < n_classes; ++c) {
    Rng pack_rng = substream(cfg.rng_seed, "package", c);
    auto packages = package_class(unit, by_class[c], static_cast<ClassId>(c), M,
                                  cfg.packages_per_class_per_branch, pack_rng);

    Rng assign_rng = substream(cfg.rng_seed, "assign", c);
    std::vector<std::size_t> full;
    std::optional<std::size_t> rem;
    for (std::size_t p = 0; p < packages.size(); ++p) {
      if (packages[p].remainder) rem = p;
      else full.push_back(p);
    }
    std::shuffle(full.begin(), full.end(), assign_rng);
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), assign_rng);
    std::vector<std::size_t> count(M, 0);
    for (std::size_t r = 0; r < full.size(); ++r) {
      const std::size_t m = order[r % M];
      packages[full[r]].branch = m;
      ++count[m];
    }
    if (rem) {
      const std::size_t lo = *std::min_element(count.begin(), count.end());
      std::vector<std::size_t> candidates;
      for (std::size_t m = 0; m < M; ++m)
        if (count[m] == lo) candidates.push_back(m);
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      packages[*rem].branch = candidates[pick(assign_rng)];
    }
    for (auto& p : packages) {
      const std::size_t id = a.packages.size();
      for (Index s : p.members) {
        a.branch_of[s] = p.branch;
        a.package_of[s] = id;
      }
      a.packages.push_back(std::move(p));
    }
  }
  return a;
}

// Convex blend (1 - alpha) * pseudo + alpha * noisy.
inline std::vector<double> mix_parameters(std::span<const double> theta_pseudo,
                                          std::span<const double> theta_noisy, double alpha) {
  if (theta_pseudo.size() != theta_noisy.size())
    throw Error(ErrorKind::data, "mix_parameters: length mismatch (" + std::to_string(theta_pseudo.size()) +
                                     " vs " + std::to_string(theta_noisy.size()) + ")");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw Error(ErrorKind::usage, "mix_parameters: alpha outside [0,1]");
  std::vector<double> out(theta_pseudo.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (alpha == 0.0) out[i] = theta_pseudo[i];
    else if (alpha == 1.0) out[i] = theta_noisy[i];
    else out[i] = (1.0 - alpha) * theta_pseudo[i] + alpha * theta_noisy[i];
  }
  return out;
}

// Text dump used by the `split` subcommand.
inline void write_split(std::ostream& os, const SplitAssignment& a, std::span<const ClassId> labels) {
  os << "# elc split\n";
  os << "n_samples " << a.branch_of.size() << '\n';
  os << "n_branches " << a.n_branches << '\n';
  os << "n_packages " << a.packages.size() << '\n';
  os << "records index class branch package\n";
  for (Index i = 0; i < a.branch_of.size(); ++i)
    os << i << ' ' << labels[i] << ' ' << a.branch_of[i] << ' ' << a.package_of[i] << '\n';
  os << "end_records\n";
  os << "packages id class seed size branch remainder\n";
  for (std::size_t p = 0; p < a.packages.size(); ++p) {
    const auto& pk = a.packages[p];
    os << p << ' ' << pk.class_id << ' ' << pk.seed << ' ' << pk.members.size() << ' ' << pk.branch << ' '
       << (pk.remainder ? 1 : 0) << '\n';
  }
  os << "end_packages\n";
}

}  // namespace elc
