#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace elc {

enum class NoiseKind { confusing, uniform, asymmetric };

inline NoiseKind parse_noise_kind(std::string_view s) {
  if (s == "confusing") return NoiseKind::confusing;
  if (s == "uniform") return NoiseKind::uniform;
  if (s == "asymmetric") return NoiseKind::asymmetric;
  throw Error(ErrorKind::usage, "unknown noise kind '" + std::string(s) + "'");
}

struct SynthConfig {
  std::size_t n_classes = 4;
  std::size_t per_class = 500;
  std::size_t dim = 16;
  double class_separation = 4.0;
  double noise_rate = 0.3;
  NoiseKind noise_kind = NoiseKind::confusing;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (n_classes < 2) throw Error(ErrorKind::usage, "synth: n_classes must be >= 2");
    if (per_class < 1 || dim < 1) throw Error(ErrorKind::usage, "synth: per_class and dim must be >= 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw Error(ErrorKind::usage, "synth: noise_rate must lie in [0,1)");
    if (!(class_separation > 0.0)) throw Error(ErrorKind::usage, "synth: class_separation must be positive");
  }
};

struct Blobs {
  FeatureMatrix features;
  std::vector<ClassId> labels;
  FeatureMatrix centroids;  // C x dim
};

// Class centroids: class_separation * e_c when dim >= C (pairwise distance
// separation * sqrt(2)), otherwise random directions on the sphere of radius
// class_separation.
inline FeatureMatrix blob_centroids(const SynthConfig& cfg, Rng& rng) {
  FeatureMatrix c(cfg.n_classes, cfg.dim);
  if (cfg.dim >= cfg.n_classes) {
    for (std::size_t k = 0; k < cfg.n_classes; ++k) c(k, k) = cfg.class_separation;
    return c;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < cfg.n_classes; ++k) {
    double nrm = 0.0;
    while (nrm == 0.0) {
      nrm = 0.0;
      for (std::size_t d = 0; d < cfg.dim; ++d) {
        c(k, d) = gauss(rng);
        nrm += c(k, d) * c(k, d);
      }
      nrm = std::sqrt(nrm);
    }
    for (std::size_t d = 0; d < cfg.dim; ++d) c(k, d) *= cfg.class_separation / nrm;
  }
  return c;
}

// Isotropic unit-variance Gaussian clusters, class-major sample order.
inline Blobs make_blobs(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng = substream(cfg.rng_seed, "blobs");
  Blobs b;
  b.centroids = blob_centroids(cfg, rng);
  const std::size_t n = cfg.n_classes * cfg.per_class;
  b.features = FeatureMatrix(n, cfg.dim);
  b.labels.resize(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < cfg.n_classes; ++k)
    for (std::size_t r = 0; r < cfg.per_class; ++r) {
      const std::size_t i = k * cfg.per_class + r;
      b.labels[i] = static_cast<ClassId>(k);
      for (std::size_t d = 0; d < cfg.dim; ++d) b.features(i, d) = b.centroids(k, d) + gauss(rng);
    }
  return b;
}

// floor(rate * n) distinct samples, each moved to a uniformly random other class.
inline std::vector<ClassId> inject_uniform(std::span<const ClassId> labels, double rate, std::size_t n_classes, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::usage, "inject_uniform: rate must lie in [0,1)");
  if (n_classes < 2) throw Error(ErrorKind::usage, "inject_uniform: need at least 2 classes");
  std::vector<ClassId> out(labels.begin(), labels.end());
  const auto n_flip = static_cast<std::size_t>(std::floor(rate * static_cast<double>(labels.size())));
  std::vector<Index> idx(labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::uniform_int_distribution<ClassId> other(0, static_cast<ClassId>(n_classes - 2));
  for (std::size_t f = 0; f < n_flip; ++f) {
    std::uniform_int_distribution<std::size_t> pick(f, idx.size() - 1);
    std::swap(idx[f], idx[pick(rng)]);
    const Index i = idx[f];
    ClassId c = other(rng);
    if (c >= labels[i]) ++c;
    out[i] = c;
  }
  return out;
}

struct MarginInfo {
  std::vector<double> deficit;       // dist(own centroid) - dist(nearest other centroid)
  std::vector<ClassId> nearest_other;
};

inline MarginInfo boundary_margins(const FeatureMatrix& features, std::span<const ClassId> labels,
                                   const FeatureMatrix& centroids) {
  MarginInfo mi;
  mi.deficit.resize(labels.size());
  mi.nearest_other.resize(labels.size());
  const std::size_t C = centroids.rows();
  for (Index i = 0; i < labels.size(); ++i) {
    double own = 0.0, best = std::numeric_limits<double>::infinity();
    ClassId best_c = 0;
    for (std::size_t k = 0; k < C; ++k) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < features.cols(); ++d) {
        const double diff = features(i, d) - centroids(k, d);
        d2 += diff * diff;
      }
      const double dist = std::sqrt(d2);
      if (k == labels[i]) own = dist;
      else if (dist < best) {
        best = dist;
        best_c = static_cast<ClassId>(k);
      }
    }
    mi.deficit[i] = own - best;
    mi.nearest_other[i] = best_c;
  }
  return mi;
}

inline FeatureMatrix class_means(const FeatureMatrix& features, std::span<const ClassId> labels, std::size_t n_classes) {
  FeatureMatrix means(n_classes, features.cols());
  std::vector<std::size_t> count(n_classes, 0);
  for (Index i = 0; i < labels.size(); ++i) {
    ++count[labels[i]];
    for (std::size_t d = 0; d < features.cols(); ++d) means(labels[i], d) += features(i, d);
  }
  for (std::size_t k = 0; k < n_classes; ++k)
    if (count[k] > 0)
      for (std::size_t d = 0; d < features.cols(); ++d) means(k, d) /= static_cast<double>(count[k]);
  return means;
}

// Boundary-concentrated noise. Victims are drawn without replacement with
// probability proportional to exp(margin deficit) (Gumbel top-k), and each
// victim takes the class of its nearest other centroid.
inline std::vector<ClassId> inject_confusing(const FeatureMatrix& features, std::span<const ClassId> labels,
                                             const FeatureMatrix& centroids, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::usage, "inject_confusing: rate must lie in [0,1)");
  check_pairing(features, labels);
  std::vector<ClassId> out(labels.begin(), labels.end());
  const auto n_flip = static_cast<std::size_t>(std::floor(rate * static_cast<double>(labels.size())));
  if (n_flip == 0) return out;
  const MarginInfo mi = boundary_margins(features, labels, centroids);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, Index>> key(labels.size());
  for (Index i = 0; i < labels.size(); ++i) {
    const double g = -std::log(-std::log(std::max(u(rng), 1e-300)));
    key[i] = {mi.deficit[i] + g, i};
  }
  std::partial_sort(key.begin(), key.begin() + static_cast<std::ptrdiff_t>(n_flip), key.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (std::size_t f = 0; f < n_flip; ++f) out[key[f].second] = mi.nearest_other[key[f].second];
  return out;
}

inline std::vector<ClassId> inject_confusing(const FeatureMatrix& features, std::span<const ClassId> labels,
                                             std::size_t n_classes, double rate, Rng& rng) {
  return inject_confusing(features, labels, class_means(features, labels, n_classes), rate, rng);
}

// For each mapped class c, floor(rate * |c|) random members become mapping[c].
inline std::vector<ClassId> inject_asymmetric(std::span<const ClassId> labels, double rate,
                                              const std::map<ClassId, ClassId>& mapping, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::usage, "inject_asymmetric: rate must lie in [0,1)");
  for (const auto& [from, to] : mapping)
    if (from == to) throw Error(ErrorKind::usage, "inject_asymmetric: mapping has fixed point " + std::to_string(from));
  std::vector<ClassId> out(labels.begin(), labels.end());
  for (const auto& [from, to] : mapping) {
    std::vector<Index> members;
    for (Index i = 0; i < labels.size(); ++i)
      if (labels[i] == from) members.push_back(i);
    const auto n_flip = static_cast<std::size_t>(std::floor(rate * static_cast<double>(members.size())));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t f = 0; f < n_flip; ++f) out[members[f]] = to;
  }
  return out;
}

// Cyclic class shift c -> (c + 1) mod C.
inline std::map<ClassId, ClassId> cyclic_mapping(std::size_t n_classes) {
  std::map<ClassId, ClassId> m;
  for (std::size_t c = 0; c < n_classes; ++c) m[static_cast<ClassId>(c)] = static_cast<ClassId>((c + 1) % n_classes);
  return m;
}

struct NoisyDataset {
  FeatureMatrix features;
  std::vector<ClassId> clean;
  std::vector<ClassId> noisy;
  FeatureMatrix centroids;
};

inline NoisyDataset make_noisy_dataset(const SynthConfig& cfg) {
  Blobs b = make_blobs(cfg);
  Rng rng = substream(cfg.rng_seed, "noise");
  NoisyDataset ds;
  switch (cfg.noise_kind) {
    case NoiseKind::confusing:
      ds.noisy = inject_confusing(b.features, b.labels, b.centroids, cfg.noise_rate, rng);
      break;
    case NoiseKind::uniform:
      ds.noisy = inject_uniform(b.labels, cfg.noise_rate, cfg.n_classes, rng);
      break;
    case NoiseKind::asymmetric:
      ds.noisy = inject_asymmetric(b.labels, cfg.noise_rate, cyclic_mapping(cfg.n_classes), rng);
      break;
  }
  ds.features = std::move(b.features);
  ds.clean = std::move(b.labels);
  ds.centroids = std::move(b.centroids);
  return ds;
}

}  // namespace elc
