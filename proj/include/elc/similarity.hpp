#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "core.hpp"

namespace elc {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

// Rows scaled to unit length; zero rows stay zero.
inline FeatureMatrix unit_rows(const FeatureMatrix& f) {
  FeatureMatrix out = f;
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto r = out.row(i);
    const double n = norm2(r);
    if (n > 0.0)
      for (double& v : r) v /= n;
  }
  return out;
}

}  // namespace elc
