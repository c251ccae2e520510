#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "similarity.hpp"

namespace elc {

struct Triple {
  Index row = 0;
  Index col = 0;
  double weight = 0.0;
};

// Compressed sparse row matrix over n nodes.
class SparseGraph {
 public:
  SparseGraph() = default;

  // Duplicate (row, col) pairs are summed.
  SparseGraph(std::size_t n, std::vector<Triple> triples, bool normalized = false)
      : n_(n), normalized_(normalized) {
    std::sort(triples.begin(), triples.end(), [](const Triple& a, const Triple& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    row_ptr_.assign(n + 1, 0);
    for (std::size_t i = 0; i < triples.size();) {
      const Triple& t = triples[i];
      if (t.row >= n || t.col >= n) throw Error(ErrorKind::data, "sparse graph: index out of range");
      double w = 0.0;
      std::size_t j = i;
      for (; j < triples.size() && triples[j].row == t.row && triples[j].col == t.col; ++j)
        w += triples[j].weight;
      col_.push_back(t.col);
      val_.push_back(w);
      ++row_ptr_[t.row + 1];
      i = j;
    }
    for (std::size_t r = 0; r < n; ++r) row_ptr_[r + 1] += row_ptr_[r];
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t nonzeros() const noexcept { return val_.size(); }
  bool normalized() const noexcept { return normalized_; }

  std::span<const Index> cols(Index r) const {
    return {col_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> weights(Index r) const {
    return {val_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  double at(Index r, Index c) const {
    const auto cs = cols(r);
    const auto it = std::lower_bound(cs.begin(), cs.end(), c);
    if (it == cs.end() || *it != c) return 0.0;
    return weights(r)[static_cast<std::size_t>(it - cs.begin())];
  }

  std::vector<Triple> triples() const {
    std::vector<Triple> out;
    out.reserve(nonzeros());
    for (Index r = 0; r < n_; ++r)
      for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) out.push_back({r, col_[p], val_[p]});
    return out;
  }

  // y = G x for a row-major block of `width` column vectors.
  void multiply(std::span<const double> x, std::span<double> y, std::size_t width = 1) const {
    for (Index r = 0; r < n_; ++r) {
      double* yr = y.data() + r * width;
      std::fill_n(yr, width, 0.0);
      for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) {
        const double w = val_[p];
        const double* xc = x.data() + col_[p] * width;
        for (std::size_t k = 0; k < width; ++k) yr[k] += w * xc[k];
      }
    }
  }

 private:
  std::size_t n_ = 0;
  bool normalized_ = false;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<Index> col_;
  std::vector<double> val_;
};

struct GraphConfig {
  std::size_t k_graph = 50;
  double gamma = 3.0;

  void validate(std::size_t n) const {
    if (k_graph < 1 || k_graph >= n)
      throw Error(ErrorKind::usage, "graph: k_graph must satisfy 1 <= k < n (k=" + std::to_string(k_graph) +
                                        ", n=" + std::to_string(n) + ")");
    if (!(gamma >= 1.0)) throw Error(ErrorKind::usage, "graph: gamma must be >= 1");
  }
};

struct Neighbors {
  std::vector<std::vector<Index>> index;
  std::vector<std::vector<double>> similarity;
};

// Exact k nearest neighbours of every node by cosine similarity, excluding
// the node itself; ties go to the lower index.
inline Neighbors knn_neighbors(const FeatureMatrix& features, std::size_t k_graph) {
  const std::size_t n = features.rows();
  if (n < 2) throw Error(ErrorKind::data, "knn: need at least 2 samples");
  if (k_graph < 1 || k_graph >= n)
    throw Error(ErrorKind::usage, "knn: k must satisfy 1 <= k < n");
  const FeatureMatrix unit = unit_rows(features);
  const std::size_t d = unit.cols();
  // Column-major copy so the similarity sweep over all s is a contiguous axpy.
  std::vector<double> unit_t(d * n);
  for (Index s = 0; s < n; ++s)
    for (std::size_t q = 0; q < d; ++q) unit_t[q * n + s] = unit(s, q);
  Neighbors nb;
  nb.index.resize(n);
  nb.similarity.resize(n);
  std::vector<double> sims(n);
  std::vector<std::pair<double, Index>> cand(n - 1);
  auto closer = [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };
  for (Index t = 0; t < n; ++t) {
    std::fill(sims.begin(), sims.end(), 0.0);
    for (std::size_t q = 0; q < d; ++q) {
      const double ftq = unit(t, q);
      const double* col = unit_t.data() + q * n;
      for (Index s = 0; s < n; ++s) sims[s] += ftq * col[s];
    }
    std::size_t c = 0;
    for (Index s = 0; s < n; ++s)
      if (s != t) cand[c++] = {sims[s], s};
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_graph - 1), cand.end(), closer);
    std::sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_graph), closer);
    nb.index[t].resize(k_graph);
    nb.similarity[t].resize(k_graph);
    for (std::size_t r = 0; r < k_graph; ++r) {
      nb.index[t][r] = cand[r].second;
      nb.similarity[t][r] = cand[r].first;
    }
  }
  return nb;
}

// Directional adjacency: A(s, t) = clamp(cos(f_s, f_t), 0, 1)^gamma for s
// among the k nearest neighbours of t. Zero weights are not stored.
inline SparseGraph build_adjacency(const FeatureMatrix& features, const GraphConfig& cfg) {
  cfg.validate(features.rows());
  for (Index i = 0; i < features.rows(); ++i)
    if (norm2(features.row(i)) == 0.0)
      throw Error(ErrorKind::data, "graph: zero-norm feature vector at sample " + std::to_string(i));
  const Neighbors nb = knn_neighbors(features, cfg.k_graph);
  std::vector<Triple> triples;
  triples.reserve(features.rows() * cfg.k_graph);
  for (Index t = 0; t < features.rows(); ++t) {
    for (std::size_t r = 0; r < cfg.k_graph; ++r) {
      const double sim = std::clamp(nb.similarity[t][r], 0.0, 1.0);
      const double w = std::pow(sim, cfg.gamma);
      if (w > 0.0) triples.push_back({nb.index[t][r], t, w});
    }
  }
  return SparseGraph(features.rows(), std::move(triples));
}

// W = D^{-1/2} (A + A^T) D^{-1/2}, D the row sums of A + A^T. Nodes with zero
// degree keep empty rows. Symmetry is exact: each W(s,t) and W(t,s) is the
// same pair of operands combined commutatively.
inline SparseGraph normalize_graph(const SparseGraph& a) {
  const std::size_t n = a.size();
  std::vector<Triple> sym;
  sym.reserve(2 * a.nonzeros());
  for (const auto& t : a.triples()) {
    if (t.row == t.col) continue;
    sym.push_back(t);
    sym.push_back({t.col, t.row, t.weight});
  }
  const SparseGraph s(n, std::move(sym));
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (Index r = 0; r < n; ++r) {
    double deg = 0.0;
    for (double w : s.weights(r)) deg += w;
    inv_sqrt_deg[r] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  std::vector<Triple> out;
  out.reserve(s.nonzeros());
  for (Index r = 0; r < n; ++r) {
    const auto cs = s.cols(r);
    const auto ws = s.weights(r);
    for (std::size_t p = 0; p < cs.size(); ++p) {
      if (ws[p] <= 0.0) continue;
      out.push_back({r, cs[p], ws[p] * (inv_sqrt_deg[r] * inv_sqrt_deg[cs[p]])});
    }
  }
  return SparseGraph(n, std::move(out), true);
}

inline SparseGraph build_graph(const FeatureMatrix& features, const GraphConfig& cfg) {
  return normalize_graph(build_adjacency(features, cfg));
}

// Power iteration on |G|; an upper estimate of the spectral radius for
// symmetric nonnegative G.
inline double spectral_radius(const SparseGraph& g, std::size_t iters = 2000) {
  const std::size_t n = g.size();
  if (n == 0 || g.nonzeros() == 0) return 0.0;
  std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n))), y(n);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    g.multiply(x, y);
    const double nrm = norm2(y);
    if (nrm == 0.0) return 0.0;
    lambda = nrm;
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / nrm;
  }
  return lambda;
}

inline void write_graph(std::ostream& os, const SparseGraph& g) {
  os << "# elc graph n=" << g.size() << " nnz=" << g.nonzeros() << '\n';
  for (const auto& t : g.triples()) os << t.row << ' ' << t.col << ' ' << format_real(t.weight) << '\n';
}

}  // namespace elc
