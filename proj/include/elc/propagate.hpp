#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "core.hpp"
#include "graph.hpp"
#include "parallel.hpp"
#include "splitter.hpp"

namespace elc {

inline constexpr std::size_t kPlanes = 2;   // 0: noisy labels, 1: corrected labels
inline constexpr ClassId kNoSuggestion = std::numeric_limits<ClassId>::max();

// n x C x 2 label mass, laid out [(sample * C + class) * 2 + plane].
class LabelMass {
 public:
  LabelMass() = default;
  LabelMass(std::size_t n, std::size_t n_classes)
      : n_(n), c_(n_classes), data_(n * n_classes * kPlanes, 0.0) {}

  std::size_t samples() const noexcept { return n_; }
  std::size_t classes() const noexcept { return c_; }

  double operator()(Index i, std::size_t c, std::size_t q) const { return data_[(i * c_ + c) * kPlanes + q]; }
  double& operator()(Index i, std::size_t c, std::size_t q) { return data_[(i * c_ + c) * kPlanes + q]; }

  std::vector<double> column(std::size_t c, std::size_t q) const {
    std::vector<double> out(n_);
    for (Index i = 0; i < n_; ++i) out[i] = (*this)(i, c, q);
    return out;
  }

  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const LabelMass&, const LabelMass&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t c_ = 0;
  std::vector<double> data_;
};

// Y_j: one-hot noisy (plane 0) and corrected (plane 1) labels of the samples
// in subset j; every other row is zero.
using PartialLabels = LabelMass;

inline PartialLabels build_partial_labels(const SplitAssignment& assignment, std::size_t j,
                                          const LabelState& state) {
  if (j >= assignment.n_branches) throw Error(ErrorKind::usage, "partial labels: subset index out of range");
  if (assignment.branch_of.size() != state.size())
    throw Error(ErrorKind::data, "partial labels: assignment and label state differ in length");
  PartialLabels y(state.size(), state.n_classes);
  for (Index i = 0; i < state.size(); ++i) {
    if (assignment.branch_of[i] != j) continue;
    y(i, state.noisy[i], 0) = 1.0;
    y(i, state.corrected[i], 1) = 1.0;
  }
  return y;
}

struct PropagationConfig {
  double alpha_prop = 0.99;
  double cg_tolerance = 1e-6;
  std::size_t cg_max_iters = 200;

  void validate() const {
    if (!(alpha_prop > 0.0 && alpha_prop < 1.0))
      throw Error(ErrorKind::usage, "propagation: alpha_prop must lie in (0,1)");
    if (!(cg_tolerance > 0.0)) throw Error(ErrorKind::usage, "propagation: cg_tolerance must be positive");
    if (cg_max_iters < 1) throw Error(ErrorKind::usage, "propagation: cg_max_iters must be >= 1");
  }
};

struct CgStats {
  std::size_t iterations = 0;
  double max_relative_residual = 0.0;
};

// Conjugate gradient on (I - alpha W) x = b for a row-major block of
// independent right-hand sides sharing one sparse product per iteration.
// Each column runs its own recurrence and freezes once
// ||r|| <= tol * ||b||.
inline CgStats solve_shifted_block(const SparseGraph& w, double alpha, std::span<const double> b,
                                   std::span<double> x, std::size_t width, double tol,
                                   std::size_t max_iters) {
  const std::size_t n = w.size();
  std::vector<double> r(b.begin(), b.end()), p(b.begin(), b.end()), q(n * width), wp(n * width);
  std::fill(x.begin(), x.end(), 0.0);
  std::vector<double> rr(width, 0.0), bnorm(width, 0.0);
  for (Index i = 0; i < n; ++i)
    for (std::size_t k = 0; k < width; ++k) rr[k] += r[i * width + k] * r[i * width + k];
  std::vector<char> active(width, 0);
  std::size_t n_active = 0;
  for (std::size_t k = 0; k < width; ++k) {
    bnorm[k] = std::sqrt(rr[k]);
    active[k] = bnorm[k] > 0.0;
    n_active += active[k];
  }
  CgStats stats;
  std::vector<double> pq(width);
  while (n_active > 0 && stats.iterations < max_iters) {
    ++stats.iterations;
    w.multiply(p, wp, width);
    for (std::size_t i = 0; i < n * width; ++i) q[i] = p[i] - alpha * wp[i];
    std::fill(pq.begin(), pq.end(), 0.0);
    for (Index i = 0; i < n; ++i)
      for (std::size_t k = 0; k < width; ++k) pq[k] += p[i * width + k] * q[i * width + k];
    std::vector<double> rr_new(width, 0.0);
    for (std::size_t k = 0; k < width; ++k) {
      if (!active[k]) continue;
      const double step = rr[k] / pq[k];
      for (Index i = 0; i < n; ++i) {
        x[i * width + k] += step * p[i * width + k];
        r[i * width + k] -= step * q[i * width + k];
        rr_new[k] += r[i * width + k] * r[i * width + k];
      }
    }
    for (std::size_t k = 0; k < width; ++k) {
      if (!active[k]) continue;
      if (std::sqrt(rr_new[k]) <= tol * bnorm[k]) {
        active[k] = 0;
        --n_active;
        rr[k] = rr_new[k];
        continue;
      }
      const double beta = rr_new[k] / rr[k];
      rr[k] = rr_new[k];
      for (Index i = 0; i < n; ++i) p[i * width + k] = r[i * width + k] + beta * p[i * width + k];
    }
  }
  for (std::size_t k = 0; k < width; ++k)
    if (bnorm[k] > 0.0) stats.max_relative_residual = std::max(stats.max_relative_residual, std::sqrt(rr[k]) / bnorm[k]);
  if (n_active > 0)
    throw Error(ErrorKind::numerical, "conjugate gradient did not converge in " + std::to_string(max_iters) +
                                          " iterations (relative residual " +
                                          format_real(stats.max_relative_residual) + ")");
  return stats;
}

namespace detail {

// Nonzero (class, plane) columns of y, skipping plane-1 columns that are
// bitwise copies of their plane-0 counterpart.
struct ColumnPlan {
  std::vector<std::pair<std::size_t, std::size_t>> solve;
  std::vector<std::pair<std::size_t, std::size_t>> copy;  // (class, plane) duplicates of (class, 0)
};

inline ColumnPlan plan_columns(const LabelMass& y) {
  ColumnPlan plan;
  const std::size_t n = y.samples();
  for (std::size_t c = 0; c < y.classes(); ++c) {
    bool nz0 = false, nz1 = false, same = true;
    for (Index i = 0; i < n; ++i) {
      nz0 |= y(i, c, 0) != 0.0;
      nz1 |= y(i, c, 1) != 0.0;
      same &= y(i, c, 0) == y(i, c, 1);
    }
    if (nz0) plan.solve.emplace_back(c, 0);
    if (nz1) {
      if (same) plan.copy.emplace_back(c, 1);
      else plan.solve.emplace_back(c, 1);
    }
  }
  return plan;
}

}  // namespace detail

// Z = (I - alpha W)^{-1} Y, column by column. All-zero columns give zero.
inline LabelMass solve_propagation(const SparseGraph& w, const PartialLabels& y,
                                   const PropagationConfig& cfg, CgStats* stats = nullptr) {
  cfg.validate();
  if (w.size() != y.samples()) throw Error(ErrorKind::data, "propagation: graph and label sizes differ");
  const std::size_t n = y.samples();
  const auto plan = detail::plan_columns(y);
  LabelMass z(n, y.classes());
  const std::size_t width = plan.solve.size();
  if (width > 0) {
    std::vector<double> b(n * width), x(n * width);
    for (Index i = 0; i < n; ++i)
      for (std::size_t k = 0; k < width; ++k) b[i * width + k] = y(i, plan.solve[k].first, plan.solve[k].second);
    const CgStats s = solve_shifted_block(w, cfg.alpha_prop, b, x, width, cfg.cg_tolerance, cfg.cg_max_iters);
    if (stats) *stats = s;
    for (Index i = 0; i < n; ++i)
      for (std::size_t k = 0; k < width; ++k) z(i, plan.solve[k].first, plan.solve[k].second) = x[i * width + k];
  }
  for (const auto& [c, q] : plan.copy)
    for (Index i = 0; i < n; ++i) z(i, c, q) = z(i, c, 0);
  return z;
}

// Fixed-point iteration z <- alpha W z + y started at z = y; converges to
// (I - alpha W)^{-1} y. Reference path for the solver.
inline LabelMass diffusion_oracle(const SparseGraph& w, const PartialLabels& y, double alpha,
                                  std::size_t iters) {
  if (w.size() != y.samples()) throw Error(ErrorKind::data, "diffusion: graph and label sizes differ");
  const std::size_t width = y.classes() * kPlanes;
  std::vector<double> z = y.data(), wz(z.size());
  for (std::size_t it = 0; it < iters; ++it) {
    w.multiply(z, wz, width);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = alpha * wz[i] + y.data()[i];
  }
  LabelMass out(y.samples(), y.classes());
  for (Index i = 0; i < y.samples(); ++i)
    for (std::size_t c = 0; c < y.classes(); ++c)
      for (std::size_t q = 0; q < kPlanes; ++q) out(i, c, q) = z[(i * y.classes() + c) * kPlanes + q];
  return out;
}

// Per sample and plane: argmax class (ties to the lower class), or
// kNoSuggestion when the row carries no positive mass.
inline std::vector<ClassId> suggest_labels(const LabelMass& z) {
  std::vector<ClassId> out(z.samples() * kPlanes, kNoSuggestion);
  for (Index i = 0; i < z.samples(); ++i) {
    for (std::size_t q = 0; q < kPlanes; ++q) {
      double best = 0.0;
      for (std::size_t c = 0; c < z.classes(); ++c) {
        if (z(i, c, q) > best) {
          best = z(i, c, q);
          out[i * kPlanes + q] = static_cast<ClassId>(c);
        }
      }
    }
  }
  return out;
}

// 1 - H(p) / ln C with p the row floored at zero and normalized; rows with
// no positive mass get 0.
inline double certainty_weight(std::span<const double> row) {
  const std::size_t C = row.size();
  if (C < 2) throw Error(ErrorKind::usage, "certainty weight needs at least 2 classes");
  double total = 0.0;
  for (double v : row) total += std::max(v, 0.0);
  if (!(total > 0.0)) return 0.0;
  // Equal mass on every class is maximal entropy; answer exactly rather
  // than through rounded logarithms.
  if (std::all_of(row.begin(), row.end(), [&](double v) { return v == row[0]; })) return 0.0;
  double h = 0.0;
  for (double v : row) {
    const double p = std::max(v, 0.0) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(1.0 - h / std::log(static_cast<double>(C)), 0.0, 1.0);
}

inline std::vector<double> certainty_weights(const LabelMass& z) {
  std::vector<double> out(z.samples() * kPlanes, 0.0);
  std::vector<double> row(z.classes());
  for (Index i = 0; i < z.samples(); ++i) {
    for (std::size_t q = 0; q < kPlanes; ++q) {
      for (std::size_t c = 0; c < z.classes(); ++c) row[c] = z(i, c, q);
      out[i * kPlanes + q] = certainty_weight(row);
    }
  }
  return out;
}

// Suggestions from every (graph m, label subset j, plane q), laid out
// [((m * M + j) * n + sample) * 2 + q].
struct SuggestionTensor {
  std::size_t n_branches = 0;
  std::size_t n_samples = 0;
  std::size_t n_classes = 0;
  std::vector<ClassId> labels;
  std::vector<double> weights;

  SuggestionTensor() = default;
  SuggestionTensor(std::size_t M, std::size_t n, std::size_t C)
      : n_branches(M), n_samples(n), n_classes(C),
        labels(M * M * n * kPlanes, kNoSuggestion), weights(M * M * n * kPlanes, 0.0) {}

  std::size_t offset(std::size_t m, std::size_t j, Index i, std::size_t q) const {
    return ((m * n_branches + j) * n_samples + i) * kPlanes + q;
  }
  std::size_t per_sample() const noexcept { return n_branches * n_branches * kPlanes; }

  friend bool operator==(const SuggestionTensor&, const SuggestionTensor&) = default;
};

struct PropagationJobOptions {
  bool use_oracle = false;
  std::size_t oracle_iters = 1000;
  std::size_t threads = 1;
};

// All M x M x 2 propagations. Job (m, j) reads graph m and labels of subset j.
inline SuggestionTensor propagate_all(std::span<const SparseGraph> graphs, const SplitAssignment& assignment,
                                      const LabelState& state, const PropagationConfig& cfg,
                                      const PropagationJobOptions& opts = {}) {
  const std::size_t M = graphs.size();
  if (M != assignment.n_branches) throw Error(ErrorKind::data, "propagation: graph count differs from branch count");
  const std::size_t n = state.size();
  std::vector<PartialLabels> ys;
  ys.reserve(M);
  for (std::size_t j = 0; j < M; ++j) ys.push_back(build_partial_labels(assignment, j, state));
  SuggestionTensor out(M, n, state.n_classes);
  parallel_for(M * M, opts.threads, [&](std::size_t job) {
    const std::size_t m = job / M;
    const std::size_t j = job % M;
    const LabelMass z = opts.use_oracle ? diffusion_oracle(graphs[m], ys[j], cfg.alpha_prop, opts.oracle_iters)
                                        : solve_propagation(graphs[m], ys[j], cfg);
    const auto lab = suggest_labels(z);
    const auto wt = certainty_weights(z);
    for (Index i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < kPlanes; ++q) {
        const std::size_t o = out.offset(m, j, i, q);
        out.labels[o] = lab[i * kPlanes + q];
        out.weights[o] = lab[i * kPlanes + q] == kNoSuggestion ? 0.0 : wt[i * kPlanes + q];
      }
    }
  });
  return out;
}

inline void write_suggestions(std::ostream& os, const SuggestionTensor& s) {
  os << "# elc suggestions\n";
  os << "n_branches " << s.n_branches << '\n';
  os << "n_samples " << s.n_samples << '\n';
  os << "n_classes " << s.n_classes << '\n';
  os << "records graph subset plane index label weight\n";
  for (std::size_t m = 0; m < s.n_branches; ++m)
    for (std::size_t j = 0; j < s.n_branches; ++j)
      for (std::size_t q = 0; q < kPlanes; ++q)
        for (Index i = 0; i < s.n_samples; ++i) {
          const std::size_t o = s.offset(m, j, i, q);
          os << m << ' ' << j << ' ' << q << ' ' << i << ' ';
          if (s.labels[o] == kNoSuggestion) os << '-';
          else os << s.labels[o];
          os << ' ' << format_real(s.weights[o]) << '\n';
        }
  os << "end_records\n";
}

}  // namespace elc
