#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "splitter.hpp"

namespace elc {

struct BranchShape {
  std::size_t input = 0;   // D
  std::size_t hidden = 0;  // H
  std::size_t classes = 0; // C

  std::size_t parameter_count() const { return input * hidden + hidden + hidden * classes + classes; }
  friend bool operator==(const BranchShape&, const BranchShape&) = default;
};

// Linear embedding -> ReLU -> linear head -> softmax. Parameters live in one
// flat vector: embed weights (D x H, row-major), embed bias (H), head
// weights (H x C), head bias (C).
class BranchModel {
 public:
  BranchModel() = default;
  explicit BranchModel(BranchShape shape) : shape_(shape), theta_(shape.parameter_count(), 0.0) {}
  BranchModel(BranchShape shape, std::vector<double> theta) : shape_(shape), theta_(std::move(theta)) {
    if (theta_.size() != shape_.parameter_count())
      throw Error(ErrorKind::data, "branch model: parameter count does not match shape");
  }

  // He-style normal init for both weight blocks, zero biases.
  static BranchModel random(BranchShape shape, Rng& rng) {
    BranchModel m(shape);
    std::normal_distribution<double> embed(0.0, std::sqrt(2.0 / static_cast<double>(shape.input)));
    std::normal_distribution<double> head(0.0, std::sqrt(2.0 / static_cast<double>(shape.hidden)));
    for (double& v : m.embed_weights()) v = embed(rng);
    for (double& v : m.head_weights()) v = head(rng);
    return m;
  }

  const BranchShape& shape() const noexcept { return shape_; }
  std::span<const double> parameters() const noexcept { return theta_; }
  std::span<double> parameters() noexcept { return theta_; }

  std::span<double> embed_weights() { return {theta_.data(), shape_.input * shape_.hidden}; }
  std::span<double> embed_bias() { return {theta_.data() + embed_end(), shape_.hidden}; }
  std::span<double> head_weights() { return {theta_.data() + embed_end() + shape_.hidden, shape_.hidden * shape_.classes}; }
  std::span<double> head_bias() { return {theta_.data() + theta_.size() - shape_.classes, shape_.classes}; }
  std::span<const double> embed_weights() const { return {theta_.data(), shape_.input * shape_.hidden}; }
  std::span<const double> embed_bias() const { return {theta_.data() + embed_end(), shape_.hidden}; }
  std::span<const double> head_weights() const {
    return {theta_.data() + embed_end() + shape_.hidden, shape_.hidden * shape_.classes};
  }
  std::span<const double> head_bias() const { return {theta_.data() + theta_.size() - shape_.classes, shape_.classes}; }

  friend bool operator==(const BranchModel&, const BranchModel&) = default;

 private:
  std::size_t embed_end() const { return shape_.input * shape_.hidden; }

  BranchShape shape_;
  std::vector<double> theta_;
};

struct ForwardPass {
  std::size_t rows = 0;
  FeatureMatrix hidden;              // pre-activation embedding, rows x H
  std::vector<double> activation;    // ReLU(hidden)
  std::vector<double> probs;         // rows x C

  std::span<const double> prob_row(std::size_t r, std::size_t C) const { return {probs.data() + r * C, C}; }
};

inline void softmax_inplace(std::span<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : logits) v /= z;
}

inline ForwardPass forward(const BranchModel& model, const FeatureMatrix& x) {
  const auto& s = model.shape();
  if (x.cols() != s.input)
    throw Error(ErrorKind::data, "forward: feature dimension " + std::to_string(x.cols()) + " != model input " +
                                     std::to_string(s.input));
  const std::size_t n = x.rows(), D = s.input, H = s.hidden, C = s.classes;
  ForwardPass f;
  f.rows = n;
  f.hidden = FeatureMatrix(n, H);
  f.activation.assign(n * H, 0.0);
  f.probs.assign(n * C, 0.0);
  const auto w1 = model.embed_weights();
  const auto b1 = model.embed_bias();
  const auto w2 = model.head_weights();
  const auto b2 = model.head_bias();
  for (std::size_t r = 0; r < n; ++r) {
    auto h = f.hidden.row(r);
    std::copy(b1.begin(), b1.end(), h.begin());
    const auto xr = x.row(r);
    for (std::size_t d = 0; d < D; ++d) {
      const double xv = xr[d];
      const double* wrow = w1.data() + d * H;
      for (std::size_t k = 0; k < H; ++k) h[k] += xv * wrow[k];
    }
    double* a = f.activation.data() + r * H;
    for (std::size_t k = 0; k < H; ++k) a[k] = h[k] > 0.0 ? h[k] : 0.0;
    std::span<double> logits(f.probs.data() + r * C, C);
    std::copy(b2.begin(), b2.end(), logits.begin());
    for (std::size_t k = 0; k < H; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* wrow = w2.data() + k * C;
      for (std::size_t c = 0; c < C; ++c) logits[c] += av * wrow[c];
    }
    softmax_inplace(logits);
  }
  return f;
}

inline constexpr double kProbFloor = 1e-12;

// Corrected-label branch loss: -sum_n w(n) log p(n, target(n)).
inline double loss_pseudo(std::span<const double> probs, std::size_t n_classes, std::span<const ClassId> corrected,
                          std::span<const double> omega_bar) {
  double loss = 0.0;
  for (std::size_t i = 0; i < corrected.size(); ++i) {
    if (omega_bar[i] == 0.0) continue;
    loss -= omega_bar[i] * std::log(std::max(probs[i * n_classes + corrected[i]], kProbFloor));
  }
  return loss;
}

// Weight of a sample in the noisy-label branch: its confidence when the
// label survived correction, the complement when it was changed.
inline double noisy_branch_weight(ClassId noisy, ClassId corrected, double omega_bar) {
  return noisy == corrected ? omega_bar : 1.0 - omega_bar;
}

// Noisy-label branch loss: cross entropy on the original label, weighted
// per noisy_branch_weight.
inline double loss_noisy(std::span<const double> probs, std::size_t n_classes, std::span<const ClassId> noisy,
                         std::span<const ClassId> corrected, std::span<const double> omega_bar) {
  double loss = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const double w = noisy_branch_weight(noisy[i], corrected[i], omega_bar[i]);
    if (w == 0.0) continue;
    loss -= w * std::log(std::max(probs[i * n_classes + noisy[i]], kProbFloor));
  }
  return loss;
}

struct ProbPair {
  std::span<const double> p_s;
  std::span<const double> p_t;
  double omega_s = 0.0;
  double omega_t = 0.0;
};

inline double pair_smoothness(const ProbPair& pr, double alpha_smooth) {
  const double g = std::sqrt(pr.omega_s * pr.omega_t);
  if (g == 0.0) return 0.0;
  double d2 = 0.0;
  for (std::size_t c = 0; c < pr.p_s.size(); ++c) d2 += (pr.p_s[c] - pr.p_t[c]) * (pr.p_s[c] - pr.p_t[c]);
  return g * std::exp(-alpha_smooth * std::sqrt(d2));
}

// Graph smoothness: sum over cross-class pairs of
// sqrt(w_s w_t) exp(-alpha ||p_s - p_t||_2).
inline double loss_graph_smooth(std::span<const ProbPair> pairs, double alpha_smooth) {
  double loss = 0.0;
  for (const auto& pr : pairs) loss += pair_smoothness(pr, alpha_smooth);
  return loss;
}

inline double loss_total(double graph_smooth, double pseudo, double noisy) { return graph_smooth + pseudo + noisy; }

// Gradient of a scalar loss w.r.t. the model parameters, given the loss
// gradient w.r.t. the softmax outputs of every row of `x`.
inline std::vector<double> backprop_from_probs(const BranchModel& model, const FeatureMatrix& x, const ForwardPass& f,
                                               std::span<const double> dprobs) {
  const auto& s = model.shape();
  const std::size_t n = x.rows(), D = s.input, H = s.hidden, C = s.classes;
  std::vector<double> grad(s.parameter_count(), 0.0);
  double* g_w1 = grad.data();
  double* g_b1 = grad.data() + D * H;
  double* g_w2 = g_b1 + H;
  double* g_b2 = g_w2 + H * C;
  const auto w2 = model.head_weights();
  std::vector<double> dlogit(C), dh(H);
  for (std::size_t r = 0; r < n; ++r) {
    const double* p = f.probs.data() + r * C;
    const double* gp = dprobs.data() + r * C;
    double pg = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < C; ++c) {
      pg += p[c] * gp[c];
      any |= gp[c] != 0.0;
    }
    if (!any) continue;
    for (std::size_t c = 0; c < C; ++c) dlogit[c] = p[c] * (gp[c] - pg);
    const double* a = f.activation.data() + r * H;
    for (std::size_t c = 0; c < C; ++c) g_b2[c] += dlogit[c];
    for (std::size_t k = 0; k < H; ++k) {
      double acc = 0.0;
      const double* wrow = w2.data() + k * C;
      double* grow = g_w2 + k * C;
      for (std::size_t c = 0; c < C; ++c) {
        grow[c] += a[k] * dlogit[c];
        acc += wrow[c] * dlogit[c];
      }
      dh[k] = a[k] > 0.0 ? acc : 0.0;
    }
    const auto xr = x.row(r);
    for (std::size_t k = 0; k < H; ++k) g_b1[k] += dh[k];
    for (std::size_t d = 0; d < D; ++d) {
      const double xv = xr[d];
      if (xv == 0.0) continue;
      double* grow = g_w1 + d * H;
      for (std::size_t k = 0; k < H; ++k) grow[k] += xv * dh[k];
    }
  }
  return grad;
}

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

// Weighted cross entropy -sum_n w(n) log p(n, target(n)) and its gradient.
// Covers both the corrected-label and the noisy-label branch losses.
inline LossGradient weighted_ce_gradient(const BranchModel& model, const FeatureMatrix& x,
                                         std::span<const ClassId> targets, std::span<const double> weights) {
  const std::size_t C = model.shape().classes;
  const ForwardPass f = forward(model, x);
  LossGradient out;
  std::vector<double> dprobs(x.rows() * C, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (weights[r] == 0.0) continue;
    const double p = f.probs[r * C + targets[r]];
    const double pc = std::max(p, kProbFloor);
    out.loss -= weights[r] * std::log(pc);
    if (p > kProbFloor) dprobs[r * C + targets[r]] = -weights[r] / p;
  }
  out.grad = backprop_from_probs(model, x, f, dprobs);
  return out;
}

inline LossGradient pseudo_loss_gradient(const BranchModel& model, const FeatureMatrix& x,
                                         std::span<const ClassId> corrected, std::span<const double> omega_bar) {
  return weighted_ce_gradient(model, x, corrected, omega_bar);
}

inline LossGradient noisy_loss_gradient(const BranchModel& model, const FeatureMatrix& x, std::span<const ClassId> noisy,
                                        std::span<const ClassId> corrected, std::span<const double> omega_bar) {
  std::vector<double> w(noisy.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = noisy_branch_weight(noisy[i], corrected[i], omega_bar[i]);
  return weighted_ce_gradient(model, x, noisy, w);
}

// One sampled pair for the smoothness loss. Rows index into the forward
// pass of the branch that owns each sample.
struct PairRef {
  std::size_t branch_s = 0, row_s = 0;
  std::size_t branch_t = 0, row_t = 0;
  double omega_s = 0.0, omega_t = 0.0;
};

// Adds d(pair loss)/d(probs) into per-branch probability gradients and
// returns the pair loss.
inline double accumulate_pair_gradient(const PairRef& pr, std::span<const ForwardPass> passes,
                                       std::vector<std::vector<double>>& dprobs, std::size_t C, double alpha_smooth) {
  const auto ps = passes[pr.branch_s].prob_row(pr.row_s, C);
  const auto pt = passes[pr.branch_t].prob_row(pr.row_t, C);
  const double g = std::sqrt(pr.omega_s * pr.omega_t);
  if (g == 0.0) return 0.0;
  double d2 = 0.0;
  for (std::size_t c = 0; c < C; ++c) d2 += (ps[c] - pt[c]) * (ps[c] - pt[c]);
  const double d = std::sqrt(d2);
  const double val = g * std::exp(-alpha_smooth * d);
  if (d > 0.0) {
    const double coef = -alpha_smooth * val / d;
    double* gs = dprobs[pr.branch_s].data() + pr.row_s * C;
    double* gt = dprobs[pr.branch_t].data() + pr.row_t * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double diff = ps[c] - pt[c];
      gs[c] += coef * diff;
      gt[c] -= coef * diff;
    }
  }
  return val;
}

// Smoothness loss over pairs drawn across several branches; returns the
// loss and one gradient per branch.
inline std::pair<double, std::vector<std::vector<double>>> graph_smooth_gradient(
    std::span<const BranchModel> models, std::span<const FeatureMatrix> inputs, std::span<const PairRef> pairs,
    double alpha_smooth) {
  const std::size_t C = models.front().shape().classes;
  std::vector<ForwardPass> passes;
  passes.reserve(models.size());
  for (std::size_t b = 0; b < models.size(); ++b) passes.push_back(forward(models[b], inputs[b]));
  std::vector<std::vector<double>> dprobs(models.size());
  for (std::size_t b = 0; b < models.size(); ++b) dprobs[b].assign(inputs[b].rows() * C, 0.0);
  double loss = 0.0;
  for (const auto& pr : pairs) loss += accumulate_pair_gradient(pr, passes, dprobs, C, alpha_smooth);
  std::vector<std::vector<double>> grads;
  grads.reserve(models.size());
  for (std::size_t b = 0; b < models.size(); ++b)
    grads.push_back(backprop_from_probs(models[b], inputs[b], passes[b], dprobs[b]));
  return {loss, std::move(grads)};
}

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.1;
  std::size_t lr_decay_every = 5;
  std::size_t batch_size = 64;
  double l2_weight = 5e-3;
  std::size_t hidden_width = 64;
  double alpha_smooth = 1.0;
  std::size_t pair_sample_count = 256;
  std::size_t passes_per_epoch = 1;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::usage, "train: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::usage, "train: momentum must lie in [0,1)");
    if (!(lr_decay > 0.0)) throw Error(ErrorKind::usage, "train: lr_decay must be positive");
    if (lr_decay_every < 1 || batch_size < 1 || hidden_width < 1 || passes_per_epoch < 1)
      throw Error(ErrorKind::usage, "train: counts must be positive");
    if (!(l2_weight >= 0.0)) throw Error(ErrorKind::usage, "train: l2_weight must be >= 0");
    if (!(alpha_smooth > 0.0)) throw Error(ErrorKind::usage, "train: alpha_smooth must be positive");
  }

  // Step decay: multiplied by lr_decay after every lr_decay_every epochs.
  double rate_at(std::size_t epoch) const {
    const std::size_t drops = epoch == 0 ? 0 : (epoch - 1) / lr_decay_every;
    return learning_rate * std::pow(lr_decay, static_cast<double>(drops));
  }
};

// SGD with heavy-ball momentum and L2 weight decay on every parameter.
struct SgdState {
  BranchModel model;
  std::vector<double> velocity;

  SgdState() = default;
  explicit SgdState(BranchModel m) : model(std::move(m)), velocity(model.parameters().size(), 0.0) {}

  void step(std::span<const double> grad, double lr, const TrainConfig& cfg) {
    auto theta = model.parameters();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + cfg.l2_weight * theta[i];
      velocity[i] = cfg.momentum * velocity[i] + g;
      theta[i] -= lr * velocity[i];
    }
  }
};

struct BranchSet {
  std::vector<SgdState> ensemble;  // one per subset
  SgdState noisy;
  SgdState corrected;
};

// Every branch starts from the same random draw.
inline BranchSet init_branches(BranchShape shape, std::size_t n_branches, Rng& rng) {
  const BranchModel base = BranchModel::random(shape, rng);
  BranchSet set;
  set.ensemble.assign(n_branches, SgdState(base));
  set.noisy = SgdState(base);
  set.corrected = SgdState(base);
  return set;
}

namespace detail {

inline void check_finite(double loss, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss))
    throw Error(ErrorKind::numerical, std::string("non-finite ") + what + " loss at epoch " + std::to_string(epoch) +
                                          ", step " + std::to_string(step));
}

inline void scale(std::vector<double>& v, double s) {
  for (double& x : v) x *= s;
}

}  // namespace detail

struct EpochLosses {
  double graph_smooth = 0.0;
  double pseudo = 0.0;
  double noisy = 0.0;
  double warmup = 0.0;
  double total() const { return loss_total(graph_smooth, pseudo, noisy); }
};

// One training epoch for all branches.
//  - Ensemble branch m walks its own subset in minibatches. Each step draws
//    pair_sample_count cross-class pairs (by corrected label) from the union
//    of the current minibatches, restricted to samples whose label was not
//    changed, and descends the smoothness loss. During the first epoch each
//    ensemble branch also takes a plain cross-entropy step on its batch.
//  - The noisy-label branch and the corrected-label branch walk the full
//    dataset with their weighted cross-entropy losses.
// Minibatch losses are averaged (pairs by pair count) before the step.
inline EpochLosses train_epoch(BranchSet& branches, const SplitAssignment& assignment, const FeatureMatrix& features,
                               const LabelState& state, const TrainConfig& cfg, std::size_t epoch,
                               std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = features.rows();
  const std::size_t M = branches.ensemble.size();
  if (assignment.branch_of.size() != n || state.size() != n)
    throw Error(ErrorKind::data, "train_epoch: features, labels and assignment differ in length");
  const double lr = cfg.rate_at(epoch);
  EpochLosses losses;

  std::vector<std::vector<Index>> subsets(M);
  for (std::size_t m = 0; m < M; ++m) subsets[m] = assignment.subset(m);
  std::size_t longest = 0;
  for (const auto& s : subsets) longest = std::max(longest, s.size());

  for (std::size_t pass = 0; pass < cfg.passes_per_epoch; ++pass) {
    // Ensemble branches.
    {
      Rng rng = substream(seed, "ensemble-order", epoch, pass);
      for (auto& s : subsets) std::shuffle(s.begin(), s.end(), rng);
      const std::size_t steps = (longest + cfg.batch_size - 1) / cfg.batch_size;
      Rng pair_rng = substream(seed, "pairs", epoch, pass);
      for (std::size_t step = 0; step < steps; ++step) {
        std::vector<FeatureMatrix> inputs(M);
        std::vector<std::vector<Index>> batch(M);
        for (std::size_t m = 0; m < M; ++m) {
          if (subsets[m].empty()) continue;
          for (std::size_t b = 0; b < cfg.batch_size && b < subsets[m].size(); ++b)
            batch[m].push_back(subsets[m][(step * cfg.batch_size + b) % subsets[m].size()]);
          inputs[m] = features.select_rows(batch[m]);
        }
        std::vector<std::vector<double>> grads(M);
        for (std::size_t m = 0; m < M; ++m) grads[m].assign(branches.ensemble[m].model.parameters().size(), 0.0);

        if (epoch <= 1) {
          for (std::size_t m = 0; m < M; ++m) {
            if (batch[m].empty()) continue;
            std::vector<ClassId> tgt(batch[m].size());
            for (std::size_t b = 0; b < tgt.size(); ++b) tgt[b] = state.corrected[batch[m][b]];
            const std::vector<double> ones(tgt.size(), 1.0);
            auto lg = weighted_ce_gradient(branches.ensemble[m].model, inputs[m], tgt, ones);
            detail::check_finite(lg.loss, "warm-up", epoch, step);
            losses.warmup += lg.loss;
            detail::scale(lg.grad, 1.0 / static_cast<double>(tgt.size()));
            for (std::size_t i = 0; i < lg.grad.size(); ++i) grads[m][i] += lg.grad[i];
          }
        }

        // (branch, row) of every batch sample whose label was left unchanged.
        std::vector<std::pair<std::size_t, std::size_t>> eligible;
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t b = 0; b < batch[m].size(); ++b)
            if (state.noisy[batch[m][b]] == state.corrected[batch[m][b]]) eligible.emplace_back(m, b);
        std::vector<PairRef> pairs;
        if (eligible.size() >= 2 && cfg.pair_sample_count > 0) {
          std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
          const std::size_t max_draws = cfg.pair_sample_count * 8;
          for (std::size_t draw = 0; draw < max_draws && pairs.size() < cfg.pair_sample_count; ++draw) {
            const auto [ms, rs] = eligible[pick(pair_rng)];
            const auto [mt, rt] = eligible[pick(pair_rng)];
            const Index s = batch[ms][rs], t = batch[mt][rt];
            if (state.corrected[s] == state.corrected[t]) continue;
            pairs.push_back({ms, rs, mt, rt, state.confidence[s], state.confidence[t]});
          }
        }
        if (!pairs.empty()) {
          std::vector<BranchModel> models;
          models.reserve(M);
          for (auto& b : branches.ensemble) models.push_back(b.model);
          auto [lg, pair_grads] = graph_smooth_gradient(models, inputs, pairs, cfg.alpha_smooth);
          detail::check_finite(lg, "graph smoothness", epoch, step);
          losses.graph_smooth += lg;
          const double inv = 1.0 / static_cast<double>(pairs.size());
          for (std::size_t m = 0; m < M; ++m)
            for (std::size_t i = 0; i < pair_grads[m].size(); ++i) grads[m][i] += inv * pair_grads[m][i];
        }
        for (std::size_t m = 0; m < M; ++m)
          if (!batch[m].empty()) branches.ensemble[m].step(grads[m], lr, cfg);
      }
    }

    // Full-data branches.
    Rng rng = substream(seed, "full-order", epoch, pass);
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0, step = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const Index> rows(order.data() + start, len);
      const FeatureMatrix xb = features.select_rows(rows);
      std::vector<ClassId> yb(len), cb(len);
      std::vector<double> wb(len);
      for (std::size_t b = 0; b < len; ++b) {
        yb[b] = state.noisy[rows[b]];
        cb[b] = state.corrected[rows[b]];
        wb[b] = state.confidence[rows[b]];
      }
      const double inv = 1.0 / static_cast<double>(len);

      auto ln = noisy_loss_gradient(branches.noisy.model, xb, yb, cb, wb);
      detail::check_finite(ln.loss, "noisy-branch", epoch, step);
      losses.noisy += ln.loss;
      detail::scale(ln.grad, inv);
      branches.noisy.step(ln.grad, lr, cfg);

      auto lp = pseudo_loss_gradient(branches.corrected.model, xb, cb, wb);
      detail::check_finite(lp.loss, "corrected-branch", epoch, step);
      losses.pseudo += lp.loss;
      detail::scale(lp.grad, inv);
      branches.corrected.step(lp.grad, lr, cfg);
    }
  }
  return losses;
}

inline std::vector<ClassId> predict(const BranchModel& model, const FeatureMatrix& x) {
  const ForwardPass f = forward(model, x);
  const std::size_t C = model.shape().classes;
  std::vector<ClassId> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto p = f.prob_row(r, C);
    out[r] = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  return out;
}

inline constexpr std::array<char, 4> kModelMagic{'M', 'L', 'C', 'M'};

// Checkpoint: "MLCM", u32 D, u32 H, u32 C, then the flat parameter vector as
// a 1 x P feature block.
inline void save_checkpoint(const std::string& path, const BranchModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + path + "'");
  os.write(kModelMagic.data(), 4);
  detail::put_u32(os, static_cast<std::uint32_t>(model.shape().input));
  detail::put_u32(os, static_cast<std::uint32_t>(model.shape().hidden));
  detail::put_u32(os, static_cast<std::uint32_t>(model.shape().classes));
  const auto p = model.parameters();
  write_features(os, FeatureMatrix(1, p.size(), std::vector<double>(p.begin(), p.end())));
  if (!os) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

inline BranchModel load_checkpoint(const std::string& path) {
  const auto bytes = detail::read_all(path);
  if (bytes.size() < 16 || !std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin(),
                                       [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; }))
    throw Error(ErrorKind::format, "bad checkpoint magic at byte 0");
  BranchShape shape{detail::get_u32(bytes.data() + 4), detail::get_u32(bytes.data() + 8),
                    detail::get_u32(bytes.data() + 12)};
  const FeatureMatrix block = parse_features(std::span(bytes).subspan(16), 16);
  if (block.rows() != 1 || block.cols() != shape.parameter_count())
    throw Error(ErrorKind::format, "checkpoint parameter block does not match model shape");
  return BranchModel(shape, block.data());
}

}  // namespace elc
