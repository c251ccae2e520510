#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "core.hpp"
#include "propagate.hpp"

namespace elc {

struct VoteOutcome {
  ClassId winner = 0;
  std::vector<std::size_t> vote_counts;
  std::vector<double> weight_sums;
  double omega_hat = 0.0;
  bool tie_broken = false;
  bool has_votes = false;

  friend bool operator==(const VoteOutcome&, const VoteOutcome&) = default;
};

// Modal class among the sample's suggestions. Equal counts fall back to the
// larger summed certainty weight, then to the lower class index. A sample
// without any suggestion reports has_votes = false.
inline VoteOutcome majority_decision(const SuggestionTensor& s, Index i) {
  VoteOutcome v;
  v.vote_counts.assign(s.n_classes, 0);
  v.weight_sums.assign(s.n_classes, 0.0);
  const std::size_t M = s.n_branches;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t q = 0; q < kPlanes; ++q) {
        const std::size_t o = s.offset(m, j, i, q);
        const ClassId c = s.labels[o];
        if (c == kNoSuggestion) continue;
        ++v.vote_counts[c];
        v.weight_sums[c] += s.weights[o];
        v.has_votes = true;
      }
  if (!v.has_votes) return v;
  const std::size_t top = *std::max_element(v.vote_counts.begin(), v.vote_counts.end());
  const auto n_top = std::count(v.vote_counts.begin(), v.vote_counts.end(), top);
  v.tie_broken = n_top > 1;
  bool first = true;
  for (std::size_t c = 0; c < s.n_classes; ++c) {
    if (v.vote_counts[c] != top) continue;
    if (first || v.weight_sums[c] > v.weight_sums[v.winner]) v.winner = static_cast<ClassId>(c);
    first = false;
  }
  return v;
}

// Weights of suggestions agreeing with the winner, summed and divided by the
// full budget 2 M^2; disagreeing or missing suggestions count as zero.
inline double average_confidence(const SuggestionTensor& s, ClassId winner, Index i) {
  const std::size_t M = s.n_branches;
  double sum = 0.0;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t q = 0; q < kPlanes; ++q) {
        const std::size_t o = s.offset(m, j, i, q);
        if (s.labels[o] == winner) sum += s.weights[o];
      }
  return sum / static_cast<double>(s.per_sample());
}

// Min-max normalization; a degenerate range maps everything to 1.
inline std::vector<double> normalize_confidence(std::span<const double> omega_hat) {
  if (omega_hat.empty()) throw Error(ErrorKind::data, "normalize_confidence: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(omega_hat.begin(), omega_hat.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(omega_hat.size(), 1.0);
  if (hi > lo)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp((omega_hat[i] - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

inline LabelState apply_correction(const LabelState& state, std::span<const VoteOutcome> outcomes,
                                   std::span<const double> omega_bar) {
  if (outcomes.size() != state.size() || omega_bar.size() != state.size())
    throw Error(ErrorKind::data, "apply_correction: length mismatch");
  LabelState next = state;
  for (Index i = 0; i < state.size(); ++i) {
    next.corrected[i] = outcomes[i].has_votes ? outcomes[i].winner : state.noisy[i];
    next.confidence[i] = outcomes[i].has_votes ? omega_bar[i] : 0.0;
  }
  return next;
}

struct CorrectionStep {
  LabelState state;
  std::vector<VoteOutcome> outcomes;
};

// Vote, average the agreeing weights, normalize over the samples that
// received at least one suggestion, and write the result into the state.
inline CorrectionStep correct_labels(const SuggestionTensor& s, const LabelState& state) {
  if (s.n_samples != state.size()) throw Error(ErrorKind::data, "correct: suggestion tensor size mismatch");
  CorrectionStep step;
  step.outcomes.resize(state.size());
  std::vector<double> eligible_hat;
  for (Index i = 0; i < state.size(); ++i) {
    auto& v = step.outcomes[i];
    v = majority_decision(s, i);
    if (v.has_votes) {
      v.omega_hat = average_confidence(s, v.winner, i);
      eligible_hat.push_back(v.omega_hat);
    }
  }
  std::vector<double> omega_bar(state.size(), 0.0);
  if (!eligible_hat.empty()) {
    const auto normalized = normalize_confidence(eligible_hat);
    std::size_t e = 0;
    for (Index i = 0; i < state.size(); ++i)
      if (step.outcomes[i].has_votes) omega_bar[i] = normalized[e++];
  }
  step.state = apply_correction(state, step.outcomes, omega_bar);
  return step;
}

}  // namespace elc
