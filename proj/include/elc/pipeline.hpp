#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "branches.hpp"
#include "core.hpp"
#include "correct.hpp"
#include "graph.hpp"
#include "parallel.hpp"
#include "propagate.hpp"
#include "rng.hpp"
#include "splitter.hpp"

namespace elc {

struct PipelineConfig {
  SplitConfig split;
  GraphConfig graph;
  PropagationConfig propagation;
  TrainConfig train;
  std::size_t outer_epochs = 15;
  bool resplit_each_epoch = true;
  bool early_stop = false;
  bool use_oracle = false;
  std::size_t oracle_iters = 1000;
  std::size_t threads = 1;
  std::size_t n_classes = 0;  // 0: infer from the label file
  std::string features_path;
  std::string labels_path;
  std::string output_dir;
  bool dump_suggestions = false;
  bool dump_graphs = false;
  bool checkpoints = false;
  std::vector<std::size_t> sweep_m;
  std::vector<std::size_t> sweep_b;

  std::uint64_t seed() const noexcept { return split.rng_seed; }

  void validate() const {
    split.validate();
    propagation.validate();
    train.validate();
    if (outer_epochs < 1) throw Error(ErrorKind::usage, "outer_epochs must be >= 1");
    if (graph.k_graph < 1) throw Error(ErrorKind::usage, "k_graph must be >= 1");
    if (!(graph.gamma >= 1.0)) throw Error(ErrorKind::usage, "gamma must be >= 1");
  }
};

namespace detail {

inline std::vector<std::size_t> parse_count_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    std::size_t x = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw Error(ErrorKind::usage, "config: bad count '" + tok + "'");
    out.push_back(x);
  }
  return out;
}

inline bool parse_flag(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorKind::usage, "config: bad boolean '" + v + "'");
}

inline std::size_t parse_count(const std::string& v) {
  const auto l = parse_count_list(v);
  if (l.size() != 1) throw Error(ErrorKind::usage, "config: expected one count, got '" + v + "'");
  return l.front();
}

}  // namespace detail

// Applies one `key = value` setting. Keys mirror the PipelineConfig fields.
inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_count;
  using detail::parse_flag;
  const std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"n_branches", [&](const std::string& v) { c.split.n_branches = parse_count(v); }},
      {"packages_per_class_per_branch", [&](const std::string& v) { c.split.packages_per_class_per_branch = parse_count(v); }},
      {"rng_seed", [&](const std::string& v) { c.split.rng_seed = std::stoull(v); }},
      {"seed", [&](const std::string& v) { c.split.rng_seed = std::stoull(v); }},
      {"k_graph", [&](const std::string& v) { c.graph.k_graph = parse_count(v); }},
      {"gamma", [&](const std::string& v) { c.graph.gamma = parse_real(v); }},
      {"alpha_prop", [&](const std::string& v) { c.propagation.alpha_prop = parse_real(v); }},
      {"cg_tolerance", [&](const std::string& v) { c.propagation.cg_tolerance = parse_real(v); }},
      {"cg_max_iters", [&](const std::string& v) { c.propagation.cg_max_iters = parse_count(v); }},
      {"learning_rate", [&](const std::string& v) { c.train.learning_rate = parse_real(v); }},
      {"momentum", [&](const std::string& v) { c.train.momentum = parse_real(v); }},
      {"lr_decay", [&](const std::string& v) { c.train.lr_decay = parse_real(v); }},
      {"lr_decay_every", [&](const std::string& v) { c.train.lr_decay_every = parse_count(v); }},
      {"batch_size", [&](const std::string& v) { c.train.batch_size = parse_count(v); }},
      {"l2_weight", [&](const std::string& v) { c.train.l2_weight = parse_real(v); }},
      {"hidden_width", [&](const std::string& v) { c.train.hidden_width = parse_count(v); }},
      {"alpha_smooth", [&](const std::string& v) { c.train.alpha_smooth = parse_real(v); }},
      {"pair_sample_count", [&](const std::string& v) { c.train.pair_sample_count = parse_count(v); }},
      {"passes_per_epoch", [&](const std::string& v) { c.train.passes_per_epoch = parse_count(v); }},
      {"outer_epochs", [&](const std::string& v) { c.outer_epochs = parse_count(v); }},
      {"epochs", [&](const std::string& v) { c.outer_epochs = parse_count(v); }},
      {"resplit_each_epoch", [&](const std::string& v) { c.resplit_each_epoch = parse_flag(v); }},
      {"early_stop", [&](const std::string& v) { c.early_stop = parse_flag(v); }},
      {"use_oracle", [&](const std::string& v) { c.use_oracle = parse_flag(v); }},
      {"oracle_iters", [&](const std::string& v) { c.oracle_iters = parse_count(v); }},
      {"threads", [&](const std::string& v) { c.threads = parse_count(v); }},
      {"n_classes", [&](const std::string& v) { c.n_classes = parse_count(v); }},
      {"features", [&](const std::string& v) { c.features_path = v; }},
      {"labels", [&](const std::string& v) { c.labels_path = v; }},
      {"output_dir", [&](const std::string& v) { c.output_dir = v; }},
      {"dump_suggestions", [&](const std::string& v) { c.dump_suggestions = parse_flag(v); }},
      {"dump_graphs", [&](const std::string& v) { c.dump_graphs = parse_flag(v); }},
      {"checkpoints", [&](const std::string& v) { c.checkpoints = parse_flag(v); }},
      {"sweep_m", [&](const std::string& v) { c.sweep_m = detail::parse_count_list(v); }},
      {"sweep_b", [&](const std::string& v) { c.sweep_b = detail::parse_count_list(v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw Error(ErrorKind::usage, "config: unknown key '" + key + "'");
  try {
    it->second(value);
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::usage, "config: bad value '" + value + "' for '" + key + "'");
  }
}

inline PipelineConfig parse_config(std::istream& in, PipelineConfig base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string s = detail::trim(line);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::usage, "config: expected 'key = value' on line " + std::to_string(line_no));
    set_config_value(base, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  return base;
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config '" + path + "'");
  return parse_config(in, std::move(base));
}

struct Metrics {
  std::size_t n_flipped = 0;
  std::size_t n_restored = 0;
  std::size_t n_corrupted = 0;
  double correction_accuracy = 0.0;
  double clean_preservation = 0.0;
  double residual_noise = 0.0;
  double input_noise = 0.0;
};

// correction accuracy: share of originally mislabeled samples restored to the
// clean label; clean preservation: share of originally correct samples left
// correct; residual noise: share of samples whose corrected label is wrong.
inline Metrics evaluate(std::span<const ClassId> noisy, std::span<const ClassId> corrected,
                        std::span<const ClassId> clean) {
  if (noisy.size() != clean.size() || corrected.size() != clean.size())
    throw Error(ErrorKind::data, "evaluate: length mismatch (" + std::to_string(noisy.size()) + ", " +
                                     std::to_string(corrected.size()) + ", " + std::to_string(clean.size()) + ")");
  Metrics m;
  std::size_t n_clean = 0, kept = 0, wrong = 0;
  for (Index i = 0; i < clean.size(); ++i) {
    if (noisy[i] != clean[i]) {
      ++m.n_flipped;
      if (corrected[i] == clean[i]) ++m.n_restored;
    } else {
      ++n_clean;
      if (corrected[i] == clean[i]) ++kept;
      else ++m.n_corrupted;
    }
    if (corrected[i] != clean[i]) ++wrong;
  }
  const double n = static_cast<double>(clean.size());
  m.correction_accuracy = m.n_flipped ? static_cast<double>(m.n_restored) / static_cast<double>(m.n_flipped) : 1.0;
  m.clean_preservation = n_clean ? static_cast<double>(kept) / static_cast<double>(n_clean) : 1.0;
  m.residual_noise = clean.empty() ? 0.0 : static_cast<double>(wrong) / n;
  m.input_noise = clean.empty() ? 0.0 : static_cast<double>(m.n_flipped) / n;
  return m;
}

struct EpochResult {
  CorrectionReport report;
  std::optional<SuggestionTensor> suggestions;
  std::vector<SparseGraph> graphs;
  EpochLosses losses;
  std::size_t suggestions_cast = 0;
  const BranchSet* branches = nullptr;  // valid only during the sink call
};

struct RunResult {
  std::vector<CorrectionReport> reports;
  LabelState final_state;
  BranchSet branches;
  std::optional<Metrics> final_metrics;
};

// Per-epoch hook; lets callers persist each epoch before the next starts.
using EpochSink = std::function<void(std::size_t epoch, const EpochResult&)>;

inline FeatureMatrix hidden_features(const BranchModel& model, const FeatureMatrix& x) {
  return forward(model, x).hidden;
}

// The iterative correction loop. Per epoch:
//   1. split (re-split from the noisy branch embedding after epoch 1, or
//      reuse the first split),
//   2. reinitialize ensemble branches by blending the corrected- and
//      noisy-branch parameters with a random weight (from epoch 2),
//   3. train all branches one epoch,
//   4. build one graph per ensemble branch from its embedding,
//   5. propagate noisy and corrected labels of every subset over every
//      graph,
//   6. majority vote with confidence weights, producing the next state.
inline RunResult run_correction(const PipelineConfig& cfg, const FeatureMatrix& features,
                                std::span<const ClassId> noisy_labels, std::size_t n_classes,
                                std::optional<std::span<const ClassId>> clean = std::nullopt,
                                const EpochSink& sink = {}) {
  cfg.validate();
  check_pairing(features, noisy_labels);
  if (clean) check_pairing(features, *clean);
  const std::size_t M = cfg.split.n_branches;
  const std::uint64_t seed = cfg.seed();

  RunResult run;
  LabelState state = LabelState::initial({noisy_labels.begin(), noisy_labels.end()}, n_classes);
  const BranchShape shape{features.cols(), cfg.train.hidden_width, n_classes};
  Rng init_rng = substream(seed, "init");
  BranchSet branches = init_branches(shape, M, init_rng);
  std::optional<SplitAssignment> split;

  for (std::size_t epoch = 1; epoch <= cfg.outer_epochs; ++epoch) {
    EpochResult er;
    if (!split || cfg.resplit_each_epoch) {
      SplitConfig sc = cfg.split;
      sc.rng_seed = substream(seed, "split", epoch)();
      const FeatureMatrix basis = epoch == 1 ? features : hidden_features(branches.noisy.model, features);
      split = split_dataset(basis, state.noisy, n_classes, sc);
    }

    if (epoch > 1) {
      for (std::size_t m = 0; m < M; ++m) {
        Rng mix_rng = substream(seed, "mix", epoch, m);
        const double alpha_m = std::uniform_real_distribution<double>(0.0, 1.0)(mix_rng);
        auto theta = mix_parameters(branches.corrected.model.parameters(), branches.noisy.model.parameters(), alpha_m);
        branches.ensemble[m] = SgdState(BranchModel(shape, std::move(theta)));
      }
    }

    er.losses = train_epoch(branches, *split, features, state, cfg.train, epoch, substream(seed, "train", epoch)());

    er.graphs.resize(M);
    parallel_for(M, cfg.threads, [&](std::size_t m) {
      er.graphs[m] = build_graph(hidden_features(branches.ensemble[m].model, features), cfg.graph);
    });

    PropagationJobOptions opts;
    opts.use_oracle = cfg.use_oracle;
    opts.oracle_iters = cfg.oracle_iters;
    opts.threads = cfg.threads;
    SuggestionTensor tensor = propagate_all(er.graphs, *split, state, cfg.propagation, opts);
    for (ClassId c : tensor.labels) er.suggestions_cast += c != kNoSuggestion;

    CorrectionStep step = correct_labels(tensor, state);
    const bool unchanged = step.state.corrected == state.corrected;
    state = std::move(step.state);
    if (cfg.dump_suggestions) er.suggestions = std::move(tensor);

    er.report = make_report(state, epoch, M, cfg.split.packages_per_class_per_branch);
    if (clean) {
      const Metrics m = evaluate(state.noisy, state.corrected, *clean);
      er.report.summary.correction_accuracy = m.correction_accuracy;
      er.report.summary.residual_noise = m.residual_noise;
      run.final_metrics = m;
    }
    er.branches = &branches;
    if (sink) sink(epoch, er);
    run.reports.push_back(std::move(er.report));
    if (cfg.early_stop && unchanged && epoch > 1) break;
  }
  run.final_state = std::move(state);
  run.branches = std::move(branches);
  return run;
}

struct SweepRow {
  std::size_t n_branches = 0;
  std::size_t packages = 0;
  double correction_accuracy = 0.0;
  double residual_noise = 0.0;
  std::size_t n_changed = 0;
};

// One full run per (M, B) in the Cartesian product, rows sorted by (M, B).
inline std::vector<SweepRow> run_sweep(const PipelineConfig& cfg, const FeatureMatrix& features,
                                       std::span<const ClassId> noisy_labels, std::size_t n_classes,
                                       std::optional<std::span<const ClassId>> clean = std::nullopt) {
  std::vector<std::size_t> ms = cfg.sweep_m.empty() ? std::vector<std::size_t>{cfg.split.n_branches} : cfg.sweep_m;
  std::vector<std::size_t> bs =
      cfg.sweep_b.empty() ? std::vector<std::size_t>{cfg.split.packages_per_class_per_branch} : cfg.sweep_b;
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
  std::sort(bs.begin(), bs.end());
  bs.erase(std::unique(bs.begin(), bs.end()), bs.end());
  std::vector<SweepRow> rows;
  for (std::size_t m : ms)
    for (std::size_t b : bs) {
      PipelineConfig c = cfg;
      c.split.n_branches = m;
      c.split.packages_per_class_per_branch = b;
      const RunResult r = run_correction(c, features, noisy_labels, n_classes, clean);
      SweepRow row{m, b, 0.0, 0.0, r.reports.back().summary.n_changed};
      if (r.final_metrics) {
        row.correction_accuracy = r.final_metrics->correction_accuracy;
        row.residual_noise = r.final_metrics->residual_noise;
      }
      rows.push_back(row);
    }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "n_branches,packages_per_class_per_branch,correction_accuracy,residual_noise,n_changed\n";
  for (const auto& r : rows)
    os << r.n_branches << ',' << r.packages << ',' << format_real(r.correction_accuracy) << ','
       << format_real(r.residual_noise) << ',' << r.n_changed << '\n';
}

// Writes epoch_{l}/report.txt (+ suggestions.txt, graph_{m}.txt, and
// checkpoints when enabled) as epochs complete.
inline EpochSink directory_sink(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  return [cfg](std::size_t epoch, const EpochResult& er) {
    const fs::path dir = fs::path(cfg.output_dir) / ("epoch_" + std::to_string(epoch));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
    save_report((dir / "report.txt").string(), er.report);
    if (er.suggestions) {
      std::ofstream os(dir / "suggestions.txt");
      if (!os) throw Error(ErrorKind::io, "cannot write suggestions in '" + dir.string() + "'");
      write_suggestions(os, *er.suggestions);
    }
    if (cfg.dump_graphs)
      for (std::size_t m = 0; m < er.graphs.size(); ++m) {
        std::ofstream os(dir / ("graph_" + std::to_string(m) + ".txt"));
        if (!os) throw Error(ErrorKind::io, "cannot write graph dump in '" + dir.string() + "'");
        write_graph(os, er.graphs[m]);
      }
    if (cfg.checkpoints && er.branches) {
      save_checkpoint((dir / "noisy.bin").string(), er.branches->noisy.model);
      save_checkpoint((dir / "corrected.bin").string(), er.branches->corrected.model);
      for (std::size_t m = 0; m < er.branches->ensemble.size(); ++m)
        save_checkpoint((dir / ("ensemble_" + std::to_string(m) + ".bin")).string(), er.branches->ensemble[m].model);
    }
  };
}

inline void write_final_labels(const std::string& output_dir, const LabelState& state) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(output_dir) / "final";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
  save_labels((dir / "labels.csv").string(), state.corrected);
}

}  // namespace elc
