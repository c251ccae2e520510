// Command-line front end: synth, split, correct, sweep, eval.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "elc/elc.hpp"

namespace {

using namespace elc;

struct DataPaths {
  std::string features;
  std::string labels;
};

struct LoadedData {
  FeatureMatrix features;
  LabelTable table;
  std::size_t n_classes = 0;
};

std::size_t infer_classes(const LabelTable& t) {
  ClassId hi = 0;
  for (ClassId c : t.labels) hi = std::max(hi, c);
  if (t.clean)
    for (ClassId c : *t.clean) hi = std::max(hi, c);
  return t.labels.empty() ? 0 : static_cast<std::size_t>(hi) + 1;
}

LoadedData load_data(const std::string& features, const std::string& labels, std::size_t n_classes) {
  if (features.empty()) throw Error(ErrorKind::usage, "missing --features");
  if (labels.empty()) throw Error(ErrorKind::usage, "missing --labels");
  LoadedData d;
  d.features = load_features(features);
  d.table = load_label_table(labels, n_classes ? n_classes : std::numeric_limits<ClassId>::max());
  check_pairing(d.features, d.table.labels);
  d.n_classes = n_classes ? n_classes : infer_classes(d.table);
  if (d.n_classes < 2) throw Error(ErrorKind::data, "need at least 2 classes");
  return d;
}

// Options shared by `correct` and `sweep`. Flags override config-file values.
struct RunOptions {
  std::string config_path;
  std::string features, labels, output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, branches, packages, classes, threads;
  bool oracle = false, no_resplit = false, dump_suggestions = false, dump_graph = false, early_stop = false,
       checkpoints = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "config file of key = value lines");
    app->add_option("--features", features, "feature binary file");
    app->add_option("--labels", labels, "label text file");
    app->add_option("--seed", seed, "master RNG seed");
    app->add_option("--epochs", epochs, "outer correction epochs");
    app->add_option("--branches", branches, "number of ensemble branches M");
    app->add_option("--packages", packages, "packages per class per branch B");
    app->add_option("--classes", classes, "number of classes (default: inferred from labels)");
    app->add_option("--threads", threads, "worker threads");
    app->add_flag("--oracle", oracle, "propagate by fixed-point diffusion instead of conjugate gradient");
    app->add_flag("--no-resplit", no_resplit, "keep the first-epoch split for all epochs");
    app->add_flag("--dump-suggestions", dump_suggestions, "write epoch_<l>/suggestions.txt");
    app->add_flag("--dump-graph", dump_graph, "write epoch_<l>/graph_<m>.txt");
    app->add_flag("--early-stop", early_stop, "stop once an epoch changes no label");
    app->add_flag("--checkpoints", checkpoints, "write per-epoch model checkpoints");
  }

  PipelineConfig build() const {
    PipelineConfig c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (!features.empty()) c.features_path = features;
    if (!labels.empty()) c.labels_path = labels;
    if (!output.empty()) c.output_dir = output;
    if (seed) c.split.rng_seed = *seed;
    if (epochs) c.outer_epochs = *epochs;
    if (branches) c.split.n_branches = *branches;
    if (packages) c.split.packages_per_class_per_branch = *packages;
    if (classes) c.n_classes = *classes;
    if (threads) c.threads = *threads;
    if (oracle) c.use_oracle = true;
    if (no_resplit) c.resplit_each_epoch = false;
    if (dump_suggestions) c.dump_suggestions = true;
    if (dump_graph) c.dump_graphs = true;
    if (early_stop) c.early_stop = true;
    if (checkpoints) c.checkpoints = true;
    c.validate();
    return c;
  }
};

std::optional<std::span<const ClassId>> clean_view(const LabelTable& t) {
  if (!t.clean) return std::nullopt;
  return std::span<const ClassId>(*t.clean);
}

int cmd_synth(const SynthConfig& cfg, const std::string& features, const std::string& labels) {
  if (features.empty() || labels.empty()) throw Error(ErrorKind::usage, "synth needs --features and --labels");
  const NoisyDataset ds = make_noisy_dataset(cfg);
  save_features(features, ds.features);
  save_labels(labels, ds.noisy, ds.clean);
  const Metrics m = evaluate(ds.noisy, ds.noisy, ds.clean);
  std::cout << "{\"n_samples\":" << ds.noisy.size() << ",\"noise_rate\":" << format_real(m.input_noise) << "}\n";
  return 0;
}

int cmd_split(const RunOptions& o) {
  const PipelineConfig c = o.build();
  const LoadedData d = load_data(c.features_path, c.labels_path, c.n_classes);
  SplitConfig sc = c.split;
  const SplitAssignment a = split_dataset(d.features, d.table.labels, d.n_classes, sc);
  if (c.output_dir.empty()) {
    write_split(std::cout, a, d.table.labels);
  } else {
    std::ofstream os(c.output_dir);
    if (!os) throw Error(ErrorKind::io, "cannot write '" + c.output_dir + "'");
    write_split(os, a, d.table.labels);
  }
  return 0;
}

int cmd_correct(const RunOptions& o) {
  const PipelineConfig c = o.build();
  if (c.output_dir.empty()) throw Error(ErrorKind::usage, "correct needs --out (or output_dir in the config)");
  const LoadedData d = load_data(c.features_path, c.labels_path, c.n_classes);
  const RunResult r = run_correction(c, d.features, d.table.labels, d.n_classes, clean_view(d.table), directory_sink(c));
  write_final_labels(c.output_dir, r.final_state);
  std::cout << summary_json(r.reports.back().summary).dump() << '\n';
  return 0;
}

int cmd_sweep(const RunOptions& o, const std::string& sweep_m, const std::string& sweep_b) {
  PipelineConfig c = o.build();
  if (!sweep_m.empty()) set_config_value(c, "sweep_m", sweep_m);
  if (!sweep_b.empty()) set_config_value(c, "sweep_b", sweep_b);
  const LoadedData d = load_data(c.features_path, c.labels_path, c.n_classes);
  const auto rows = run_sweep(c, d.features, d.table.labels, d.n_classes, clean_view(d.table));
  if (c.output_dir.empty()) {
    write_sweep_csv(std::cout, rows);
  } else {
    std::ofstream os(c.output_dir);
    if (!os) throw Error(ErrorKind::io, "cannot write '" + c.output_dir + "'");
    write_sweep_csv(os, rows);
  }
  return 0;
}

// Compares a corrected label file against the clean column of the input
// label file (or a separate clean file).
int cmd_eval(const std::string& labels, const std::string& corrected, const std::string& clean_path,
             std::optional<std::size_t> classes) {
  if (labels.empty() || corrected.empty()) throw Error(ErrorKind::usage, "eval needs --labels and --corrected");
  const std::size_t cap = classes ? *classes : std::numeric_limits<ClassId>::max();
  const LabelTable in = load_label_table(labels, cap);
  const LabelTable out = load_label_table(corrected, cap);
  std::vector<ClassId> clean;
  if (!clean_path.empty()) clean = load_labels(clean_path, cap);
  else if (in.clean) clean = *in.clean;
  else throw Error(ErrorKind::usage, "eval needs clean labels (second column of --labels, or --clean)");
  const Metrics m = evaluate(in.labels, out.labels, clean);
  nlohmann::ordered_json j;
  j["n_samples"] = clean.size();
  j["n_flipped"] = m.n_flipped;
  j["n_restored"] = m.n_restored;
  j["n_corrupted"] = m.n_corrupted;
  j["correction_accuracy"] = m.correction_accuracy;
  j["clean_preservation"] = m.clean_preservation;
  j["input_noise"] = m.input_noise;
  j["residual_noise"] = m.residual_noise;
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble label correction with multi-graph label propagation"};
  app.require_subcommand(1);

  SynthConfig synth;
  std::string synth_features, synth_labels, noise_kind = "confusing";
  auto* s = app.add_subcommand("synth", "generate Gaussian blobs with injected label noise");
  s->add_option("--features", synth_features, "output feature binary")->required();
  s->add_option("--labels", synth_labels, "output label file (noisy,clean)")->required();
  s->add_option("--classes", synth.n_classes, "number of classes")->capture_default_str();
  s->add_option("--per-class", synth.per_class, "samples per class")->capture_default_str();
  s->add_option("--dim", synth.dim, "feature dimension")->capture_default_str();
  s->add_option("--separation", synth.class_separation, "centroid spacing over cluster std")->capture_default_str();
  s->add_option("--noise-rate", synth.noise_rate, "fraction of flipped labels")->capture_default_str();
  s->add_option("--noise-kind", noise_kind, "confusing | uniform | asymmetric")->capture_default_str();
  s->add_option("--seed", synth.rng_seed, "RNG seed")->capture_default_str();

  RunOptions split_opts;
  auto* sp = app.add_subcommand("split", "k-NN packaging and branch assignment");
  split_opts.attach(sp);
  sp->add_option("--out", split_opts.output, "output file (default: stdout)");

  RunOptions correct_opts;
  auto* co = app.add_subcommand("correct", "run the iterative label correction");
  correct_opts.attach(co);
  co->add_option("--out", correct_opts.output, "output directory");

  RunOptions sweep_opts;
  std::string sweep_m, sweep_b;
  auto* sw = app.add_subcommand("sweep", "one correction run per (M, B) pair");
  sweep_opts.attach(sw);
  sw->add_option("--sweep-m", sweep_m, "comma-separated branch counts");
  sw->add_option("--sweep-b", sweep_b, "comma-separated packages per class per branch");
  sw->add_option("--out", sweep_opts.output, "output CSV (default: stdout)");

  std::string eval_labels, eval_corrected, eval_clean;
  std::optional<std::size_t> eval_classes;
  auto* ev = app.add_subcommand("eval", "score corrected labels against clean labels");
  ev->add_option("--labels", eval_labels, "input label file (noisy[,clean])")->required();
  ev->add_option("--corrected", eval_corrected, "corrected label file")->required();
  ev->add_option("--clean", eval_clean, "clean label file when --labels has no second column");
  ev->add_option("--classes", eval_classes, "number of classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*s) {
      synth.noise_kind = parse_noise_kind(noise_kind);
      return cmd_synth(synth, synth_features, synth_labels);
    }
    if (*sp) return cmd_split(split_opts);
    if (*co) return cmd_correct(correct_opts);
    if (*sw) return cmd_sweep(sweep_opts, sweep_m, sweep_b);
    if (*ev) return cmd_eval(eval_labels, eval_corrected, eval_clean, eval_classes);
  } catch (const Error& e) {
    std::cerr << "elc: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "elc: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
