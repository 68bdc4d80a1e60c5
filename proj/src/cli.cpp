#include "afford3d/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "afford3d/config.hpp"
#include "afford3d/dataset.hpp"
#include "afford3d/error.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/kernels.hpp"
#include "afford3d/losses.hpp"
#include "afford3d/pipeline.hpp"

namespace afford3d::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

// Config file first, then --seed; subcommand flags are layered on by callers.
RunConfig base_config(const Globals& g, std::optional<RunConfig> fallback = std::nullopt) {
  RunConfig c = !g.config_path.empty() ? load_run_config(g.config_path) : fallback.value_or(RunConfig{});
  if (g.seed) c.train.seed = *g.seed;
  return c;
}

// Always carries a decimal point or exponent, so 1 prints as "1.0".
std::string real(double v) {
  std::string s = format_double(v);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::optional<ad::Op> parse_op(const std::string& name) {
  static const std::map<std::string, ad::Op> ops = {
      {"matmul", ad::Op::Matmul},   {"transpose", ad::Op::Transpose}, {"add", ad::Op::Add},
      {"sub", ad::Op::Sub},         {"mul", ad::Op::Mul},             {"scale", ad::Op::Scale},
      {"sigmoid", ad::Op::Sigmoid}, {"relu", ad::Op::Relu},           {"log", ad::Op::Log},
      {"softmax_rows", ad::Op::SoftmaxRows}, {"sum", ad::Op::Sum},     {"repeat_rows", ad::Op::RepeatRows},
      {"concat_rows", ad::Op::ConcatRows},   {"reshape", ad::Op::Reshape}, {"custom", ad::Op::Custom},
  };
  const auto it = ops.find(name);
  if (it == ops.end()) return std::nullopt;
  return it->second;
}

dataset::Split parse_split(const std::string& s) {
  if (s == "train") return dataset::Split::Train;
  if (s == "test") return dataset::Split::Test;
  fail(ErrorKind::Config, "split must be 'train' or 'test'");
}

// ----------------------------------------------------------------- dataset

int dataset_validate(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
  const auto m = dataset::load_manifest(manifest_path);
  for (const auto& w : m.warnings) err << "warning: " << w << "\n";
  const auto report = dataset::validate_pairing(m.entries);
  std::size_t train = 0, test = 0;
  for (const auto& e : m.entries) (e.split == dataset::Split::Train ? train : test)++;
  out << "entries: " << m.entries.size() << " (train " << train << ", test " << test << ")\n";
  if (report.ok()) {
    out << "pairing: ok\n";
    return kSuccess;
  }
  out << "pairing: " << report.violations.size() << " violation(s)\n";
  for (const auto& v : report.violations) out << "  " << v << "\n";
  return kFailure;
}

int dataset_split(const std::string& manifest_path, const std::string& dest, const dataset::SplitSpec& spec,
                  std::ostream& out) {
  auto m = dataset::load_manifest(manifest_path);
  m.entries = dataset::make_splits(std::move(m.entries), spec);
  const fs::path target = dest.empty() ? fs::path(manifest_path) : fs::path(dest);
  const fs::path target_dir = target.parent_path();
  // Keep references valid when writing next to a different directory.
  auto rebase = [&](const std::string& rel) {
    return fs::relative(fs::absolute(m.resolve(rel)), fs::absolute(target_dir.empty() ? fs::path(".") : target_dir))
        .generic_string();
  };
  if (fs::absolute(target_dir) != fs::absolute(m.base_dir)) {
    for (auto& e : m.entries) {
      e.point_cloud_path = rebase(e.point_cloud_path);
      if (e.embedding_source != dataset::kSyntheticSource) e.embedding_source = rebase(e.embedding_source);
    }
    m.taxonomy_ref = rebase(m.taxonomy_ref);
  }
  dataset::save_manifest(target, m);
  std::size_t test = 0;
  for (const auto& e : m.entries) test += e.split == dataset::Split::Test;
  out << "wrote " << target.string() << ": " << m.entries.size() - test << " train, " << test << " test ("
      << (spec.mode == dataset::SplitSpec::Mode::Seen ? "seen" : "unseen") << ")\n";
  return kSuccess;
}

// ------------------------------------------------------------------- train

struct TrainFlags {
  std::string manifest;
  std::optional<std::size_t> steps, epochs, frames, batch_size;
  std::optional<double> lr, lambda_spatial;
};

void apply(const TrainFlags& f, RunConfig& c) {
  if (!f.manifest.empty()) c.manifest = f.manifest;
  if (f.steps) c.train.steps = *f.steps;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.frames) c.train.model.frames = *f.frames;
  if (f.batch_size) c.train.batch_size = *f.batch_size;
  if (f.lr) c.train.learning_rate = *f.lr;
  if (f.lambda_spatial) c.train.loss.weights.spatial = *f.lambda_spatial;
}

int cmd_train(const Globals& g, const TrainFlags& flags, std::ostream& out) {
  RunConfig c = base_config(g);
  apply(flags, c);
  c.validate();
  if (c.manifest.empty()) fail(ErrorKind::Config, "train needs a manifest (--manifest or config 'manifest')");
  const std::uint64_t hash = config_hash(c);

  const auto manifest = dataset::load_manifest(c.manifest);
  const auto samples = pipeline::load_split(manifest, dataset::Split::Train);
  if (samples.empty()) fail(ErrorKind::Config, "manifest has no training entries");
  const auto prepared = pipeline::prepare_training_set(samples, c.train);
  const auto result = train::train(prepared, c.train);

  const fs::path dir = g.out;
  write_archive(dir / "checkpoint.a3dw", result.params.to_archive(hash));
  write_text_file(dir / "loss_log.tsv", train::format_loss_log(result.log, hash));
  write_text_file(dir / "run_config.json", to_json_text(c));
  const auto& last = result.log.back();
  out << "trained " << result.log.size() << " steps on " << samples.size() << " samples, config_hash "
      << hash_hex(hash) << "\n"
      << "final loss: total " << last.loss.total << " (bce " << last.loss.bce << ", spatial " << last.loss.spatial
      << ", iou " << last.loss.iou << ")\n"
      << "wrote " << (dir / "checkpoint.a3dw").string() << "\n";
  return kSuccess;
}

// -------------------------------------------------------------------- eval

struct EvalFlags {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string label = "seen";
  bool oracle = false;
  std::optional<double> constant;
};

RunConfig config_for_checkpoint(const Globals& g, const std::string& checkpoint) {
  std::optional<RunConfig> stored;
  const fs::path sidecar = fs::path(checkpoint).parent_path() / "run_config.json";
  if (!checkpoint.empty() && g.config_path.empty() && fs::exists(sidecar)) stored = load_run_config(sidecar);
  return base_config(g, stored);
}

int cmd_eval(const Globals& g, const EvalFlags& f, std::ostream& out) {
  RunConfig c = config_for_checkpoint(g, f.checkpoint);
  if (!f.manifest.empty()) c.manifest = f.manifest;
  if (c.manifest.empty()) fail(ErrorKind::Config, "eval needs a manifest");
  if (f.label != "seen" && f.label != "unseen") fail(ErrorKind::Config, "label must be 'seen' or 'unseen'");

  pipeline::EvalOptions options;
  options.protocol = c.protocol;
  options.label = f.label;
  options.config_hash = config_hash(c);
  options.mode = f.oracle ? pipeline::ScoreMode::Oracle
                          : (f.constant ? pipeline::ScoreMode::Constant : pipeline::ScoreMode::Model);
  if (f.constant) options.constant = *f.constant;

  std::optional<model::ModelParams> params;
  if (options.mode == pipeline::ScoreMode::Model) {
    if (f.checkpoint.empty()) fail(ErrorKind::Config, "eval needs --checkpoint (or --oracle-scores)");
    params = model::ModelParams::from_archive(read_archive(f.checkpoint), c.train.model);
  }
  const auto manifest = dataset::load_manifest(c.manifest);
  const auto split = parse_split(f.split);
  const auto report = pipeline::evaluate(manifest, split, params ? &*params : nullptr, c.train, options);

  const std::string stem = "metrics_" + f.label + "_" + f.split;
  write_text_file(fs::path(g.out) / (stem + ".txt"), metrics::format_table(report));
  write_text_file(fs::path(g.out) / (stem + ".records"), metrics::format_records(report));
  out << metrics::format_table(report);
  return kSuccess;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckFlags {
  std::size_t samples = 100;
  std::size_t points = 64;
  double tolerance = 1e-5;
  double step = 1e-6;
  std::string corrupt;
};

int cmd_gradcheck(const Globals& g, const GradcheckFlags& f, std::ostream& out) {
  RunConfig defaults;
  defaults.train.model = train::gradcheck_model_config();
  const RunConfig c = base_config(g, defaults);
  c.validate();
  std::optional<std::pair<ad::Op, double>> fault;
  if (!f.corrupt.empty()) {
    const auto op = parse_op(f.corrupt);
    if (!op) fail(ErrorKind::Config, "unknown op '" + f.corrupt + "' for --corrupt-backward");
    fault = std::make_pair(*op, 1.5);
  }

  std::map<std::string, double> worst;
  std::vector<std::string> order;
  bool passed = true;
  for (std::size_t s = 0; s < f.samples; ++s) {
    const std::uint64_t seed = c.train.seed * 1000003 + s;
    const auto sample = train::random_gradcheck_sample(f.points, seed);
    const auto prepared = train::prepare_training_sample(sample, c.train);
    const auto params = model::ModelParams::init(c.train.model, seed);
    const auto report = train::gradient_check(prepared, params, c.train.loss, f.tolerance, f.step, fault);
    passed = passed && report.passed;
    for (const auto& [name, err] : report.errors) {
      if (!worst.contains(name)) order.push_back(name);
      worst[name] = std::max(worst[name], err);
    }
  }
  out << "gradcheck: " << f.samples << " samples x " << f.points << " points, tolerance " << f.tolerance
      << ", h " << f.step << ", config_hash " << hash_hex(config_hash(c)) << "\n";
  for (const auto& name : order) {
    out << (worst[name] <= f.tolerance ? "  PASS " : "  FAIL ") << name << " max_rel_err=" << worst[name] << "\n";
  }
  out << (passed ? "result: PASS\n" : "result: FAIL\n");
  return passed ? kSuccess : kFailure;
}

// ------------------------------------------------------------------ export

struct ExportFlags {
  std::string checkpoint;
  std::string manifest;
  std::string cloud;
  std::string video_id;
  std::string affordance;
  std::string embedding;
  std::string output;
};

int cmd_export(const Globals& g, const ExportFlags& f, std::ostream& out) {
  RunConfig c = config_for_checkpoint(g, f.checkpoint);
  if (!f.manifest.empty()) c.manifest = f.manifest;
  const auto params = model::ModelParams::from_archive(read_archive(f.checkpoint), c.train.model);

  model::Sample sample;
  if (!f.cloud.empty()) {
    if (f.affordance.empty()) fail(ErrorKind::Config, "export with --cloud needs --affordance");
    sample.cloud = read_point_cloud(f.cloud);
    sample.embeddings.video_id = f.video_id.empty() ? fs::path(f.cloud).stem().string() : f.video_id;
    sample.embeddings.affordance = f.affordance;
    if (!f.embedding.empty()) sample.embeddings.file = f.embedding;
  } else {
    if (c.manifest.empty() || f.video_id.empty()) fail(ErrorKind::Config, "export needs --cloud or --manifest with --video-id");
    const auto manifest = dataset::load_manifest(c.manifest);
    const auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                                 [&](const auto& e) { return e.video_id == f.video_id; });
    if (it == manifest.entries.end()) fail(ErrorKind::Dataset, "no manifest entry for video '" + f.video_id + "'");
    sample = pipeline::load_sample(manifest, *it);
  }

  const auto probs = model::forward(sample, params, c.train.model, c.train.seed);
  ColoredCloud ply;
  ply.coords = sample.cloud.coords;
  for (double p : probs) ply.colors.push_back(heat_color(p));
  ply.comments = {"afford3d affordance heatmap", "config_hash " + hash_hex(config_hash(c)),
                  "affordance " + sample.embeddings.affordance, "video_id " + sample.embeddings.video_id};
  const fs::path target = f.output.empty() ? fs::path(g.out) / (sample.embeddings.video_id + ".ply") : fs::path(f.output);
  write_text_file(target, format_ply(ply));
  out << "wrote " << target.string() << " (" << probs.size() << " vertices)\n";
  return kSuccess;
}

// ----------------------------------------------------------------- weights

struct WeightsFlags {
  std::string cloud;
  std::optional<double> radius, sigma;
  std::string output;
  std::string ply;
};

int cmd_weights(const Globals& g, const WeightsFlags& f, std::ostream& out) {
  RunConfig c = base_config(g);
  if (f.radius) c.train.loss.radius = *f.radius;
  const double radius = c.train.loss.radius;
  const double sigma = f.sigma.value_or(c.train.loss.sigma());
  const PointCloud cloud = read_point_cloud(f.cloud);
  validate_cloud(cloud);
  const auto weights = losses::spatial_weights(cloud.coords, radius, sigma);

  std::string text = "# config_hash=" + hash_hex(config_hash(c)) + " radius=" + real(radius) + " sigma=" + real(sigma) + "\n";
  for (std::size_t i = 0; i < weights.omega.size(); ++i) text += std::to_string(i) + " " + real(weights.omega[i]) + "\n";
  const fs::path target = f.output.empty() ? fs::path(g.out) / "weights.txt" : fs::path(f.output);
  write_text_file(target, text);

  if (!f.ply.empty()) {
    // Rescale to [0,1] so the heatmap spans the full color range.
    const auto [lo, hi] = std::minmax_element(weights.omega.begin(), weights.omega.end());
    ColoredCloud ply;
    ply.coords = cloud.coords;
    for (double w : weights.omega) ply.colors.push_back(heat_color(*hi > *lo ? (w - *lo) / (*hi - *lo) : 1.0));
    ply.comments = {"afford3d spatial weights", "config_hash " + hash_hex(config_hash(c))};
    write_text_file(f.ply, format_ply(ply));
  }
  out << "wrote " << target.string() << " (" << weights.omega.size() << " points)\n";
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::apply_thread_env();

  CLI::App app{"afford3d: 3D affordance grounding from interaction-video embeddings"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Run-config JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (overrides the config file)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  // dataset
  auto* ds = app.add_subcommand("dataset", "Manifest tooling");
  ds->require_subcommand(1);
  ds->fallthrough();
  std::string manifest;
  auto* validate = ds->add_subcommand("validate", "Check a manifest and its pairing rules");
  validate->add_option("--manifest", manifest)->required();
  validate->fallthrough();

  auto* split = ds->add_subcommand("split", "Assign seen/unseen train/test splits");
  std::string mode = "seen", dest;
  dataset::SplitSpec spec;
  split->add_option("--manifest", manifest)->required();
  split->add_option("--mode", mode)->check(CLI::IsMember({"seen", "unseen"}));
  split->add_option("--holdout", spec.held_out_objects, "Held-out object classes (unseen)")->delimiter(',');
  split->add_option("--holdout-affordance", spec.held_out_affordances, "Held-out affordances (unseen)")->delimiter(',');
  split->add_option("--ratio", spec.test_ratio, "Test fraction (seen)");
  split->add_option("--dest", dest, "Output manifest (default: overwrite)");
  split->fallthrough();

  auto* synth = ds->add_subcommand("synth", "Generate a synthetic dataset under --out");
  dataset::SynthConfig synth_config;
  synth->add_option("--types", synth_config.types);
  synth->add_option("--samples", synth_config.samples_per_type, "Samples per affordance type");
  synth->add_option("--points", synth_config.points);
  synth->add_option("--noise", synth_config.noise);
  synth->add_option("--soft-boundary", synth_config.soft_boundary);
  synth->add_option("--ratio", synth_config.test_ratio);
  synth->fallthrough();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on the manifest's train split");
  TrainFlags train_flags;
  train_cmd->add_option("--manifest", train_flags.manifest);
  train_cmd->add_option("--steps", train_flags.steps);
  train_cmd->add_option("--epochs", train_flags.epochs);
  train_cmd->add_option("--frames", train_flags.frames)->check(CLI::IsMember({2, 4, 8, 16}));
  train_cmd->add_option("--batch-size", train_flags.batch_size);
  train_cmd->add_option("--lr", train_flags.lr);
  train_cmd->add_option("--lambda-spatial", train_flags.lambda_spatial);
  train_cmd->fallthrough();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  EvalFlags eval_flags;
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint);
  eval_cmd->add_option("--manifest", eval_flags.manifest);
  eval_cmd->add_option("--split", eval_flags.split)->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--label", eval_flags.label)->check(CLI::IsMember({"seen", "unseen"}));
  eval_cmd->add_flag("--oracle-scores", eval_flags.oracle, "Score with the labels themselves (debug)");
  eval_cmd->add_option("--constant-scores", eval_flags.constant, "Score every point with a constant");
  eval_cmd->fallthrough();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  GradcheckFlags grad_flags;
  grad_cmd->add_option("--samples", grad_flags.samples);
  grad_cmd->add_option("--points", grad_flags.points);
  grad_cmd->add_option("--tolerance", grad_flags.tolerance);
  grad_cmd->add_option("--step", grad_flags.step);
  grad_cmd->add_option("--corrupt-backward", grad_flags.corrupt, "Scale one op's backward rule (negative control)");
  grad_cmd->fallthrough();

  // export
  auto* export_cmd = app.add_subcommand("export", "Write a PLY heatmap of predicted probabilities");
  ExportFlags export_flags;
  export_cmd->add_option("--checkpoint", export_flags.checkpoint)->required();
  export_cmd->add_option("--manifest", export_flags.manifest);
  export_cmd->add_option("--cloud", export_flags.cloud);
  export_cmd->add_option("--video-id", export_flags.video_id);
  export_cmd->add_option("--affordance", export_flags.affordance);
  export_cmd->add_option("--embedding", export_flags.embedding);
  export_cmd->add_option("--output", export_flags.output, "PLY path (default: <out>/<video_id>.ply)");
  export_cmd->fallthrough();

  // weights
  auto* weights_cmd = app.add_subcommand("weights", "Dump per-point spatial weights");
  WeightsFlags weights_flags;
  weights_cmd->add_option("--cloud", weights_flags.cloud)->required();
  weights_cmd->add_option("--radius", weights_flags.radius);
  weights_cmd->add_option("--sigma", weights_flags.sigma);
  weights_cmd->add_option("--output", weights_flags.output, "Text path (default: <out>/weights.txt)");
  weights_cmd->add_option("--ply", weights_flags.ply, "Optional PLY heatmap of the weights");
  weights_cmd->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*ds) {
      if (*validate) return dataset_validate(manifest, out, err);
      if (*split) {
        spec.mode = mode == "seen" ? dataset::SplitSpec::Mode::Seen : dataset::SplitSpec::Mode::Unseen;
        spec.seed = g.seed.value_or(0);
        return dataset_split(manifest, dest, spec, out);
      }
      if (*synth) {
        synth_config.seed = g.seed.value_or(0);
        const auto m = dataset::synth_generate(synth_config, g.out);
        out << "wrote " << m.entries.size() << " samples to " << g.out << "\n";
        return kSuccess;
      }
    }
    if (*train_cmd) return cmd_train(g, train_flags, out);
    if (*eval_cmd) return cmd_eval(g, eval_flags, out);
    if (*grad_cmd) return cmd_gradcheck(g, grad_flags, out);
    if (*export_cmd) return cmd_export(g, export_flags, out);
    if (*weights_cmd) return cmd_weights(g, weights_flags, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? kUsage : kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace afford3d::cli
