#include "cl2dc/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "cl2dc/checkpoint.hpp"
#include "cl2dc/config.hpp"
#include "cl2dc/consensus.hpp"
#include "cl2dc/dataset.hpp"
#include "cl2dc/error.hpp"
#include "cl2dc/eval.hpp"
#include "cl2dc/model.hpp"

#ifndef CL2DC_VERSION
#define CL2DC_VERSION "0.0.0"
#endif

namespace cl2dc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kOutDirEnv = "CL2DC_OUT_DIR";

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  bool desk_scale = false;
  std::string out_dir;
};

Config load_config(const CommonOptions& opt) {
  Config cfg = Config::defaults();
  if (opt.desk_scale) cfg.apply_desk_scale();
  if (!opt.config_path.empty()) cfg.merge_file(opt.config_path);
  for (const auto& o : opt.overrides) cfg.set(o);
  return cfg;
}

fs::path output_dir(const CommonOptions& opt) {
  if (!opt.out_dir.empty()) return opt.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return fs::current_path();
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Files written by one invocation. Unless commit() is reached they are
// deleted again, so a failed run leaves no partial artifacts behind.
class Outputs {
 public:
  Outputs(fs::path dir, std::vector<fs::path> inputs) : dir_(std::move(dir)), inputs_(std::move(inputs)) {}
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;

  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
  }

  fs::path add(const std::string& name) {
    fs::create_directories(dir_);
    const fs::path path = dir_ / name;
    std::error_code ec;
    for (const auto& in : inputs_)
      if (fs::exists(path) && fs::equivalent(path, in, ec))
        throw ConfigError("refusing to overwrite input file " + in.string());
    files_.push_back(path);
    return path;
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = add(name);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
    if (!out) throw ConfigError("failed writing " + path.string());
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : files_) out.push_back(f.filename().string());
    return out;
  }

  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> files_;
  bool committed_ = false;
};

struct Run {
  std::string subcommand;
  std::vector<std::string> argv;
  Config config;
  std::map<std::string, fs::path> inputs;
};

json manifest_json(const Run& run, const Outputs& outputs) {
  json inputs = json::object();
  for (const auto& [role, path] : run.inputs)
    inputs[role] = {{"path", path.string()}, {"sha256", sha256_hex(read_bytes(path))}};
  json config = json::object();
  for (const auto& [k, v] : run.config.values()) config[k] = v;
  return {{"tool", "cl2dc"},
          {"subcommand", run.subcommand},
          {"command", run.argv},
          {"config_hash", run.config.hash()},
          {"config", config},
          {"seed", run.config.get_uint("train.seed")},
          {"dataset_seed", run.config.get_uint("dataset.seed")},
          {"inputs", inputs},
          {"outputs", outputs.names()},
          {"versions",
           {{"cl2dc", CL2DC_VERSION},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__}}}};
}

void finish(const Run& run, Outputs& outputs) {
  const auto path = outputs.add(run.subcommand + ".manifest.json");
  std::ofstream out(path, std::ios::binary);
  out << manifest_json(run, outputs).dump(2) << '\n';
  if (!out) throw ConfigError("cannot write " + path.string());
  outputs.commit();
}

AnnotatedDataset load_input(const fs::path& path, const std::string& role) {
  auto loaded = load_dataset(path);
  if (loaded.excluded)
    std::cerr << role << ": excluded " << loaded.excluded << " sample(s) with missing annotations\n";
  return std::move(loaded.dataset);
}

void require_schema(const Cl2dcParams& params, const AnnotatedDataset& ds) {
  if (params.num_classes() != ds.num_classes() || params.num_experts() != ds.num_experts() ||
      params.classifier.input_dim() != ds.feature_dim())
    throw SchemaError("test data (C=" + std::to_string(ds.num_classes()) + ", M=" +
                      std::to_string(ds.num_experts()) + ", F=" + std::to_string(ds.feature_dim()) +
                      ") does not match the checkpoint");
}

std::string csv_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Subcommands ---------------------------------------------------------------

void cmd_simulate(Run& run, const CommonOptions& opt) {
  const auto data = simulate(run.config);
  const double f = run.config.get_double("dataset.test_fraction");
  const auto [train_set, test_set] = split_dataset(data.dataset, {1.0 - f, f}, run.config.get_uint("dataset.seed"));
  Outputs out(output_dir(opt), {});
  save_dataset(data.dataset, out.add("dataset.jsonl"));
  save_dataset(train_set, out.add("train.jsonl"));
  save_dataset(test_set, out.add("test.jsonl"));
  finish(run, out);
  std::cerr << "simulated " << data.dataset.size() << " samples (" << train_set.size() << " train, "
            << test_set.size() << " test)\n";
}

void cmd_consensus(Run& run, const CommonOptions& opt, const std::string& train_path) {
  run.inputs["train"] = train_path;
  const auto ds = load_input(train_path, "train");
  const auto cc = classifier_config(run.config);
  const auto cons = prepare_consensus(ds, cc, run.config.get_uint("train.seed"));
  Outputs out(output_dir(opt), {train_path});
  save_consensus(cons.results, out.add("consensus.jsonl"));
  save_classifier({cons.classifier, cc}, out.add("classifier.json"));
  finish(run, out);
  const double threshold = run.config.get_double("consensus.quality_threshold");
  const auto kept = std::count_if(cons.results.begin(), cons.results.end(),
                                  [&](const auto& r) { return r.alpha > threshold; });
  std::cerr << "consensus: " << kept << "/" << ds.size() << " samples above quality " << threshold << "\n";
}

void cmd_train(Run& run, const CommonOptions& opt, const std::string& train_path, const std::string& consensus_path,
               const std::string& classifier_path) {
  run.inputs["train"] = train_path;
  const auto ds = load_input(train_path, "train");
  const auto tc = train_config(run.config, ds.num_experts());

  std::vector<ConsensusResult> results;
  DenseNetwork classifier;
  std::vector<fs::path> inputs = {train_path};
  if (!consensus_path.empty()) {
    if (classifier_path.empty()) throw ConfigError("--consensus requires --classifier (the pretrained network)");
    run.inputs["consensus"] = consensus_path;
    run.inputs["classifier"] = classifier_path;
    inputs.insert(inputs.end(), {consensus_path, classifier_path});
    results = align_consensus(ds, load_consensus(consensus_path));
    classifier = load_classifier(classifier_path).network;
  } else {
    auto cons = prepare_consensus(ds, classifier_config(run.config), tc.seed);
    results = std::move(cons.results);
    classifier = std::move(cons.classifier);
  }
  const auto data = filter_by_quality(ds, results, run.config.get_double("consensus.quality_threshold"));

  std::ostringstream log;
  log << epoch_log_header() << '\n';
  const auto result = train(data, tc, std::move(classifier), [&](const EpochLog& e) { log << to_csv(e) << '\n'; });

  Outputs out(output_dir(opt), inputs);
  save_checkpoint({result.params, tc}, out.add("checkpoint.json"));
  out.write("train_log.csv", log.str());
  finish(run, out);
  const auto& last = result.log.back();
  std::cerr << "trained " << tc.epochs << " epochs on " << data.dataset.size() << " samples; final mean g_AI "
            << last.mean_g_ai << ", hard coverage " << last.hard_coverage << "\n";
}

void cmd_eval(Run& run, const CommonOptions& opt, const std::string& checkpoint_path, const std::string& test_path) {
  run.inputs["checkpoint"] = checkpoint_path;
  run.inputs["test"] = test_path;
  const auto ckpt = load_checkpoint(checkpoint_path);
  auto loaded = load_dataset(test_path);
  require_schema(ckpt.params, loaded.dataset);
  auto options = eval_options(run.config);
  options.epsilon = ckpt.config.epsilon;
  options.seed = ckpt.config.seed;
  const auto ev = evaluate_detailed(ckpt.params, loaded.dataset, options);

  const std::size_t m = ckpt.params.num_experts();
  json counts = json::object();
  for (std::size_t o = 0; o < ev.point.option_counts.size(); ++o)
    counts[Decision::from_option(o, m).to_string()] = ev.point.option_counts[o];
  const json summary = {{"epsilon", ev.point.epsilon},  {"seed", ev.point.seed},
                        {"coverage", ev.point.coverage}, {"accuracy", ev.point.accuracy},
                        {"samples", loaded.dataset.size()}, {"excluded", loaded.excluded},
                        {"reference", to_string(options.policy)}, {"option_counts", counts}};

  std::ostringstream preds;
  preds << "id,decision,prediction,reference,p_ai\n";
  for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
    const auto& p = ev.predictions[i];
    preds << loaded.dataset.samples[i].id << ',' << p.decision.to_string() << ',' << p.label << ','
          << ev.reference[i] << ',' << csv_number(p.selection.p_ai) << '\n';
  }

  Outputs out(output_dir(opt), {checkpoint_path, test_path});
  out.write("eval.json", summary.dump(2) + "\n");
  out.write("predictions.csv", preds.str());
  finish(run, out);
  std::cerr << "coverage " << ev.point.coverage << ", accuracy " << ev.point.accuracy << "\n";
}

void cmd_sweep(Run& run, const CommonOptions& opt, const std::string& train_path, const std::string& test_path) {
  if (train_path.empty() != test_path.empty()) throw ConfigError("sweep needs both --train and --test, or neither");
  AnnotatedDataset train_set;
  AnnotatedDataset test_set;
  std::vector<fs::path> inputs;
  if (train_path.empty()) {
    const auto data = simulate(run.config);
    const double f = run.config.get_double("dataset.test_fraction");
    std::tie(train_set, test_set) = split_dataset(data.dataset, {1.0 - f, f}, run.config.get_uint("dataset.seed"));
  } else {
    run.inputs["train"] = train_path;
    run.inputs["test"] = test_path;
    inputs = {train_path, test_path};
    train_set = load_input(train_path, "train");
    test_set = load_input(test_path, "test");
  }
  const auto cfg = sweep_config(run.config, train_set.num_experts());
  const double defer_p = run.config.get_double("eval.random_defer_p");

  std::map<std::string, std::vector<CurvePoint>> baseline_points;
  std::set<std::uint64_t> seen;
  const auto result = sweep(train_set, test_set, cfg, [&](const SweepRun& r) {
    std::cerr << "epsilon " << r.epsilon << " seed " << r.seed << ": coverage " << r.evaluation.point.coverage
              << ", accuracy " << r.evaluation.point.accuracy << "\n";
    if (!seen.insert(r.seed).second) return;
    for (auto& b : baselines(test_set, r.pretrained_classifier, defer_p, r.seed, cfg.policy)) {
      b.point.seed = r.seed;
      baseline_points[b.method].push_back(b.point);
    }
  });

  std::ostringstream curve, summary, base;
  write_curve_csv(curve, result.runs);
  std::vector<std::pair<std::string, double>> rows = {{"cl2dc", result.curve.auacc}};
  base << "method,coverage,accuracy,seed\n";
  for (const auto& [method, points] : baseline_points) {
    double mean = 0.0;
    for (const auto& p : points) {
      mean += p.accuracy;
      base << method << ',' << csv_number(p.coverage) << ',' << csv_number(p.accuracy) << ',' << p.seed << '\n';
    }
    rows.emplace_back(method, mean / static_cast<double>(points.size()));
  }
  write_summary_csv(summary, rows);

  Outputs out(output_dir(opt), inputs);
  out.write("cl2dc_curve.csv", curve.str());
  out.write("summary.csv", summary.str());
  out.write("baselines.csv", base.str());
  finish(run, out);
  std::cerr << "AUACC " << result.curve.auacc << "\n";
}

void cmd_posthoc(Run& run, const CommonOptions& opt, const std::string& checkpoint_path, const std::string& test_path) {
  run.inputs["checkpoint"] = checkpoint_path;
  run.inputs["test"] = test_path;
  const auto ckpt = load_checkpoint(checkpoint_path);
  const auto test = load_input(test_path, "test");
  require_schema(ckpt.params, test);
  const auto policy = reference_policy_from_string(run.config.get("eval.policy"));
  const auto in = posthoc_inputs(ckpt.params, test, policy);
  const auto grid = coverage_grid(run.config.get_double("eval.posthoc_step"));
  const auto curve = posthoc_curve(in.deferral_scores, in.ai_correct, in.coop_correct, grid);
  std::ostringstream csv;
  write_posthoc_csv(csv, curve);
  Outputs out(output_dir(opt), {checkpoint_path, test_path});
  out.write("posthoc.csv", csv.str());
  finish(run, out);
  std::cerr << "post-hoc AUACC " << curve.auacc << "\n";
}

void cmd_plot_data(Run& run, const CommonOptions& opt, const std::string& run_dir) {
  const fs::path dir = run_dir.empty() ? output_dir(opt) : fs::path(run_dir);
  std::vector<fs::path> curves;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename().string().ends_with("_curve.csv")) curves.push_back(e.path());
  Outputs out(output_dir(opt), curves);
  emit_plot_data(dir, out.add("plot_data.csv"));
  finish(run, out);
}

void add_common(CLI::App* app, CommonOptions& opt) {
  app->add_option("-c,--config", opt.config_path, "INI configuration file")->check(CLI::ExistingFile);
  app->add_option("-s,--set", opt.overrides, "Override a config value (section.key=value)");
  app->add_flag("--desk-scale", opt.desk_scale, "Preset: 60 epochs, width 64");
  app->add_option("-o,--out", opt.out_dir, std::string("Output directory (default: $") + kOutDirEnv + " or .)");
}

}  // namespace

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error) || dynamic_cast<const DomainError*>(&error)) return kExitUsage;
  if (dynamic_cast<const TrainingError*>(&error)) return kExitTraining;
  if (dynamic_cast<const ParseError*>(&error) || dynamic_cast<const SchemaError*>(&error) ||
      dynamic_cast<const EvaluationError*>(&error) || dynamic_cast<const InferenceError*>(&error) ||
      dynamic_cast<const ShapeError*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error))
    return kExitData;
  return kExitTraining;
}

void emit_plot_data(const fs::path& run_dir, const fs::path& out_file) {
  std::map<std::string, fs::path> by_method;
  if (fs::is_directory(run_dir)) {
    for (const auto& e : fs::directory_iterator(run_dir)) {
      const std::string name = e.path().filename().string();
      if (!e.is_regular_file() || !name.ends_with("_curve.csv")) continue;
      by_method[name.substr(0, name.size() - std::string("_curve.csv").size())] = e.path();
    }
  }
  if (by_method.empty()) throw ConfigError("no *_curve.csv files in " + run_dir.string());

  std::ostringstream merged;
  merged << "method," << kCurveHeader << '\n';
  for (const auto& [method, path] : by_method) {
    const std::string text = read_bytes(path);
    std::istringstream check(text);
    try {
      read_curve_csv(check);
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what(), e.line());
    }
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) merged << method << ',' << line << '\n';
    }
  }
  std::ofstream out(out_file, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + out_file.string());
  out << merged.str();
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Route each sample to the AI or to a specific expert under a coverage budget"};
  app.set_version_flag("--version", CL2DC_VERSION);
  app.require_subcommand(1);

  CommonOptions opt;
  std::string train_path, test_path, consensus_path, classifier_path, checkpoint_path, run_dir;

  auto* simulate_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset with expert annotations");
  auto* consensus_cmd = app.add_subcommand("consensus", "Pretrain the classifier and compute consensus labels");
  auto* train_cmd = app.add_subcommand("train", "Train classifier, gating model and complementary module");
  auto* eval_cmd = app.add_subcommand("eval", "Route a test set and report coverage and accuracy");
  auto* sweep_cmd = app.add_subcommand("sweep", "Train over the coverage grid and build the accuracy-coverage curve");
  auto* posthoc_cmd = app.add_subcommand("posthoc", "Threshold curve from one trained model's deferral scores");
  auto* plot_cmd = app.add_subcommand("plot-data", "Merge curve CSVs of a run directory for plotting");
  for (auto* sub : {simulate_cmd, consensus_cmd, train_cmd, eval_cmd, sweep_cmd, posthoc_cmd, plot_cmd})
    add_common(sub, opt);

  consensus_cmd->add_option("--train", train_path, "Training dataset (JSON Lines)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--train", train_path, "Training dataset (JSON Lines)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--consensus", consensus_path, "Consensus labels from the consensus subcommand")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--classifier", classifier_path, "Pretrained classifier from the consensus subcommand")
      ->check(CLI::ExistingFile);
  for (auto* sub : {eval_cmd, posthoc_cmd}) {
    sub->add_option("--checkpoint", checkpoint_path, "Trained model")->required()->check(CLI::ExistingFile);
    sub->add_option("--test", test_path, "Test dataset (JSON Lines)")->required()->check(CLI::ExistingFile);
  }
  sweep_cmd->add_option("--train", train_path, "Training dataset (default: simulate from the config)")
      ->check(CLI::ExistingFile);
  sweep_cmd->add_option("--test", test_path, "Test dataset (default: simulate from the config)")
      ->check(CLI::ExistingFile);
  plot_cmd->add_option("--run-dir", run_dir, "Directory holding *_curve.csv files (default: output directory)");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Run run;
    run.argv = args;
    run.config = load_config(opt);
    if (simulate_cmd->parsed()) {
      run.subcommand = "simulate";
      cmd_simulate(run, opt);
    } else if (consensus_cmd->parsed()) {
      run.subcommand = "consensus";
      cmd_consensus(run, opt, train_path);
    } else if (train_cmd->parsed()) {
      run.subcommand = "train";
      cmd_train(run, opt, train_path, consensus_path, classifier_path);
    } else if (eval_cmd->parsed()) {
      run.subcommand = "eval";
      cmd_eval(run, opt, checkpoint_path, test_path);
    } else if (sweep_cmd->parsed()) {
      run.subcommand = "sweep";
      cmd_sweep(run, opt, train_path, test_path);
    } else if (posthoc_cmd->parsed()) {
      run.subcommand = "posthoc";
      cmd_posthoc(run, opt, checkpoint_path, test_path);
    } else {
      run.subcommand = "plot-data";
      cmd_plot_data(run, opt, run_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace cl2dc
