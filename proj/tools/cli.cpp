#include "cli.hpp"

#include "muvi/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <optional>
#include <sstream>

namespace muvi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string config_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

std::string option_key(std::string arg) {
  if (arg.rfind("--", 0) != 0) return {};
  arg = arg.substr(2);
  return arg.substr(0, arg.find('='));
}

// Expands `--config FILE` into `--key=value` arguments placed before the
// command-line ones. Keys also given on the command line are dropped, so the
// command line wins. Arrays repeat the option; nested objects are ignored
// unless named after the command.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> rest{args.front()};
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path) return args;
  std::ifstream in(*path);
  if (!in) throw ConfigError("cannot open config file " + *path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  if (j.contains(args.front()) && j[args.front()].is_object()) {
    json merged = j;
    for (const auto& [k, v] : j[args.front()].items()) merged[k] = v;
    j = merged;
  }

  std::set<std::string> given;
  for (std::size_t i = 1; i < rest.size(); ++i) {
    std::string k = option_key(rest[i]);
    std::replace(k.begin(), k.end(), '_', '-');
    if (!k.empty()) given.insert(k);
  }
  std::vector<std::string> out{rest.front()};
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (value.is_object() || value.is_null() || given.count(name)) continue;
    if (value.is_array()) {
      for (const auto& v : value) out.push_back("--" + name + "=" + config_scalar(v));
    } else {
      out.push_back("--" + name + "=" + config_scalar(value));
    }
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& tok : split_list(s)) {
    std::size_t used = 0;
    try {
      if constexpr (std::is_integral_v<T>) {
        out.push_back(static_cast<T>(std::stoll(tok, &used)));
      } else {
        out.push_back(static_cast<T>(std::stod(tok, &used)));
      }
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty()) throw ConfigError(std::string("invalid number '") + tok + "' in " + what);
  }
  if (out.empty()) throw ConfigError(std::string(what) + " is empty");
  return out;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_test";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

// Resolved value of every long option of `app`, including defaults.
json resolved_config(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      if (opt->get_expected_max() > 1 && opt->get_multi_option_policy() != CLI::MultiOptionPolicy::Join) {
        j[name] = opt->results();
      } else {
        j[name] = opt->as<std::string>();
      }
    } else if (opt->get_expected_max() > 1 && opt->get_multi_option_policy() != CLI::MultiOptionPolicy::Join) {
      j[name] = json::array();
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

// Records the resolved configuration and content hashes of inputs and of
// every file written under `dir`.
void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const std::vector<fs::path>& inputs) {
  json in = json::object();
  for (const auto& p : inputs) in[p.string()] = git_blob_sha1(p);
  json out = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) out[fs::relative(p, dir).generic_string()] = git_blob_sha1(p);
  write_json(dir / "manifest.json", {{"command", command}, {"config", config}, {"inputs", in}, {"outputs", out}});
}

json standardization_json(const Standardization& s, const MultiViewDataset& data, StandardizeMode mode) {
  json views = json::array();
  for (Index m = 0; m < data.n_views(); ++m) {
    const auto& c = s.centers[static_cast<std::size_t>(m)];
    const auto& sc = s.scales[static_cast<std::size_t>(m)];
    views.push_back({{"view", data.view(m).name},
                     {"centers", std::vector<double>(c.data(), c.data() + c.size())},
                     {"scales", std::vector<double>(sc.data(), sc.data() + sc.size())}});
  }
  return {{"mode", to_string(mode)}, {"views", views}};
}

std::vector<std::string> factor_labels(Index k) {
  std::vector<std::string> out;
  for (Index f = 0; f < k; ++f) out.push_back("factor_" + std::to_string(f));
  return out;
}

// Options shared by several commands.

struct SyntheticOptions {
  SyntheticSpec spec;
  void add(CLI::App& app) {
    app.add_option("--n-samples", spec.n_samples, "Samples")->check(CLI::PositiveNumber);
    app.add_option("--n-features", spec.n_features, "Features per view")->check(CLI::PositiveNumber);
    app.add_option("--n-views", spec.n_views, "Views")->check(CLI::PositiveNumber);
    app.add_option("--n-factors", spec.n_factors, "Latent factors")->check(CLI::PositiveNumber);
    app.add_option("--zero-min", spec.zero_fraction_min, "Smallest fraction of zero loadings");
    app.add_option("--zero-max", spec.zero_fraction_max, "Largest fraction of zero loadings");
    app.add_option("--noise-sd", spec.noise_sd, "Residual noise sd");
  }
};

struct PerturbOptions {
  double noise = 0.0;
  std::string informed_views;
  Index false_positives = -1;
  void add(CLI::App& app) {
    app.add_option("--noise", noise, "Fraction of each feature set replaced by false positives")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--informed-views", informed_views, "Comma-separated informed views")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
    app.add_option("--false-positives", false_positives,
                   "Features added to inactive (view, factor) sets; -1 uses the median set size");
  }
  NoiseSpec noise_spec(std::uint64_t seed) const {
    NoiseSpec n;
    n.swap_fraction = noise;
    if (false_positives >= 0) n.false_positive_count_inactive = false_positives;
    n.seed = seed;
    return n;
  }
};

struct PriorOptions {
  PriorConfig prior;
  std::string slab_mode = "sd";
  void add(CLI::App& app) {
    app.add_option("--noise-shape", prior.noise_shape, "Inverse-Gamma shape of the noise variances");
    app.add_option("--noise-scale", prior.noise_scale, "Inverse-Gamma scale of the noise variances");
    app.add_option("--slab-shape", prior.slab_shape, "Inverse-Gamma shape of the slab widths");
    app.add_option("--slab-scale", prior.slab_scale, "Inverse-Gamma scale of the slab widths");
    app.add_option("--slab-alpha", slab_mode, "Whether alpha multiplies the slab sd or its square")
        ->check(CLI::IsMember({"sd", "variance"}));
  }
  PriorConfig resolve() const {
    PriorConfig p = prior;
    p.scale_slab_sd = slab_mode == "sd";
    p.validate();
    return p;
  }
};

struct TrainOptions {
  TrainConfig train;
  void add(CLI::App& app) {
    app.add_option("--lr", train.learning_rate, "Adam step size");
    app.add_option("--final-lr-fraction", train.final_lr_fraction,
                   "Step size at the last epoch relative to --lr (exponential decay)");
    app.add_option("--batch-size", train.batch_size, "Minibatch size (clamped to N)");
    app.add_option("--max-epochs", train.max_epochs, "Epoch limit");
    app.add_option("--min-epochs", train.min_epochs, "Epochs before convergence checks start");
    app.add_option("--mc-samples", train.mc_samples, "Monte Carlo draws per step");
    app.add_option("--patience", train.patience, "Failed checks before stopping");
    app.add_option("--rel-tol", train.rel_tol, "Relative smoothed-ELBO gain counted as progress");
    app.add_option("--check-every", train.check_every, "Epochs between convergence checks");
    app.add_option("--smoothing", train.smoothing, "EMA weight of the smoothed ELBO");
  }
};

struct EvalOptions {
  EvaluationOptions eval;
  std::string criterion = "f1";
  std::string r2_mode = "pooled";
  void add(CLI::App& app) {
    app.add_option("--threshold", eval.threshold, "Loading magnitude counted as active");
    app.add_option("--criterion", criterion, "Factor matching score")->check(CLI::IsMember({"f1", "abs_cosine"}));
    app.add_option("--r2-mode", r2_mode, "R^2 denominator")->check(CLI::IsMember({"pooled", "per_feature"}));
    app.add_option("--delta-threshold", eval.delta_threshold, "Factor scale above which a factor may be active");
    app.add_option("--r2-threshold", eval.r2_threshold, "R^2 above which a factor may be active");
    app.add_flag("--pr-curve", eval.pr_curve, "Write the precision-recall sweep");
  }
  EvaluationOptions resolve() const {
    EvaluationOptions e = eval;
    if (!(e.threshold > 0)) throw ConfigError("threshold must be positive");
    e.criterion = parse_match_criterion(criterion);
    e.r2_mode = r2_mode == "pooled" ? R2Mode::pooled : R2Mode::per_feature;
    return e;
  }
};

// generate

struct GenerateCommand {
  SyntheticOptions synth;
  PerturbOptions perturb;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    synth.add(app);
    perturb.add(app);
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--out", out, "Output directory")->required();
  }

  void run(const CLI::App& app) const {
    const fs::path dir(out);
    prepare_output_dir(dir);
    SyntheticSpec spec = synth.spec;
    spec.seed = seed;
    const SyntheticData data = generate(spec);
    save_dataset(data.dataset, dir / "data");
    save_truth(data.truth, data.dataset, dir / "truth");
    const auto informed = split_list(perturb.informed_views);
    if (!informed.empty()) {
      const auto sets = perturb_feature_sets(data.truth, data.dataset, perturb.noise_spec(replicate_seed(seed, 0, 1)), informed);
      save_feature_sets(sets, dir / "feature_sets.tsv");
    }
    write_manifest(dir, "generate", resolved_config(app), {});

    Index active = 0;
    Index cells = 0;
    for (const auto& m : data.truth.mask) {
      active += m.count();
      cells += m.size();
    }
    std::cout << "samples " << spec.n_samples << ", views " << spec.n_views << " x " << spec.n_features
              << " features, factors " << spec.n_factors << '\n'
              << "loading sparsity " << std::fixed << std::setprecision(3)
              << 1.0 - static_cast<double>(active) / static_cast<double>(cells) << ", noise sd " << spec.noise_sd
              << std::defaultfloat << std::setprecision(6) << '\n';
    if (!informed.empty()) {
      std::cout << "feature sets for " << perturb.informed_views << " with noise fraction " << perturb.noise << '\n';
    }
    std::cout << "wrote " << dir.string() << '\n';
  }
};

// train

struct TrainCommand {
  std::vector<std::string> views;
  bool synthetic = false;
  SyntheticOptions synth;
  PerturbOptions perturb;
  std::string missing_token = "NaN";
  std::string feature_sets;
  Index min_set_size = 15;
  Index factors = 0;
  double alpha_absent = 0.03;
  std::string policy = "constrain";
  Index dense_factors = 0;
  std::string standardize_mode = "global";
  PriorOptions prior;
  TrainOptions train;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--view", views, "View as NAME=PATH to a CSV file; repeat per view");
    app.add_flag("--synthetic", synthetic, "Train on generated data instead of --view files");
    synth.add(app);
    perturb.add(app);
    app.add_option("--missing-token", missing_token, "Cell text marking a missing value");
    app.add_option("--feature-sets", feature_sets, "Tab-separated feature-set file");
    app.add_option("--min-set-size", min_set_size, "Smallest retained feature-set overlap");
    app.add_option("--factors", factors, "Factors without a feature-set file");
    app.add_option("--alpha-absent", alpha_absent, "Prior scale of loadings outside their set")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--policy", policy, "Uninformed-view prior scales")->check(CLI::IsMember({"constrain", "free"}));
    app.add_option("--dense-factors", dense_factors, "Extra unannotated factors");
    app.add_option("--standardize", standardize_mode, "Preprocessing")
        ->check(CLI::IsMember({"global", "per_feature", "center_only", "none"}));
    prior.add(app);
    train.add(app);
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--out", out, "Run directory")->required();
  }

  void run(const CLI::App& app) const {
    if (synthetic == !views.empty()) throw ConfigError("give either --view files or --synthetic");
    const fs::path dir(out);
    prepare_output_dir(dir);
    std::vector<fs::path> inputs;

    MultiViewDataset raw;
    std::optional<SyntheticData> synth_data;
    std::vector<ViewFile> files;
    if (synthetic) {
      SyntheticSpec spec = synth.spec;
      spec.seed = replicate_seed(seed, 0, 0);
      synth_data = generate(spec);
      raw = synth_data->dataset;
      files = save_dataset(raw, dir / "data");
      save_truth(synth_data->truth, raw, dir / "truth");
    } else {
      for (const auto& v : views) {
        const auto eq = v.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--view expects NAME=PATH, got '" + v + "'");
        files.push_back({v.substr(0, eq), fs::path(v.substr(eq + 1))});
        inputs.push_back(files.back().path);
      }
      raw = load_dataset(files, missing_token);
    }

    const StandardizeMode mode = parse_standardize_mode(standardize_mode);
    Standardization record;
    const MultiViewDataset data = standardize(raw, mode, &record);

    auto informed = split_list(perturb.informed_views);
    for (const auto& name : informed) {
      if (!data.view_index(name)) throw ConfigError("unknown informed view '" + name + "'");
    }
    std::optional<FeatureSetCollection> sets;
    if (!feature_sets.empty()) {
      sets = load_feature_sets(feature_sets, data, static_cast<std::size_t>(std::max<Index>(min_set_size, 0)));
      inputs.push_back(feature_sets);
      if (sets->dropped_features > 0) {
        std::cerr << "warning: " << sets->dropped_features << " feature-set members are not in the dataset\n";
      }
    } else if (synthetic && !informed.empty()) {
      sets = perturb_feature_sets(synth_data->truth, raw, perturb.noise_spec(replicate_seed(seed, 0, 1)), informed);
      save_feature_sets(*sets, dir / "feature_sets.tsv");
    }

    PriorScaleMatrix scales;
    std::vector<std::string> names;
    if (sets) {
      if (informed.empty()) informed = data.view_names();
      scales = build_prior_scales(*sets, data, alpha_absent, informed, parse_uninformed_policy(policy), dense_factors);
      names = sets->factor_names;
      for (Index d = 0; d < dense_factors; ++d) names.push_back("dense_" + std::to_string(d));
    } else {
      const Index k = factors > 0 ? factors : (synthetic ? synth.spec.n_factors : 0);
      if (k < 1) throw ConfigError("--factors is required without feature sets");
      scales = uniform_prior_scales(data, k);
      names = factor_labels(k);
    }

    TrainConfig tc = train.train;
    tc.seed = replicate_seed(seed, 0, 2);
    const FitResult result = fit(data, scales, scales.n_factors(), prior.resolve(), tc);
    const ModelParams est = result.params.point_estimate();

    save_checkpoint(dir / "checkpoint.json", result.params, result.optimizer);
    write_training_log(dir / "training_log.csv", result.trace);
    write_matrix_csv(dir / "factors.csv", est.x, data.sample_ids(), names, "sample_id");
    write_matrix_csv(dir / "delta.csv", delta_matrix(est), data.view_names(), names, "view");
    for (Index m = 0; m < data.n_views(); ++m) {
      const auto& v = data.view(m);
      write_matrix_csv(dir / ("loadings_" + v.name + ".csv"), est.views[static_cast<std::size_t>(m)].w,
                       v.feature_names, names, "feature");
    }
    json view_files = json::array();
    for (const auto& f : files) {
      view_files.push_back({{"view", f.view_name}, {"path", fs::absolute(f.path).string()}});
    }
    write_json(dir / "run.json", {{"views", view_files},
                                  {"missing_token", missing_token},
                                  {"factor_names", names},
                                  {"standardization", standardization_json(record, data, mode)},
                                  {"stop_reason", result.trace.stop_reason},
                                  {"epochs", result.trace.epochs},
                                  {"steps", result.trace.elbo.size()},
                                  {"final_elbo", result.trace.smoothed.back()}});
    write_manifest(dir, "train", resolved_config(app), inputs);
    std::cout << "stopped (" << result.trace.stop_reason << ") after " << result.trace.epochs
              << " epochs, smoothed ELBO " << result.trace.smoothed.back() << '\n'
              << "wrote " << dir.string() << '\n';
  }
};

// evaluate

struct EvaluateCommand {
  std::string run_dir;
  std::string checkpoint;
  std::string truth;
  EvalOptions eval;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--run", run_dir, "Run directory written by train")->required();
    app.add_option("--checkpoint", checkpoint, "Checkpoint (defaults to the run's)");
    app.add_option("--truth", truth, "Directory of true loadings (defaults to the run's truth/ if present)");
    eval.add(app);
    app.add_option("--out", out, "Report directory (defaults to <run>/evaluation)");
  }

  void run(const CLI::App& app) const {
    const fs::path run_path(run_dir);
    const json meta = read_json(run_path / "run.json");
    std::vector<ViewFile> files;
    for (const auto& v : meta.at("views")) files.push_back({v.at("view").get<std::string>(), v.at("path").get<std::string>()});
    const MultiViewDataset raw = load_dataset(files, meta.at("missing_token").get<std::string>());
    const StandardizeMode mode = parse_standardize_mode(meta.at("standardization").at("mode").get<std::string>());
    Standardization record;
    const MultiViewDataset data = standardize(raw, mode, &record);

    const fs::path ckpt = checkpoint.empty() ? run_path / "checkpoint.json" : fs::path(checkpoint);
    const Checkpoint loaded = load_checkpoint(ckpt);
    const ModelParams est = loaded.params.point_estimate();
    check_params(est, data);
    const auto names = meta.at("factor_names").get<std::vector<std::string>>();

    const fs::path dir = out.empty() ? run_path / "evaluation" : fs::path(out);
    prepare_output_dir(dir);
    std::vector<fs::path> inputs{ckpt};
    for (const auto& f : files) inputs.push_back(f.path);

    EvaluationOptions options = eval.resolve();
    const fs::path truth_dir = !truth.empty() ? fs::path(truth) : run_path / "truth";
    const bool have_truth = fs::exists(truth_dir / "truth.json");
    if (!truth.empty() && !have_truth) throw ConfigError("no truth.json under " + truth_dir.string());

    if (have_truth) {
      const SyntheticTruth t = load_truth(truth_dir, raw);
      if (t.x.cols() != est.n_factors()) {
        throw ConfigError("model has " + std::to_string(est.n_factors()) + " factors, truth has " +
                          std::to_string(t.x.cols()));
      }
      inputs.push_back(truth_dir / "truth.json");
      options.loading_scales = record.scales;
      const auto report = evaluate_against_truth(data, est.x, loadings(est), delta_matrix(est), t.w, &t.activity, options);
      write_json(dir / "report.json", to_json(report));
      write_metrics_csv(dir / "metrics.csv", report);
      const auto labels = factor_labels(est.n_factors());
      write_matrix_csv(dir / "delta_matched.csv", report.delta, data.view_names(), labels, "view");
      write_matrix_csv(dir / "r2_matched.csv", report.r2, data.view_names(), labels, "view");
      write_matrix_csv(dir / "activity_matched.csv", report.activity.cast<double>(), data.view_names(), labels, "view");
      if (options.pr_curve) write_pr_csv(dir / "pr_curve.csv", report.pr);
      std::cout << "rmse " << report.rmse.mean << ", unmatched F1 " << report.mean_unmatched.f1 << ", matched P/R/F1 "
                << report.mean_matched.precision << '/' << report.mean_matched.recall << '/' << report.mean_matched.f1
                << ", activity agreement " << report.activity_agreement << '\n';
    } else {
      const auto r = rmse(data, est.x, loadings(est));
      const Matrix r2 = variance_explained(data, est.x, loadings(est), options.r2_mode);
      const Matrix delta = delta_matrix(est);
      const BoolMatrix active = activity_calls(delta, r2, options.delta_threshold, options.r2_threshold);
      write_json(dir / "report.json", {{"rmse", {{"per_view", r.per_view}, {"mean", r.mean}}},
                                       {"r2", matrix_json(r2)},
                                       {"delta", matrix_json(delta)},
                                       {"activity", matrix_json(active.cast<double>())}});
      write_matrix_csv(dir / "delta.csv", delta, data.view_names(), names, "view");
      write_matrix_csv(dir / "r2.csv", r2, data.view_names(), names, "view");
      write_matrix_csv(dir / "activity.csv", active.cast<double>(), data.view_names(), names, "view");
      std::cout << "rmse " << r.mean << ", active (view, factor) pairs " << active.count() << '\n';
    }
    write_manifest(dir, "evaluate", resolved_config(app), inputs);
    std::cout << "wrote " << dir.string() << '\n';
  }
};

// benchmark

struct BenchmarkCommand {
  ExperimentSettings defaults = ExperimentSettings::benchmark_defaults();
  SyntheticOptions synth{defaults.data};
  PriorOptions prior{defaults.prior};
  TrainOptions train{defaults.train};
  EvalOptions eval;
  Index replicates = 5;
  std::string grid_noise = "0.1,0.2,0.5,0.9,1.0";
  std::string grid_informed = "1,2,3";
  std::string grid_alpha = "0.01,0.03,0.05,0.1";
  bool no_baseline = false;
  double table_alpha = 0.03;
  std::string standardize_mode = "global";
  std::string policy = "constrain";
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    synth.add(app);
    prior.add(app);
    train.add(app);
    eval.add(app);
    app.add_option("--replicates", replicates, "Replicates per configuration")->check(CLI::PositiveNumber);
    app.add_option("--grid-noise", grid_noise, "Comma-separated noise fractions")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
    app.add_option("--grid-informed", grid_informed, "Comma-separated informed view counts")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
    app.add_option("--grid-alpha", grid_alpha, "Comma-separated alpha values")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
    app.add_flag("--no-baseline", no_baseline, "Skip the uninformed runs");
    app.add_option("--table-alpha", table_alpha, "Alpha of the summary table rows");
    app.add_option("--standardize", standardize_mode, "Preprocessing")
        ->check(CLI::IsMember({"global", "per_feature", "center_only", "none"}));
    app.add_option("--policy", policy, "Uninformed-view prior scales")->check(CLI::IsMember({"constrain", "free"}));
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--out", out, "Output directory")->required();
  }

  void run(const CLI::App& app) const {
    const fs::path dir(out);
    prepare_output_dir(dir);
    fs::create_directories(dir / "cases");

    ExperimentSettings settings;
    settings.data = synth.spec;
    settings.seed = seed;
    settings.standardize = parse_standardize_mode(standardize_mode);
    settings.policy = parse_uninformed_policy(policy);
    settings.prior = prior.resolve();
    settings.train = train.train;
    settings.train.validate();
    settings.evaluation = eval.resolve();

    BenchmarkGrid grid;
    grid.replicates = replicates;
    grid.noise = parse_numbers<double>(grid_noise, "--grid-noise");
    grid.informed = parse_numbers<Index>(grid_informed, "--grid-informed");
    grid.alpha = parse_numbers<double>(grid_alpha, "--grid-alpha");
    grid.uninformed_baseline = !no_baseline;
    for (Index n : grid.informed) {
      if (n > settings.data.n_views) throw ConfigError("cannot inform more views than --n-views");
    }
    const auto cases = grid.cases();
    const unsigned workers = worker_count();
    std::cout << cases.size() << " runs on " << workers << " worker(s)\n";

    std::size_t done = 0;
    const auto results = run_cases(settings, cases, workers, [&](const CaseResult& r) {
      write_json(dir / "cases" / (r.spec.label() + ".json"), to_json(r));
      std::cout << '[' << ++done << '/' << cases.size() << "] " << r.spec.label() << ": matched F1 "
                << r.report.mean_matched.f1 << ", rmse " << r.report.rmse.mean << " (" << std::fixed
                << std::setprecision(1) << r.seconds << " s)" << std::defaultfloat << std::setprecision(6) << '\n';
    });

    // Merge from the per-case files so the tables reflect what is on disk.
    std::vector<CaseResult> merged;
    for (const auto& c : cases) merged.push_back(case_result_from_json(read_json(dir / "cases" / (c.label() + ".json"))));
    write_sweep_csv(dir / "sweep.csv", merged);
    write_table1_csv(dir / "table1.csv", merged, table_alpha);
    write_alpha_csv(dir / "alpha.csv", merged);
    (void)results;
    write_manifest(dir, "benchmark", resolved_config(app), {});
    std::cout << "wrote " << dir.string() << '\n';
  }
};

}  // namespace

std::string git_blob_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  const std::string header = "blob " + std::to_string(content.size()) + '\0';

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool good = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!good) throw std::runtime_error("SHA-1 computation failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Multi-view factor analysis with feature-set informed sparsity priors", "muvi"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenerateCommand generate_cmd;
  TrainCommand train_cmd;
  EvaluateCommand evaluate_cmd;
  BenchmarkCommand benchmark_cmd;

  std::string config_path;
  auto setup = [&](const char* name, const char* about, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, about);
    sub->add_option("--config", config_path, "JSON file supplying any option; the command line takes precedence");
    cmd.add(*sub);
    return sub;
  };
  CLI::App* generate_app = setup("generate", "Write a synthetic dataset, its truth and perturbed feature sets", generate_cmd);
  CLI::App* train_app = setup("train", "Fit the model and write a run directory", train_cmd);
  CLI::App* evaluate_app = setup("evaluate", "Score a trained run", evaluate_cmd);
  CLI::App* benchmark_app = setup("benchmark", "Run the synthetic benchmark grid", benchmark_cmd);

  try {
    std::vector<std::string> expanded = expand_config(args);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_error;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return config_error;
  }

  try {
    if (generate_app->parsed()) generate_cmd.run(*generate_app);
    if (train_app->parsed()) train_cmd.run(*train_app);
    if (evaluate_app->parsed()) evaluate_cmd.run(*evaluate_app);
    if (benchmark_app->parsed()) benchmark_cmd.run(*benchmark_app);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return config_error;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical_error;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return failure;
  }
  return ok;
}

}  // namespace muvi::cli
