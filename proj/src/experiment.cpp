#include "muvi/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

namespace muvi {

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<std::string> informed_view_names(const MultiViewDataset& dataset, Index n_informed) {
  if (n_informed < 0 || n_informed > dataset.n_views()) {
    throw ConfigError("cannot inform " + std::to_string(n_informed) + " of " +
                      std::to_string(dataset.n_views()) + " views");
  }
  std::vector<std::string> names;
  for (Index m = 0; m < n_informed; ++m) names.push_back(dataset.view(m).name);
  return names;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

}  // namespace

std::string ExperimentCase::label() const {
  std::ostringstream out;
  if (n_informed == 0) {
    out << "uninformed_r" << replicate;
  } else {
    out << "inf" << n_informed << "_noise" << format_double(noise) << "_alpha" << format_double(alpha) << "_r"
        << replicate;
  }
  return out.str();
}

ExperimentSettings ExperimentSettings::benchmark_defaults() {
  ExperimentSettings s;
  s.train.learning_rate = 0.01;
  s.train.final_lr_fraction = 0.1;
  s.train.max_epochs = 40000;
  s.train.min_epochs = s.train.max_epochs;
  return s;
}

double CaseResult::mean_f1(bool matched, bool informed_views) const {
  std::vector<double> f1;
  for (std::size_t m = 0; m < report.views.size(); ++m) {
    if (informed[m] != informed_views) continue;
    f1.push_back(matched ? report.views[m].matched.f1 : report.views[m].unmatched.f1);
  }
  return mean_of(f1);
}

std::uint64_t replicate_seed(std::uint64_t base, Index replicate, std::uint64_t stream) {
  return splitmix(splitmix(base ^ splitmix(static_cast<std::uint64_t>(replicate))) + stream);
}

CaseResult run_case(const ExperimentSettings& settings, const ExperimentCase& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec data_spec = settings.data;
  data_spec.seed = replicate_seed(settings.seed, spec.replicate, 0);
  const SyntheticData synth = generate(data_spec);

  Standardization record;
  const MultiViewDataset data = standardize(synth.dataset, settings.standardize, &record);
  const Index k = data_spec.n_factors;

  PriorScaleMatrix scales;
  const auto informed = informed_view_names(data, spec.n_informed);
  if (informed.empty()) {
    scales = uniform_prior_scales(data, k);
  } else {
    NoiseSpec noise;
    noise.swap_fraction = spec.noise;
    noise.seed = replicate_seed(settings.seed, spec.replicate, 1);
    const auto sets = perturb_feature_sets(synth.truth, synth.dataset, noise, informed);
    scales = build_prior_scales(sets, data, spec.alpha, informed, settings.policy);
  }

  TrainConfig train = settings.train;
  train.seed = replicate_seed(settings.seed, spec.replicate, 2);
  const FitResult fitted = fit(data, scales, k, settings.prior, train);
  const ModelParams est = fitted.params.point_estimate();

  EvaluationOptions options = settings.evaluation;
  options.loading_scales = record.scales;

  CaseResult result;
  result.spec = spec;
  for (Index m = 0; m < data.n_views(); ++m) result.informed.push_back(m < spec.n_informed);
  result.report = evaluate_against_truth(data, est.x, loadings(est), delta_matrix(est), synth.truth.w,
                                         &synth.truth.activity, options);
  result.stop_reason = fitted.trace.stop_reason;
  result.steps = static_cast<Index>(fitted.trace.elbo.size());
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<ExperimentCase> BenchmarkGrid::cases() const {
  if (replicates < 1) throw ConfigError("replicate count must be at least 1");
  std::vector<ExperimentCase> out;
  if (uninformed_baseline) {
    for (Index r = 0; r < replicates; ++r) out.push_back({r, 0.0, 0, 1.0});
  }
  for (Index r = 0; r < replicates; ++r)
    for (Index n : informed)
      for (double nz : noise)
        for (double a : alpha) {
          if (!(nz >= 0.0 && nz <= 1.0)) throw ConfigError("noise fractions must lie in [0, 1]");
          if (!(a > 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
          if (n < 1) throw ConfigError("informed view counts must be positive");
          out.push_back({r, nz, n, a});
        }
  return out;
}

unsigned worker_count() {
  if (const char* env = std::getenv("MUVI_NUM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) throw ConfigError("MUVI_NUM_THREADS must be a positive integer");
    return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<CaseResult> run_cases(const ExperimentSettings& settings,
                                  const std::vector<ExperimentCase>& cases, unsigned workers,
                                  const std::function<void(const CaseResult&)>& on_done) {
  std::vector<CaseResult> results(cases.size());
  std::atomic<std::size_t> next{0};
  std::mutex lock;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= cases.size()) return;
      {
        std::lock_guard guard(lock);
        if (failure) return;
      }
      try {
        CaseResult r = run_case(settings, cases[i]);
        std::lock_guard guard(lock);
        if (on_done) on_done(r);
        results[i] = std::move(r);
      } catch (...) {
        std::lock_guard guard(lock);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(cases.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

nlohmann::json to_json(const CaseResult& r) {
  return {{"replicate", r.spec.replicate},
          {"noise", r.spec.noise},
          {"n_informed", r.spec.n_informed},
          {"alpha", r.spec.alpha},
          {"informed", r.informed},
          {"stop_reason", r.stop_reason},
          {"steps", r.steps},
          {"seconds", r.seconds},
          {"report", to_json(r.report)}};
}

CaseResult case_result_from_json(const nlohmann::json& j) {
  CaseResult r;
  try {
    r.spec.replicate = j.at("replicate").get<Index>();
    r.spec.noise = j.at("noise").get<double>();
    r.spec.n_informed = j.at("n_informed").get<Index>();
    r.spec.alpha = j.at("alpha").get<double>();
    r.informed = j.at("informed").get<std::vector<bool>>();
    r.stop_reason = j.at("stop_reason").get<std::string>();
    r.steps = j.at("steps").get<Index>();
    r.seconds = j.at("seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed case result: ") + e.what());
  }
  r.report = evaluation_report_from_json(j.at("report"));
  return r;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<CaseResult>& results) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "noise,n_informed,alpha,replicate,view,informed,stage,rmse,precision,recall,f1\n";
  for (const auto& r : results) {
    for (std::size_t m = 0; m < r.report.views.size(); ++m) {
      const auto& v = r.report.views[m];
      for (const auto& [stage, s] : {std::pair{"unmatched", v.unmatched}, std::pair{"matched", v.matched}}) {
        out << format_double(r.spec.noise) << ',' << r.spec.n_informed << ',' << format_double(r.spec.alpha) << ','
            << r.spec.replicate << ',' << v.view << ',' << (r.informed[m] ? 1 : 0) << ',' << stage << ','
            << format_double(r.report.rmse.per_view[m]) << ',' << format_double(s.precision) << ','
            << format_double(s.recall) << ',' << format_double(s.f1) << '\n';
      }
    }
  }
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = mean_of(values);
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

void write_table1_csv(const std::filesystem::path& path, const std::vector<CaseResult>& results, double alpha) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "model,n,rmse_mean,rmse_sd,precision_mean,precision_sd,recall_mean,recall_sd,f1_mean,f1_sd\n";
  struct Row {
    const char* name;
    Index n_informed;
    double noise;
  };
  const Row rows[] = {{"uninformed", 0, 0.0}, {"1 inf. view 50%", 1, 0.5}, {"1 inf. view 10%", 1, 0.1},
                      {"3 inf. views 10%", 3, 0.1}};
  for (const auto& row : rows) {
    std::vector<double> rm, p, rc, f;
    for (const auto& r : results) {
      if (r.spec.n_informed != row.n_informed) continue;
      if (row.n_informed > 0 && (std::abs(r.spec.noise - row.noise) > 1e-12 || std::abs(r.spec.alpha - alpha) > 1e-12)) continue;
      rm.push_back(r.report.rmse.mean);
      p.push_back(r.report.mean_matched.precision);
      rc.push_back(r.report.mean_matched.recall);
      f.push_back(r.report.mean_matched.f1);
    }
    if (rm.empty()) continue;
    out << row.name << ',' << rm.size();
    for (const auto& v : {rm, p, rc, f}) {
      const Summary s = summarize(v);
      out << ',' << format_double(s.mean) << ',' << format_double(s.sd);
    }
    out << '\n';
  }
}

void write_alpha_csv(const std::filesystem::path& path, const std::vector<CaseResult>& results) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  std::map<std::tuple<double, double, Index>, std::vector<double>> groups;
  for (const auto& r : results) {
    if (r.spec.n_informed == 0) continue;
    groups[{r.spec.alpha, r.spec.noise, r.spec.n_informed}].push_back(r.report.mean_matched.f1);
  }
  out << "alpha,noise,n_informed,n,f1_mean,f1_sd\n";
  for (const auto& [key, f1] : groups) {
    const Summary s = summarize(f1);
    out << format_double(std::get<0>(key)) << ',' << format_double(std::get<1>(key)) << ',' << std::get<2>(key) << ','
        << s.n << ',' << format_double(s.mean) << ',' << format_double(s.sd) << '\n';
  }
}

}  // namespace muvi
