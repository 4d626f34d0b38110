#pragma once

// Synthetic benchmark runs: generate a replicate, perturb its feature sets,
// train and score. Used by the `benchmark` command and the acceptance suite.

#include "muvi/evaluation.hpp"
#include "muvi/inference.hpp"
#include "muvi/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace muvi {

/// One cell of the benchmark grid. n_informed = 0 is the uninformed model
/// (all prior scales 1); otherwise the first n_informed views are informed.
struct ExperimentCase {
  Index replicate = 0;
  double noise = 0.0;
  Index n_informed = 0;
  double alpha = 0.03;

  std::string label() const;
};

struct ExperimentSettings {
  SyntheticSpec data;  ///< its seed is replaced per replicate
  std::uint64_t seed = 0;
  StandardizeMode standardize = StandardizeMode::global;
  UninformedPolicy policy = UninformedPolicy::constrain;
  PriorConfig prior;
  TrainConfig train;  ///< its seed is replaced per replicate
  EvaluationOptions evaluation;

  /// Settings used for the synthetic benchmark: paper-scale data, full-batch
  /// training with a decaying step size.
  static ExperimentSettings benchmark_defaults();
};

struct CaseResult {
  ExperimentCase spec;
  std::vector<bool> informed;  ///< per view
  EvaluationReport report;
  std::string stop_reason;
  Index steps = 0;
  double seconds = 0.0;

  /// Matched or unmatched F1 averaged over the informed (or uninformed) views.
  double mean_f1(bool matched, bool informed_views) const;
};

/// Seeds of replicate r are shared by every configuration, so configurations
/// are compared on identical data and initializations.
std::uint64_t replicate_seed(std::uint64_t base, Index replicate, std::uint64_t stream);

CaseResult run_case(const ExperimentSettings& settings, const ExperimentCase& spec);

struct BenchmarkGrid {
  Index replicates = 5;
  std::vector<double> noise = {0.1, 0.2, 0.5, 0.9, 1.0};
  std::vector<Index> informed = {1, 2, 3};
  std::vector<double> alpha = {0.01, 0.03, 0.05, 0.1};
  bool uninformed_baseline = true;

  /// Uninformed baselines first, then the grid in replicate-major order.
  std::vector<ExperimentCase> cases() const;
};

/// Worker count from MUVI_NUM_THREADS, else the hardware concurrency.
unsigned worker_count();

/// Runs every case on `workers` threads. `on_done` is called (serialized)
/// after each case finishes. Results keep the order of `cases`.
std::vector<CaseResult> run_cases(const ExperimentSettings& settings,
                                  const std::vector<ExperimentCase>& cases, unsigned workers,
                                  const std::function<void(const CaseResult&)>& on_done = {});

nlohmann::json to_json(const CaseResult& result);
CaseResult case_result_from_json(const nlohmann::json& j);

/// Long table: one row per case, view and stage with P, R, F1 and RMSE.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<CaseResult>& results);

/// Mean and sd over replicates of RMSE, P, R, F1 for the uninformed model
/// and the (1 view, 50%), (1 view, 10%), (3 views, 10%) settings at `alpha`.
/// Rows whose cases are absent are skipped.
void write_table1_csv(const std::filesystem::path& path, const std::vector<CaseResult>& results,
                      double alpha = 0.03);

/// Matched F1 mean and sd per (alpha, noise, informed views).
void write_alpha_csv(const std::filesystem::path& path, const std::vector<CaseResult>& results);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  ///< sample sd, 0 for a single value
  std::size_t n = 0;
};

Summary summarize(const std::vector<double>& values);

}  // namespace muvi
