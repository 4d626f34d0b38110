#pragma once

#include "muvi/data.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace muvi {

struct RmseReport {
  std::vector<double> per_view;
  double mean = 0.0;  ///< views weighted equally
};

/// Root mean squared error of X W^T against the observed entries, per view.
RmseReport rmse(const MultiViewDataset& dataset, const Matrix& x_hat, const std::vector<Matrix>& w_hat);

/// |w| >= threshold marks a loading active.
std::vector<BoolMatrix> binarize_loadings(const std::vector<Matrix>& w_hat, double threshold = 0.1);

struct BinaryScores {
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
  bool no_predictions = false;  ///< precision reported as 1
};

BinaryScores precision_recall_f1(const BoolMatrix& mask_hat, const BoolMatrix& mask_true);

enum class MatchCriterion { f1, abs_cosine };

MatchCriterion parse_match_criterion(const std::string& s);

/// Exact maximum-weight perfect matching of a square score matrix. Returns
/// column[r] for every row r.
std::vector<Index> solve_assignment(const Matrix& score);

struct FactorMatching {
  /// assignment[t] = estimated factor placed in true slot t.
  std::vector<Index> assignment;
  /// +1 / -1 per true slot, sign of the matched columns' dot product.
  Vector signs;
  Matrix score;  ///< true x estimated pair scores
  double total = 0.0;
};

/// Aligns estimated factors to true factors. Scores pair columns
/// concatenated over views, either by F1 of the binarized masks or by
/// absolute cosine similarity of the raw loadings.
FactorMatching match_factors(const std::vector<Matrix>& w_hat, const std::vector<Matrix>& w_true,
                             MatchCriterion criterion = MatchCriterion::f1, double threshold = 0.1);

/// Identity assignment with positive signs.
FactorMatching identity_matching(Index n_factors);

/// Reorders and sign-flips estimated columns into the true slots.
Matrix apply_matching(const Matrix& columns, const FactorMatching& matching);
std::vector<Matrix> apply_matching(const std::vector<Matrix>& columns, const FactorMatching& matching);
/// Reorders columns of a nonnegative per-factor quantity (no sign flip).
Matrix permute_columns(const Matrix& columns, const FactorMatching& matching);

struct PrPoint {
  double threshold;
  double precision;
  double recall;
};

/// Precision/recall of |w| >= t for every t, averaged over views.
std::vector<PrPoint> pr_curve(const std::vector<Matrix>& w_hat, const std::vector<BoolMatrix>& mask_true,
                              const std::vector<double>& thresholds);

std::vector<double> default_pr_thresholds();

enum class R2Mode { pooled, per_feature };

/// M x K matrix of R^2 of each single factor on each centered view,
/// clamped below at 0.
Matrix variance_explained(const MultiViewDataset& dataset, const Matrix& x_hat,
                          const std::vector<Matrix>& w_hat, R2Mode mode = R2Mode::pooled);

/// active iff delta > delta_threshold and R^2 > r2_threshold.
BoolMatrix activity_calls(const Matrix& delta_hat, const Matrix& r2, double delta_threshold = 0.01,
                          double r2_threshold = 0.005);

struct ViewScores {
  std::string view;
  BinaryScores unmatched;
  BinaryScores matched;
};

struct EvaluationReport {
  RmseReport rmse;
  FactorMatching matching;
  std::vector<ViewScores> views;
  BinaryScores mean_unmatched;  ///< per-view scores averaged
  BinaryScores mean_matched;
  std::vector<PrPoint> pr;      ///< after matching
  Matrix r2;                    ///< after matching, M x K
  Matrix delta;                 ///< after matching, M x K
  BoolMatrix activity;          ///< after matching, M x K
  double activity_agreement = 0.0;  ///< fraction of cells equal to the true activity, if known
};

struct EvaluationOptions {
  double threshold = 0.1;
  MatchCriterion criterion = MatchCriterion::f1;
  R2Mode r2_mode = R2Mode::pooled;
  double delta_threshold = 0.01;
  double r2_threshold = 0.005;
  bool pr_curve = false;
  /// Per-view feature multipliers taking `w_hat` to the units of `w_true`
  /// for the loading metrics (matching, P/R/F1, PR curve). RMSE and R^2 use
  /// `w_hat` as given against `dataset`. Empty means no rescaling.
  std::vector<Vector> loading_scales;
};

/// Full report against known loadings. `dataset` is the data the RMSE and
/// R^2 are computed on; `delta_hat` is M x K.
EvaluationReport evaluate_against_truth(const MultiViewDataset& dataset, const Matrix& x_hat,
                                        const std::vector<Matrix>& w_hat, const Matrix& delta_hat,
                                        const std::vector<Matrix>& w_true, const BoolMatrix* true_activity,
                                        const EvaluationOptions& options = {});

BinaryScores mean_scores(const std::vector<BinaryScores>& scores);

nlohmann::json to_json(const EvaluationReport& report);
/// Inverse of to_json; the pair score matrix is not serialized and stays empty.
EvaluationReport evaluation_report_from_json(const nlohmann::json& j);

/// view, stage, rmse, precision, recall, f1
void write_metrics_csv(const std::filesystem::path& path, const EvaluationReport& report);
void write_pr_csv(const std::filesystem::path& path, const std::vector<PrPoint>& pr);

}  // namespace muvi
