#include "muvi/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace muvi {

namespace {

void check_views(const MultiViewDataset& dataset, const Matrix& x_hat, const std::vector<Matrix>& w_hat) {
  if (static_cast<Index>(w_hat.size()) != dataset.n_views()) throw ConfigError("loadings have the wrong number of views");
  if (x_hat.rows() != dataset.n_samples()) throw ConfigError("factor scores have the wrong number of rows");
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& w = w_hat[static_cast<std::size_t>(m)];
    if (w.rows() != dataset.view(m).n_features() || w.cols() != x_hat.cols()) {
      throw ConfigError("loadings of view " + dataset.view(m).name + " have the wrong shape");
    }
  }
}

Matrix stack(const std::vector<Matrix>& blocks) {
  Index rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  Matrix out(rows, blocks.empty() ? 0 : blocks.front().cols());
  Index r = 0;
  for (const auto& b : blocks) {
    out.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return out;
}

double f1_of(Index tp, Index predicted, Index actual) {
  if (predicted == 0 && actual == 0) return 1.0;
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + actual);
}

}  // namespace

RmseReport rmse(const MultiViewDataset& dataset, const Matrix& x_hat, const std::vector<Matrix>& w_hat) {
  check_views(dataset, x_hat, w_hat);
  RmseReport out;
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& v = dataset.view(m);
    const Index n_obs = v.n_observed();
    if (n_obs == 0) throw ConfigError("view " + v.name + " has no observed entries");
    const Matrix resid =
        (v.data - x_hat * w_hat[static_cast<std::size_t>(m)].transpose()).cwiseProduct(v.mask.cast<double>());
    out.per_view.push_back(std::sqrt(resid.squaredNorm() / static_cast<double>(n_obs)));
  }
  for (double r : out.per_view) out.mean += r;
  out.mean /= static_cast<double>(out.per_view.size());
  return out;
}

std::vector<BoolMatrix> binarize_loadings(const std::vector<Matrix>& w_hat, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("binarization threshold must be positive");
  std::vector<BoolMatrix> out;
  for (const auto& w : w_hat) out.push_back(w.array().abs() >= threshold);
  return out;
}

BinaryScores precision_recall_f1(const BoolMatrix& mask_hat, const BoolMatrix& mask_true) {
  if (mask_hat.rows() != mask_true.rows() || mask_hat.cols() != mask_true.cols()) {
    throw ConfigError("masks differ in shape");
  }
  const Index tp = (mask_hat.array() && mask_true.array()).count();
  const Index predicted = mask_hat.count();
  const Index actual = mask_true.count();
  BinaryScores s;
  s.no_predictions = predicted == 0;
  s.precision = predicted == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted);
  s.recall = actual == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(actual);
  s.f1 = f1_of(tp, predicted, actual);
  return s;
}

MatchCriterion parse_match_criterion(const std::string& s) {
  if (s == "f1") return MatchCriterion::f1;
  if (s == "abs_cosine" || s == "cosine") return MatchCriterion::abs_cosine;
  throw ConfigError("unknown matching criterion '" + s + "'");
}

std::vector<Index> solve_assignment(const Matrix& score) {
  // Shortest augmenting path with potentials (Kuhn-Munkres / Jonker-Volgenant
  // family), minimizing -score. 1-based internally.
  const Index n = score.rows();
  if (score.cols() != n) throw ConfigError("assignment needs a square score matrix");
  if (!score.allFinite()) throw NumericalError("assignment scores must be finite");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  auto cost = [&](Index i, Index j) { return -score(i - 1, j - 1); };
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> column(static_cast<std::size_t>(n), 0);
  for (Index j = 1; j <= n; ++j) column[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return column;
}

FactorMatching identity_matching(Index n_factors) {
  FactorMatching m;
  for (Index k = 0; k < n_factors; ++k) m.assignment.push_back(k);
  m.signs = Vector::Ones(n_factors);
  m.score = Matrix::Zero(n_factors, n_factors);
  return m;
}

FactorMatching match_factors(const std::vector<Matrix>& w_hat, const std::vector<Matrix>& w_true,
                             MatchCriterion criterion, double threshold) {
  if (w_hat.size() != w_true.size()) throw ConfigError("loadings have different numbers of views");
  const Matrix hat = stack(w_hat);
  const Matrix tru = stack(w_true);
  if (hat.cols() != tru.cols()) {
    throw ConfigError("factor count mismatch: " + std::to_string(hat.cols()) + " estimated vs " +
                      std::to_string(tru.cols()) + " true");
  }
  if (hat.rows() != tru.rows()) throw ConfigError("loadings have different numbers of features");
  const Index k = tru.cols();

  FactorMatching m;
  m.score.resize(k, k);
  if (criterion == MatchCriterion::f1) {
    const BoolMatrix bh = hat.array().abs() >= threshold;
    const BoolMatrix bt = tru.array().abs() >= threshold;
    const Matrix bhd = bh.cast<double>(), btd = bt.cast<double>();
    const Matrix overlap = btd.transpose() * bhd;
    for (Index t = 0; t < k; ++t)
      for (Index h = 0; h < k; ++h)
        m.score(t, h) = f1_of(static_cast<Index>(overlap(t, h)), bh.col(h).count(), bt.col(t).count());
  } else {
    const Vector nh = hat.colwise().norm();
    const Vector nt = tru.colwise().norm();
    const Matrix dots = tru.transpose() * hat;
    for (Index t = 0; t < k; ++t)
      for (Index h = 0; h < k; ++h) {
        const double denom = nt(t) * nh(h);
        m.score(t, h) = denom > 0 ? std::abs(dots(t, h)) / denom : 0.0;
      }
  }
  m.assignment = solve_assignment(m.score);
  m.signs.resize(k);
  for (Index t = 0; t < k; ++t) {
    const Index h = m.assignment[static_cast<std::size_t>(t)];
    m.signs(t) = tru.col(t).dot(hat.col(h)) < 0 ? -1.0 : 1.0;
    m.total += m.score(t, h);
  }
  return m;
}

Matrix apply_matching(const Matrix& columns, const FactorMatching& matching) {
  Matrix out(columns.rows(), columns.cols());
  for (Index t = 0; t < columns.cols(); ++t) {
    out.col(t) = matching.signs(t) * columns.col(matching.assignment[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<Matrix> apply_matching(const std::vector<Matrix>& columns, const FactorMatching& matching) {
  std::vector<Matrix> out;
  for (const auto& c : columns) out.push_back(apply_matching(c, matching));
  return out;
}

Matrix permute_columns(const Matrix& columns, const FactorMatching& matching) {
  Matrix out(columns.rows(), columns.cols());
  for (Index t = 0; t < columns.cols(); ++t) out.col(t) = columns.col(matching.assignment[static_cast<std::size_t>(t)]);
  return out;
}

std::vector<PrPoint> pr_curve(const std::vector<Matrix>& w_hat, const std::vector<BoolMatrix>& mask_true,
                              const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigError("threshold grid must be nonempty");
  if (w_hat.size() != mask_true.size() || w_hat.empty()) throw ConfigError("loadings and masks differ in views");
  std::vector<PrPoint> out;
  for (double t : thresholds) {
    PrPoint p{t, 0.0, 0.0};
    for (std::size_t m = 0; m < w_hat.size(); ++m) {
      const BoolMatrix hat = w_hat[m].array().abs() >= t;
      const auto s = precision_recall_f1(hat, mask_true[m]);
      p.precision += s.precision;
      p.recall += s.recall;
    }
    p.precision /= static_cast<double>(w_hat.size());
    p.recall /= static_cast<double>(w_hat.size());
    out.push_back(p);
  }
  return out;
}

std::vector<double> default_pr_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(0.005 * i);
  return t;
}

Matrix variance_explained(const MultiViewDataset& dataset, const Matrix& x_hat,
                          const std::vector<Matrix>& w_hat, R2Mode mode) {
  check_views(dataset, x_hat, w_hat);
  const Index k = x_hat.cols();
  Matrix r2 = Matrix::Zero(dataset.n_views(), k);
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& v = dataset.view(m);
    const Matrix obs = v.mask.cast<double>();
    const Vector counts = obs.colwise().sum().transpose();
    Vector means = Vector::Zero(v.n_features());
    for (Index j = 0; j < v.n_features(); ++j)
      if (counts(j) > 0) means(j) = v.data.col(j).sum() / counts(j);
    const Matrix y = (v.data.rowwise() - means.transpose()).cwiseProduct(obs);
    const Vector denom = y.colwise().squaredNorm().transpose();
    if (denom.sum() == 0.0) throw NumericalError("view " + v.name + " has zero variance");
    const auto& w = w_hat[static_cast<std::size_t>(m)];
    for (Index f = 0; f < k; ++f) {
      const Matrix resid = (y - x_hat.col(f) * w.col(f).transpose()).cwiseProduct(obs);
      double value = 0.0;
      if (mode == R2Mode::pooled) {
        value = 1.0 - resid.squaredNorm() / denom.sum();
      } else {
        const Vector num = resid.colwise().squaredNorm().transpose();
        Index used = 0;
        for (Index j = 0; j < v.n_features(); ++j) {
          if (denom(j) <= 0.0) continue;
          value += 1.0 - num(j) / denom(j);
          ++used;
        }
        value = used ? value / static_cast<double>(used) : 0.0;
      }
      r2(m, f) = std::max(0.0, value);
    }
  }
  return r2;
}

BoolMatrix activity_calls(const Matrix& delta_hat, const Matrix& r2, double delta_threshold,
                          double r2_threshold) {
  if (delta_hat.rows() != r2.rows() || delta_hat.cols() != r2.cols()) {
    throw ConfigError("factor scales and R^2 differ in shape");
  }
  if (delta_threshold < 0 || r2_threshold < 0) throw ConfigError("thresholds must be nonnegative");
  return (delta_hat.array() > delta_threshold) && (r2.array() > r2_threshold);
}

BinaryScores mean_scores(const std::vector<BinaryScores>& scores) {
  BinaryScores out{0.0, 0.0, 0.0, false};
  if (scores.empty()) return out;
  for (const auto& s : scores) {
    out.precision += s.precision;
    out.recall += s.recall;
    out.f1 += s.f1;
    out.no_predictions = out.no_predictions || s.no_predictions;
  }
  const double n = static_cast<double>(scores.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

EvaluationReport evaluate_against_truth(const MultiViewDataset& dataset, const Matrix& x_hat,
                                        const std::vector<Matrix>& w_hat, const Matrix& delta_hat,
                                        const std::vector<Matrix>& w_true, const BoolMatrix* true_activity,
                                        const EvaluationOptions& options) {
  check_views(dataset, x_hat, w_hat);
  std::vector<Matrix> w_units = w_hat;
  if (!options.loading_scales.empty()) {
    if (options.loading_scales.size() != w_hat.size()) throw ConfigError("loading scales need one vector per view");
    for (std::size_t m = 0; m < w_hat.size(); ++m) {
      if (options.loading_scales[m].size() != w_hat[m].rows()) throw ConfigError("loading scales have the wrong length");
      w_units[m] = w_hat[m].array().colwise() * options.loading_scales[m].array();
    }
  }
  EvaluationReport report;
  report.rmse = rmse(dataset, x_hat, w_hat);
  report.matching = match_factors(w_units, w_true, options.criterion, options.threshold);

  const auto w_matched = apply_matching(w_units, report.matching);
  const Matrix x_matched = apply_matching(x_hat, report.matching);
  const auto bin_raw = binarize_loadings(w_units, options.threshold);
  const auto bin_matched = binarize_loadings(w_matched, options.threshold);
  const auto bin_true = binarize_loadings(w_true, options.threshold);

  std::vector<BinaryScores> raw_scores, matched_scores;
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto i = static_cast<std::size_t>(m);
    ViewScores vs{dataset.view(m).name, precision_recall_f1(bin_raw[i], bin_true[i]),
                  precision_recall_f1(bin_matched[i], bin_true[i])};
    raw_scores.push_back(vs.unmatched);
    matched_scores.push_back(vs.matched);
    report.views.push_back(vs);
  }
  report.mean_unmatched = mean_scores(raw_scores);
  report.mean_matched = mean_scores(matched_scores);

  if (options.pr_curve) report.pr = pr_curve(w_matched, bin_true, default_pr_thresholds());
  report.r2 = variance_explained(dataset, x_matched, apply_matching(w_hat, report.matching), options.r2_mode);
  report.delta = permute_columns(delta_hat, report.matching);
  report.activity = activity_calls(report.delta, report.r2, options.delta_threshold, options.r2_threshold);
  if (true_activity) {
    if (true_activity->rows() != report.activity.rows() || true_activity->cols() != report.activity.cols()) {
      throw ConfigError("true activity matrix has the wrong shape");
    }
    report.activity_agreement = static_cast<double>((report.activity.array() == true_activity->array()).count()) /
                                static_cast<double>(report.activity.size());
  }
  return report;
}

nlohmann::json to_json(const EvaluationReport& r) {
  auto scores = [](const BinaryScores& s) {
    return nlohmann::json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"no_predictions", s.no_predictions}};
  };
  auto matrix = [](const auto& m) {
    auto rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      auto row = nlohmann::json::array();
      for (Index j = 0; j < m.cols(); ++j) row.push_back(static_cast<double>(m(i, j)));
      rows.push_back(row);
    }
    return rows;
  };
  nlohmann::json views = nlohmann::json::array();
  for (std::size_t m = 0; m < r.views.size(); ++m) {
    views.push_back({{"view", r.views[m].view},
                     {"rmse", r.rmse.per_view[m]},
                     {"unmatched", scores(r.views[m].unmatched)},
                     {"matched", scores(r.views[m].matched)}});
  }
  nlohmann::json pr = nlohmann::json::array();
  for (const auto& p : r.pr) pr.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
  std::vector<double> signs(r.matching.signs.data(), r.matching.signs.data() + r.matching.signs.size());
  return {{"rmse", {{"per_view", r.rmse.per_view}, {"mean", r.rmse.mean}}},
          {"matching", {{"assignment", r.matching.assignment}, {"signs", signs}, {"total_score", r.matching.total}}},
          {"views", views},
          {"mean_unmatched", scores(r.mean_unmatched)},
          {"mean_matched", scores(r.mean_matched)},
          {"pr_curve", pr},
          {"r2", matrix(r.r2)},
          {"delta", matrix(r.delta)},
          {"activity", matrix(r.activity.cast<double>())},
          {"activity_agreement", r.activity_agreement}};
}

EvaluationReport evaluation_report_from_json(const nlohmann::json& j) {
  auto scores = [](const nlohmann::json& s) {
    return BinaryScores{s.at("precision").get<double>(), s.at("recall").get<double>(), s.at("f1").get<double>(),
                        s.at("no_predictions").get<bool>()};
  };
  auto matrix = [](const nlohmann::json& rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r == 0 ? 0 : static_cast<Index>(rows.front().size());
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index k = 0; k < c; ++k) m(i, k) = rows.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
    return m;
  };
  EvaluationReport r;
  try {
    r.rmse.per_view = j.at("rmse").at("per_view").get<std::vector<double>>();
    r.rmse.mean = j.at("rmse").at("mean").get<double>();
    r.matching.assignment = j.at("matching").at("assignment").get<std::vector<Index>>();
    const auto signs = j.at("matching").at("signs").get<std::vector<double>>();
    r.matching.signs = Eigen::Map<const Vector>(signs.data(), static_cast<Index>(signs.size()));
    r.matching.total = j.at("matching").at("total_score").get<double>();
    for (const auto& v : j.at("views")) {
      r.views.push_back({v.at("view").get<std::string>(), scores(v.at("unmatched")), scores(v.at("matched"))});
    }
    r.mean_unmatched = scores(j.at("mean_unmatched"));
    r.mean_matched = scores(j.at("mean_matched"));
    for (const auto& p : j.at("pr_curve")) {
      r.pr.push_back({p.at("threshold").get<double>(), p.at("precision").get<double>(), p.at("recall").get<double>()});
    }
    r.r2 = matrix(j.at("r2"));
    r.delta = matrix(j.at("delta"));
    r.activity = matrix(j.at("activity")).array() > 0.5;
    r.activity_agreement = j.at("activity_agreement").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

void write_metrics_csv(const std::filesystem::path& path, const EvaluationReport& r) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "view,stage,rmse,precision,recall,f1\n";
  auto row = [&](const std::string& view, const char* stage, double rm, const BinaryScores& s) {
    out << view << ',' << stage << ',' << format_double(rm) << ',' << format_double(s.precision) << ','
        << format_double(s.recall) << ',' << format_double(s.f1) << '\n';
  };
  for (std::size_t m = 0; m < r.views.size(); ++m) {
    row(r.views[m].view, "unmatched", r.rmse.per_view[m], r.views[m].unmatched);
    row(r.views[m].view, "matched", r.rmse.per_view[m], r.views[m].matched);
  }
  row("mean", "unmatched", r.rmse.mean, r.mean_unmatched);
  row("mean", "matched", r.rmse.mean, r.mean_matched);
}

void write_pr_csv(const std::filesystem::path& path, const std::vector<PrPoint>& pr) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "threshold,precision,recall\n";
  for (const auto& p : pr) {
    out << format_double(p.threshold) << ',' << format_double(p.precision) << ',' << format_double(p.recall) << '\n';
  }
}

}  // namespace muvi
