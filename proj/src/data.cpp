#include "muvi/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace muvi {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(table.header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ConfigError(path.string() + ": empty file");
  return table;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

MultiViewDataset::MultiViewDataset(std::vector<std::string> sample_ids,
                                   std::vector<ViewBlock> views)
    : sample_ids_(std::move(sample_ids)), views_(std::move(views)) {
  const Index n = n_samples();
  std::set<std::string> view_names;
  for (Index m = 0; m < n_views(); ++m) {
    auto& v = views_[static_cast<std::size_t>(m)];
    if (!view_names.insert(v.name).second) throw ConfigError("duplicate view name " + v.name);
    if (v.data.rows() != n) {
      throw ConfigError("view " + v.name + " has " + std::to_string(v.data.rows()) +
                        " rows, expected " + std::to_string(n));
    }
    if (v.mask.rows() != v.data.rows() || v.mask.cols() != v.data.cols()) {
      throw ConfigError("view " + v.name + ": mask shape differs from data shape");
    }
    if (static_cast<Index>(v.feature_names.size()) != v.data.cols()) {
      throw ConfigError("view " + v.name + ": feature name count differs from column count");
    }
    for (Index j = 0; j < v.data.cols(); ++j) {
      const auto& f = v.feature_names[static_cast<std::size_t>(j)];
      auto [it, inserted] = feature_index_.emplace(f, std::make_pair(m, j));
      if (!inserted) {
        if (it->second.first == m) throw ConfigError("duplicate feature " + f + " in view " + v.name);
        throw ConfigError("feature " + f + " appears in more than one view");
      }
    }
    v.data = v.mask.select(v.data, Matrix::Zero(v.data.rows(), v.data.cols()));
  }
}

std::optional<Index> MultiViewDataset::view_index(const std::string& name) const {
  for (std::size_t m = 0; m < views_.size(); ++m) {
    if (views_[m].name == name) return static_cast<Index>(m);
  }
  return std::nullopt;
}

std::vector<std::string> MultiViewDataset::view_names() const {
  std::vector<std::string> names;
  for (const auto& v : views_) names.push_back(v.name);
  return names;
}

std::optional<std::pair<Index, Index>> MultiViewDataset::locate_feature(
    const std::string& name) const {
  auto it = feature_index_.find(name);
  if (it == feature_index_.end()) return std::nullopt;
  return it->second;
}

MultiViewDataset load_dataset(const std::vector<ViewFile>& files,
                              const std::string& missing_token) {
  if (files.empty()) throw ConfigError("no view files given");
  std::vector<std::string> sample_ids;
  std::vector<ViewBlock> views;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto table = read_csv(files[f].path);
    if (table.header.size() < 2) throw ConfigError(files[f].path.string() + ": no feature columns");
    std::vector<std::string> ids;
    for (const auto& row : table.rows) ids.push_back(trim(row[0]));
    if (f == 0) {
      sample_ids = ids;
    } else if (ids != sample_ids) {
      throw ConfigError(files[f].path.string() + ": sample IDs differ from " +
                        files[0].path.string());
    }

    ViewBlock v;
    v.name = files[f].view_name;
    for (std::size_t c = 1; c < table.header.size(); ++c) v.feature_names.push_back(trim(table.header[c]));
    const Index n = static_cast<Index>(table.rows.size());
    const Index d = static_cast<Index>(v.feature_names.size());
    v.data = Matrix::Zero(n, d);
    v.mask = BoolMatrix::Constant(n, d, true);
    for (Index i = 0; i < n; ++i) {
      const auto& row = table.rows[static_cast<std::size_t>(i)];
      for (Index j = 0; j < d; ++j) {
        const std::string cell = trim(row[static_cast<std::size_t>(j + 1)]);
        if (cell.empty() || cell == "NaN" || cell == missing_token) {
          v.mask(i, j) = false;
          continue;
        }
        auto value = parse_double(cell);
        if (!value || !std::isfinite(*value)) {
          throw ConfigError(files[f].path.string() + ": non-numeric cell '" + cell + "' at row " +
                            std::to_string(i + 1) + ", column " + std::to_string(j + 2));
        }
        v.data(i, j) = *value;
      }
    }
    views.push_back(std::move(v));
  }
  return MultiViewDataset(std::move(sample_ids), std::move(views));
}

std::vector<ViewFile> save_dataset(const MultiViewDataset& dataset,
                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ViewFile> written;
  for (const auto& v : dataset.views()) {
    const auto path = dir / (v.name + ".csv");
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "sample_id";
    for (const auto& f : v.feature_names) out << ',' << f;
    out << '\n';
    for (Index i = 0; i < v.data.rows(); ++i) {
      out << dataset.sample_ids()[static_cast<std::size_t>(i)];
      for (Index j = 0; j < v.data.cols(); ++j) {
        out << ',';
        if (v.mask(i, j)) out << format_double(v.data(i, j));
      }
      out << '\n';
    }
    written.push_back({v.name, path});
  }
  return written;
}

StandardizeMode parse_standardize_mode(const std::string& s) {
  if (s == "global") return StandardizeMode::global;
  if (s == "feature" || s == "per_feature") return StandardizeMode::per_feature;
  if (s == "center" || s == "center_only") return StandardizeMode::center_only;
  if (s == "none") return StandardizeMode::none;
  throw ConfigError("unknown standardization mode '" + s + "'");
}

std::string to_string(StandardizeMode mode) {
  switch (mode) {
    case StandardizeMode::global: return "global";
    case StandardizeMode::per_feature: return "feature";
    case StandardizeMode::center_only: return "center";
    case StandardizeMode::none: return "none";
  }
  return "global";
}

MultiViewDataset standardize(const MultiViewDataset& dataset, StandardizeMode mode,
                             Standardization* record) {
  std::vector<ViewBlock> views = dataset.views();
  Standardization st;
  for (auto& v : views) {
    const Index d = v.n_features();
    Vector center = Vector::Zero(d);
    Vector scale = Vector::Ones(d);
    if (mode != StandardizeMode::none) {
      if (v.n_observed() < 2) throw NumericalError("view " + v.name + " has fewer than 2 observed entries");
      const Matrix obs = v.mask.cast<double>();
      for (Index j = 0; j < d; ++j) {
        const double count = obs.col(j).sum();
        if (count > 0) center(j) = v.data.col(j).sum() / count;
      }
      v.data = v.mask.select(v.data.rowwise() - center.transpose(), Matrix::Zero(v.data.rows(), d));

      if (mode == StandardizeMode::global) {
        const double sd = std::sqrt(v.data.squaredNorm() / static_cast<double>(v.n_observed()));
        if (!(sd > 0.0)) throw NumericalError("view " + v.name + " has zero observed variance");
        scale.setConstant(sd);
      } else if (mode == StandardizeMode::per_feature) {
        for (Index j = 0; j < d; ++j) {
          const double count = obs.col(j).sum();
          if (count < 1) continue;
          const double sd = std::sqrt(v.data.col(j).squaredNorm() / count);
          if (sd > 0.0) scale(j) = sd;
        }
        if (v.data.squaredNorm() == 0.0) throw NumericalError("view " + v.name + " has zero observed variance");
      } else if (v.data.squaredNorm() == 0.0) {
        throw NumericalError("view " + v.name + " has zero observed variance");
      }
      v.data = v.data.array().rowwise() / scale.transpose().array();
    }
    st.centers.push_back(std::move(center));
    st.scales.push_back(std::move(scale));
  }
  if (record) *record = std::move(st);
  return MultiViewDataset(dataset.sample_ids(), std::move(views));
}

void FeatureSetCollection::add_factor(const std::string& name) {
  const Index k = n_factors();
  if (!factor_index.emplace(name, k).second) throw ConfigError("duplicate feature set name " + name);
  factor_names.push_back(name);
  entries.emplace_back();
}

bool FeatureSetCollection::contains(Index k, const std::string& view,
                                    const std::string& feature) const {
  const auto& by_view = entries.at(static_cast<std::size_t>(k));
  auto it = by_view.find(view);
  return it != by_view.end() && it->second.count(feature) > 0;
}

FeatureSetCollection load_feature_sets(const std::filesystem::path& path,
                                       const MultiViewDataset& dataset, std::size_t min_size) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feature-set file " + path.string());
  FeatureSetCollection sets;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (trim(line).empty()) continue;
    const auto fields = split(line, '\t');
    const std::string name = trim(fields[0]);
    if (name.empty()) throw ConfigError(path.string() + ": feature set without a name");

    std::map<std::string, std::set<std::string>> members;
    std::size_t matched = 0;
    std::size_t dropped = 0;
    for (std::size_t c = 2; c < fields.size(); ++c) {
      const std::string feature = trim(fields[c]);
      if (feature.empty()) continue;
      auto loc = dataset.locate_feature(feature);
      if (!loc) {
        ++dropped;
        continue;
      }
      if (members[dataset.view(loc->first).name].insert(feature).second) ++matched;
    }
    if (matched < min_size) continue;
    sets.add_factor(name);
    sets.entries.back() = std::move(members);
    sets.dropped_features += dropped;
  }
  if (sets.n_factors() == 0) throw ConfigError(path.string() + ": no feature sets retained");
  return sets;
}

void save_feature_sets(const FeatureSetCollection& sets, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (Index k = 0; k < sets.n_factors(); ++k) {
    out << sets.factor_names[static_cast<std::size_t>(k)] << '\t' << "na";
    for (const auto& [view, features] : sets.entries[static_cast<std::size_t>(k)]) {
      for (const auto& f : features) out << '\t' << f;
    }
    out << '\n';
  }
}

UninformedPolicy parse_uninformed_policy(const std::string& s) {
  if (s == "constrain") return UninformedPolicy::constrain;
  if (s == "free") return UninformedPolicy::free;
  throw ConfigError("unknown uninformed-view policy '" + s + "'");
}

std::string to_string(UninformedPolicy policy) {
  return policy == UninformedPolicy::constrain ? "constrain" : "free";
}

PriorScaleMatrix build_prior_scales(const FeatureSetCollection& sets,
                                    const MultiViewDataset& dataset, double alpha_absent,
                                    const std::vector<std::string>& informed_views,
                                    UninformedPolicy policy, Index n_dense_factors) {
  if (!(alpha_absent > 0.0 && alpha_absent <= 1.0)) {
    throw ConfigError("alpha_absent must lie in (0, 1]");
  }
  if (n_dense_factors < 0) throw ConfigError("n_dense_factors must be nonnegative");
  std::unordered_set<std::string> informed;
  for (const auto& name : informed_views) {
    if (!dataset.view_index(name)) throw ConfigError("informed view '" + name + "' not in dataset");
    informed.insert(name);
  }
  for (const auto& by_view : sets.entries) {
    for (const auto& [view, features] : by_view) {
      if (!dataset.view_index(view)) throw ConfigError("feature sets reference unknown view " + view);
    }
  }

  const Index k_sets = sets.n_factors();
  PriorScaleMatrix scales;
  for (const auto& v : dataset.views()) {
    const Index d = v.n_features();
    Matrix a(d, k_sets + n_dense_factors);
    if (informed.count(v.name)) {
      a.leftCols(k_sets).setConstant(alpha_absent);
      for (Index k = 0; k < k_sets; ++k) {
        const auto& by_view = sets.entries[static_cast<std::size_t>(k)];
        auto it = by_view.find(v.name);
        if (it == by_view.end()) continue;
        for (const auto& f : it->second) {
          auto loc = dataset.locate_feature(f);
          if (loc) a(loc->second, k) = 1.0;
        }
      }
    } else {
      a.leftCols(k_sets).setConstant(policy == UninformedPolicy::constrain ? alpha_absent : 1.0);
    }
    a.rightCols(n_dense_factors).setOnes();
    scales.views.push_back(std::move(a));
  }
  return scales;
}

PriorScaleMatrix uniform_prior_scales(const MultiViewDataset& dataset, Index n_factors,
                                      double value) {
  if (n_factors < 1) throw ConfigError("number of factors must be at least 1");
  if (!(value > 0.0 && value <= 1.0)) throw ConfigError("prior scale must lie in (0, 1]");
  PriorScaleMatrix scales;
  for (const auto& v : dataset.views()) scales.views.push_back(Matrix::Constant(v.n_features(), n_factors, value));
  return scales;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& row_names,
                      const std::vector<std::string>& col_names, const std::string& corner) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << corner;
  for (Index c = 0; c < m.cols(); ++c) {
    out << ',' << (static_cast<std::size_t>(c) < col_names.size() ? col_names[static_cast<std::size_t>(c)]
                                                                 : std::to_string(c));
  }
  out << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    out << (static_cast<std::size_t>(r) < row_names.size() ? row_names[static_cast<std::size_t>(r)]
                                                           : std::to_string(r));
    for (Index c = 0; c < m.cols(); ++c) out << ',' << format_double(m(r, c));
    out << '\n';
  }
}

LabeledMatrix read_matrix_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  LabeledMatrix out;
  out.col_names.assign(table.header.begin() + 1, table.header.end());
  out.values.resize(static_cast<Index>(table.rows.size()), static_cast<Index>(out.col_names.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out.row_names.push_back(table.rows[r][0]);
    for (std::size_t c = 1; c < table.rows[r].size(); ++c) {
      const std::string cell = trim(table.rows[r][c]);
      auto v = cell == "NaN" ? std::optional<double>(std::nan("")) : parse_double(cell);
      if (!v) throw ConfigError(path.string() + ": non-numeric cell '" + cell + "'");
      out.values(static_cast<Index>(r), static_cast<Index>(c - 1)) = *v;
    }
  }
  return out;
}

}  // namespace muvi
