#pragma once

#include "muvi/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace muvi {

/// One group of features observed on every sample. Unobserved entries have
/// mask == false and a stored value of 0.
struct ViewBlock {
  std::string name;
  Matrix data;
  BoolMatrix mask;
  std::vector<std::string> feature_names;

  Index n_features() const { return data.cols(); }
  Index n_observed() const { return mask.count(); }
};

/// N samples split across M views with disjoint feature spaces.
///
/// The constructor validates all invariants (row counts, mask shapes, unique
/// feature names within a view and disjoint names across views) and zeroes
/// masked-out data so that no downstream computation can pick them up.
class MultiViewDataset {
 public:
  MultiViewDataset() = default;
  MultiViewDataset(std::vector<std::string> sample_ids, std::vector<ViewBlock> views);

  Index n_samples() const { return static_cast<Index>(sample_ids_.size()); }
  Index n_views() const { return static_cast<Index>(views_.size()); }
  const std::vector<std::string>& sample_ids() const { return sample_ids_; }
  const std::vector<ViewBlock>& views() const { return views_; }
  const ViewBlock& view(Index m) const { return views_.at(static_cast<std::size_t>(m)); }

  std::optional<Index> view_index(const std::string& name) const;
  std::vector<std::string> view_names() const;

  /// (view index, feature index) of a named feature, if present.
  std::optional<std::pair<Index, Index>> locate_feature(const std::string& name) const;

 private:
  std::vector<std::string> sample_ids_;
  std::vector<ViewBlock> views_;
  std::map<std::string, std::pair<Index, Index>> feature_index_;
};

struct ViewFile {
  std::string view_name;
  std::filesystem::path path;
};

/// Reads one CSV per view. Empty cells and "NaN" are always missing;
/// `missing_token` adds one more literal.
MultiViewDataset load_dataset(const std::vector<ViewFile>& files,
                              const std::string& missing_token = "NaN");

/// Writes `<dir>/<view>.csv` for every view and returns the written files.
std::vector<ViewFile> save_dataset(const MultiViewDataset& dataset,
                                   const std::filesystem::path& dir);

enum class StandardizeMode {
  global,       ///< center each feature, divide the view by one pooled sd
  per_feature,  ///< center and scale each feature separately
  center_only,
  none,
};

StandardizeMode parse_standardize_mode(const std::string& s);
std::string to_string(StandardizeMode mode);

/// Per-view affine map applied by `standardize`: y_std = (y - center) / scale.
struct Standardization {
  std::vector<Vector> centers;
  std::vector<Vector> scales;
};

MultiViewDataset standardize(const MultiViewDataset& dataset,
                             StandardizeMode mode = StandardizeMode::global,
                             Standardization* record = nullptr);

/// Named binary feature sets, one per latent factor, split by view.
struct FeatureSetCollection {
  std::vector<std::string> factor_names;
  /// entries[k][view_name] = features of factor k that live in that view.
  std::vector<std::map<std::string, std::set<std::string>>> entries;
  std::map<std::string, Index> factor_index;
  /// Referenced features absent from the dataset.
  std::size_t dropped_features = 0;

  Index n_factors() const { return static_cast<Index>(factor_names.size()); }
  void add_factor(const std::string& name);
  bool contains(Index k, const std::string& view, const std::string& feature) const;
};

/// Parses a tab-separated set file (name, description, members...). Sets whose
/// overlap with the dataset is smaller than `min_size` are dropped.
FeatureSetCollection load_feature_sets(const std::filesystem::path& path,
                                       const MultiViewDataset& dataset,
                                       std::size_t min_size);

void save_feature_sets(const FeatureSetCollection& sets, const std::filesystem::path& path);

enum class UninformedPolicy { constrain, free };

UninformedPolicy parse_uninformed_policy(const std::string& s);
std::string to_string(UninformedPolicy policy);

/// Per-view D_m x K matrices of slab multipliers in (0, 1].
struct PriorScaleMatrix {
  std::vector<Matrix> views;

  Index n_factors() const { return views.empty() ? 0 : views.front().cols(); }
};

PriorScaleMatrix build_prior_scales(const FeatureSetCollection& sets,
                                    const MultiViewDataset& dataset, double alpha_absent,
                                    const std::vector<std::string>& informed_views,
                                    UninformedPolicy policy = UninformedPolicy::constrain,
                                    Index n_dense_factors = 0);

/// All-`value` scales for an uninformed model with K factors.
PriorScaleMatrix uniform_prior_scales(const MultiViewDataset& dataset, Index n_factors,
                                      double value = 1.0);

// Plain numeric CSV helpers shared by the CLI and the synthetic generator.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& row_names,
                      const std::vector<std::string>& col_names,
                      const std::string& corner = "id");

struct LabeledMatrix {
  Matrix values;
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;
};

LabeledMatrix read_matrix_csv(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace muvi
