#pragma once

#include "muvi/data.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace muvi {

struct SyntheticSpec {
  Index n_samples = 200;
  Index n_features = 400;  ///< per view
  Index n_views = 4;
  Index n_factors = 15;
  double zero_fraction_min = 0.85;
  double zero_fraction_max = 0.95;
  double noise_sd = 0.25;
  double loading_threshold = 0.1;
  std::uint64_t seed = 0;
  /// M x K view-factor activity; defaults to every nonempty view subset.
  std::optional<BoolMatrix> activity;
};

struct SyntheticTruth {
  Matrix x;
  std::vector<Matrix> w;
  BoolMatrix activity;  ///< M x K
  std::vector<BoolMatrix> mask;  ///< per view D_m x K, |w| > 0
  double noise_sd = 0.0;
};

struct SyntheticData {
  MultiViewDataset dataset;
  SyntheticTruth truth;
};

/// All 2^M - 1 nonempty view subsets, one per factor, view 0 as the most
/// significant bit and counting down from the all-views pattern. For M = 4
/// factor 0 is fully shared and factors 7, 11, 13, 14 are private.
BoolMatrix default_activity(Index n_views);

SyntheticData generate(const SyntheticSpec& spec);

struct NoiseSpec {
  double swap_fraction = 0.0;
  /// Features added to each inactive (view, factor) pair; unset means the
  /// median size of the active sets.
  std::optional<Index> false_positive_count_inactive;
  std::uint64_t seed = 0;
};

/// Noisy feature sets for `views`, one set per true factor, named
/// "factor_<k>".
FeatureSetCollection perturb_feature_sets(const SyntheticTruth& truth,
                                          const MultiViewDataset& dataset, const NoiseSpec& spec,
                                          const std::vector<std::string>& views);

/// Writes truth/x.csv, truth/w_<view>.csv, truth/activity.csv and
/// truth/truth.json under `dir`.
void save_truth(const SyntheticTruth& truth, const MultiViewDataset& dataset,
                const std::filesystem::path& dir);
SyntheticTruth load_truth(const std::filesystem::path& dir, const MultiViewDataset& dataset);

}  // namespace muvi
