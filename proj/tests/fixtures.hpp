#pragma once

#include "muvi/data.hpp"

#include <random>
#include <string>
#include <vector>

namespace muvi::testing {

inline std::vector<std::string> names(const std::string& prefix, Index n) {
  std::vector<std::string> out;
  for (Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Random dataset with the given view widths; `missing` is the chance that
/// an entry is masked out.
inline MultiViewDataset random_dataset(Index n, const std::vector<Index>& widths,
                                       std::uint64_t seed, double missing = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution drop(missing);
  std::vector<ViewBlock> views;
  for (std::size_t m = 0; m < widths.size(); ++m) {
    ViewBlock v;
    v.name = "v" + std::to_string(m);
    v.data.resize(n, widths[m]);
    v.mask.resize(n, widths[m]);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < widths[m]; ++j) {
        v.data(i, j) = normal(rng);
        v.mask(i, j) = !drop(rng);
      }
    v.feature_names = names(v.name + "_f", widths[m]);
    views.push_back(std::move(v));
  }
  return MultiViewDataset(names("s", n), std::move(views));
}

}  // namespace muvi::testing
