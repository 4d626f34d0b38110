#include "muvi/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace muvi {

namespace {

std::string padded(const std::string& prefix, Index i, Index count) {
  const std::size_t width = std::to_string(std::max<Index>(count - 1, 0)).size();
  std::string digits = std::to_string(i);
  return prefix + std::string(width - std::min(width, digits.size()), '0') + digits;
}

std::vector<Index> random_subset(std::vector<Index> pool, std::size_t count, std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

BoolMatrix default_activity(Index n_views) {
  if (n_views < 1 || n_views > 16) throw ConfigError("default activity needs 1..16 views");
  const Index k = (Index{1} << n_views) - 1;
  BoolMatrix a(n_views, k);
  for (Index f = 0; f < k; ++f) {
    const Index pattern = k - f;
    for (Index m = 0; m < n_views; ++m) a(m, f) = (pattern >> (n_views - 1 - m)) & 1;
  }
  return a;
}

SyntheticData generate(const SyntheticSpec& spec) {
  if (spec.n_samples < 1 || spec.n_features < 1 || spec.n_views < 1 || spec.n_factors < 1) {
    throw ConfigError("synthetic dimensions must be positive");
  }
  if (!(0.0 <= spec.zero_fraction_min && spec.zero_fraction_min <= spec.zero_fraction_max &&
        spec.zero_fraction_max <= 1.0)) {
    throw ConfigError("zero fraction range must satisfy 0 <= min <= max <= 1");
  }
  if (!(spec.noise_sd >= 0.0)) throw ConfigError("noise sd must be nonnegative");

  BoolMatrix activity;
  if (spec.activity) {
    activity = *spec.activity;
  } else {
    if (spec.n_factors != (Index{1} << spec.n_views) - 1) {
      throw ConfigError("K = " + std::to_string(spec.n_factors) +
                        " does not match the 2^M - 1 default activity patterns; supply an activity matrix");
    }
    activity = default_activity(spec.n_views);
  }
  if (activity.rows() != spec.n_views || activity.cols() != spec.n_factors) {
    throw ConfigError("activity matrix must be M x K");
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(spec.zero_fraction_min, spec.zero_fraction_max);

  const Index n = spec.n_samples, d = spec.n_features, k = spec.n_factors;
  SyntheticTruth truth;
  truth.activity = activity;
  truth.noise_sd = spec.noise_sd;
  truth.x.resize(n, k);
  for (Index i = 0; i < n; ++i)
    for (Index f = 0; f < k; ++f) truth.x(i, f) = normal(rng);

  for (Index m = 0; m < spec.n_views; ++m) {
    Matrix w = Matrix::Zero(d, k);
    for (Index f = 0; f < k; ++f) {
      if (!activity(m, f)) continue;
      for (Index j = 0; j < d; ++j) {
        const double v = normal(rng);
        w(j, f) = std::abs(v) < spec.loading_threshold ? 0.0 : v;
      }
      // Zero further entries until the column reaches the drawn sparsity.
      const double zero_fraction = uniform(rng);
      const Index target_zeros = static_cast<Index>(std::nearbyint(zero_fraction * static_cast<double>(d)));
      std::vector<Index> nonzero;
      for (Index j = 0; j < d; ++j)
        if (w(j, f) != 0.0) nonzero.push_back(j);
      const Index zeros = d - static_cast<Index>(nonzero.size());
      if (target_zeros > zeros) {
        for (Index j : random_subset(nonzero, static_cast<std::size_t>(target_zeros - zeros), rng)) w(j, f) = 0.0;
      }
    }
    truth.mask.push_back(w.array() != 0.0);
    truth.w.push_back(std::move(w));
  }

  std::vector<std::string> sample_ids;
  for (Index i = 0; i < n; ++i) sample_ids.push_back(padded("s", i, n));
  std::vector<ViewBlock> views;
  for (Index m = 0; m < spec.n_views; ++m) {
    ViewBlock v;
    v.name = "v" + std::to_string(m);
    for (Index j = 0; j < d; ++j) v.feature_names.push_back(padded(v.name + "_f", j, d));
    Matrix noise(n, d);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j) noise(i, j) = normal(rng);
    v.data = truth.x * truth.w[static_cast<std::size_t>(m)].transpose() + spec.noise_sd * noise;
    v.mask = BoolMatrix::Constant(n, d, true);
    views.push_back(std::move(v));
  }
  return {MultiViewDataset(std::move(sample_ids), std::move(views)), std::move(truth)};
}

FeatureSetCollection perturb_feature_sets(const SyntheticTruth& truth,
                                          const MultiViewDataset& dataset, const NoiseSpec& spec,
                                          const std::vector<std::string>& views) {
  if (!(spec.swap_fraction >= 0.0 && spec.swap_fraction <= 1.0)) {
    throw ConfigError("swap fraction must lie in [0, 1]");
  }
  const Index k = truth.activity.cols();
  std::vector<Index> view_ids;
  for (const auto& name : views) {
    auto m = dataset.view_index(name);
    if (!m) throw ConfigError("view '" + name + "' not in dataset");
    view_ids.push_back(*m);
  }

  Index fp_count = 0;
  if (spec.false_positive_count_inactive) {
    fp_count = *spec.false_positive_count_inactive;
    if (fp_count < 0) throw ConfigError("false positive count must be nonnegative");
  } else {
    std::vector<Index> sizes;
    for (std::size_t m = 0; m < truth.mask.size(); ++m)
      for (Index f = 0; f < k; ++f)
        if (truth.activity(static_cast<Index>(m), f)) sizes.push_back(truth.mask[m].col(f).count());
    if (!sizes.empty()) {
      std::sort(sizes.begin(), sizes.end());
      fp_count = sizes[(sizes.size() - 1) / 2];
    }
  }

  std::mt19937_64 rng(spec.seed);
  FeatureSetCollection sets;
  for (Index f = 0; f < k; ++f) sets.add_factor("factor_" + std::to_string(f));

  for (Index m : view_ids) {
    const auto& view = dataset.view(m);
    const BoolMatrix& mask = truth.mask.at(static_cast<std::size_t>(m));
    for (Index f = 0; f < k; ++f) {
      std::vector<Index> positives, negatives;
      for (Index j = 0; j < mask.rows(); ++j) (mask(j, f) ? positives : negatives).push_back(j);
      std::vector<Index> chosen;
      if (truth.activity(m, f)) {
        const auto n_swap = static_cast<std::size_t>(
            std::nearbyint(spec.swap_fraction * static_cast<double>(positives.size())));
        if (n_swap > negatives.size()) {
          throw ConfigError("not enough true negatives to swap in view " + view.name + ", factor " +
                            std::to_string(f));
        }
        const auto removed = random_subset(positives, n_swap, rng);
        std::set_difference(positives.begin(), positives.end(), removed.begin(), removed.end(),
                            std::back_inserter(chosen));
        const auto added = random_subset(negatives, n_swap, rng);
        chosen.insert(chosen.end(), added.begin(), added.end());
      } else {
        const auto count = std::min<std::size_t>(static_cast<std::size_t>(fp_count), negatives.size());
        chosen = random_subset(negatives, count, rng);
      }
      auto& members = sets.entries[static_cast<std::size_t>(f)][view.name];
      for (Index j : chosen) members.insert(view.feature_names[static_cast<std::size_t>(j)]);
    }
  }
  return sets;
}

void save_truth(const SyntheticTruth& truth, const MultiViewDataset& dataset,
                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Index k = truth.x.cols();
  std::vector<std::string> factor_names;
  for (Index f = 0; f < k; ++f) factor_names.push_back("factor_" + std::to_string(f));
  write_matrix_csv(dir / "x.csv", truth.x, dataset.sample_ids(), factor_names, "sample_id");
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& v = dataset.view(m);
    write_matrix_csv(dir / ("w_" + v.name + ".csv"), truth.w[static_cast<std::size_t>(m)],
                     v.feature_names, factor_names, "feature");
  }
  write_matrix_csv(dir / "activity.csv", truth.activity.cast<double>(), dataset.view_names(),
                   factor_names, "view");
  nlohmann::json meta = {{"noise_sd", truth.noise_sd}, {"n_factors", k}, {"views", dataset.view_names()}};
  std::ofstream(dir / "truth.json") << meta.dump(2) << '\n';
}

SyntheticTruth load_truth(const std::filesystem::path& dir, const MultiViewDataset& dataset) {
  std::ifstream meta_in(dir / "truth.json");
  if (!meta_in) throw ConfigError("cannot open " + (dir / "truth.json").string());
  nlohmann::json meta;
  meta_in >> meta;
  SyntheticTruth truth;
  truth.noise_sd = meta.at("noise_sd").get<double>();
  truth.x = read_matrix_csv(dir / "x.csv").values;
  if (truth.x.rows() != dataset.n_samples()) throw ConfigError("truth X does not match the dataset");
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& v = dataset.view(m);
    Matrix w = read_matrix_csv(dir / ("w_" + v.name + ".csv")).values;
    if (w.rows() != v.n_features() || w.cols() != truth.x.cols()) {
      throw ConfigError("truth loadings of view " + v.name + " have the wrong shape");
    }
    truth.mask.push_back(w.array() != 0.0);
    truth.w.push_back(std::move(w));
  }
  truth.activity = read_matrix_csv(dir / "activity.csv").values.array() != 0.0;
  return truth;
}

}  // namespace muvi
