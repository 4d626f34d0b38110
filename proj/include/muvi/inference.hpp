#pragma once

#include "muvi/variational.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace muvi {

struct TrainConfig {
  double learning_rate = 0.005;
  Index batch_size = 1000;  ///< clamped to N
  Index max_epochs = 5000;
  Index mc_samples = 1;
  Index patience = 10;
  double rel_tol = 1e-4;
  Index check_every = 1;    ///< epochs between convergence checks
  double smoothing = 0.9;   ///< EMA weight of the previous smoothed ELBO
  /// The step size decays exponentially to learning_rate * final_lr_fraction
  /// at the last step allowed by max_epochs. 1 keeps it constant.
  double final_lr_fraction = 1.0;
  Index min_epochs = 0;     ///< no convergence checks before this epoch

  /// Step size at `step` out of `total_steps`.
  double learning_rate_at(Index step, Index total_steps) const;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainTrace {
  std::vector<double> elbo;
  std::vector<double> smoothed;
  std::vector<double> step_ms;
  Index epochs = 0;
  std::string stop_reason;
};

/// Adaptive-moment (Adam) state for every site. X rows keep their own step
/// counters because they are updated only when sampled into a batch.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Matrix> m_loc, v_loc, m_raw, v_raw;
  Eigen::VectorXi x_row_steps;

  static AdamState zeros(const VariationalParams& vp);
};

/// d ELBO / d (loc, raw_scale) for every site.
struct ElboGradient {
  double elbo = 0.0;
  std::vector<Matrix> loc;
  std::vector<Matrix> raw;
};

/// Average over `noise` draws of log p(Y, theta) - log q(theta), with the
/// local (X) terms of both restricted to `batch` and scaled by N / |batch|.
double elbo_estimate(const VariationalParams& vp, const MultiViewDataset& dataset,
                     const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                     std::span<const Index> batch, const std::vector<SiteNoise>& noise);

/// Reparameterized gradient of `elbo_estimate` with the noise held fixed.
ElboGradient elbo_gradient(const VariationalParams& vp, const MultiViewDataset& dataset,
                           const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                           std::span<const Index> batch, const std::vector<SiteNoise>& noise);

/// Adam ascent step on `vp` using `grad`; X rows outside `batch` are left
/// untouched.
void adam_update(VariationalParams& vp, const ElboGradient& grad, std::span<const Index> batch,
                 double learning_rate, AdamState& state);

/// Draws the step's noise from (seed, step index), evaluates the gradient
/// and applies one Adam update. Returns the ELBO estimate before the update.
double gradient_step(VariationalParams& vp, const MultiViewDataset& dataset,
                     const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                     std::span<const Index> batch, AdamState& state, const TrainConfig& train);

struct FitResult {
  VariationalParams params;
  AdamState optimizer;
  TrainTrace trace;
};

FitResult fit(const MultiViewDataset& dataset, const PriorScaleMatrix& prior_scales,
              Index n_factors, const PriorConfig& config, const TrainConfig& train);

nlohmann::json checkpoint_json(const VariationalParams& vp, const AdamState& state);
void save_checkpoint(const std::filesystem::path& path, const VariationalParams& vp,
                     const AdamState& state);

struct Checkpoint {
  VariationalParams params;
  AdamState optimizer;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// step, raw ELBO, smoothed ELBO, wall-clock ms
void write_training_log(const std::filesystem::path& path, const TrainTrace& trace);

}  // namespace muvi
