#pragma once

#include "muvi/data.hpp"
#include "muvi/priors.hpp"

#include <span>
#include <vector>

namespace muvi {

/// Latent sites of one view.
struct ViewSites {
  Matrix w;       ///< D_m x K loadings
  Matrix lambda;  ///< D_m x K local scales
  Vector delta;   ///< K factor scales
  double tau = 1.0;
  Matrix c2;      ///< D_m x K squared slab widths
  Vector sigma2;  ///< D_m noise variances
};

/// One realization of every latent site. Also used to hold gradients with
/// respect to the same sites.
struct ModelParams {
  Matrix x;  ///< N x K factor scores
  std::vector<ViewSites> views;

  Index n_factors() const { return x.cols(); }

  /// Zero-valued parameter tree shaped after `dataset` with K factors.
  static ModelParams zeros(const MultiViewDataset& dataset, Index n_factors);
};

/// M x K matrix of the per-view factor scales.
Matrix delta_matrix(const ModelParams& params);

/// Per-view loading matrices.
std::vector<Matrix> loadings(const ModelParams& params);

/// Throws ConfigError on shape mismatch and NumericalError on a
/// nonpositive scale site.
void check_params(const ModelParams& params, const MultiViewDataset& dataset);

/// All sample indices 0..N-1.
std::vector<Index> full_batch(Index n_samples);

double log_likelihood(const ModelParams& params, const MultiViewDataset& dataset,
                      std::span<const Index> batch);

double log_prior(const ModelParams& params, const PriorScaleMatrix& prior_scales,
                 const PriorConfig& config);

/// scale_factor * (likelihood + X prior over batch rows) + prior of all
/// global sites.
double log_joint(const ModelParams& params, const MultiViewDataset& dataset,
                 const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                 std::span<const Index> batch, double scale_factor);

/// log_joint and its gradient with respect to every site (natural
/// parameterization, i.e. d/d lambda rather than d/d log lambda). Rows of
/// `grad.x` outside the batch are zero.
double log_joint_gradient(const ModelParams& params, const MultiViewDataset& dataset,
                          const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                          std::span<const Index> batch, double scale_factor, ModelParams& grad);

}  // namespace muvi
