#pragma once

// Log-densities of every distribution in the model and the regularized
// horseshoe scale. Scalar versions validate their arguments; the ArrayBase
// overloads return unchecked Eigen expressions for the hot loops.

#include "muvi/types.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace muvi {

/// Inverse-Gamma (shape, scale) hyperparameters for the noise variances and
/// the slab widths.
struct PriorConfig {
  double noise_shape = 1.0;
  double noise_scale = 1.0;
  double slab_shape = 0.5;
  double slab_scale = 0.5;
  /// When true the prior scale multiplies c (slab sd); otherwise it multiplies c^2.
  bool scale_slab_sd = true;

  void validate() const;
};

inline void PriorConfig::validate() const {
  if (!(noise_shape > 0 && noise_scale > 0 && slab_shape > 0 && slab_scale > 0)) {
    throw ConfigError("inverse-Gamma hyperparameters must be positive");
  }
}

namespace detail {

template <typename Scalar>
void require_finite(Scalar x, const char* what) {
  if (!std::isfinite(x)) throw std::domain_error(std::string(what) + ": non-finite argument");
}

// 0.5 * log(2 pi)
template <typename Scalar>
inline constexpr Scalar half_log_two_pi = Scalar(0.918938533204672741780329736406L);

}  // namespace detail

template <typename Scalar>
Scalar normal_logpdf(Scalar x, Scalar mean, Scalar sd) {
  detail::require_finite(x, "normal_logpdf");
  detail::require_finite(mean, "normal_logpdf");
  detail::require_finite(sd, "normal_logpdf");
  if (!(sd > 0)) throw std::domain_error("normal_logpdf: sd must be positive");
  const Scalar z = (x - mean) / sd;
  return -Scalar(0.5) * z * z - std::log(sd) - detail::half_log_two_pi<Scalar>;
}

template <typename Scalar>
Scalar half_cauchy_logpdf(Scalar x, Scalar scale) {
  detail::require_finite(x, "half_cauchy_logpdf");
  detail::require_finite(scale, "half_cauchy_logpdf");
  if (x < 0) throw std::domain_error("half_cauchy_logpdf: x must be nonnegative");
  if (!(scale > 0)) throw std::domain_error("half_cauchy_logpdf: scale must be positive");
  const Scalar z = x / scale;
  return std::log(Scalar(2) / std::numbers::pi_v<Scalar>) - std::log(scale) - std::log1p(z * z);
}

template <typename Scalar>
Scalar inverse_gamma_logpdf(Scalar x, Scalar shape, Scalar scale) {
  detail::require_finite(x, "inverse_gamma_logpdf");
  if (!(x > 0)) throw std::domain_error("inverse_gamma_logpdf: x must be positive");
  if (!(shape > 0 && scale > 0)) throw std::domain_error("inverse_gamma_logpdf: parameters must be positive");
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1) * std::log(x) - scale / x;
}

template <typename Scalar>
Scalar lognormal_logpdf(Scalar x, Scalar mu, Scalar sigma) {
  detail::require_finite(x, "lognormal_logpdf");
  if (!(x > 0)) throw std::domain_error("lognormal_logpdf: x must be positive");
  const Scalar log_x = std::log(x);
  return normal_logpdf(log_x, mu, sigma) - log_x;
}

/// Effective sd of the regularized horseshoe: the harmonic combination
/// sqrt(slab^2 gamma^2 / (slab^2 + gamma^2)).
template <typename Scalar>
Scalar regularized_sd(Scalar gamma, Scalar slab) {
  if (!(gamma > 0 && slab > 0)) throw std::domain_error("regularized_sd: arguments must be positive");
  // Ratio form avoids overflow of slab^2 * gamma^2 for large arguments.
  const Scalar hi = std::max(gamma, slab);
  const Scalar lo = std::min(gamma, slab);
  const Scalar r = lo / hi;
  return lo / std::sqrt(Scalar(1) + r * r);
}

template <typename Scalar>
struct RegularizedScale {
  Scalar gamma;
  Scalar slab;
  Scalar effective_sd;
};

/// gamma = tau * delta * lambda; slab = alpha * c.
template <typename Scalar>
RegularizedScale<Scalar> make_regularized_scale(Scalar tau, Scalar delta, Scalar lambda,
                                                Scalar alpha, Scalar c) {
  const Scalar gamma = tau * delta * lambda;
  const Scalar slab = alpha * c;
  return {gamma, slab, regularized_sd(gamma, slab)};
}

// Elementwise expressions over Eigen arrays. No argument checks.

template <typename Derived>
auto normal_logpdf(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return -Scalar(0.5) * x.square() - detail::half_log_two_pi<Scalar>;
}

template <typename DX, typename DM, typename DS>
auto normal_logpdf(const Eigen::ArrayBase<DX>& x, const Eigen::ArrayBase<DM>& mean,
                   const Eigen::ArrayBase<DS>& sd) {
  using Scalar = typename DX::Scalar;
  return -Scalar(0.5) * ((x - mean) / sd).square() - sd.log() - detail::half_log_two_pi<Scalar>;
}

/// Half-Cauchy(0, 1).
template <typename Derived>
auto half_cauchy_logpdf(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return std::log(Scalar(2) / std::numbers::pi_v<Scalar>) - (Scalar(1) + x.square()).log();
}

template <typename Derived>
auto inverse_gamma_logpdf(const Eigen::ArrayBase<Derived>& x, typename Derived::Scalar shape,
                          typename Derived::Scalar scale) {
  using Scalar = typename Derived::Scalar;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + Scalar(1)) * x.log() - scale / x;
}

}  // namespace muvi
