#pragma once

#include "muvi/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace muvi {

enum class SiteRole { x, w, lambda, delta, tau, c2, sigma2 };

/// Real sites get a Normal guide; scale sites a log-Normal guide.
inline bool is_positive(SiteRole role) { return role != SiteRole::x && role != SiteRole::w; }

std::string to_string(SiteRole role);

/// Mean-field guide for one site. For positive sites `loc` lives in log
/// space. sd = max(softplus(raw_scale), kMinScale).
struct GuideSite {
  std::string name;
  SiteRole role = SiteRole::x;
  Index view = -1;  ///< -1 for X
  Matrix loc;
  Matrix raw_scale;

  static constexpr double kMinScale = 1e-6;

  Matrix sd() const;
};

double softplus(double x);
double softplus_inverse(double y);
/// Elementwise softplus; agrees with the scalar version to rounding.
Array softplus(const Array& x);

/// All variational parameters. Site 0 is X; view m owns sites
/// 1 + 6m ... 6 + 6m in the order w, lambda, delta, tau, c2, sigma2.
struct VariationalParams {
  std::vector<GuideSite> sites;

  Index n_views() const { return (static_cast<Index>(sites.size()) - 1) / 6; }
  Index n_factors() const { return sites.front().loc.cols(); }
  Index n_samples() const { return sites.front().loc.rows(); }

  GuideSite& site(SiteRole role, Index view = -1);
  const GuideSite& site(SiteRole role, Index view = -1) const;
  static std::size_t site_index(SiteRole role, Index view);

  /// Posterior point summaries: Normal locations for X and W, log-Normal
  /// medians exp(loc) for the scale sites.
  ModelParams point_estimate() const;
};

/// Standard-normal draws, one matrix per site in site order.
using SiteNoise = std::vector<Matrix>;

struct SampleState {
  ModelParams params;
  SiteNoise noise;
};

VariationalParams init_variational(const MultiViewDataset& dataset, Index n_factors,
                                   std::uint64_t seed);

SiteNoise zero_noise(const VariationalParams& vp);
SiteNoise draw_noise(const VariationalParams& vp, std::mt19937_64& rng);

SampleState sample(const VariationalParams& vp, SiteNoise noise);
/// Same as above with the guide sds already evaluated (one matrix per site).
SampleState sample(const VariationalParams& vp, SiteNoise noise, const std::vector<Matrix>& sds);

/// Sum of guide log-densities (log-Normal Jacobians included).
double log_q(const VariationalParams& vp, const SampleState& state);

/// Checkpoint payload for the variational parameters.
nlohmann::json to_json(const VariationalParams& vp);
VariationalParams variational_from_json(const nlohmann::json& j);

}  // namespace muvi
