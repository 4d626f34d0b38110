#include "doctest.h"
#include "fixtures.hpp"
#include "muvi/variational.hpp"

#include <cmath>
#include <numbers>

using namespace muvi;
using muvi::testing::random_dataset;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

TEST_CASE("init_variational examples") {
  const auto ds = random_dataset(10, {400, 30}, 1);
  const auto a = init_variational(ds, 15, 7);
  const auto b = init_variational(ds, 15, 7);
  const auto c = init_variational(ds, 15, 8);
  REQUIRE(a.sites.size() == 13);
  CHECK(a.site(SiteRole::w, 0).loc.rows() == 400);
  CHECK(a.site(SiteRole::w, 0).loc.cols() == 15);
  CHECK(a.site(SiteRole::delta, 1).loc.rows() == 15);
  CHECK(a.site(SiteRole::tau, 1).loc.size() == 1);
  CHECK(a.site(SiteRole::sigma2, 1).loc.rows() == 30);
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    CHECK(a.sites[i].loc == b.sites[i].loc);
    CHECK(a.sites[i].raw_scale == b.sites[i].raw_scale);
    CHECK((a.sites[i].sd().array() - 0.1).abs().maxCoeff() < 1e-12);
    if (is_positive(a.sites[i].role)) CHECK(a.sites[i].loc.isZero());
  }
  CHECK(a.site(SiteRole::x).loc != c.site(SiteRole::x).loc);
  const auto& wl = a.site(SiteRole::w, 0).loc;
  const double sd = std::sqrt(wl.squaredNorm() / static_cast<double>(wl.size()));
  CHECK(sd == doctest::Approx(0.1).epsilon(0.05));
  CHECK_THROWS_AS(init_variational(ds, 0, 1), ConfigError);
}

TEST_CASE("sample examples") {
  const auto ds = random_dataset(4, {3, 2}, 2);
  VariationalParams vp = init_variational(ds, 2, 3);
  vp.site(SiteRole::lambda, 1).loc.setConstant(0.7);
  const SampleState med = sample(vp, zero_noise(vp));
  CHECK(med.params.x == vp.site(SiteRole::x).loc);
  CHECK(med.params.views[1].w == vp.site(SiteRole::w, 1).loc);
  CHECK((med.params.views[1].lambda.array() - std::exp(0.7)).abs().maxCoeff() < 1e-15);
  CHECK(med.params.views[0].tau == 1.0);

  // Floored sd: draws collapse onto the median.
  VariationalParams tight = vp;
  for (auto& s : tight.sites) s.raw_scale.setConstant(-50.0);
  std::mt19937_64 rng(1);
  const SampleState t = sample(tight, draw_noise(tight, rng));
  CHECK((t.params.x - tight.site(SiteRole::x).loc).cwiseAbs().maxCoeff() < 1e-5);

  // Shape mismatch.
  SiteNoise bad = zero_noise(vp);
  bad[2] = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(sample(vp, bad), ConfigError);

  // Positive support for extreme finite noise.
  SiteNoise big = zero_noise(vp);
  for (auto& e : big) e.setConstant(-40.0);
  const SampleState s = sample(vp, big);
  for (const auto& v : s.params.views) {
    CHECK((v.lambda.array() > 0.0).all());
    CHECK((v.c2.array() > 0.0).all());
    CHECK(v.tau > 0.0);
  }
}

TEST_CASE("log-Normal sample mean matches the closed form") {
  const auto ds = random_dataset(1, {1}, 2);
  VariationalParams vp = init_variational(ds, 1, 3);
  auto& tau = vp.site(SiteRole::tau, 0);
  const double mu = 0.3, sd = 0.5;
  tau.loc(0, 0) = mu;
  tau.raw_scale(0, 0) = softplus_inverse(sd);
  std::mt19937_64 rng(4);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample(vp, draw_noise(vp, rng)).params.views[0].tau;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double mc_sd = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean - std::exp(mu + 0.5 * sd * sd)) < 3.0 * mc_sd);
}

TEST_CASE("log_q examples") {
  const auto ds = random_dataset(1, {1}, 2);
  VariationalParams vp = init_variational(ds, 1, 3);
  for (auto& s : vp.sites) s.raw_scale.setConstant(softplus_inverse(1.0));
  vp.site(SiteRole::tau, 0).loc(0, 0) = 0.4;
  const SampleState med = sample(vp, zero_noise(vp));

  // Per-site oracle: Normal at its mode, log-Normal at its median.
  double expected = 0.0;
  for (const auto& s : vp.sites) expected += -kHalfLog2Pi - (is_positive(s.role) ? s.loc(0, 0) : 0.0);
  CHECK(std::abs(log_q(vp, med) - expected) < 1e-12);

  // Factorization: moving one site changes log_q by that site's term only.
  SiteNoise eps = zero_noise(vp);
  eps[VariationalParams::site_index(SiteRole::tau, 0)](0, 0) = 1.3;
  eps[0](0, 0) = -0.6;
  const SampleState moved = sample(vp, eps);
  const double x_term = normal_logpdf(-0.6, 0.0, 1.0) - (-kHalfLog2Pi);
  const double tau_term = lognormal_logpdf(std::exp(0.4 + 1.3), 0.4, 1.0) - (-kHalfLog2Pi - 0.4);
  CHECK(std::abs(log_q(vp, moved) - (expected + x_term + tau_term)) < 1e-12);

  SampleState broken = med;
  broken.params.views[0].tau = -1.0;
  CHECK_THROWS_AS(log_q(vp, broken), NumericalError);
}

TEST_CASE("log_q of a reparameterized draw has finite-difference gradients") {
  // Closed form: for a real site log q = log N(eps; 0, 1) - log sd, for a
  // positive site additionally minus (loc + sd eps).
  const auto ds = random_dataset(2, {2}, 5);
  VariationalParams vp = init_variational(ds, 2, 6);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto& s : vp.sites)
    for (Index i = 0; i < s.loc.size(); ++i) {
      s.loc(i) = normal(rng);
      s.raw_scale(i) = normal(rng);
    }
  const SiteNoise eps = draw_noise(vp, rng);
  const double h = 1e-6;
  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    const bool positive = is_positive(vp.sites[i].role);
    for (Index e = 0; e < vp.sites[i].loc.size(); ++e) {
      const double raw = vp.sites[i].raw_scale(e);
      const double sd = softplus(raw);
      const double sig = 1.0 / (1.0 + std::exp(-raw));
      const double d_loc = positive ? -1.0 : 0.0;
      const double d_raw = (-1.0 / sd - (positive ? eps[i](e) : 0.0)) * sig;
      for (int field = 0; field < 2; ++field) {
        auto eval = [&](double delta) {
          VariationalParams p = vp;
          (field == 0 ? p.sites[i].loc : p.sites[i].raw_scale)(e) += delta;
          return log_q(p, sample(p, eps));
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        const double an = field == 0 ? d_loc : d_raw;
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}) < 1e-5);
      }
    }
  }
}

TEST_CASE("point estimates and checkpoint payload") {
  const auto ds = random_dataset(3, {2, 2}, 8);
  VariationalParams vp = init_variational(ds, 2, 9);
  vp.site(SiteRole::delta, 1).loc(1, 0) = -2.0;
  const ModelParams pe = vp.point_estimate();
  CHECK(pe.views[1].delta(1) == doctest::Approx(std::exp(-2.0)));
  CHECK(pe.views[0].w == vp.site(SiteRole::w, 0).loc);

  const auto back = variational_from_json(to_json(vp));
  REQUIRE(back.sites.size() == vp.sites.size());
  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    CHECK(back.sites[i].name == vp.sites[i].name);
    CHECK(back.sites[i].role == vp.sites[i].role);
    CHECK(back.sites[i].loc == vp.sites[i].loc);
    CHECK(back.sites[i].raw_scale == vp.sites[i].raw_scale);
  }
}
