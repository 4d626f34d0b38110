#include "doctest.h"
#include "fixtures.hpp"
#include "muvi/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace muvi;
using muvi::testing::random_dataset;

namespace {

const double kLogStdNormalAtZero = -0.5 * std::log(2.0 * std::numbers::pi);

MultiViewDataset single_entry(double y) {
  std::vector<ViewBlock> views(1);
  views[0].name = "a";
  views[0].data = Matrix::Constant(1, 1, y);
  views[0].mask = BoolMatrix::Constant(1, 1, true);
  views[0].feature_names = {"f"};
  return MultiViewDataset({"s"}, views);
}

ModelParams unit_params(const MultiViewDataset& ds, Index k) {
  ModelParams p = ModelParams::zeros(ds, k);
  for (auto& v : p.views) {
    v.lambda.setOnes();
    v.delta.setOnes();
    v.tau = 1.0;
    v.c2.setOnes();
    v.sigma2.setOnes();
  }
  return p;
}

// Draws every site from its prior (half-Cauchy via |Cauchy|).
ModelParams prior_draw(const MultiViewDataset& ds, Index k, const PriorScaleMatrix& alpha, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::cauchy_distribution<double> cauchy;
  std::gamma_distribution<double> g_half(0.5, 1.0), g_one(1.0, 1.0);
  auto hc = [&] { return std::max(std::abs(cauchy(rng)), 1e-300); };
  ModelParams p = ModelParams::zeros(ds, k);
  for (Index i = 0; i < p.x.size(); ++i) p.x(i) = normal(rng);
  for (std::size_t m = 0; m < p.views.size(); ++m) {
    auto& v = p.views[m];
    v.tau = hc();
    for (Index i = 0; i < v.delta.size(); ++i) v.delta(i) = hc();
    for (Index i = 0; i < v.sigma2.size(); ++i) v.sigma2(i) = 1.0 / g_one(rng);
    for (Index i = 0; i < v.lambda.size(); ++i) {
      v.lambda(i) = hc();
      v.c2(i) = 0.5 / g_half(rng);
    }
    for (Index j = 0; j < v.w.rows(); ++j)
      for (Index c = 0; c < k; ++c) {
        const double sd = regularized_sd(v.tau * v.delta(c) * v.lambda(j, c), alpha.views[m](j, c) * std::sqrt(v.c2(j, c)));
        v.w(j, c) = sd * normal(rng);
      }
  }
  return p;
}

}  // namespace

TEST_CASE("log_likelihood examples") {
  const auto zero = single_entry(0.0);
  ModelParams p = unit_params(zero, 1);
  p.x(0, 0) = 3.0;
  const auto all = full_batch(1);
  CHECK(std::abs(log_likelihood(p, zero, all) - kLogStdNormalAtZero) < 1e-12);

  const auto two = single_entry(2.0);
  ModelParams q = unit_params(two, 1);
  q.x(0, 0) = 2.0;
  q.views[0].w(0, 0) = 1.0;
  CHECK(std::abs(log_likelihood(q, two, all) - kLogStdNormalAtZero) < 1e-12);

  // Fully masked view contributes nothing.
  auto ds = random_dataset(5, {3, 4}, 1);
  std::vector<ViewBlock> views = ds.views();
  views[1].mask.setConstant(false);
  const MultiViewDataset masked(ds.sample_ids(), views);
  std::vector<ViewBlock> only_first{views[0]};
  const MultiViewDataset first(ds.sample_ids(), only_first);
  std::mt19937_64 rng(3);
  const auto alpha = uniform_prior_scales(masked, 2);
  ModelParams r = prior_draw(masked, 2, alpha, rng);
  ModelParams r1 = r;
  r1.views.resize(1);
  CHECK(log_likelihood(r, masked, full_batch(5)) == doctest::Approx(log_likelihood(r1, first, full_batch(5))).epsilon(1e-14));
}

TEST_CASE("log_prior examples") {
  const auto ds = random_dataset(2, {3}, 1);
  ModelParams p = unit_params(ds, 2);
  const auto alpha = uniform_prior_scales(ds, 2);
  PriorConfig cfg;

  // Term-by-term oracle for the all-zero W with unit scales.
  const double expected =
      4.0 * kLogStdNormalAtZero +                                   // X
      (1 + 2 + 6) * std::log(1.0 / std::numbers::pi) +              // tau, delta, lambda at 1
      6 * inverse_gamma_logpdf(1.0, 0.5, 0.5) +                     // c2
      3 * inverse_gamma_logpdf(1.0, 1.0, 1.0) +                     // sigma2
      6 * normal_logpdf(0.0, 0.0, std::sqrt(0.5));                  // W
  CHECK(std::abs(log_prior(p, alpha, cfg) - expected) < 1e-9);

  p.views[0].lambda(1, 1) = -1.0;
  CHECK_THROWS_AS(log_prior(p, alpha, cfg), NumericalError);
}

TEST_CASE("a single-site perturbation changes only that term") {
  const auto ds = random_dataset(3, {4, 2}, 4);
  std::mt19937_64 rng(5);
  auto alpha = uniform_prior_scales(ds, 2);
  alpha.views[0](1, 0) = 0.1;
  const ModelParams p = prior_draw(ds, 2, alpha, rng);
  const PriorConfig cfg;
  const double base = log_prior(p, alpha, cfg);

  ModelParams q = p;
  q.views[0].c2(1, 0) *= 1.7;
  auto w_term = [&](const ModelParams& s) {
    const auto& v = s.views[0];
    const double sd = regularized_sd(v.tau * v.delta(0) * v.lambda(1, 0), 0.1 * std::sqrt(v.c2(1, 0)));
    return normal_logpdf(v.w(1, 0), 0.0, sd) + inverse_gamma_logpdf(v.c2(1, 0), 0.5, 0.5);
  };
  CHECK(log_prior(q, alpha, cfg) - base == doctest::Approx(w_term(q) - w_term(p)).epsilon(1e-9));

  ModelParams r = p;
  r.views[1].sigma2(1) *= 0.4;
  CHECK(log_prior(r, alpha, cfg) - base ==
        doctest::Approx(inverse_gamma_logpdf(r.views[1].sigma2(1), 1.0, 1.0) -
                        inverse_gamma_logpdf(p.views[1].sigma2(1), 1.0, 1.0))
            .epsilon(1e-9));
}

TEST_CASE("alpha scales the slab sd, or the slab variance when switched") {
  const auto ds = random_dataset(1, {1}, 1);
  ModelParams p = unit_params(ds, 1);
  p.views[0].w(0, 0) = 0.3;
  p.views[0].c2(0, 0) = 4.0;
  auto alpha = uniform_prior_scales(ds, 1, 0.25);
  PriorConfig sd_cfg;
  PriorConfig var_cfg;
  var_cfg.scale_slab_sd = false;
  auto w_term = [&](double slab) { return normal_logpdf(0.3, 0.0, regularized_sd(1.0, slab)); };
  const ModelParams zero_w = [&] { ModelParams z = p; z.views[0].w.setZero(); return z; }();
  const double sd_diff = log_prior(p, alpha, sd_cfg) - log_prior(zero_w, alpha, sd_cfg);
  CHECK(sd_diff == doctest::Approx(w_term(0.25 * 2.0) - normal_logpdf(0.0, 0.0, regularized_sd(1.0, 0.5))));
  const double var_diff = log_prior(p, alpha, var_cfg) - log_prior(zero_w, alpha, var_cfg);
  CHECK(var_diff == doctest::Approx(w_term(std::sqrt(0.25 * 4.0)) - normal_logpdf(0.0, 0.0, regularized_sd(1.0, 1.0))));
}

TEST_CASE("log_joint examples") {
  const auto ds = random_dataset(4, {3, 2}, 7, 0.2);
  std::mt19937_64 rng(8);
  const auto alpha = uniform_prior_scales(ds, 2);
  const PriorConfig cfg;
  const ModelParams p = prior_draw(ds, 2, alpha, rng);
  const auto all = full_batch(4);
  const double full = log_joint(p, ds, alpha, cfg, all, 1.0);
  CHECK(full == doctest::Approx(log_likelihood(p, ds, all) + log_prior(p, alpha, cfg)).epsilon(1e-13));

  // Average over all size-2 batches with scale N/B equals the full value.
  double sum = 0.0;
  int count = 0;
  for (Index a = 0; a < 4; ++a)
    for (Index b = a + 1; b < 4; ++b) {
      const std::vector<Index> batch{a, b};
      sum += log_joint(p, ds, alpha, cfg, batch, 2.0);
      ++count;
    }
  CHECK(std::abs(sum / count - full) < 1e-9 * std::abs(full));

  // All-masked dataset: prior only.
  std::vector<ViewBlock> views = ds.views();
  for (auto& v : views) v.mask.setConstant(false);
  const MultiViewDataset empty(ds.sample_ids(), views);
  CHECK(log_joint(p, empty, alpha, cfg, all, 1.0) == doctest::Approx(log_prior(p, alpha, cfg)).epsilon(1e-13));
  CHECK_THROWS_AS(log_joint(p, ds, alpha, cfg, all, 0.0), ConfigError);
}

TEST_CASE("log_joint is finite over prior draws") {
  const auto ds = random_dataset(5, {4, 3}, 9, 0.1);
  std::mt19937_64 rng(10);
  auto alpha = uniform_prior_scales(ds, 3);
  alpha.views[1].setConstant(0.03);
  for (int i = 0; i < 1000; ++i) {
    const ModelParams p = prior_draw(ds, 3, alpha, rng);
    CHECK(std::isfinite(log_joint(p, ds, alpha, PriorConfig{}, full_batch(5), 1.0)));
  }
}

TEST_CASE("factor permutation and sign symmetries") {
  const auto ds = random_dataset(6, {5, 4}, 11, 0.1);
  std::mt19937_64 rng(12);
  const auto alpha = uniform_prior_scales(ds, 3);
  const PriorConfig cfg;
  const ModelParams p = prior_draw(ds, 3, alpha, rng);
  const auto all = full_batch(6);
  const double base = log_joint(p, ds, alpha, cfg, all, 1.0);

  Eigen::PermutationMatrix<Eigen::Dynamic> perm(3);
  perm.indices() << 2, 0, 1;
  ModelParams q = p;
  q.x = p.x * perm;
  for (auto& v : q.views) {
    v.w = v.w * perm;
    v.lambda = v.lambda * perm;
    v.c2 = v.c2 * perm;
    v.delta = perm.transpose() * v.delta;
  }
  CHECK(log_joint(q, ds, alpha, cfg, all, 1.0) == doctest::Approx(base).epsilon(1e-12));

  ModelParams s = p;
  s.x.col(1) *= -1.0;
  for (auto& v : s.views) v.w.col(1) *= -1.0;
  CHECK(log_likelihood(s, ds, all) == doctest::Approx(log_likelihood(p, ds, all)).epsilon(1e-12));
}

TEST_CASE("log_joint gradient matches central finite differences") {
  const auto ds = random_dataset(4, {3, 3}, 13, 0.15);
  std::mt19937_64 rng(14);
  auto alpha = uniform_prior_scales(ds, 2);
  alpha.views[0](0, 1) = 0.05;
  const PriorConfig cfg;
  ModelParams p = prior_draw(ds, 2, alpha, rng);
  // Keep the scales away from extremes so differences are well conditioned.
  for (auto& v : p.views) {
    v.lambda = v.lambda.cwiseMax(0.05).cwiseMin(20.0);
    v.delta = v.delta.cwiseMax(0.05).cwiseMin(20.0);
    v.tau = std::clamp(v.tau, 0.05, 20.0);
    v.c2 = v.c2.cwiseMax(0.05).cwiseMin(20.0);
  }
  const std::vector<Index> batch{2, 0};
  ModelParams grad;
  log_joint_gradient(p, ds, alpha, cfg, batch, 2.0, grad);

  const double h = 1e-5;
  auto check = [&](auto access) {
    ModelParams a = p, b = p;
    const double x0 = access(p);
    access(a) = x0 + h;
    access(b) = x0 - h;
    const double fd = (log_joint(a, ds, alpha, cfg, batch, 2.0) - log_joint(b, ds, alpha, cfg, batch, 2.0)) / (2 * h);
    const double an = access(grad);
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}) < 1e-5);
  };
  for (Index i = 0; i < p.x.size(); ++i) check([i](ModelParams& m) -> double& { return m.x(i); });
  for (std::size_t m = 0; m < 2; ++m) {
    for (Index i = 0; i < 6; ++i) {
      check([m, i](ModelParams& s) -> double& { return s.views[m].w(i); });
      check([m, i](ModelParams& s) -> double& { return s.views[m].lambda(i); });
      check([m, i](ModelParams& s) -> double& { return s.views[m].c2(i); });
    }
    for (Index i = 0; i < 2; ++i) check([m, i](ModelParams& s) -> double& { return s.views[m].delta(i); });
    for (Index i = 0; i < 3; ++i) check([m, i](ModelParams& s) -> double& { return s.views[m].sigma2(i); });
    check([m](ModelParams& s) -> double& { return s.views[m].tau; });
  }
  // Rows outside the batch carry no gradient.
  CHECK(grad.x.row(1).isZero());
  CHECK(grad.x.row(3).isZero());
}
