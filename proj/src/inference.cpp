#include "muvi/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace muvi {

namespace {

using SiteMap = Eigen::Map<const Matrix>;

// Site-ordered views onto a ModelParams tree (values or gradients).
std::vector<SiteMap> site_maps(const ModelParams& p) {
  std::vector<SiteMap> out;
  out.emplace_back(p.x.data(), p.x.rows(), p.x.cols());
  for (const auto& v : p.views) {
    out.emplace_back(v.w.data(), v.w.rows(), v.w.cols());
    out.emplace_back(v.lambda.data(), v.lambda.rows(), v.lambda.cols());
    out.emplace_back(v.delta.data(), v.delta.size(), 1);
    out.emplace_back(&v.tau, 1, 1);
    out.emplace_back(v.c2.data(), v.c2.rows(), v.c2.cols());
    out.emplace_back(v.sigma2.data(), v.sigma2.size(), 1);
  }
  return out;
}

// Guide sds and d sd / d raw_scale for every site, evaluated once per step.
struct ScaleCache {
  std::vector<Matrix> sd;
  std::vector<Matrix> dsd_draw;
};

ScaleCache scale_cache(const VariationalParams& vp) {
  ScaleCache c;
  for (const auto& s : vp.sites) {
    const Array& r = s.raw_scale.array();
    const Array sp = softplus(r);
    const auto floored = sp < GuideSite::kMinScale;
    c.sd.push_back(floored.select(GuideSite::kMinScale, sp).matrix());
    c.dsd_draw.push_back(floored.select(0.0, (1.0 + (-r).exp()).inverse()).matrix());
  }
  return c;
}

// -log q restricted to the batch rows for X (scaled) and in full elsewhere.
// For u = loc + sd * eps: log N(u; loc, sd) = -0.5 eps^2 - log sd - c, and
// a log-Normal site additionally carries the Jacobian -u.
double neg_log_q(const VariationalParams& vp, const SiteNoise& noise, const ScaleCache& cache,
                 std::span<const Index> batch, double scale) {
  double total = 0.0;
  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    const auto& s = vp.sites[i];
    const Array& sd = cache.sd[i].array();
    const Array& eps = noise[i].array();
    Array term = -normal_logpdf(eps) + sd.log();
    if (is_positive(s.role)) term += s.loc.array() + sd * eps;
    if (s.role == SiteRole::x) {
      double sum = 0.0;
      for (Index b : batch) sum += term.row(b).sum();
      total += scale * sum;
    } else {
      total += term.sum();
    }
  }
  return total;
}

// Every step allocates the same large temporaries. Stop glibc from handing
// them back to the kernel after each step, which otherwise costs a page
// fault per touched page on the next one.
void keep_heap_resident() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 512 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)done;
#endif
}

void check_batch(std::span<const Index> batch, Index n) {
  if (batch.empty()) throw ConfigError("batch must be non-empty");
  for (Index b : batch) {
    if (b < 0 || b >= n) throw ConfigError("batch index out of range");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (mc_samples < 1) throw ConfigError("mc_samples must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (!(rel_tol > 0.0)) throw ConfigError("rel_tol must be positive");
  if (check_every < 1) throw ConfigError("check_every must be positive");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("smoothing must lie in [0, 1)");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("final_lr_fraction must lie in (0, 1]");
  }
  if (min_epochs < 0) throw ConfigError("min_epochs must be nonnegative");
}

double TrainConfig::learning_rate_at(Index step, Index total_steps) const {
  if (final_lr_fraction == 1.0 || total_steps <= 1) return learning_rate;
  const double t = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
  return learning_rate * std::pow(final_lr_fraction, t);
}

AdamState AdamState::zeros(const VariationalParams& vp) {
  AdamState st;
  for (const auto& s : vp.sites) {
    st.m_loc.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
    st.v_loc.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
    st.m_raw.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
    st.v_raw.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
  }
  st.x_row_steps = Eigen::VectorXi::Zero(vp.n_samples());
  return st;
}

double elbo_estimate(const VariationalParams& vp, const MultiViewDataset& dataset,
                     const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                     std::span<const Index> batch, const std::vector<SiteNoise>& noise) {
  check_batch(batch, dataset.n_samples());
  if (noise.empty()) throw ConfigError("at least one noise draw is required");
  const double scale = static_cast<double>(dataset.n_samples()) / static_cast<double>(batch.size());
  const ScaleCache cache = scale_cache(vp);
  double total = 0.0;
  for (const auto& eps : noise) {
    const SampleState state = sample(vp, eps, cache.sd);
    const double lp = log_joint(state.params, dataset, prior_scales, config, batch, scale);
    total += lp + neg_log_q(vp, eps, cache, batch, scale);
  }
  const double elbo = total / static_cast<double>(noise.size());
  if (!std::isfinite(elbo)) throw NumericalError("non-finite ELBO estimate");
  return elbo;
}

ElboGradient elbo_gradient(const VariationalParams& vp, const MultiViewDataset& dataset,
                           const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                           std::span<const Index> batch, const std::vector<SiteNoise>& noise) {
  check_batch(batch, dataset.n_samples());
  if (noise.empty()) throw ConfigError("at least one noise draw is required");
  const double scale = static_cast<double>(dataset.n_samples()) / static_cast<double>(batch.size());
  const double inv_draws = 1.0 / static_cast<double>(noise.size());

  ElboGradient out;
  for (const auto& s : vp.sites) {
    out.loc.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
    out.raw.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
  }
  std::vector<char> in_batch(static_cast<std::size_t>(dataset.n_samples()), 0);
  for (Index b : batch) in_batch[static_cast<std::size_t>(b)] = 1;

  const ScaleCache cache = scale_cache(vp);
  ModelParams grad;
  for (const auto& eps : noise) {
    const SampleState state = sample(vp, eps, cache.sd);
    const double lp =
        log_joint_gradient(state.params, dataset, prior_scales, config, batch, scale, grad);
    out.elbo += inv_draws * (lp + neg_log_q(vp, eps, cache, batch, scale));
    const auto values = site_maps(state.params);
    const auto g = site_maps(grad);

    for (std::size_t i = 0; i < vp.sites.size(); ++i) {
      const auto& s = vp.sites[i];
      const Array& sd = cache.sd[i].array();
      const Array& e = eps[i].array();
      // d ELBO / d u, where u is the pre-exp draw for positive sites.
      Array du = g[i].array();
      if (is_positive(s.role)) du = du * values[i].array() + 1.0;
      Array dsd = du * e + sd.inverse();
      if (s.role == SiteRole::x) {
        // Entropy of rows outside the batch is not part of this estimate.
        for (Index r = 0; r < dsd.rows(); ++r) {
          if (in_batch[static_cast<std::size_t>(r)]) {
            dsd.row(r) = du.row(r) * e.row(r) + scale * sd.row(r).inverse();
          } else {
            dsd.row(r).setZero();
          }
        }
      }
      out.loc[i].array() += inv_draws * du;
      out.raw[i].array() += inv_draws * dsd * cache.dsd_draw[i].array();
    }
  }

  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    if (!out.loc[i].allFinite() || !out.raw[i].allFinite()) {
      throw NumericalError("non-finite gradient at site " + vp.sites[i].name);
    }
  }
  if (!std::isfinite(out.elbo)) throw NumericalError("non-finite ELBO estimate");
  return out;
}

void adam_update(VariationalParams& vp, const ElboGradient& grad, std::span<const Index> batch,
                 double learning_rate, AdamState& st) {
  ++st.step;
  const double b1 = st.beta1, b2 = st.beta2, eps = st.eps;
  using Strided = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  using MutRef = Eigen::Ref<Matrix, 0, Strided>;
  using ConstRef = Eigen::Ref<const Matrix, 0, Strided>;
  auto update = [&](MutRef param, MutRef m, MutRef v, const ConstRef& g, double t) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    param.array() += learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };

  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    auto& s = vp.sites[i];
    if (s.role == SiteRole::x) {
      for (Index r : batch) {
        const double t = ++st.x_row_steps(r);
        update(s.loc.row(r), st.m_loc[i].row(r), st.v_loc[i].row(r), grad.loc[i].row(r), t);
        update(s.raw_scale.row(r), st.m_raw[i].row(r), st.v_raw[i].row(r), grad.raw[i].row(r), t);
      }
    } else {
      const double t = static_cast<double>(st.step);
      update(s.loc, st.m_loc[i], st.v_loc[i], grad.loc[i], t);
      update(s.raw_scale, st.m_raw[i], st.v_raw[i], grad.raw[i], t);
    }
  }
}

double gradient_step(VariationalParams& vp, const MultiViewDataset& dataset,
                     const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                     std::span<const Index> batch, AdamState& state, const TrainConfig& train) {
  std::seed_seq seq{static_cast<std::uint32_t>(train.seed), static_cast<std::uint32_t>(train.seed >> 32),
                    static_cast<std::uint32_t>(state.step), static_cast<std::uint32_t>(state.step >> 32),
                    0x6e6f6973u};
  std::mt19937_64 rng(seq);
  std::vector<SiteNoise> noise;
  for (Index s = 0; s < train.mc_samples; ++s) noise.push_back(draw_noise(vp, rng));
  const ElboGradient g = elbo_gradient(vp, dataset, prior_scales, config, batch, noise);
  adam_update(vp, g, batch, train.learning_rate, state);
  return g.elbo;
}

FitResult fit(const MultiViewDataset& dataset, const PriorScaleMatrix& prior_scales,
              Index n_factors, const PriorConfig& config, const TrainConfig& train) {
  train.validate();
  config.validate();
  keep_heap_resident();
  if (prior_scales.n_factors() != n_factors) {
    throw ConfigError("prior scale matrix has " + std::to_string(prior_scales.n_factors()) +
                      " factors, expected " + std::to_string(n_factors));
  }
  const Index n = dataset.n_samples();
  const Index batch_size = std::min(train.batch_size, n);

  FitResult result;
  result.params = init_variational(dataset, n_factors, train.seed);
  result.optimizer = AdamState::zeros(result.params);
  auto& trace = result.trace;

  std::vector<Index> order = full_batch(n);
  const Index batches = (n + batch_size - 1) / batch_size;
  const Index total_steps = train.max_epochs * batches;
  TrainConfig step_config = train;
  double smoothed = std::numeric_limits<double>::quiet_NaN();
  double initial = 0.0;
  double last_check = 0.0;
  Index strikes = 0;

  for (Index epoch = 0; epoch < train.max_epochs; ++epoch) {
    if (batch_size < n) {
      std::seed_seq seq{static_cast<std::uint32_t>(train.seed), static_cast<std::uint32_t>(train.seed >> 32),
                        static_cast<std::uint32_t>(epoch), 0x73687566u};
      std::mt19937_64 rng(seq);
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (Index start = 0; start < n; start += batch_size) {
      const Index len = std::min(batch_size, n - start);
      std::span<const Index> batch(order.data() + start, static_cast<std::size_t>(len));
      const auto t0 = std::chrono::steady_clock::now();
      step_config.learning_rate =
          train.learning_rate_at(static_cast<Index>(trace.elbo.size()), total_steps);
      const double elbo =
          gradient_step(result.params, dataset, prior_scales, config, batch, result.optimizer, step_config);
      const auto t1 = std::chrono::steady_clock::now();
      if (trace.elbo.empty()) {
        smoothed = initial = last_check = elbo;
      } else {
        smoothed = train.smoothing * smoothed + (1.0 - train.smoothing) * elbo;
      }
      trace.elbo.push_back(elbo);
      trace.smoothed.push_back(smoothed);
      trace.step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    trace.epochs = epoch + 1;

    if (smoothed < initial - 10.0 * std::abs(initial)) {
      throw NumericalError("optimization diverged at epoch " + std::to_string(epoch));
    }
    if ((epoch + 1) % train.check_every == 0) {
      const double rel = (smoothed - last_check) / std::abs(last_check);
      last_check = smoothed;
      if (epoch + 1 < train.min_epochs) continue;
      strikes = rel < train.rel_tol ? strikes + 1 : 0;
      if (strikes >= train.patience) {
        trace.stop_reason = "converged";
        return result;
      }
    }
  }
  trace.stop_reason = "max_epochs";
  return result;
}

nlohmann::json checkpoint_json(const VariationalParams& vp, const AdamState& st) {
  auto moments = nlohmann::json::array();
  auto flat = [](const Matrix& m) {
    auto a = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
    return a;
  };
  for (std::size_t i = 0; i < st.m_loc.size(); ++i) {
    moments.push_back({{"m_loc", flat(st.m_loc[i])},
                       {"v_loc", flat(st.v_loc[i])},
                       {"m_raw", flat(st.m_raw[i])},
                       {"v_raw", flat(st.v_raw[i])}});
  }
  std::vector<int> row_steps(st.x_row_steps.data(), st.x_row_steps.data() + st.x_row_steps.size());
  return {{"format", "muvi-checkpoint"},
          {"version", 1},
          {"variational", to_json(vp)},
          {"optimizer",
           {{"beta1", st.beta1},
            {"beta2", st.beta2},
            {"eps", st.eps},
            {"step", st.step},
            {"x_row_steps", row_steps},
            {"moments", moments}}}};
}

void save_checkpoint(const std::filesystem::path& path, const VariationalParams& vp,
                     const AdamState& state) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << checkpoint_json(vp, state).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "muvi-checkpoint") throw ConfigError(path.string() + " is not a checkpoint");
  Checkpoint cp;
  cp.params = variational_from_json(j.at("variational"));
  cp.optimizer = AdamState::zeros(cp.params);
  const auto& o = j.at("optimizer");
  cp.optimizer.beta1 = o.at("beta1").get<double>();
  cp.optimizer.beta2 = o.at("beta2").get<double>();
  cp.optimizer.eps = o.at("eps").get<double>();
  cp.optimizer.step = o.at("step").get<std::int64_t>();
  const auto steps = o.at("x_row_steps").get<std::vector<int>>();
  if (static_cast<Index>(steps.size()) != cp.optimizer.x_row_steps.size()) {
    throw ConfigError("checkpoint optimizer state has the wrong shape");
  }
  for (std::size_t r = 0; r < steps.size(); ++r) cp.optimizer.x_row_steps(static_cast<Index>(r)) = steps[r];
  const auto& moments = o.at("moments");
  if (moments.size() != cp.params.sites.size()) throw ConfigError("checkpoint optimizer state has the wrong shape");
  for (std::size_t i = 0; i < moments.size(); ++i) {
    auto fill = [&](Matrix& m, const char* key) {
      const auto& a = moments[i].at(key);
      if (static_cast<Index>(a.size()) != m.size()) throw ConfigError("checkpoint optimizer state has the wrong shape");
      for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) m(r, c) = a[static_cast<std::size_t>(r * m.cols() + c)].get<double>();
    };
    fill(cp.optimizer.m_loc[i], "m_loc");
    fill(cp.optimizer.v_loc[i], "v_loc");
    fill(cp.optimizer.m_raw[i], "m_raw");
    fill(cp.optimizer.v_raw[i], "v_raw");
  }
  return cp;
}

void write_training_log(const std::filesystem::path& path, const TrainTrace& trace) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "step,elbo,smoothed_elbo,wall_ms\n";
  double wall = 0.0;
  for (std::size_t s = 0; s < trace.elbo.size(); ++s) {
    wall += trace.step_ms[s];
    out << s << ',' << format_double(trace.elbo[s]) << ',' << format_double(trace.smoothed[s]) << ','
        << format_double(wall) << '\n';
  }
}

}  // namespace muvi
