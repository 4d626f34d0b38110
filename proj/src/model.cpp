#include "muvi/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace muvi {

namespace {

constexpr double kScaleFloor = 1e-12;

bool is_identity(std::span<const Index> rows, Index n) {
  if (static_cast<Index>(rows.size()) != n) return false;
  for (std::size_t b = 0; b < rows.size(); ++b)
    if (rows[b] != static_cast<Index>(b)) return false;
  return true;
}

Matrix gather_rows(const Matrix& m, std::span<const Index> rows) {
  if (is_identity(rows, m.rows())) return m;
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t b = 0; b < rows.size(); ++b) out.row(static_cast<Index>(b)) = m.row(rows[b]);
  return out;
}

BoolMatrix gather_rows(const BoolMatrix& m, std::span<const Index> rows) {
  if (is_identity(rows, m.rows())) return m;
  BoolMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t b = 0; b < rows.size(); ++b) out.row(static_cast<Index>(b)) = m.row(rows[b]);
  return out;
}

// Gaussian likelihood of one view over the batch rows. Accumulates
// scale-weighted gradients into grad_x (batch-ordered rows), grad_w and
// grad_sigma2 when they are non-null.
double view_likelihood(const ViewBlock& view, const ViewSites& sites, const Matrix& x_batch,
                       std::span<const Index> batch, double scale, Matrix* grad_x_batch,
                       ViewSites* grad) {
  if (view.n_observed() == 0) return 0.0;
  const Matrix y = gather_rows(view.data, batch);
  const BoolMatrix mask = gather_rows(view.mask, batch);
  const Matrix obs = mask.cast<double>();
  const Matrix resid = (y - x_batch * sites.w.transpose()).cwiseProduct(obs);
  const Eigen::ArrayXd inv_var = sites.sigma2.array().inverse();

  const Eigen::ArrayXd n_obs = obs.colwise().sum().transpose().array();
  const Eigen::ArrayXd sq = resid.colwise().squaredNorm().transpose().array();
  const double value =
      -(n_obs * (detail::half_log_two_pi<double> + 0.5 * sites.sigma2.array().log())).sum() -
      0.5 * (sq * inv_var).sum();

  if (grad) {
    const Matrix weighted = resid.array().rowwise() * inv_var.transpose();
    grad->w.noalias() += scale * weighted.transpose() * x_batch;
    if (grad_x_batch) grad_x_batch->noalias() += scale * weighted * sites.w;
    grad->sigma2.array() += scale * (-0.5 * n_obs * inv_var + 0.5 * sq * inv_var.square());
  }
  return scale * value;
}

double x_prior(const Matrix& x_batch, double scale, Matrix* grad_x_batch) {
  const double value = normal_logpdf(x_batch.array()).sum();
  if (grad_x_batch) *grad_x_batch -= scale * x_batch;
  return scale * value;
}

// Half-Cauchy(0,1) with the argument floored; the floor kills the gradient.
template <typename Derived>
double half_cauchy_terms(const Eigen::MatrixBase<Derived>& value, Eigen::Ref<Matrix> grad,
                         bool want_grad) {
  const auto floored = value.array().max(kScaleFloor);
  const double lp = half_cauchy_logpdf(floored).sum();
  if (want_grad) {
    grad.array() += (value.array() > kScaleFloor)
                        .select(-2.0 * value.array() / (1.0 + value.array().square()), 0.0);
  }
  return lp;
}

double view_global_prior(const ViewSites& sites, const Matrix& alpha, const PriorConfig& config,
                         ViewSites* grad) {
  const bool want_grad = grad != nullptr;
  double lp = 0.0;

  // Scale hierarchy.
  {
    Matrix tau_m = Matrix::Constant(1, 1, sites.tau);
    Matrix g_tau = Matrix::Zero(1, 1);
    lp += half_cauchy_terms(tau_m, g_tau, want_grad);
    if (want_grad) grad->tau += g_tau(0, 0);
    Matrix g_delta = Matrix::Zero(sites.delta.size(), 1);
    lp += half_cauchy_terms(sites.delta, g_delta, want_grad);
    if (want_grad) grad->delta += g_delta.col(0);
    Matrix g_lambda = Matrix::Zero(sites.lambda.rows(), sites.lambda.cols());
    lp += half_cauchy_terms(sites.lambda, g_lambda, want_grad);
    if (want_grad) grad->lambda += g_lambda;
  }

  lp += inverse_gamma_logpdf(sites.c2.array(), config.slab_shape, config.slab_scale).sum();
  lp += inverse_gamma_logpdf(sites.sigma2.array(), config.noise_shape, config.noise_scale).sum();
  if (want_grad) {
    grad->c2.array() += -(config.slab_shape + 1.0) / sites.c2.array() +
                        config.slab_scale / sites.c2.array().square();
    grad->sigma2.array() += -(config.noise_shape + 1.0) / sites.sigma2.array() +
                            config.noise_scale / sites.sigma2.array().square();
  }

  // Regularized horseshoe on the loadings: precision = 1/slab^2 + 1/gamma^2.
  const Array gamma2 =
      ((sites.lambda.array().rowwise() * sites.delta.transpose().array()) * sites.tau).square();
  const Array slab2 = config.scale_slab_sd ? (alpha.array().square() * sites.c2.array()).eval()
                                           : (alpha.array() * sites.c2.array()).eval();
  const Array prec = slab2.inverse() + gamma2.inverse();
  const Array w2 = sites.w.array().square();
  lp += (0.5 * prec.log() - 0.5 * w2 * prec - detail::half_log_two_pi<double>).sum();

  if (want_grad) {
    // h = d logN / d prec
    const Array h = 0.5 / prec - 0.5 * w2;
    const Array dgamma = -2.0 * h / gamma2;  // times d log gamma
    grad->w.array() -= sites.w.array() * prec;
    grad->lambda.array() += dgamma / sites.lambda.array();
    grad->delta.array() += dgamma.colwise().sum().transpose() / sites.delta.array();
    grad->tau += dgamma.sum() / sites.tau;
    grad->c2.array() += -h / (slab2 * sites.c2.array());
  }
  return lp;
}

double evaluate(const ModelParams& params, const MultiViewDataset& dataset,
                const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                std::span<const Index> batch, double scale, ModelParams* grad) {
  if (!(scale > 0.0)) throw ConfigError("scale factor must be positive");
  check_params(params, dataset);
  if (static_cast<Index>(prior_scales.views.size()) != dataset.n_views()) {
    throw ConfigError("prior scale matrix has the wrong number of views");
  }
  for (Index b : batch) {
    if (b < 0 || b >= dataset.n_samples()) throw ConfigError("batch index out of range");
  }
  if (grad) *grad = ModelParams::zeros(dataset, params.n_factors());

  const Matrix x_batch = gather_rows(params.x, batch);
  Matrix grad_x_batch;
  if (grad) grad_x_batch = Matrix::Zero(x_batch.rows(), x_batch.cols());
  Matrix* gxb = grad ? &grad_x_batch : nullptr;

  double total = x_prior(x_batch, scale, gxb);
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& sites = params.views[static_cast<std::size_t>(m)];
    const auto& alpha = prior_scales.views[static_cast<std::size_t>(m)];
    if (alpha.rows() != sites.w.rows() || alpha.cols() != sites.w.cols()) {
      throw ConfigError("prior scale matrix shape mismatch in view " + dataset.view(m).name);
    }
    ViewSites* g = grad ? &grad->views[static_cast<std::size_t>(m)] : nullptr;
    total += view_likelihood(dataset.view(m), sites, x_batch, batch, scale, gxb, g);
    total += view_global_prior(sites, alpha, config, g);
  }
  if (grad) {
    for (std::size_t b = 0; b < batch.size(); ++b) grad->x.row(batch[b]) += grad_x_batch.row(static_cast<Index>(b));
  }
  return total;
}

}  // namespace

ModelParams ModelParams::zeros(const MultiViewDataset& dataset, Index n_factors) {
  ModelParams p;
  p.x = Matrix::Zero(dataset.n_samples(), n_factors);
  for (const auto& v : dataset.views()) {
    ViewSites s;
    s.w = Matrix::Zero(v.n_features(), n_factors);
    s.lambda = Matrix::Zero(v.n_features(), n_factors);
    s.delta = Vector::Zero(n_factors);
    s.tau = 0.0;
    s.c2 = Matrix::Zero(v.n_features(), n_factors);
    s.sigma2 = Vector::Zero(v.n_features());
    p.views.push_back(std::move(s));
  }
  return p;
}

Matrix delta_matrix(const ModelParams& params) {
  Matrix out(static_cast<Index>(params.views.size()), params.n_factors());
  for (std::size_t m = 0; m < params.views.size(); ++m) out.row(static_cast<Index>(m)) = params.views[m].delta.transpose();
  return out;
}

std::vector<Matrix> loadings(const ModelParams& params) {
  std::vector<Matrix> out;
  for (const auto& v : params.views) out.push_back(v.w);
  return out;
}

void check_params(const ModelParams& params, const MultiViewDataset& dataset) {
  const Index k = params.n_factors();
  if (params.x.rows() != dataset.n_samples()) throw ConfigError("X has the wrong number of rows");
  if (static_cast<Index>(params.views.size()) != dataset.n_views()) {
    throw ConfigError("parameter tree has the wrong number of views");
  }
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const auto& s = params.views[static_cast<std::size_t>(m)];
    const Index d = dataset.view(m).n_features();
    const auto& name = dataset.view(m).name;
    if (s.w.rows() != d || s.w.cols() != k || s.lambda.rows() != d || s.lambda.cols() != k ||
        s.c2.rows() != d || s.c2.cols() != k || s.delta.size() != k || s.sigma2.size() != d) {
      throw ConfigError("site shapes inconsistent with view " + name);
    }
    if (!(s.tau > 0.0) || !(s.lambda.array() > 0.0).all() || !(s.delta.array() > 0.0).all() ||
        !(s.c2.array() > 0.0).all() || !(s.sigma2.array() > 0.0).all()) {
      throw NumericalError("nonpositive scale site in view " + name);
    }
  }
}

std::vector<Index> full_batch(Index n_samples) {
  std::vector<Index> b(static_cast<std::size_t>(n_samples));
  std::iota(b.begin(), b.end(), Index{0});
  return b;
}

double log_likelihood(const ModelParams& params, const MultiViewDataset& dataset,
                      std::span<const Index> batch) {
  check_params(params, dataset);
  const Matrix x_batch = gather_rows(params.x, batch);
  double total = 0.0;
  for (Index m = 0; m < dataset.n_views(); ++m) {
    total += view_likelihood(dataset.view(m), params.views[static_cast<std::size_t>(m)], x_batch,
                             batch, 1.0, nullptr, nullptr);
  }
  return total;
}

double log_prior(const ModelParams& params, const PriorScaleMatrix& prior_scales,
                 const PriorConfig& config) {
  double total = normal_logpdf(params.x.array()).sum();
  if (prior_scales.views.size() != params.views.size()) {
    throw ConfigError("prior scale matrix has the wrong number of views");
  }
  for (std::size_t m = 0; m < params.views.size(); ++m) {
    const auto& s = params.views[m];
    if (!(s.tau > 0.0) || !(s.lambda.array() > 0.0).all() || !(s.delta.array() > 0.0).all() ||
        !(s.c2.array() > 0.0).all() || !(s.sigma2.array() > 0.0).all()) {
      throw NumericalError("nonpositive scale site in view " + std::to_string(m));
    }
    total += view_global_prior(s, prior_scales.views[m], config, nullptr);
  }
  return total;
}

double log_joint(const ModelParams& params, const MultiViewDataset& dataset,
                 const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                 std::span<const Index> batch, double scale_factor) {
  return evaluate(params, dataset, prior_scales, config, batch, scale_factor, nullptr);
}

double log_joint_gradient(const ModelParams& params, const MultiViewDataset& dataset,
                          const PriorScaleMatrix& prior_scales, const PriorConfig& config,
                          std::span<const Index> batch, double scale_factor, ModelParams& grad) {
  return evaluate(params, dataset, prior_scales, config, batch, scale_factor, &grad);
}

}  // namespace muvi
