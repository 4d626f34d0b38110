#include "muvi/variational.hpp"

#include <cmath>

namespace muvi {

namespace {

constexpr double kInitScale = 0.1;

std::size_t site_slot(SiteRole role) {
  switch (role) {
    case SiteRole::w: return 0;
    case SiteRole::lambda: return 1;
    case SiteRole::delta: return 2;
    case SiteRole::tau: return 3;
    case SiteRole::c2: return 4;
    case SiteRole::sigma2: return 5;
    case SiteRole::x: break;
  }
  return 0;
}

constexpr SiteRole kViewRoles[] = {SiteRole::w,   SiteRole::lambda, SiteRole::delta,
                                   SiteRole::tau, SiteRole::c2,     SiteRole::sigma2};

SiteRole parse_role(const std::string& s) {
  for (SiteRole r : {SiteRole::x, SiteRole::w, SiteRole::lambda, SiteRole::delta, SiteRole::tau,
                     SiteRole::c2, SiteRole::sigma2}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown site role '" + s + "'");
}

Matrix to_matrix(const nlohmann::json& values, Index rows, Index cols) {
  if (!values.is_array() || static_cast<Index>(values.size()) != rows * cols) {
    throw ConfigError("checkpoint array has the wrong length");
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

nlohmann::json to_array(const Matrix& m) {
  auto arr = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
  return arr;
}

}  // namespace

std::string to_string(SiteRole role) {
  switch (role) {
    case SiteRole::x: return "x";
    case SiteRole::w: return "w";
    case SiteRole::lambda: return "lambda";
    case SiteRole::delta: return "delta";
    case SiteRole::tau: return "tau";
    case SiteRole::c2: return "c2";
    case SiteRole::sigma2: return "sigma2";
  }
  return "x";
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Array softplus(const Array& x) {
  const Array u = (-x.abs()).exp();
  const Array w = 1.0 + u;
  // log1p(u) through log(w) with Goldberg's correction keeps full precision.
  return x.max(0.0) + (w == 1.0).select(u, w.log() * u / (w - 1.0));
}

double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

Matrix GuideSite::sd() const {
  return softplus(raw_scale.array()).max(kMinScale).matrix();
}

std::size_t VariationalParams::site_index(SiteRole role, Index view) {
  if (role == SiteRole::x) return 0;
  return 1 + 6 * static_cast<std::size_t>(view) + site_slot(role);
}

GuideSite& VariationalParams::site(SiteRole role, Index view) {
  return sites.at(site_index(role, view));
}

const GuideSite& VariationalParams::site(SiteRole role, Index view) const {
  return sites.at(site_index(role, view));
}

ModelParams VariationalParams::point_estimate() const {
  ModelParams p;
  p.x = site(SiteRole::x).loc;
  for (Index m = 0; m < n_views(); ++m) {
    ViewSites s;
    s.w = site(SiteRole::w, m).loc;
    s.lambda = site(SiteRole::lambda, m).loc.array().exp();
    s.delta = site(SiteRole::delta, m).loc.col(0).array().exp();
    s.tau = std::exp(site(SiteRole::tau, m).loc(0, 0));
    s.c2 = site(SiteRole::c2, m).loc.array().exp();
    s.sigma2 = site(SiteRole::sigma2, m).loc.col(0).array().exp();
    p.views.push_back(std::move(s));
  }
  return p;
}

VariationalParams init_variational(const MultiViewDataset& dataset, Index n_factors,
                                   std::uint64_t seed) {
  if (n_factors < 1) throw ConfigError("number of factors must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitScale);
  const double raw = softplus_inverse(kInitScale);

  auto make_site = [&](std::string name, SiteRole role, Index view, Index rows, Index cols) {
    GuideSite s;
    s.name = std::move(name);
    s.role = role;
    s.view = view;
    if (is_positive(role)) {
      s.loc = Matrix::Zero(rows, cols);
    } else {
      s.loc.resize(rows, cols);
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) s.loc(r, c) = normal(rng);
    }
    s.raw_scale = Matrix::Constant(rows, cols, raw);
    return s;
  };

  VariationalParams vp;
  vp.sites.push_back(make_site("x", SiteRole::x, -1, dataset.n_samples(), n_factors));
  for (Index m = 0; m < dataset.n_views(); ++m) {
    const Index d = dataset.view(m).n_features();
    const auto& name = dataset.view(m).name;
    for (SiteRole role : kViewRoles) {
      Index rows = d, cols = n_factors;
      if (role == SiteRole::delta) rows = n_factors, cols = 1;
      if (role == SiteRole::tau) rows = 1, cols = 1;
      if (role == SiteRole::sigma2) cols = 1;
      vp.sites.push_back(make_site(to_string(role) + "/" + name, role, m, rows, cols));
    }
  }
  return vp;
}

SiteNoise zero_noise(const VariationalParams& vp) {
  SiteNoise noise;
  for (const auto& s : vp.sites) noise.push_back(Matrix::Zero(s.loc.rows(), s.loc.cols()));
  return noise;
}

SiteNoise draw_noise(const VariationalParams& vp, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  SiteNoise noise;
  for (const auto& s : vp.sites) {
    Matrix e(s.loc.rows(), s.loc.cols());
    for (Index r = 0; r < e.rows(); ++r)
      for (Index c = 0; c < e.cols(); ++c) e(r, c) = normal(rng);
    noise.push_back(std::move(e));
  }
  return noise;
}

SampleState sample(const VariationalParams& vp, SiteNoise noise) {
  std::vector<Matrix> sds;
  for (const auto& s : vp.sites) sds.push_back(s.sd());
  return sample(vp, std::move(noise), sds);
}

SampleState sample(const VariationalParams& vp, SiteNoise noise, const std::vector<Matrix>& sds) {
  if (noise.size() != vp.sites.size()) throw ConfigError("noise has the wrong number of sites");
  std::vector<Matrix> values;
  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    const auto& s = vp.sites[i];
    if (noise[i].rows() != s.loc.rows() || noise[i].cols() != s.loc.cols()) {
      throw ConfigError("noise shape mismatch at site " + s.name);
    }
    Matrix v = s.loc + sds[i].cwiseProduct(noise[i]);
    if (is_positive(s.role)) v = v.array().exp();
    values.push_back(std::move(v));
  }

  SampleState state;
  state.params.x = values[0];
  for (Index m = 0; m < vp.n_views(); ++m) {
    auto at = [&](SiteRole r) -> Matrix& { return values[VariationalParams::site_index(r, m)]; };
    ViewSites v;
    v.w = std::move(at(SiteRole::w));
    v.lambda = std::move(at(SiteRole::lambda));
    v.delta = at(SiteRole::delta).col(0);
    v.tau = at(SiteRole::tau)(0, 0);
    v.c2 = std::move(at(SiteRole::c2));
    v.sigma2 = at(SiteRole::sigma2).col(0);
    state.params.views.push_back(std::move(v));
  }
  state.noise = std::move(noise);
  return state;
}

double log_q(const VariationalParams& vp, const SampleState& state) {
  double total = 0.0;
  for (std::size_t i = 0; i < vp.sites.size(); ++i) {
    const auto& s = vp.sites[i];
    Matrix value;
    const Index m = s.view;
    switch (s.role) {
      case SiteRole::x: value = state.params.x; break;
      case SiteRole::w: value = state.params.views.at(static_cast<std::size_t>(m)).w; break;
      case SiteRole::lambda: value = state.params.views.at(static_cast<std::size_t>(m)).lambda; break;
      case SiteRole::delta: value = state.params.views.at(static_cast<std::size_t>(m)).delta; break;
      case SiteRole::tau: value = Matrix::Constant(1, 1, state.params.views.at(static_cast<std::size_t>(m)).tau); break;
      case SiteRole::c2: value = state.params.views.at(static_cast<std::size_t>(m)).c2; break;
      case SiteRole::sigma2: value = state.params.views.at(static_cast<std::size_t>(m)).sigma2; break;
    }
    if (value.rows() != s.loc.rows() || value.cols() != s.loc.cols()) {
      throw ConfigError("state shape mismatch at site " + s.name);
    }
    const Array sd = s.sd().array();
    if (is_positive(s.role)) {
      if (!(value.array() > 0.0).all()) throw NumericalError("nonpositive value at site " + s.name);
      const Array log_v = value.array().log();
      total += (normal_logpdf(log_v, s.loc.array(), sd) - log_v).sum();
    } else {
      total += normal_logpdf(value.array(), s.loc.array(), sd).sum();
    }
  }
  return total;
}

nlohmann::json to_json(const VariationalParams& vp) {
  auto sites = nlohmann::json::array();
  for (const auto& s : vp.sites) {
    sites.push_back({{"name", s.name},
                     {"role", to_string(s.role)},
                     {"view", s.view},
                     {"rows", s.loc.rows()},
                     {"cols", s.loc.cols()},
                     {"loc", to_array(s.loc)},
                     {"raw_scale", to_array(s.raw_scale)}});
  }
  return {{"sites", sites}};
}

VariationalParams variational_from_json(const nlohmann::json& j) {
  VariationalParams vp;
  for (const auto& js : j.at("sites")) {
    GuideSite s;
    s.name = js.at("name").get<std::string>();
    s.role = parse_role(js.at("role").get<std::string>());
    s.view = js.at("view").get<Index>();
    const Index rows = js.at("rows").get<Index>();
    const Index cols = js.at("cols").get<Index>();
    s.loc = to_matrix(js.at("loc"), rows, cols);
    s.raw_scale = to_matrix(js.at("raw_scale"), rows, cols);
    vp.sites.push_back(std::move(s));
  }
  if (vp.sites.empty() || (vp.sites.size() - 1) % 6 != 0) {
    throw ConfigError("checkpoint has an unexpected number of sites");
  }
  return vp;
}

}  // namespace muvi
