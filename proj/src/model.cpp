#include "infsamp/model.hpp"

#include <cmath>
#include <stdexcept>

#include "infsamp/core_stats.hpp"

namespace infsamp {

namespace {

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;
constexpr double kLogTwo = 0.69314718055994530942;

}  // namespace

std::vector<std::string> DifferentiableDensity::parameter_names() const {
  std::vector<std::string> out;
  for (int k = 0; k < dimension(); ++k) out.push_back("theta[" + std::to_string(k) + "]");
  return out;
}

std::string_view to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::FullBoth: return "full-both";
    case ModelVariant::FullY: return "full-y";
    case ModelVariant::Pop: return "pop";
  }
  return "?";
}

ModelVariant parse_variant(std::string_view s) {
  if (s == "full-both" || s == "FULL.both") return ModelVariant::FullBoth;
  if (s == "full-y" || s == "FULL.y") return ModelVariant::FullY;
  if (s == "pop" || s == "Pop") return ModelVariant::Pop;
  throw std::invalid_argument("unknown model variant '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// SurveySample

std::vector<int> SurveySample::psu_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(num_psu), 0);
  for (int j : psu) {
    if (j >= 0 && j < num_psu) ++sizes[static_cast<std::size_t>(j)];
  }
  return sizes;
}

void SurveySample::validate() const {
  const auto n = y.size();
  if (n == 0) throw std::invalid_argument("sample is empty");
  if (x_y.rows() != n || x_pi.rows() != n || log_pi.size() != n ||
      static_cast<Eigen::Index>(psu.size()) != n) {
    throw std::invalid_argument("sample columns have inconsistent lengths");
  }
  if (x_y.cols() < 1 || x_pi.cols() < 1) {
    throw std::invalid_argument("design matrices need an intercept column");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x_y(i, 0) != 1.0 || x_pi(i, 0) != 1.0) {
      throw std::invalid_argument("first design column must be all ones");
    }
  }
  if (num_psu < 1) throw std::invalid_argument("sample has no PSUs");
  for (int j : psu) {
    if (j < 0 || j >= num_psu) {
      throw std::invalid_argument("PSU label " + std::to_string(j) + " outside [0, J)");
    }
  }
  for (int size : psu_sizes()) {
    if (size == 0) throw std::invalid_argument("every PSU must contain at least one unit");
  }
  if (!y.allFinite() || !x_y.allFinite() || !x_pi.allFinite()) {
    throw std::invalid_argument("sample contains non-finite values");
  }
  if (!log_pi.allFinite()) {
    throw std::invalid_argument("log inclusion probabilities must be finite");
  }
}

// ---------------------------------------------------------------------------
// ParamLayout

ParamLayout::ParamLayout(ModelVariant variant, int n_beta, int n_kappa_x, int num_psu,
                         Parameterization param)
    : variant_(variant),
      param_(param),
      n_beta_(n_beta),
      n_kappa_x_(variant == ModelVariant::Pop ? 0 : n_kappa_x),
      num_psu_(num_psu) {
  if (n_beta < 1 || num_psu < 1) throw std::invalid_argument("empty parameter layout");
  if (variant != ModelVariant::Pop && n_kappa_x < 1) {
    throw std::invalid_argument("weight model needs an intercept");
  }
  int at = 0;
  beta_ = at;
  at += n_beta_;
  log_sigma_y_ = at++;
  kappa_x_ = at;
  at += n_kappa_x_;
  kappa_y_ = at;
  if (has_weight_model()) ++at;
  log_sigma_pi_ = at;
  if (has_weight_model()) ++at;
  eta_y_ = at;
  at += num_psu_;
  eta_pi_ = at;
  if (has_eta_pi()) at += num_psu_;
  log_sd_eta_y_ = at++;
  log_sd_eta_pi_ = at;
  if (has_eta_pi()) ++at;
  dim_ = at;
}

std::vector<int> ParamLayout::scale_coordinates() const {
  std::vector<int> out{log_sigma_y_};
  if (has_weight_model()) out.push_back(log_sigma_pi_);
  out.push_back(log_sd_eta_y_);
  if (has_eta_pi()) out.push_back(log_sd_eta_pi_);
  return out;
}

std::vector<std::string> ParamLayout::names() const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(dim_));
  for (int k = 0; k < n_beta_; ++k) out.push_back("beta[" + std::to_string(k) + "]");
  out.push_back("sigma_y");
  if (has_weight_model()) {
    for (int k = 0; k < n_kappa_x_; ++k) out.push_back("kappa[" + std::to_string(k) + "]");
    out.push_back("kappa_y");
    out.push_back("sigma_pi");
  }
  for (int j = 1; j <= num_psu_; ++j) out.push_back("eta_y[" + std::to_string(j) + "]");
  if (has_eta_pi()) {
    for (int j = 1; j <= num_psu_; ++j) out.push_back("eta_pi[" + std::to_string(j) + "]");
  }
  out.push_back("sd_eta_y");
  if (has_eta_pi()) out.push_back("sd_eta_pi");
  return out;
}

ModelParams ParamLayout::transform(const Eigen::VectorXd &u) const {
  if (u.size() != dim_) throw std::invalid_argument("unconstrained vector has wrong length");
  ModelParams p;
  p.beta = u.segment(beta_, n_beta_);
  p.sigma_y = std::exp(u[log_sigma_y_]);
  p.sd_eta_y = std::exp(u[log_sd_eta_y_]);
  p.eta_y = u.segment(eta_y_, num_psu_);
  if (param_ == Parameterization::NonCentered) p.eta_y *= p.sd_eta_y;
  if (has_weight_model()) {
    p.kappa_x = u.segment(kappa_x_, n_kappa_x_);
    p.kappa_y = u[kappa_y_];
    p.sigma_pi = std::exp(u[log_sigma_pi_]);
  } else {
    p.kappa_x = Eigen::VectorXd::Zero(0);
    p.kappa_y = 0.0;
    p.sigma_pi = 1.0;
  }
  if (has_eta_pi()) {
    p.sd_eta_pi = std::exp(u[log_sd_eta_pi_]);
    p.eta_pi = u.segment(eta_pi_, num_psu_);
    if (param_ == Parameterization::NonCentered) p.eta_pi *= p.sd_eta_pi;
  } else {
    p.eta_pi = Eigen::VectorXd::Zero(num_psu_);
    p.sd_eta_pi = 1.0;
  }
  return p;
}

Eigen::VectorXd ParamLayout::inverse_transform(const ModelParams &p) const {
  if (p.beta.size() != n_beta_ || p.eta_y.size() != num_psu_) {
    throw std::invalid_argument("parameter block sizes do not match layout");
  }
  if (!(p.sigma_y > 0.0) || !(p.sd_eta_y > 0.0)) {
    throw std::invalid_argument("scale parameters must be positive");
  }
  Eigen::VectorXd u(dim_);
  u.segment(beta_, n_beta_) = p.beta;
  u[log_sigma_y_] = std::log(p.sigma_y);
  u[log_sd_eta_y_] = std::log(p.sd_eta_y);
  u.segment(eta_y_, num_psu_) = p.eta_y;
  if (param_ == Parameterization::NonCentered) u.segment(eta_y_, num_psu_) /= p.sd_eta_y;
  if (has_weight_model()) {
    if (p.kappa_x.size() != n_kappa_x_ || !(p.sigma_pi > 0.0)) {
      throw std::invalid_argument("weight-model block does not match layout");
    }
    u.segment(kappa_x_, n_kappa_x_) = p.kappa_x;
    u[kappa_y_] = p.kappa_y;
    u[log_sigma_pi_] = std::log(p.sigma_pi);
  }
  if (has_eta_pi()) {
    if (p.eta_pi.size() != num_psu_ || !(p.sd_eta_pi > 0.0)) {
      throw std::invalid_argument("eta_pi block does not match layout");
    }
    u[log_sd_eta_pi_] = std::log(p.sd_eta_pi);
    u.segment(eta_pi_, num_psu_) = p.eta_pi;
    if (param_ == Parameterization::NonCentered) u.segment(eta_pi_, num_psu_) /= p.sd_eta_pi;
  }
  return u;
}

Eigen::VectorXd ParamLayout::constrain(const Eigen::VectorXd &u) const {
  Eigen::VectorXd out = u;
  for (int k : scale_coordinates()) out[k] = std::exp(u[k]);
  if (param_ == Parameterization::NonCentered) {
    out.segment(eta_y_, num_psu_) *= out[log_sd_eta_y_];
    if (has_eta_pi()) out.segment(eta_pi_, num_psu_) *= out[log_sd_eta_pi_];
  }
  return out;
}

double ParamLayout::log_jacobian(const Eigen::VectorXd &u) const {
  double total = 0.0;
  for (int k : scale_coordinates()) total += u[k];
  return total;
}

// ---------------------------------------------------------------------------
// Per-unit exact likelihood

double log_ps_unit(double y, double log_pi, const Eigen::Ref<const Eigen::VectorXd> &x_y,
                   const Eigen::Ref<const Eigen::VectorXd> &x_pi, const ModelParams &params,
                   int psu, ModelVariant variant) {
  if (variant == ModelVariant::Pop) {
    throw std::invalid_argument("log_ps_unit is defined for the joint variants only");
  }
  if (!std::isfinite(y) || !std::isfinite(log_pi) || !x_y.allFinite() || !x_pi.allFinite()) {
    throw DomainError("log_ps_unit: non-finite input");
  }
  const double eta_y = params.eta_y[psu];
  const double eta_pi = variant == ModelVariant::FullBoth ? params.eta_pi[psu] : 0.0;
  const double mean_y = x_y.dot(params.beta) + eta_y;
  const double linear_pi = x_pi.dot(params.kappa_x) + eta_pi;
  const double var_y = params.sigma_y * params.sigma_y;
  const double var_pi = params.sigma_pi * params.sigma_pi;
  const double log_weight = log_density_normal(log_pi, {params.kappa_y * y + linear_pi, var_pi});
  // log E_y[E(pi | y)] = linear_pi + var_pi/2 + log M_y(kappa_y).
  const double log_denominator = linear_pi + 0.5 * var_pi + params.kappa_y * mean_y +
                                 0.5 * params.kappa_y * params.kappa_y * var_y;
  return log_weight - log_denominator + log_density_normal(y, {mean_y, var_y});
}

// ---------------------------------------------------------------------------
// PosteriorModel

PosteriorModel::PosteriorModel(SurveySample data, ModelVariant variant, Parameterization param,
                               PriorSpec prior, std::optional<Eigen::VectorXd> unit_weights)
    : data_(std::move(data)),
      layout_(variant, static_cast<int>(data_.x_y.cols()), static_cast<int>(data_.x_pi.cols()),
              data_.num_psu, param),
      prior_(prior),
      weights_(std::move(unit_weights)) {
  data_.validate();
  x_y_ = data_.x_y;
  x_pi_ = data_.x_pi;
  if (weights_) {
    if (variant != ModelVariant::Pop) {
      throw std::invalid_argument("unit weights apply to the Pop response model only");
    }
    if (weights_->size() != data_.y.size() || !(weights_->array() > 0.0).all()) {
      throw std::invalid_argument("unit weights must be positive, one per unit");
    }
  }
}

double PosteriorModel::log_density(const Eigen::VectorXd &u) const {
  return evaluate(u, nullptr);
}

double PosteriorModel::log_density_gradient(const Eigen::VectorXd &u,
                                            Eigen::VectorXd &grad) const {
  grad.resize(layout_.dim());
  return evaluate(u, &grad);
}

double PosteriorModel::log_likelihood(const ModelParams &p) const {
  const auto n = static_cast<Eigen::Index>(data_.size());
  double total = 0.0;
  if (layout_.has_weight_model()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      total += log_ps_unit(data_.y[i], data_.log_pi[i], data_.x_y.row(i).transpose(),
                           data_.x_pi.row(i).transpose(), p, data_.psu[static_cast<std::size_t>(i)],
                           layout_.variant());
    }
  } else {
    const double var_y = p.sigma_y * p.sigma_y;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mean = data_.x_y.row(i).dot(p.beta) + p.eta_y[data_.psu[static_cast<std::size_t>(i)]];
      const double term = log_density_normal(data_.y[i], {mean, var_y});
      total += weights_ ? (*weights_)[i] * term : term;
    }
  }
  return total;
}

double PosteriorModel::log_prior(const Eigen::VectorXd &u) const {
  return log_density(u) - log_likelihood(layout_.transform(u));
}

double PosteriorModel::evaluate(const Eigen::VectorXd &u, Eigen::VectorXd *grad) const {
  const ParamLayout &L = layout_;
  if (u.size() != L.dim()) throw std::invalid_argument("unconstrained vector has wrong length");
  const int nb = L.n_beta();
  const int nk = L.n_kappa_x();
  const int J = L.num_psu();
  const bool weight_model = L.has_weight_model();
  const bool has_eta_pi = L.has_eta_pi();
  const bool noncentered = L.parameterization() == Parameterization::NonCentered;

  const double log_sigma_y = u[L.log_sigma_y()];
  const double sigma_y = std::exp(log_sigma_y);
  const double var_y = sigma_y * sigma_y;
  const double log_sd_eta_y = u[L.log_sd_eta_y()];
  const double sd_eta_y = std::exp(log_sd_eta_y);
  const auto beta = u.segment(L.beta(), nb);

  Eigen::VectorXd eta_y = u.segment(L.eta_y(), J);
  if (noncentered) eta_y *= sd_eta_y;

  double kappa_y = 0.0, log_sigma_pi = 0.0, sigma_pi = 1.0, var_pi = 1.0;
  double log_sd_eta_pi = 0.0, sd_eta_pi = 1.0;
  Eigen::VectorXd kappa_x, eta_pi = Eigen::VectorXd::Zero(J);
  if (weight_model) {
    kappa_x = u.segment(L.kappa_x(), nk);
    kappa_y = u[L.kappa_y()];
    log_sigma_pi = u[L.log_sigma_pi()];
    sigma_pi = std::exp(log_sigma_pi);
    var_pi = sigma_pi * sigma_pi;
  }
  if (has_eta_pi) {
    log_sd_eta_pi = u[L.log_sd_eta_pi()];
    sd_eta_pi = std::exp(log_sd_eta_pi);
    eta_pi = u.segment(L.eta_pi(), J);
    if (noncentered) eta_pi *= sd_eta_pi;
  }

  // Likelihood accumulators: gradients w.r.t. the natural locations and the
  // log scales.
  Eigen::VectorXd g_beta = Eigen::VectorXd::Zero(nb);
  Eigen::VectorXd g_kappa = Eigen::VectorXd::Zero(nk);
  Eigen::VectorXd g_eta_y = Eigen::VectorXd::Zero(J);
  Eigen::VectorXd g_eta_pi = Eigen::VectorXd::Zero(J);
  double g_kappa_y = 0.0, g_log_sigma_y = 0.0, g_log_sigma_pi = 0.0;

  const auto n = static_cast<Eigen::Index>(data_.size());
  const double inv_var_y = 1.0 / var_y;
  const double inv_var_pi = 1.0 / var_pi;
  const double unit_const_y = -kLogSqrtTwoPi - log_sigma_y;
  const double unit_const_pi = -kLogSqrtTwoPi - log_sigma_pi;
  const bool want_grad = grad != nullptr;

  double loglik = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = data_.psu[static_cast<std::size_t>(i)];
    const double yi = data_.y[i];
    const double mean_y = x_y_.row(i).dot(beta) + eta_y[j];
    const double resid_y = yi - mean_y;
    double term = unit_const_y - 0.5 * resid_y * resid_y * inv_var_y;
    double d_mean = resid_y * inv_var_y;
    double d_log_sigma_y = -1.0 + resid_y * resid_y * inv_var_y;
    if (weight_model) {
      const double linear_pi = x_pi_.row(i).dot(kappa_x) + eta_pi[j];
      const double resid_pi = data_.log_pi[i] - kappa_y * yi - linear_pi;
      const double log_denominator =
          linear_pi + 0.5 * var_pi + kappa_y * mean_y + 0.5 * kappa_y * kappa_y * var_y;
      term += unit_const_pi - 0.5 * resid_pi * resid_pi * inv_var_pi - log_denominator;
      if (want_grad) {
        const double scaled = resid_pi * inv_var_pi;
        const double d_linear = scaled - 1.0;
        d_mean -= kappa_y;
        d_log_sigma_y -= kappa_y * kappa_y * var_y;
        g_kappa_y += scaled * yi - mean_y - kappa_y * var_y;
        g_log_sigma_pi += -1.0 + resid_pi * scaled - var_pi;
        g_kappa.noalias() += d_linear * x_pi_.row(i).transpose();
        g_eta_pi[j] += d_linear;
      }
    }
    if (weights_) {
      const double w = (*weights_)[i];
      term *= w;
      d_mean *= w;
      d_log_sigma_y *= w;
    }
    loglik += term;
    if (want_grad) {
      g_beta.noalias() += d_mean * x_y_.row(i).transpose();
      g_eta_y[j] += d_mean;
      g_log_sigma_y += d_log_sigma_y;
    }
  }

  // Priors.  Coefficients ~ N(0, coef_variance); scales ~ half-normal with
  // the log-transform Jacobian; eta ~ N(0, sd^2) (or z ~ N(0,1)).
  const double coef_var = prior_.coef_variance;
  const double coef_const = -kLogSqrtTwoPi - 0.5 * std::log(coef_var);
  const double scale_var = prior_.scale_variance;
  const double half_const = kLogTwo - kLogSqrtTwoPi - 0.5 * std::log(scale_var);
  auto scale_prior = [&](double log_s, double s) {
    return half_const - 0.5 * s * s / scale_var + log_s;
  };
  // d/d(log s) of scale_prior
  auto scale_prior_grad = [&](double s) { return 1.0 - s * s / scale_var; };

  double lp = 0.0;
  lp += nb * coef_const - 0.5 * beta.squaredNorm() / coef_var;
  lp += scale_prior(log_sigma_y, sigma_y) + scale_prior(log_sd_eta_y, sd_eta_y);
  if (weight_model) {
    lp += (nk + 1) * coef_const - 0.5 * (kappa_x.squaredNorm() + kappa_y * kappa_y) / coef_var;
    lp += scale_prior(log_sigma_pi, sigma_pi);
  }
  if (has_eta_pi) lp += scale_prior(log_sd_eta_pi, sd_eta_pi);

  auto random_effect_prior = [&](const Eigen::VectorXd &eta, int offset, double log_sd, double sd) {
    if (noncentered) {
      const auto z = u.segment(offset, J);
      return J * -kLogSqrtTwoPi - 0.5 * z.squaredNorm();
    }
    return J * (-kLogSqrtTwoPi - log_sd) - 0.5 * eta.squaredNorm() / (sd * sd);
  };
  lp += random_effect_prior(eta_y, L.eta_y(), log_sd_eta_y, sd_eta_y);
  if (has_eta_pi) lp += random_effect_prior(eta_pi, L.eta_pi(), log_sd_eta_pi, sd_eta_pi);

  if (want_grad) {
    Eigen::VectorXd &g = *grad;
    g.setZero();
    g.segment(L.beta(), nb) = g_beta - beta / coef_var;
    g[L.log_sigma_y()] = g_log_sigma_y + scale_prior_grad(sigma_y);
    if (weight_model) {
      g.segment(L.kappa_x(), nk) = g_kappa - kappa_x / coef_var;
      g[L.kappa_y()] = g_kappa_y - kappa_y / coef_var;
      g[L.log_sigma_pi()] = g_log_sigma_pi + scale_prior_grad(sigma_pi);
    }
    auto random_effect_grad = [&](const Eigen::VectorXd &eta, const Eigen::VectorXd &g_lik,
                                  int offset, int log_sd_index, double sd) {
      if (noncentered) {
        const auto z = u.segment(offset, J);
        g.segment(offset, J) = sd * g_lik - z;
        g[log_sd_index] += g_lik.dot(eta);
      } else {
        const double inv_var = 1.0 / (sd * sd);
        g.segment(offset, J) = g_lik - eta * inv_var;
        g[log_sd_index] += -J + eta.squaredNorm() * inv_var;
      }
    };
    g[L.log_sd_eta_y()] = scale_prior_grad(sd_eta_y);
    random_effect_grad(eta_y, g_eta_y, L.eta_y(), L.log_sd_eta_y(), sd_eta_y);
    if (has_eta_pi) {
      g[L.log_sd_eta_pi()] = scale_prior_grad(sd_eta_pi);
      random_effect_grad(eta_pi, g_eta_pi, L.eta_pi(), L.log_sd_eta_pi(), sd_eta_pi);
    }
  }
  return loglik + lp;
}

double log_posterior(const Eigen::VectorXd &u, const SurveySample &data, ModelVariant variant) {
  return PosteriorModel(data, variant).log_density(u);
}

Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd &u, const SurveySample &data,
                                   ModelVariant variant) {
  Eigen::VectorXd g;
  PosteriorModel(data, variant).log_density_gradient(u, g);
  return g;
}

}  // namespace infsamp
