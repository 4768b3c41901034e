#include "infsamp/comparators.hpp"

#include <cmath>
#include <limits>

#include "infsamp/core_stats.hpp"

namespace infsamp {

void WeightedSample::validate() const {
  sample.validate();
  if (w.size() != sample.y.size()) throw std::invalid_argument("one weight per unit required");
  if (!(w.array() > 0.0).all() || !w.allFinite()) {
    throw std::invalid_argument("weights must be finite and positive");
  }
  const double n = static_cast<double>(w.size());
  if (std::abs(w.sum() - n) > 1e-9 * std::max(1.0, n / 1000.0)) {
    throw std::invalid_argument("weights must be standardized to sum to n");
  }
}

Eigen::VectorXd normalize_to_size(const Eigen::VectorXd &w) {
  return w * (static_cast<double>(w.size()) / w.sum());
}

WeightedSample make_weighted_sample(SurveySample sample) {
  // exp(-(log_pi - max)) keeps the raw weights in range before scaling.
  const double shift = sample.log_pi.maxCoeff();
  const Eigen::VectorXd raw = (-(sample.log_pi.array() - shift)).exp().matrix();
  return make_weighted_sample(std::move(sample), raw);
}

WeightedSample make_weighted_sample(SurveySample sample, const Eigen::VectorXd &raw_weights) {
  WeightedSample out{std::move(sample), normalize_to_size(raw_weights)};
  out.validate();
  return out;
}

PseudoPosterior::PseudoPosterior(const WeightedSample &data, Parameterization param,
                                 PriorSpec prior)
    : PosteriorModel(data.sample, ModelVariant::Pop, param, prior, data.w) {
  data.validate();
}

double pseudo_log_posterior(const Eigen::VectorXd &u, const WeightedSample &data) {
  return PseudoPosterior(data).log_density(u);
}

double pseudo_loglik_exponentiated(const ModelParams &p, const WeightedSample &data) {
  const SurveySample &s = data.sample;
  const double var = p.sigma_y * p.sigma_y;
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.y.size(); ++i) {
    const double mean = s.x_y.row(i).dot(p.beta) + p.eta_y[s.psu[static_cast<std::size_t>(i)]];
    total += data.w[i] * log_density_normal(s.y[i], {mean, var});
  }
  return total;
}

double pseudo_loglik_weighted_variance(const ModelParams &p, const WeightedSample &data) {
  const SurveySample &s = data.sample;
  const double var = p.sigma_y * p.sigma_y;
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.y.size(); ++i) {
    const double mean = s.x_y.row(i).dot(p.beta) + p.eta_y[s.psu[static_cast<std::size_t>(i)]];
    total += log_density_normal(s.y[i], {mean, var / data.w[i]});
  }
  return total;
}

// ---------------------------------------------------------------------------
// Weighted least squares and linearization variance

namespace {

std::string column_name(const SurveySample &s, int k) {
  if (k < static_cast<int>(s.x_y_names.size())) return s.x_y_names[static_cast<std::size_t>(k)];
  return "x" + std::to_string(k);
}

}  // namespace

OlsFit weighted_ols(const WeightedSample &data) {
  const SurveySample &s = data.sample;
  if (s.x_y.rows() != data.w.size()) throw std::invalid_argument("weights do not match sample");
  const Eigen::VectorXd root_w = data.w.array().sqrt().matrix();
  const Eigen::MatrixXd xw = root_w.asDiagonal() * s.x_y;
  const Eigen::VectorXd yw = root_w.cwiseProduct(s.y);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
  if (qr.rank() < xw.cols()) {
    // Report the first column that is a combination of the earlier ones.
    for (Eigen::Index k = 1; k <= xw.cols(); ++k) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> head(xw.leftCols(k));
      head.setThreshold(qr.threshold());
      if (head.rank() < k) {
        throw SingularDesignError(column_name(s, static_cast<int>(k - 1)), static_cast<int>(k - 1));
      }
    }
    throw SingularDesignError(column_name(s, 0), 0);
  }
  OlsFit fit;
  fit.beta = qr.solve(yw);
  const Eigen::VectorXd resid = s.y - s.x_y * fit.beta;
  fit.sigma2 = data.w.dot(resid.cwiseAbs2()) / data.w.sum();
  return fit;
}

FreqFit sandwich_cov(const OlsFit &fit, const WeightedSample &data) {
  const SurveySample &s = data.sample;
  const int J = s.num_psu;
  if (J < 2) throw std::invalid_argument("linearization variance needs at least two PSUs");
  const auto p = s.x_y.cols();
  const Eigen::VectorXd resid = s.y - s.x_y * fit.beta;

  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(J, p);
  for (Eigen::Index i = 0; i < s.x_y.rows(); ++i) {
    const auto x = s.x_y.row(i);
    bread.noalias() += data.w[i] * x.transpose() * x;
    scores.row(s.psu[static_cast<std::size_t>(i)]) += data.w[i] * resid[i] * x;
  }
  const Eigen::RowVectorXd mean_score = scores.colwise().mean();
  const Eigen::MatrixXd centered = scores.rowwise() - mean_score;
  const Eigen::MatrixXd meat =
      (static_cast<double>(J) / (J - 1)) * (centered.transpose() * centered);
  const Eigen::MatrixXd bread_inv = bread.ldlt().solve(Eigen::MatrixXd::Identity(p, p));

  FreqFit out;
  out.beta_hat = fit.beta;
  out.sigma2_hat = fit.sigma2;
  out.cov_hat = bread_inv * meat * bread_inv;
  out.cov_hat = 0.5 * (out.cov_hat + out.cov_hat.transpose());
  out.df = J - 1;
  return out;
}

ConfidenceInterval freq_interval(const FreqFit &fit, const Eigen::VectorXd &contrast,
                                 double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  if (contrast.size() != fit.beta_hat.size()) {
    throw std::invalid_argument("contrast length must equal the number of coefficients");
  }
  ConfidenceInterval ci;
  ci.point = contrast.dot(fit.beta_hat);
  const double se = std::sqrt(std::max(0.0, contrast.dot(fit.cov_hat * contrast)));
  const double mult = student_t_quantile(1.0 - 0.5 * (1.0 - level), fit.df);
  ci.lo = ci.point - mult * se;
  ci.hi = ci.point + mult * se;
  return ci;
}

// ---------------------------------------------------------------------------
// Student-t

namespace {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  return h;
}

double student_t_log_pdf(double t, double df) {
  return std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
         0.5 * std::log(df * M_PI) - 0.5 * (df + 1.0) * std::log1p(t * t / df);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw DomainError("Student-t df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double prob, double df) {
  if (!(prob > 0.0 && prob < 1.0)) throw DomainError("quantile probability must lie in (0, 1)");
  if (!(df > 0.0)) throw DomainError("Student-t df must be positive");
  if (prob == 0.5) return 0.0;
  if (prob < 0.5) return -student_t_quantile(1.0 - prob, df);
  // Bracket, then safeguarded Newton.
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < prob) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) return std::numeric_limits<double>::infinity();
  }
  double t = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = student_t_cdf(t, df) - prob;
    if (f > 0.0) hi = t; else lo = t;
    double next = t - f / std::exp(student_t_log_pdf(t, df));
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) <= 1e-14 * std::max(1.0, std::abs(t))) return next;
    t = next;
  }
  return t;
}

}  // namespace infsamp
