#include "infsamp/lmm_reml.hpp"

#include <cmath>
#include <map>

#include <boost/math/tools/roots.hpp>

namespace infsamp {

RandomInterceptReml::RandomInterceptReml(const GroupedData &d) {
  n_ = static_cast<int>(d.y.size());
  p_ = static_cast<int>(d.x.cols());
  if (d.x.rows() != n_ || static_cast<int>(d.group.size()) != n_) {
    throw std::invalid_argument("grouped data columns have inconsistent lengths");
  }
  std::map<int, int> index;
  for (int g : d.group) index.emplace(g, static_cast<int>(index.size()));
  if (index.size() < 2) throw std::invalid_argument("random-intercept model needs >= 2 groups");
  if (n_ <= p_) throw std::invalid_argument("not enough observations for REML");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
  if (qr.rank() < p_) throw RemlError("fixed-effect design is rank deficient");

  const std::size_t groups = index.size();
  sizes_.assign(groups, 0.0);
  x_sum_.assign(groups, Eigen::VectorXd::Zero(p_));
  y_sum_.assign(groups, 0.0);
  xtx_ = d.x.transpose() * d.x;
  xty_ = d.x.transpose() * d.y;
  yty_ = d.y.squaredNorm();
  for (int i = 0; i < n_; ++i) {
    const auto j = static_cast<std::size_t>(index[d.group[static_cast<std::size_t>(i)]]);
    sizes_[j] += 1.0;
    x_sum_[j] += d.x.row(i).transpose();
    y_sum_[j] += d.y[i];
  }
}

RandomInterceptReml::Gls RandomInterceptReml::solve(double ratio) const {
  Gls g;
  g.info = xtx_;
  Eigen::VectorXd xhy = xty_;
  double yhy = yty_;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const double c = ratio / (1.0 + sizes_[j] * ratio);
    g.info.noalias() -= c * x_sum_[j] * x_sum_[j].transpose();
    xhy -= c * y_sum_[j] * x_sum_[j];
    yhy -= c * y_sum_[j] * y_sum_[j];
  }
  g.ldlt.compute(g.info);
  g.beta = g.ldlt.solve(xhy);
  g.quad = yhy - xhy.dot(g.beta);
  return g;
}

double RandomInterceptReml::profile(double ratio) const {
  const Gls g = solve(ratio);
  double log_det_h = 0.0;
  for (double m : sizes_) log_det_h += std::log1p(m * ratio);
  const double log_det_info = g.ldlt.vectorD().array().log().sum();
  return -0.5 * ((n_ - p_) * std::log(g.quad) + log_det_h + log_det_info);
}

double RandomInterceptReml::profile_derivative(double ratio) const {
  const Gls g = solve(ratio);
  double d_quad = 0.0, d_log_det_h = 0.0, d_log_det_info = 0.0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const double denom = 1.0 + sizes_[j] * ratio;
    const double dc = 1.0 / (denom * denom);
    const double group_resid = y_sum_[j] - x_sum_[j].dot(g.beta);
    d_quad -= dc * group_resid * group_resid;
    d_log_det_h += sizes_[j] / denom;
    d_log_det_info -= dc * x_sum_[j].dot(g.ldlt.solve(x_sum_[j]));
  }
  return -0.5 * ((n_ - p_) * d_quad / g.quad + d_log_det_h + d_log_det_info);
}

RemlFit RandomInterceptReml::fit() const {
  constexpr int kGrid = 100;
  const double log_lo = std::log(1e-8), log_hi = std::log(1e4);
  std::vector<double> grid(kGrid);
  int best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kGrid; ++k) {
    grid[static_cast<std::size_t>(k)] = std::exp(log_lo + (log_hi - log_lo) * k / (kGrid - 1));
    const double v = profile(grid[static_cast<std::size_t>(k)]);
    if (v > best_value) {
      best_value = v;
      best = k;
    }
  }

  RemlFit out;
  double ratio = 0.0;
  double left = best == 0 ? 0.0 : grid[static_cast<std::size_t>(best - 1)];
  double right = best == kGrid - 1 ? grid.back() : grid[static_cast<std::size_t>(best + 1)];
  if (best == 0 && profile_derivative(0.0) <= 0.0) {
    ratio = 0.0;  // maximized on the boundary
  } else {
    while (profile_derivative(right) > 0.0) {
      left = right;
      right *= 10.0;
      if (right > 1e12) throw RemlError("restricted likelihood increases without bound", left);
    }
    boost::uintmax_t max_iter = 200;
    auto score = [this](double r) { return profile_derivative(r); };
    const auto root = boost::math::tools::toms748_solve(
        score, left, right, boost::math::tools::eps_tolerance<double>(50), max_iter);
    if (max_iter >= 200) throw RemlError("REML did not converge in 200 iterations", root.first);
    ratio = 0.5 * (root.first + root.second);
    out.iterations = static_cast<int>(max_iter);
  }

  const Gls g = solve(ratio);
  const double sigma2_e = g.quad / (n_ - p_);
  out.beta = g.beta;
  out.ratio = ratio;
  out.sigma_e = std::sqrt(sigma2_e);
  out.sigma_u = std::sqrt(ratio * sigma2_e);
  out.restricted_loglik = profile(ratio);
  return out;
}

RemlFit fit_random_intercept_reml(const GroupedData &d) {
  return RandomInterceptReml(d).fit();
}

}  // namespace infsamp
