#ifndef INFSAMP_LMM_REML_HPP_
#define INFSAMP_LMM_REML_HPP_

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace infsamp {

class RemlError : public std::runtime_error {
 public:
  RemlError(const std::string &what, double last_ratio = 0.0)
      : std::runtime_error(what), last_ratio_(last_ratio) {}
  double last_ratio() const { return last_ratio_; }

 private:
  double last_ratio_;
};

struct GroupedData {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;      // fixed-effect design, intercept included by the caller
  std::vector<int> group; // arbitrary integer labels
};

struct RemlFit {
  Eigen::VectorXd beta;
  double sigma_u = 0.0;
  double sigma_e = 0.0;
  double ratio = 0.0;  // sigma_u^2 / sigma_e^2
  double restricted_loglik = 0.0;
  int iterations = 0;
};

// Profiled restricted likelihood of a random-intercept model, built from
// per-group sufficient statistics so each evaluation is O(groups * p^2).
class RandomInterceptReml {
 public:
  explicit RandomInterceptReml(const GroupedData &d);

  // Restricted log likelihood with beta and sigma_e^2 profiled out, up to a
  // constant, as a function of the variance ratio.
  double profile(double ratio) const;
  // d profile / d ratio.
  double profile_derivative(double ratio) const;
  RemlFit fit() const;

  int num_groups() const { return static_cast<int>(sizes_.size()); }

 private:
  struct Gls {
    Eigen::MatrixXd info;  // X' H^{-1} X
    Eigen::VectorXd beta;
    double quad = 0.0;     // r' H^{-1} r
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
  };
  Gls solve(double ratio) const;

  int n_ = 0;
  int p_ = 0;
  std::vector<double> sizes_;
  std::vector<Eigen::VectorXd> x_sum_;  // X_j' 1
  std::vector<double> y_sum_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  double yty_ = 0.0;
};

RemlFit fit_random_intercept_reml(const GroupedData &d);

}  // namespace infsamp

#endif  // INFSAMP_LMM_REML_HPP_
