#ifndef INFSAMP_COMPARATORS_HPP_
#define INFSAMP_COMPARATORS_HPP_

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "infsamp/model.hpp"

namespace infsamp {

// Raised by weighted_ols when the weighted design is rank deficient.
class SingularDesignError : public std::runtime_error {
 public:
  SingularDesignError(const std::string &column, int index)
      : std::runtime_error("design matrix is rank deficient at column '" + column + "'"),
        column_(column),
        index_(index) {}
  const std::string &column() const { return column_; }
  int index() const { return index_; }

 private:
  std::string column_;
  int index_;
};

// A sample plus unit sampling weights standardized to sum to n.
struct WeightedSample {
  SurveySample sample;
  Eigen::VectorXd w;

  // Throws std::invalid_argument unless w > 0 and sum(w) = n within 1e-9.
  void validate() const;
};

// Scales w so that it sums to its length.
Eigen::VectorXd normalize_to_size(const Eigen::VectorXd &w);

// Weights 1/pi recovered from the sample's log_pi, standardized to sum n.
WeightedSample make_weighted_sample(SurveySample sample);
WeightedSample make_weighted_sample(SurveySample sample, const Eigen::VectorXd &raw_weights);

// Augmented pseudoposterior: each response density raised to its weight,
// plus the random-effect prior and the Pop-variant priors.  Same layout as
// the Pop model.
class PseudoPosterior : public PosteriorModel {
 public:
  explicit PseudoPosterior(const WeightedSample &data,
                           Parameterization param = Parameterization::Centered,
                           PriorSpec prior = {});
};

double pseudo_log_posterior(const Eigen::VectorXd &u, const WeightedSample &data);

// sum_i w_i log N(y_i | mu_i, sigma_y^2)
double pseudo_loglik_exponentiated(const ModelParams &p, const WeightedSample &data);
// sum_i log N(y_i | mu_i, sigma_y^2 / w_i)
double pseudo_loglik_weighted_variance(const ModelParams &p, const WeightedSample &data);

struct OlsFit {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
};

// argmin sum w_i (y_i - x_i' beta)^2 on the response design of the sample.
OlsFit weighted_ols(const WeightedSample &data);

struct FreqFit {
  Eigen::VectorXd beta_hat;
  double sigma2_hat = 0.0;
  Eigen::MatrixXd cov_hat;
  int df = 0;
};

// Linearization (sandwich) covariance with between-PSU score variability
// and the J/(J-1) factor; df = J - 1.
FreqFit sandwich_cov(const OlsFit &fit, const WeightedSample &data);

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double point = 0.0;
};

ConfidenceInterval freq_interval(const FreqFit &fit, const Eigen::VectorXd &contrast,
                                 double level = 0.95);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
double student_t_quantile(double prob, double df);

}  // namespace infsamp

#endif  // INFSAMP_COMPARATORS_HPP_
