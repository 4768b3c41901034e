#ifndef INFSAMP_MODEL_HPP_
#define INFSAMP_MODEL_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "infsamp/density.hpp"

namespace infsamp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Observed two-stage sample.  PSU labels are dense and zero-based.
struct SurveySample {
  Eigen::VectorXd y;
  Eigen::MatrixXd x_y;   // n x (p+1), leading column of ones
  Eigen::MatrixXd x_pi;  // n x (q+1), leading column of ones
  Eigen::VectorXd log_pi;
  std::vector<int> psu;
  int num_psu = 0;
  std::vector<std::string> x_y_names;
  std::vector<std::string> x_pi_names;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  std::vector<int> psu_sizes() const;
  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

// Joint model variants.  Pop ignores the inclusion probabilities and also
// serves for the cSRS analysis.
enum class ModelVariant { FullBoth, FullY, Pop };

std::string_view to_string(ModelVariant v);
ModelVariant parse_variant(std::string_view s);

// Centered samples eta directly; NonCentered samples eta = sd * z with a
// standard normal prior on z.  Both target the same posterior over the
// constrained parameters.
enum class Parameterization { Centered, NonCentered };

struct ModelParams {
  Eigen::VectorXd beta;     // intercept first
  double sigma_y = 1.0;
  Eigen::VectorXd kappa_x;  // kappa_0 first
  double kappa_y = 0.0;
  double sigma_pi = 1.0;
  Eigen::VectorXd eta_y;
  Eigen::VectorXd eta_pi;
  double sd_eta_y = 1.0;
  double sd_eta_pi = 1.0;
};

// Offsets of each block inside the flat unconstrained vector:
//   beta | log sigma_y | kappa_x | kappa_y | log sigma_pi | eta_y | eta_pi |
//   log sd_eta_y | log sd_eta_pi
// Blocks absent from a variant have length zero.
class ParamLayout {
 public:
  ParamLayout(ModelVariant variant, int n_beta, int n_kappa_x, int num_psu,
              Parameterization param = Parameterization::Centered);

  ModelVariant variant() const { return variant_; }
  Parameterization parameterization() const { return param_; }
  bool has_weight_model() const { return variant_ != ModelVariant::Pop; }
  bool has_eta_pi() const { return variant_ == ModelVariant::FullBoth; }

  int n_beta() const { return n_beta_; }
  int n_kappa_x() const { return n_kappa_x_; }
  int num_psu() const { return num_psu_; }
  int dim() const { return dim_; }

  int beta() const { return beta_; }
  int log_sigma_y() const { return log_sigma_y_; }
  int kappa_x() const { return kappa_x_; }
  int kappa_y() const { return kappa_y_; }
  int log_sigma_pi() const { return log_sigma_pi_; }
  int eta_y() const { return eta_y_; }
  int eta_pi() const { return eta_pi_; }
  int log_sd_eta_y() const { return log_sd_eta_y_; }
  int log_sd_eta_pi() const { return log_sd_eta_pi_; }

  // Indices of the log-transformed scale coordinates.
  std::vector<int> scale_coordinates() const;

  // Names of the constrained coordinates, in layout order.
  std::vector<std::string> names() const;

  ModelParams transform(const Eigen::VectorXd &u) const;
  Eigen::VectorXd inverse_transform(const ModelParams &p) const;
  // Flat constrained vector in layout order (scales exponentiated, eta
  // reported on its natural scale under either parameterization).
  Eigen::VectorXd constrain(const Eigen::VectorXd &u) const;
  // log |d constrained / d unconstrained| for the scale coordinates.
  double log_jacobian(const Eigen::VectorXd &u) const;

 private:
  ModelVariant variant_;
  Parameterization param_;
  int n_beta_, n_kappa_x_, num_psu_;
  int beta_ = 0, log_sigma_y_ = 0, kappa_x_ = 0, kappa_y_ = 0, log_sigma_pi_ = 0,
      eta_y_ = 0, eta_pi_ = 0, log_sd_eta_y_ = 0, log_sd_eta_pi_ = 0, dim_ = 0;
};

// Hyperparameters of the priors: coefficient blocks ~ N(0, coef_variance I),
// scales ~ half-normal(0, scale_variance).
struct PriorSpec {
  double coef_variance = 100.0;
  double scale_variance = 1.0;
};

// log p_s(y, pi | ...) for one sampled unit under FullBoth or FullY: the
// lognormal weight model divided by its expectation over y, times the
// response density.  For FullY eta_pi is taken as zero.
double log_ps_unit(double y, double log_pi, const Eigen::Ref<const Eigen::VectorXd> &x_y,
                   const Eigen::Ref<const Eigen::VectorXd> &x_pi, const ModelParams &params,
                   int psu, ModelVariant variant);

// Posterior over the unconstrained vector for one variant.  With unit
// weights supplied (Pop only) each response contribution is raised to its
// weight, which is the augmented pseudolikelihood.
class PosteriorModel : public DifferentiableDensity {
 public:
  PosteriorModel(SurveySample data, ModelVariant variant,
                 Parameterization param = Parameterization::Centered,
                 PriorSpec prior = {},
                 std::optional<Eigen::VectorXd> unit_weights = std::nullopt);

  const ParamLayout &layout() const { return layout_; }
  const SurveySample &data() const { return data_; }
  ModelVariant variant() const { return layout_.variant(); }

  int dimension() const override { return layout_.dim(); }
  double log_density(const Eigen::VectorXd &u) const override;
  double log_density_gradient(const Eigen::VectorXd &u,
                              Eigen::VectorXd &grad) const override;
  std::vector<std::string> parameter_names() const override { return layout_.names(); }
  Eigen::VectorXd constrain(const Eigen::VectorXd &u) const override {
    return layout_.constrain(u);
  }

  // Sum of per-unit log contributions (log_ps_unit, or the weighted response
  // density for Pop).
  double log_likelihood(const ModelParams &p) const;
  // log_density(u) - log_likelihood(transform(u)).
  double log_prior(const Eigen::VectorXd &u) const;

 private:
  double evaluate(const Eigen::VectorXd &u, Eigen::VectorXd *grad) const;

  SurveySample data_;
  RowMatrix x_y_;
  RowMatrix x_pi_;
  ParamLayout layout_;
  PriorSpec prior_;
  std::optional<Eigen::VectorXd> weights_;
};

// Convenience wrappers over PosteriorModel with the default priors and the
// centered parameterization.
double log_posterior(const Eigen::VectorXd &u, const SurveySample &data, ModelVariant variant);
Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd &u, const SurveySample &data,
                                   ModelVariant variant);

}  // namespace infsamp

#endif  // INFSAMP_MODEL_HPP_
