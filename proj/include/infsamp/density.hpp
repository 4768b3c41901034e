#ifndef INFSAMP_DENSITY_HPP_
#define INFSAMP_DENSITY_HPP_

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace infsamp {

// A log density on R^d with an analytic gradient.  Implementations must be
// safe to call concurrently from several threads.
class DifferentiableDensity {
 public:
  virtual ~DifferentiableDensity() = default;

  virtual int dimension() const = 0;
  virtual double log_density(const Eigen::VectorXd &u) const = 0;
  // Writes the gradient into grad (resized as needed) and returns the value.
  virtual double log_density_gradient(const Eigen::VectorXd &u,
                                      Eigen::VectorXd &grad) const = 0;

  // Names for the coordinates returned by constrain().
  virtual std::vector<std::string> parameter_names() const;
  // Map an unconstrained point to the reported parameterization.
  virtual Eigen::VectorXd constrain(const Eigen::VectorXd &u) const { return u; }
};

}  // namespace infsamp

#endif  // INFSAMP_DENSITY_HPP_
