#ifndef INFSAMP_SAMPLER_HPP_
#define INFSAMP_SAMPLER_HPP_

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "infsamp/density.hpp"

namespace infsamp {

class SamplerError : public std::runtime_error {
 public:
  explicit SamplerError(const std::string &what) : std::runtime_error(what) {}
};

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int draws = 1000;
  double target_accept = 0.8;
  int max_leapfrog = 256;
  std::uint64_t seed = 20240601;
  // Mean trajectory length (in whitened units) is about integration_time/2.
  double integration_time = 6.0;
  double init_sd = 0.1;
  // Optional common starting point; init_sd jitter is still applied.
  std::optional<Eigen::VectorXd> init;
  // Run chains on separate threads.
  bool parallel_chains = false;

  void validate() const;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  int chains = 0;
  int draws = 0;
  int dim = 0;
  // Row-major [chain][draw][param], constrained scale.
  std::vector<double> values;
  int divergences = 0;
  bool divergence_flagged = false;  // more than 10% divergent transitions
  std::vector<double> accept_rate;  // per chain, post-warmup mean
  std::vector<double> step_size;    // per chain, adapted
  std::vector<int> max_steps;       // per chain, trajectory length cap

  double at(int chain, int draw, int param) const {
    return values[(static_cast<std::size_t>(chain) * draws + draw) * dim + param];
  }
  // Index of a named parameter; throws std::out_of_range if unknown.
  int index_of(std::string_view name) const;
  // Draws of one parameter, chains concatenated.
  std::vector<double> pooled(int param) const;
  std::vector<double> chain(int chain, int param) const;
  double mean(int param) const;
};

// Diagonal-metric HMC with dual-averaging step size adaptation and a
// uniformly jittered number of leapfrog steps.
PosteriorDraws run_chains(const DifferentiableDensity &target, const SamplerConfig &config);

// One leapfrog trajectory from (position, momentum) under an identity
// metric; returns the change in the Hamiltonian.  Exposed for testing.
double leapfrog_energy_error(const DifferentiableDensity &target, Eigen::VectorXd position,
                             Eigen::VectorXd momentum, double step_size, int steps);

struct ParamDiagnostics {
  std::string name;
  double rhat = 1.0;
  double ess_bulk = 0.0;
  bool degenerate = false;
};

// Rank-normalized split R-hat (max of bulk and folded) and bulk ESS.
std::vector<ParamDiagnostics> split_rhat_ess(const PosteriorDraws &d);

// Classic split R-hat without rank normalization, one vector per chain.
double split_rhat_basic(std::span<const std::vector<double>> chains);
// Effective sample size of the given chains (Geyer initial monotone sequence).
double effective_sample_size(std::span<const std::vector<double>> chains);

struct CredibleInterval {
  double lo = 0.0;
  double hi = 0.0;
  double mean = 0.0;
};

// Type-7 sample quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double prob);
CredibleInterval central_interval(std::span<const double> draws, double level);
CredibleInterval central_interval(const PosteriorDraws &d, std::string_view param,
                                  double level = 0.95);

// CSV with header `chain,iter,<param names>`; chain and iter are 1-based.
void write_draws_csv(std::ostream &out, const PosteriorDraws &d);

}  // namespace infsamp

#endif  // INFSAMP_SAMPLER_HPP_
