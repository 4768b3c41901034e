#ifndef INFSAMP_SIMULATION_HPP_
#define INFSAMP_SIMULATION_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "infsamp/core_stats.hpp"
#include "infsamp/model.hpp"
#include "infsamp/sampler.hpp"

namespace infsamp {

enum class Scenario { S1, S2, S3 };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

// How the informative sample is drawn at both stages. Proportional gives each
// item an inclusion probability proportional to its size (capped at one);
// Successive draws one item at a time proportional to size among those left.
enum class SelectionDesign { Proportional, Successive };

std::string_view to_string(SelectionDesign d);
SelectionDesign parse_design(std::string_view s);

struct ScenarioConfig {
  Scenario scenario = Scenario::S1;
  double multiplier = 1.0;  // scales beta_pi1 (informativeness of PSUs)
  double beta_pi1 = 1000.0;
  double beta_pi2 = 1.0;
  double beta_eta_dg = 0.0;
  int num_psu_pop = 1000;   // J_pop
  int psu_size = 20;        // N_j
  int sample_psus = 30;     // J
  int units_per_psu = 5;    // n_j
  double a_pi = 2.0;
  double b_pi = 2.0;
  double sigma_eta_dg = 0.1;
  double sigma_y_dg = 0.1;
  double beta0_dg = 0.0;
  double beta1_dg = 1.0;
  SelectionDesign design = SelectionDesign::Proportional;

  // Coefficients of the named scenario: S1 = (J_pop * multiplier, 1, 0),
  // S2 = (0, 1, 1), S3 = (0, 0, 1).
  static ScenarioConfig preset(Scenario s, double multiplier = 1.0);
  // Recomputes the scenario coefficients after J_pop or multiplier changed.
  void apply_scenario();
  void validate() const;
};

// Finite population stored PSU-major: unit (j, i) lives at j * psu_size + i.
struct Population {
  int num_psu = 0;
  int psu_size = 0;
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  Eigen::VectorXd pi_within;  // pi_{i|j}
  Eigen::VectorXd pi_psu;     // pi_{1j}, sums to one
  Eigen::VectorXd eta_dg;

  std::size_t unit(int psu, int i) const {
    return static_cast<std::size_t>(psu) * static_cast<std::size_t>(psu_size) +
           static_cast<std::size_t>(i);
  }
};

Population generate_population(const ScenarioConfig &cfg, Rng &rng);

// Successive sampling without replacement: each draw picks an index with
// probability proportional to its weight among those not yet drawn.
std::vector<std::size_t> pps_wor(std::span<const double> weights, std::size_t k, Rng &rng);
// First-order inclusion probabilities proportional to size for a fixed-size
// sample of k; items that would exceed one are taken with certainty.
std::vector<double> pps_inclusion_probabilities(std::span<const double> weights, std::size_t k);
// Randomized systematic sampling with pps_inclusion_probabilities.
std::vector<std::size_t> pps_systematic(std::span<const double> weights, std::size_t k, Rng &rng);
// Simple random sample of k distinct indices out of n.
std::vector<std::size_t> srs_wor(std::size_t n, std::size_t k, Rng &rng);

SurveySample draw_csrs(const Population &pop, const ScenarioConfig &cfg, Rng &rng);
SurveySample draw_informative_sample(const Population &pop, const ScenarioConfig &cfg, Rng &rng);

struct TrueValues {
  double beta0_true = 0.0;
  double beta1_true = 1.0;
  double sigma_eta_true = 0.0;
};

// Intercept from the generating coefficients; random-effect SD from a REML
// random-intercept fit of y on x over the whole population.
TrueValues true_parameters(const Population &pop, const ScenarioConfig &cfg);

enum class Method { FullBoth, FullY, Pseudo, Freq, Pop, Csrs };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);
std::vector<Method> all_methods();

struct MethodResult {
  int replication = 0;
  Method method = Method::FullBoth;
  std::string parameter;  // "beta0", "beta1" or "sd_eta_y"
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double truth = 0.0;
  bool divergence_flag = false;
  double max_rhat = 1.0;
};

struct AnalysisSettings {
  SamplerConfig sampler = [] {
    SamplerConfig s;
    s.chains = 2;
    s.warmup = 500;
    s.draws = 500;
    return s;
  }();
  Parameterization parameterization = Parameterization::NonCentered;
  double level = 0.95;
  bool compute_rhat = true;
};

std::vector<MethodResult> run_replication(const ScenarioConfig &cfg,
                                          std::span<const Method> methods,
                                          std::uint64_t master_seed, int rep_index,
                                          const AnalysisSettings &settings = {});

// Replications [first_rep, first_rep + reps) on `threads` workers; results
// ordered by replication.
std::vector<MethodResult> run_simulation(const ScenarioConfig &cfg,
                                         std::span<const Method> methods, int reps,
                                         std::uint64_t master_seed,
                                         const AnalysisSettings &settings = {}, int threads = 1,
                                         int first_rep = 0);

struct Metrics {
  Method method = Method::FullBoth;
  std::string parameter;
  double bias = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  double length = 0.0;
  int count = 0;
};

struct MetricsTable {
  std::vector<Metrics> cells;

  // Throws std::out_of_range if the cell is absent.
  const Metrics &at(Method m, std::string_view parameter) const;
  bool contains(Method m, std::string_view parameter) const;
};

MetricsTable aggregate_metrics(std::span<const MethodResult> results);

}  // namespace infsamp

#endif  // INFSAMP_SIMULATION_HPP_
