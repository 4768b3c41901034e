#ifndef INFSAMP_CORE_STATS_HPP_
#define INFSAMP_CORE_STATS_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace infsamp {

// Raised when a distribution is evaluated or sampled outside its support
// or with invalid parameters.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string &what) : std::domain_error(what) {}
};

// Location/scale pair for the normal family.  Also used for the lognormal
// (parameters of log x) and the half-normal (parent normal).
struct NormalParams {
  double mean = 0.0;
  double variance = 1.0;

  double sd() const;
  // Throws DomainError unless variance is finite and strictly positive.
  void validate() const;
};

// Seeded random stream.  Streams are derived deterministically from a
// 64-bit seed; split() yields an independent child stream keyed by an
// integer so that Monte Carlo replications can be reproduced in any order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  static constexpr const char *algorithm() { return "mt19937_64/splitmix64"; }

  // Child stream for (this seed, key).  Does not advance this stream.
  Rng split(std::uint64_t key) const;

  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64 &engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used for seed derivation.
std::uint64_t mix64(std::uint64_t x);

double log_density_normal(double x, NormalParams p);
// log x ~ normal(p.mean, p.variance); requires x > 0.
double log_density_lognormal(double x, NormalParams p);
// Normal restricted to (0, inf), renormalized.  The parent mean need not be
// zero; the normalizer is computed from the upper tail mass.
double log_density_halfnormal(double x, NormalParams p);
double mgf_normal(double t, NormalParams p);

// Uniform on the open interval (0, 1).
double draw_uniform01(Rng &rng);
double draw_standard_normal(Rng &rng);
double draw_normal(NormalParams p, Rng &rng);
// Marsaglia-Tsang squeeze for shape >= 1; shape < 1 uses the U^(1/a) boost.
double draw_gamma(double shape, double rate, Rng &rng);
std::vector<double> draw_dirichlet(std::span<const double> weights, Rng &rng);

}  // namespace infsamp

#endif  // INFSAMP_CORE_STATS_HPP_
