#include "infsamp/core_stats.hpp"

#include <cmath>
#include <numbers>

namespace infsamp {

namespace {

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

}  // namespace

double NormalParams::sd() const { return std::sqrt(variance); }

void NormalParams::validate() const {
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw DomainError("normal variance must be finite and positive, got " +
                      std::to_string(variance));
  }
  if (!std::isfinite(mean)) throw DomainError("normal mean must be finite");
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(mix64(seed)),
                    static_cast<std::uint32_t>(mix64(seed) >> 32)};
  engine_.seed(seq);
}

Rng Rng::split(std::uint64_t key) const {
  return Rng(mix64(mix64(seed_) ^ mix64(key + 0x632be59bd9b4e019ULL)));
}

double log_density_normal(double x, NormalParams p) {
  p.validate();
  const double z = x - p.mean;
  return -kLogSqrtTwoPi - 0.5 * std::log(p.variance) - 0.5 * z * z / p.variance;
}

double log_density_lognormal(double x, NormalParams p) {
  if (!(x > 0.0)) throw DomainError("lognormal density requires x > 0");
  const double lx = std::log(x);
  return log_density_normal(lx, p) - lx;
}

double log_density_halfnormal(double x, NormalParams p) {
  if (!(x > 0.0)) throw DomainError("half-normal density requires x > 0");
  p.validate();
  // P(X > 0) for the parent normal.
  const double tail = 0.5 * std::erfc(-p.mean / (p.sd() * std::numbers::sqrt2));
  return log_density_normal(x, p) - std::log(tail);
}

double mgf_normal(double t, NormalParams p) {
  return std::exp(t * p.mean + 0.5 * t * t * p.variance);
}

double draw_uniform01(Rng &rng) {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(rng.next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double draw_standard_normal(Rng &rng) {
  // Marsaglia polar method; one of the pair is discarded so that every call
  // consumes a self-contained chunk of the stream.
  for (;;) {
    const double u = 2.0 * draw_uniform01(rng) - 1.0;
    const double v = 2.0 * draw_uniform01(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

double draw_normal(NormalParams p, Rng &rng) {
  p.validate();
  return p.mean + p.sd() * draw_standard_normal(rng);
}

double draw_gamma(double shape, double rate, Rng &rng) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) ||
      !std::isfinite(rate)) {
    throw DomainError("gamma shape and rate must be positive");
  }
  if (shape < 1.0) {
    const double g = draw_gamma(shape + 1.0, 1.0, rng);
    return g * std::pow(draw_uniform01(rng), 1.0 / shape) / rate;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = draw_standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = draw_uniform01(rng);
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v / rate;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

std::vector<double> draw_dirichlet(std::span<const double> weights, Rng &rng) {
  if (weights.empty()) throw DomainError("dirichlet needs at least one weight");
  std::vector<double> out(weights.size());
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] > 0.0)) throw DomainError("dirichlet weights must be positive");
    out[k] = draw_gamma(weights[k], 1.0, rng);
    total += out[k];
  }
  for (double &v : out) v /= total;
  return out;
}

}  // namespace infsamp
