#include "infsamp/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "infsamp/core_stats.hpp"

namespace infsamp {

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("sampler needs at least one chain");
  if (warmup < 1 || draws < 1) throw std::invalid_argument("warmup and draws must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw std::invalid_argument("target_accept must lie in (0, 1)");
  }
  if (max_leapfrog < 1) throw std::invalid_argument("max_leapfrog must be >= 1");
  if (!(integration_time > 0.0)) throw std::invalid_argument("integration_time must be positive");
}

int PosteriorDraws::index_of(std::string_view name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return static_cast<int>(it - names.begin());
}

std::vector<double> PosteriorDraws::pooled(int param) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(chains) * draws);
  for (int c = 0; c < chains; ++c) {
    for (int d = 0; d < draws; ++d) out.push_back(at(c, d, param));
  }
  return out;
}

std::vector<double> PosteriorDraws::chain(int c, int param) const {
  std::vector<double> out(static_cast<std::size_t>(draws));
  for (int d = 0; d < draws; ++d) out[static_cast<std::size_t>(d)] = at(c, d, param);
  return out;
}

double PosteriorDraws::mean(int param) const {
  const auto v = pooled(param);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// HMC

namespace {

struct Phase {
  Eigen::VectorXd position;
  Eigen::VectorXd gradient;
  double log_density = 0.0;
};

struct ChainOutput {
  std::vector<double> values;
  int divergences = 0;
  double accept_rate = 0.0;
  double step_size = 0.0;
  int max_steps = 1;
};

constexpr double kDivergenceThreshold = 1000.0;

class Hamiltonian {
 public:
  Hamiltonian(const DifferentiableDensity &target, const Eigen::VectorXd &inv_metric)
      : target_(target), inv_metric_(inv_metric) {}

  double kinetic(const Eigen::VectorXd &momentum) const {
    return 0.5 * momentum.cwiseProduct(inv_metric_).dot(momentum);
  }

  Eigen::VectorXd draw_momentum(Rng &rng) const {
    Eigen::VectorXd p(inv_metric_.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      p[k] = draw_standard_normal(rng) / std::sqrt(inv_metric_[k]);
    }
    return p;
  }

  // Integrates in place; returns false if the density became non-finite.
  bool integrate(Phase &z, Eigen::VectorXd &momentum, double eps, int steps) const {
    for (int s = 0; s < steps; ++s) {
      momentum += 0.5 * eps * z.gradient;
      z.position += eps * inv_metric_.cwiseProduct(momentum);
      z.log_density = target_.log_density_gradient(z.position, z.gradient);
      if (!std::isfinite(z.log_density) || !z.gradient.allFinite()) return false;
      momentum += 0.5 * eps * z.gradient;
    }
    return true;
  }

 private:
  const DifferentiableDensity &target_;
  const Eigen::VectorXd &inv_metric_;
};

// Doubles or halves eps until a single step crosses acceptance 0.5.
double find_reasonable_step(const Hamiltonian &h, const Phase &start, double eps, Rng &rng) {
  const double log_half = std::log(0.5);
  int direction = 0;
  for (int iter = 0; iter < 60; ++iter) {
    Phase z = start;
    Eigen::VectorXd p = h.draw_momentum(rng);
    const double h0 = -z.log_density + h.kinetic(p);
    const bool ok = h.integrate(z, p, eps, 1);
    const double delta = ok ? h0 - (-z.log_density + h.kinetic(p)) : -kDivergenceThreshold;
    const double log_ratio = std::isfinite(delta) ? delta : -kDivergenceThreshold;
    if (direction == 0) direction = log_ratio > log_half ? 1 : -1;
    if (direction == 1 && !(log_ratio > log_half)) break;
    if (direction == -1 && !(log_ratio < log_half)) break;
    eps = direction == 1 ? eps * 2.0 : eps * 0.5;
    if (eps > 1e7 || eps < 1e-12) break;
  }
  return eps;
}

class DualAveraging {
 public:
  DualAveraging(double eps, double target) : mu_(std::log(10.0 * eps)), target_(target) {}

  double update(double accept_stat) {
    ++t_;
    const double w = 1.0 / (t_ + kT0);
    hbar_ = (1.0 - w) * hbar_ + w * (target_ - accept_stat);
    const double log_eps = mu_ - std::sqrt(static_cast<double>(t_)) / kGamma * hbar_;
    const double x = std::pow(static_cast<double>(t_), -kKappa);
    log_eps_bar_ = x * log_eps + (1.0 - x) * log_eps_bar_;
    return std::exp(log_eps);
  }
  double final_step() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_;
  double target_;
  double hbar_ = 0.0;
  double log_eps_bar_ = 0.0;
  long t_ = 0;
};

// Welford accumulator for the diagonal metric.
class VarianceEstimator {
 public:
  explicit VarianceEstimator(Eigen::Index dim)
      : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}
  void add(const Eigen::VectorXd &x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }
  // Shrunk towards 1e-3 as in common HMC implementations.
  Eigen::VectorXd regularized() const {
    const double n = static_cast<double>(n_);
    Eigen::VectorXd var = m2_ / std::max(n - 1.0, 1.0);
    return (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }
  long count() const { return n_; }

 private:
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

int trajectory_cap(double eps, const SamplerConfig &cfg) {
  const double steps = std::ceil(cfg.integration_time / eps);
  if (!std::isfinite(steps)) return cfg.max_leapfrog;
  return static_cast<int>(std::clamp(steps, 1.0, static_cast<double>(cfg.max_leapfrog)));
}

Phase initialize(const DifferentiableDensity &target, const SamplerConfig &cfg, Rng &rng) {
  const int dim = target.dimension();
  Phase z;
  for (int attempt = 0; attempt < 100; ++attempt) {
    z.position = cfg.init ? *cfg.init : Eigen::VectorXd::Zero(dim);
    if (z.position.size() != dim) throw SamplerError("initial point has the wrong dimension");
    for (int k = 0; k < dim; ++k) z.position[k] += cfg.init_sd * draw_standard_normal(rng);
    z.log_density = target.log_density_gradient(z.position, z.gradient);
    if (std::isfinite(z.log_density) && z.gradient.allFinite()) return z;
  }
  throw SamplerError("log density is not finite at any of 100 initial points");
}

ChainOutput run_chain(const DifferentiableDensity &target, const SamplerConfig &cfg, Rng rng) {
  const int dim = target.dimension();
  ChainOutput out;
  out.values.reserve(static_cast<std::size_t>(cfg.draws) * dim);

  Phase z = initialize(target, cfg, rng);
  Eigen::VectorXd inv_metric = Eigen::VectorXd::Ones(dim);
  Hamiltonian ham(target, inv_metric);

  double eps = find_reasonable_step(ham, z, 1.0, rng);
  DualAveraging adapt(eps, cfg.target_accept);

  // Warmup: a step-size-only buffer, two metric windows (the second one
  // spans the second half of warmup) and a closing step-size buffer.
  const int w = cfg.warmup;
  const bool adapt_metric = w >= 20;
  const int init_buffer = adapt_metric ? static_cast<int>(0.15 * w) : w;
  const int midpoint = w / 2;
  const int term_start = adapt_metric ? w - static_cast<int>(0.1 * w) : w;
  std::vector<int> window_ends;
  if (adapt_metric) window_ends = {midpoint, term_start};
  VarianceEstimator window(dim);

  const int total = cfg.warmup + cfg.draws;
  double accept_sum = 0.0;
  int max_steps = trajectory_cap(eps, cfg);
  for (int iter = 0; iter < total; ++iter) {
    const bool warming = iter < cfg.warmup;
    if (warming) max_steps = trajectory_cap(eps, cfg);
    const int steps = 1 + static_cast<int>(draw_uniform01(rng) * max_steps);

    Eigen::VectorXd momentum = ham.draw_momentum(rng);
    const double h0 = -z.log_density + ham.kinetic(momentum);
    Phase proposal = z;
    const bool finite = ham.integrate(proposal, momentum, eps, std::min(steps, max_steps));
    const double h1 = finite ? -proposal.log_density + ham.kinetic(momentum)
                             : std::numeric_limits<double>::infinity();
    const double energy_error = h1 - h0;
    const bool divergent = !finite || !std::isfinite(energy_error) ||
                           energy_error > kDivergenceThreshold;
    const double accept_prob = divergent ? 0.0 : std::min(1.0, std::exp(-energy_error));
    if (!divergent && draw_uniform01(rng) < accept_prob) z = std::move(proposal);

    if (warming) {
      eps = adapt.update(accept_prob);
      if (adapt_metric && iter >= init_buffer && iter < term_start) {
        window.add(z.position);
        if (std::find(window_ends.begin(), window_ends.end(), iter + 1) != window_ends.end()) {
          inv_metric = window.regularized();
          window = VarianceEstimator(dim);
          eps = find_reasonable_step(ham, z, eps, rng);
          adapt = DualAveraging(eps, cfg.target_accept);
        }
      }
      if (iter + 1 == cfg.warmup) {
        eps = adapt.final_step();
        max_steps = trajectory_cap(eps, cfg);
      }
    } else {
      if (divergent) ++out.divergences;
      accept_sum += accept_prob;
      const Eigen::VectorXd c = target.constrain(z.position);
      out.values.insert(out.values.end(), c.data(), c.data() + c.size());
    }
  }
  out.accept_rate = accept_sum / cfg.draws;
  out.step_size = eps;
  out.max_steps = max_steps;
  return out;
}

}  // namespace

PosteriorDraws run_chains(const DifferentiableDensity &target, const SamplerConfig &config) {
  config.validate();
  const Rng master(config.seed);
  std::vector<ChainOutput> outputs(static_cast<std::size_t>(config.chains));
  if (config.parallel_chains && config.chains > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(outputs.size());
    for (int c = 0; c < config.chains; ++c) {
      workers.emplace_back([&, c] {
        try {
          outputs[static_cast<std::size_t>(c)] =
              run_chain(target, config, master.split(static_cast<std::uint64_t>(c)));
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      });
    }
    for (auto &t : workers) t.join();
    for (auto &e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (int c = 0; c < config.chains; ++c) {
      outputs[static_cast<std::size_t>(c)] =
          run_chain(target, config, master.split(static_cast<std::uint64_t>(c)));
    }
  }

  PosteriorDraws d;
  d.names = target.parameter_names();
  d.chains = config.chains;
  d.draws = config.draws;
  d.dim = static_cast<int>(d.names.size());
  d.values.reserve(static_cast<std::size_t>(d.chains) * d.draws * d.dim);
  for (auto &o : outputs) {
    d.values.insert(d.values.end(), o.values.begin(), o.values.end());
    d.divergences += o.divergences;
    d.accept_rate.push_back(o.accept_rate);
    d.step_size.push_back(o.step_size);
    d.max_steps.push_back(o.max_steps);
  }
  d.divergence_flagged = d.divergences > 0.1 * d.chains * d.draws;
  return d;
}

double leapfrog_energy_error(const DifferentiableDensity &target, Eigen::VectorXd position,
                             Eigen::VectorXd momentum, double step_size, int steps) {
  const Eigen::VectorXd unit = Eigen::VectorXd::Ones(target.dimension());
  Hamiltonian ham(target, unit);
  Phase z;
  z.position = std::move(position);
  z.log_density = target.log_density_gradient(z.position, z.gradient);
  const double h0 = -z.log_density + ham.kinetic(momentum);
  if (!ham.integrate(z, momentum, step_size, steps)) {
    return std::numeric_limits<double>::infinity();
  }
  return -z.log_density + ham.kinetic(momentum) - h0;
}

// ---------------------------------------------------------------------------
// Diagnostics

namespace {

using Chains = std::vector<std::vector<double>>;

double mean_of(const std::vector<double> &v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double> &v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

Chains split_halves(std::span<const std::vector<double>> chains) {
  Chains out;
  for (const auto &c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

// Biased autocovariance at all lags via FFT.
std::vector<double> autocovariance(const std::vector<double> &x) {
  const std::size_t n = x.size();
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  const double m = mean_of(x);
  std::vector<double> padded(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - m;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto &f : freq) f = std::complex<double>(std::norm(f), 0.0);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t t = 0; t < n; ++t) acov[t] = back[t] / static_cast<double>(n);
  return acov;
}

Chains rank_normalize(const Chains &chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t i = 0; i < chains[c].size(); ++i) {
      all.emplace_back(chains[c][i], c * chains[0].size() + i);
    }
  }
  std::sort(all.begin(), all.end());
  const double s = static_cast<double>(all.size());
  std::vector<double> z(all.size());
  const boost::math::normal standard;
  for (std::size_t a = 0; a < all.size();) {
    std::size_t b = a;
    while (b + 1 < all.size() && all[b + 1].first == all[a].first) ++b;
    const double rank = 0.5 * static_cast<double>(a + b) + 1.0;  // average rank, 1-based
    const double zv = boost::math::quantile(standard, (rank - 0.375) / (s + 0.25));
    for (std::size_t k = a; k <= b; ++k) z[all[k].second] = zv;
    a = b + 1;
  }
  Chains out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    out[c].assign(z.begin() + static_cast<std::ptrdiff_t>(c * chains[0].size()),
                  z.begin() + static_cast<std::ptrdiff_t>((c + 1) * chains[0].size()));
  }
  return out;
}

// R-hat of already split chains.
double rhat_of(const Chains &chains) {
  const double n = static_cast<double>(chains[0].size());
  std::vector<double> means, vars;
  for (const auto &c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(variance_of(c));
  }
  const double within = mean_of(vars);
  const double between = chains.size() > 1 ? n * variance_of(means) : 0.0;
  const double var_plus = (n - 1.0) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

double ess_of(const Chains &chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains[0].size();
  std::vector<std::vector<double>> acov;
  std::vector<double> means;
  for (const auto &c : chains) {
    acov.push_back(autocovariance(c));
    means.push_back(mean_of(c));
  }
  auto mean_acov = [&](std::size_t t) {
    double s = 0.0;
    for (const auto &a : acov) s += a[t];
    return s / static_cast<double>(m);
  };
  const double nd = static_cast<double>(n);
  const double mean_var = mean_acov(0) * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += variance_of(means);

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t s = 1;
  while (s + 4 < n && (rho_even + rho_odd) > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (rho_even > 0.0 && max_s + 1 < n) rho[max_s + 1] = rho_even;
  for (std::size_t k = 1; k + 3 <= max_s; k += 2) {
    if (rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]) {
      rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
      rho[k + 2] = rho[k + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0 + 2.0 * std::accumulate(rho.begin(), rho.begin() + static_cast<std::ptrdiff_t>(max_s), 0.0);
  if (max_s + 1 < n) tau += rho[max_s + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

bool is_constant(const Chains &chains) {
  const double first = chains[0][0];
  for (const auto &c : chains) {
    for (double x : c) {
      if (x != first) return false;
    }
  }
  return true;
}

void require_shape(std::span<const std::vector<double>> chains, std::size_t min_draws) {
  if (chains.empty()) throw std::invalid_argument("no chains supplied");
  for (const auto &c : chains) {
    if (c.size() != chains[0].size()) throw std::invalid_argument("chains differ in length");
  }
  if (chains[0].size() < min_draws) throw std::invalid_argument("too few draws per chain");
}

}  // namespace

double split_rhat_basic(std::span<const std::vector<double>> chains) {
  require_shape(chains, 4);
  return rhat_of(split_halves(chains));
}

double effective_sample_size(std::span<const std::vector<double>> chains) {
  require_shape(chains, 4);
  const Chains c(chains.begin(), chains.end());
  if (is_constant(c)) return static_cast<double>(c.size() * c[0].size());
  return ess_of(c);
}

std::vector<ParamDiagnostics> split_rhat_ess(const PosteriorDraws &d) {
  if (d.chains < 2) throw std::invalid_argument("R-hat needs at least two chains");
  if (d.draws < 4) throw std::invalid_argument("R-hat needs at least four draws per chain");
  std::vector<ParamDiagnostics> out;
  for (int k = 0; k < d.dim; ++k) {
    ParamDiagnostics diag;
    diag.name = d.names[static_cast<std::size_t>(k)];
    Chains chains;
    for (int c = 0; c < d.chains; ++c) chains.push_back(d.chain(c, k));
    const Chains split = split_halves(chains);
    if (is_constant(split)) {
      diag.rhat = 1.0;
      diag.ess_bulk = static_cast<double>(d.chains) * d.draws;
      diag.degenerate = true;
      out.push_back(diag);
      continue;
    }
    const Chains z = rank_normalize(split);
    std::vector<double> pooled;
    for (const auto &c : split) pooled.insert(pooled.end(), c.begin(), c.end());
    std::sort(pooled.begin(), pooled.end());
    const double median = quantile_sorted(pooled, 0.5);
    Chains folded = split;
    for (auto &c : folded) {
      for (double &x : c) x = std::abs(x - median);
    }
    const double rhat_bulk = rhat_of(z);
    const double rhat_fold = is_constant(folded) ? 1.0 : rhat_of(rank_normalize(folded));
    diag.rhat = std::max(rhat_bulk, rhat_fold);
    diag.ess_bulk = ess_of(z);
    out.push_back(diag);
  }
  return out;
}

double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

CredibleInterval central_interval(std::span<const double> draws, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const double tail = 0.5 * (1.0 - level);
  CredibleInterval ci;
  ci.lo = quantile_sorted(sorted, tail);
  ci.hi = quantile_sorted(sorted, 1.0 - tail);
  ci.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  return ci;
}

CredibleInterval central_interval(const PosteriorDraws &d, std::string_view param, double level) {
  return central_interval(d.pooled(d.index_of(param)), level);
}

void write_draws_csv(std::ostream &out, const PosteriorDraws &d) {
  out << "chain,iter";
  for (const auto &n : d.names) out << ',' << n;
  out << '\n';
  out.precision(17);
  for (int c = 0; c < d.chains; ++c) {
    for (int i = 0; i < d.draws; ++i) {
      out << (c + 1) << ',' << (i + 1);
      for (int k = 0; k < d.dim; ++k) out << ',' << d.at(c, i, k);
      out << '\n';
    }
  }
}

}  // namespace infsamp
