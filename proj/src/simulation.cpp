#include "infsamp/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "infsamp/comparators.hpp"
#include "infsamp/lmm_reml.hpp"

namespace infsamp {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "S1";
    case Scenario::S2: return "S2";
    case Scenario::S3: return "S3";
  }
  return "?";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "S1" || s == "s1") return Scenario::S1;
  if (s == "S2" || s == "s2") return Scenario::S2;
  if (s == "S3" || s == "s3") return Scenario::S3;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

std::string_view to_string(SelectionDesign d) {
  return d == SelectionDesign::Proportional ? "proportional" : "successive";
}

SelectionDesign parse_design(std::string_view s) {
  if (s == "proportional") return SelectionDesign::Proportional;
  if (s == "successive") return SelectionDesign::Successive;
  throw std::invalid_argument("design must be proportional or successive");
}

ScenarioConfig ScenarioConfig::preset(Scenario s, double multiplier) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.multiplier = multiplier;
  cfg.apply_scenario();
  return cfg;
}

void ScenarioConfig::apply_scenario() {
  switch (scenario) {
    case Scenario::S1:
      beta_pi1 = num_psu_pop * multiplier;
      beta_pi2 = 1.0;
      beta_eta_dg = 0.0;
      break;
    case Scenario::S2:
      beta_pi1 = 0.0;
      beta_pi2 = 1.0;
      beta_eta_dg = 1.0;
      break;
    case Scenario::S3:
      beta_pi1 = 0.0;
      beta_pi2 = 0.0;
      beta_eta_dg = 1.0;
      break;
  }
}

void ScenarioConfig::validate() const {
  if (num_psu_pop < 1 || psu_size < 1) throw std::invalid_argument("population must be non-empty");
  if (sample_psus < 1 || sample_psus > num_psu_pop) {
    throw std::invalid_argument("sampled PSU count must lie in [1, J_pop]");
  }
  if (units_per_psu < 1 || units_per_psu > psu_size) {
    throw std::invalid_argument("units per PSU must lie in [1, N_j]");
  }
  if (!(a_pi > 0.0) || !(b_pi > 0.0)) throw std::invalid_argument("gamma parameters must be positive");
  if (!(sigma_eta_dg > 0.0) || !(sigma_y_dg > 0.0)) {
    throw std::invalid_argument("generating SDs must be positive");
  }
}

// ---------------------------------------------------------------------------
// Population and samples

Population generate_population(const ScenarioConfig &cfg, Rng &rng) {
  cfg.validate();
  Population pop;
  pop.num_psu = cfg.num_psu_pop;
  pop.psu_size = cfg.psu_size;
  const auto units = static_cast<Eigen::Index>(cfg.num_psu_pop) * cfg.psu_size;

  pop.pi_within.resize(units);
  for (Eigen::Index k = 0; k < units; ++k) pop.pi_within[k] = draw_gamma(cfg.a_pi, cfg.b_pi, rng);

  pop.pi_psu.resize(cfg.num_psu_pop);
  for (int j = 0; j < cfg.num_psu_pop; ++j) {
    pop.pi_psu[j] = pop.pi_within.segment(static_cast<Eigen::Index>(j) * cfg.psu_size, cfg.psu_size).sum();
  }
  pop.pi_psu /= pop.pi_psu.sum();

  pop.eta_dg.resize(cfg.num_psu_pop);
  for (int j = 0; j < cfg.num_psu_pop; ++j) pop.eta_dg[j] = draw_normal({0.0, cfg.sigma_eta_dg * cfg.sigma_eta_dg}, rng);
  pop.x.resize(units);
  for (Eigen::Index k = 0; k < units; ++k) pop.x[k] = draw_uniform01(rng);

  pop.y.resize(units);
  const NormalParams noise{0.0, cfg.sigma_y_dg * cfg.sigma_y_dg};
  for (int j = 0; j < cfg.num_psu_pop; ++j) {
    for (int i = 0; i < cfg.psu_size; ++i) {
      const auto k = static_cast<Eigen::Index>(pop.unit(j, i));
      pop.y[k] = cfg.beta0_dg + cfg.beta1_dg * pop.x[k] + cfg.beta_pi1 * pop.pi_psu[j] +
                 cfg.beta_pi2 * pop.pi_within[k] + cfg.beta_eta_dg * pop.eta_dg[j] +
                 draw_normal(noise, rng);
    }
  }
  return pop;
}

std::vector<std::size_t> pps_wor(std::span<const double> weights, std::size_t k, Rng &rng) {
  if (k > weights.size()) throw std::invalid_argument("cannot draw more items than available");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("PPS weights must be positive");
  }
  std::vector<double> remaining(weights.begin(), weights.end());
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t draw = 0; draw < k; ++draw) {
    const double total = std::accumulate(remaining.begin(), remaining.end(), 0.0);
    const double target = draw_uniform01(rng) * total;
    double cumulative = 0.0;
    std::size_t pick = remaining.size();
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      if (remaining[i] <= 0.0) continue;
      cumulative += remaining[i];
      pick = i;
      if (target < cumulative) break;
    }
    out.push_back(pick);
    remaining[pick] = 0.0;
  }
  return out;
}

std::vector<double> pps_inclusion_probabilities(std::span<const double> weights, std::size_t k) {
  if (k > weights.size()) throw std::invalid_argument("cannot draw more items than available");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("PPS weights must be positive");
  }
  std::vector<double> pi(weights.size(), 0.0);
  std::vector<bool> certain(weights.size(), false);
  for (;;) {
    double rest = 0.0;
    std::size_t taken = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (certain[i]) ++taken; else rest += weights[i];
    }
    bool capped = false;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      pi[i] = certain[i] ? 1.0 : static_cast<double>(k - taken) * weights[i] / rest;
      if (pi[i] >= 1.0 && !certain[i]) {
        certain[i] = true;
        capped = true;
      }
    }
    if (!capped) return pi;
  }
}

std::vector<std::size_t> pps_systematic(std::span<const double> weights, std::size_t k, Rng &rng) {
  const std::vector<double> pi = pps_inclusion_probabilities(weights, k);
  // A random order makes the joint inclusion probabilities all positive.
  std::vector<std::size_t> order = srs_wor(pi.size(), pi.size(), rng);
  const double start = draw_uniform01(rng);
  std::vector<std::size_t> out;
  out.reserve(k);
  double cumulative = 0.0;
  for (std::size_t idx : order) {
    const double next = cumulative + pi[idx];
    // Points start, start + 1, ... falling in [cumulative, next) select idx.
    if (out.size() < k && std::floor(next - start) > std::floor(cumulative - start)) out.push_back(idx);
    cumulative = next;
  }
  // Rounding in the cumulative sum can drop the last point.
  for (std::size_t m = order.size(); out.size() < k && m-- > 0;) {
    if (std::find(out.begin(), out.end(), order[m]) == out.end()) out.push_back(order[m]);
  }
  return out;
}

std::vector<std::size_t> srs_wor(std::size_t n, std::size_t k, Rng &rng) {
  if (k > n) throw std::invalid_argument("cannot draw more items than available");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto span = static_cast<double>(n - i);
    const std::size_t j = i + std::min(n - i - 1, static_cast<std::size_t>(draw_uniform01(rng) * span));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

namespace {

SurveySample assemble(const Population &pop, const std::vector<std::size_t> &psus,
                      const std::vector<std::vector<std::size_t>> &units,
                      const std::vector<std::vector<double>> &log_pi) {
  std::size_t n = 0;
  for (const auto &u : units) n += u.size();
  SurveySample s;
  s.y.resize(static_cast<Eigen::Index>(n));
  s.x_y.resize(static_cast<Eigen::Index>(n), 2);
  s.log_pi.resize(static_cast<Eigen::Index>(n));
  s.psu.reserve(n);
  s.num_psu = static_cast<int>(psus.size());
  Eigen::Index row = 0;
  for (std::size_t a = 0; a < psus.size(); ++a) {
    for (std::size_t b = 0; b < units[a].size(); ++b) {
      const std::size_t k = pop.unit(static_cast<int>(psus[a]), static_cast<int>(units[a][b]));
      s.y[row] = pop.y[static_cast<Eigen::Index>(k)];
      s.x_y(row, 0) = 1.0;
      s.x_y(row, 1) = pop.x[static_cast<Eigen::Index>(k)];
      s.log_pi[row] = log_pi[a][b];
      s.psu.push_back(static_cast<int>(a));
      ++row;
    }
  }
  s.x_pi = s.x_y;
  s.x_y_names = {"(Intercept)", "x"};
  s.x_pi_names = s.x_y_names;
  return s;
}

}  // namespace

SurveySample draw_csrs(const Population &pop, const ScenarioConfig &cfg, Rng &rng) {
  cfg.validate();
  const auto psus = srs_wor(static_cast<std::size_t>(pop.num_psu),
                            static_cast<std::size_t>(cfg.sample_psus), rng);
  const double log_pi = std::log(static_cast<double>(cfg.sample_psus) / pop.num_psu) +
                        std::log(static_cast<double>(cfg.units_per_psu) / pop.psu_size);
  std::vector<std::vector<std::size_t>> units;
  std::vector<std::vector<double>> lp;
  for (std::size_t a = 0; a < psus.size(); ++a) {
    units.push_back(srs_wor(static_cast<std::size_t>(pop.psu_size),
                            static_cast<std::size_t>(cfg.units_per_psu), rng));
    lp.emplace_back(units.back().size(), log_pi);
  }
  return assemble(pop, psus, units, lp);
}

SurveySample draw_informative_sample(const Population &pop, const ScenarioConfig &cfg, Rng &rng) {
  cfg.validate();
  const std::span<const double> psu_weights(pop.pi_psu.data(), static_cast<std::size_t>(pop.pi_psu.size()));
  auto select = [&](std::span<const double> w, int k) {
    return cfg.design == SelectionDesign::Proportional ? pps_systematic(w, static_cast<std::size_t>(k), rng)
                                                       : pps_wor(w, static_cast<std::size_t>(k), rng);
  };
  const auto psus = select(psu_weights, cfg.sample_psus);
  std::vector<std::vector<std::size_t>> units;
  std::vector<std::vector<double>> lp;
  for (std::size_t j : psus) {
    const double *begin = pop.pi_within.data() + pop.unit(static_cast<int>(j), 0);
    const std::span<const double> within(begin, static_cast<std::size_t>(pop.psu_size));
    units.push_back(select(within, cfg.units_per_psu));
    std::vector<double> values;
    for (std::size_t i : units.back()) {
      values.push_back(std::log(pop.pi_psu[static_cast<Eigen::Index>(j)]) + std::log(within[i]));
    }
    lp.push_back(std::move(values));
  }
  return assemble(pop, psus, units, lp);
}

TrueValues true_parameters(const Population &pop, const ScenarioConfig &cfg) {
  TrueValues t;
  t.beta0_true = cfg.beta0_dg + cfg.beta_pi1 / cfg.num_psu_pop + cfg.beta_pi2 * cfg.a_pi / cfg.b_pi;
  t.beta1_true = cfg.beta1_dg;
  GroupedData d;
  d.y = pop.y;
  d.x.resize(pop.y.size(), 2);
  d.x.col(0).setOnes();
  d.x.col(1) = pop.x;
  d.group.resize(static_cast<std::size_t>(pop.y.size()));
  for (Eigen::Index k = 0; k < pop.y.size(); ++k) {
    d.group[static_cast<std::size_t>(k)] = static_cast<int>(k / pop.psu_size);
  }
  t.sigma_eta_true = fit_random_intercept_reml(d).sigma_u;
  return t;
}

// ---------------------------------------------------------------------------
// Replications

std::string_view to_string(Method m) {
  switch (m) {
    case Method::FullBoth: return "FULL.both";
    case Method::FullY: return "FULL.y";
    case Method::Pseudo: return "Pseudo";
    case Method::Freq: return "Freq";
    case Method::Pop: return "Pop";
    case Method::Csrs: return "cSRS";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  for (Method m : all_methods()) {
    if (s == to_string(m)) return m;
  }
  if (s == "full-both") return Method::FullBoth;
  if (s == "full-y") return Method::FullY;
  if (s == "pseudo") return Method::Pseudo;
  if (s == "freq") return Method::Freq;
  if (s == "pop") return Method::Pop;
  if (s == "csrs") return Method::Csrs;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

std::vector<Method> all_methods() {
  return {Method::FullBoth, Method::FullY, Method::Pseudo, Method::Freq, Method::Pop, Method::Csrs};
}

namespace {

void summarize_bayes(const DifferentiableDensity &target, const AnalysisSettings &settings,
                     std::uint64_t seed, int rep, Method method, const TrueValues &truth,
                     std::vector<MethodResult> &out) {
  SamplerConfig cfg = settings.sampler;
  cfg.seed = seed;
  const PosteriorDraws draws = run_chains(target, cfg);
  double max_rhat = 1.0;
  if (settings.compute_rhat && draws.chains >= 2 && draws.draws >= 4) {
    for (const auto &d : split_rhat_ess(draws)) {
      if (d.name == "beta[0]" || d.name == "beta[1]" || d.name == "sd_eta_y") {
        max_rhat = std::max(max_rhat, d.rhat);
      }
    }
  }
  const std::pair<const char *, const char *> params[] = {
      {"beta0", "beta[0]"}, {"beta1", "beta[1]"}, {"sd_eta_y", "sd_eta_y"}};
  for (const auto &[label, name] : params) {
    const CredibleInterval ci = central_interval(draws, name, settings.level);
    MethodResult r;
    r.replication = rep;
    r.method = method;
    r.parameter = label;
    r.estimate = ci.mean;
    r.lo = ci.lo;
    r.hi = ci.hi;
    r.truth = std::string_view(label) == "beta0"   ? truth.beta0_true
              : std::string_view(label) == "beta1" ? truth.beta1_true
                                                   : truth.sigma_eta_true;
    r.divergence_flag = draws.divergence_flagged;
    r.max_rhat = max_rhat;
    out.push_back(r);
  }
}

void summarize_freq(const SurveySample &sample, const AnalysisSettings &settings, int rep,
                    const TrueValues &truth, std::vector<MethodResult> &out) {
  const WeightedSample ws = make_weighted_sample(sample);
  const FreqFit fit = sandwich_cov(weighted_ols(ws), ws);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd contrast = Eigen::VectorXd::Zero(fit.beta_hat.size());
    contrast[k] = 1.0;
    const ConfidenceInterval ci = freq_interval(fit, contrast, settings.level);
    MethodResult r;
    r.replication = rep;
    r.method = Method::Freq;
    r.parameter = k == 0 ? "beta0" : "beta1";
    r.estimate = ci.point;
    r.lo = ci.lo;
    r.hi = ci.hi;
    r.truth = k == 0 ? truth.beta0_true : truth.beta1_true;
    out.push_back(r);
  }
}

}  // namespace

std::vector<MethodResult> run_replication(const ScenarioConfig &cfg,
                                          std::span<const Method> methods,
                                          std::uint64_t master_seed, int rep_index,
                                          const AnalysisSettings &settings) {
  const Rng rep = Rng(master_seed).split(static_cast<std::uint64_t>(rep_index));
  Rng pop_rng = rep.split(1);
  Rng csrs_rng = rep.split(2);
  Rng informative_rng = rep.split(3);

  const Population pop = generate_population(cfg, pop_rng);
  const TrueValues truth = true_parameters(pop, cfg);
  const SurveySample csrs = draw_csrs(pop, cfg, csrs_rng);
  const SurveySample sample = draw_informative_sample(pop, cfg, informative_rng);

  std::vector<MethodResult> out;
  for (Method m : methods) {
    const std::uint64_t seed = rep.split(100 + static_cast<std::uint64_t>(m)).seed();
    switch (m) {
      case Method::FullBoth:
      case Method::FullY: {
        const PosteriorModel model(sample, m == Method::FullBoth ? ModelVariant::FullBoth : ModelVariant::FullY,
                                   settings.parameterization);
        summarize_bayes(model, settings, seed, rep_index, m, truth, out);
        break;
      }
      case Method::Pseudo: {
        const PseudoPosterior model(make_weighted_sample(sample), settings.parameterization);
        summarize_bayes(model, settings, seed, rep_index, m, truth, out);
        break;
      }
      case Method::Pop: {
        const PosteriorModel model(sample, ModelVariant::Pop, settings.parameterization);
        summarize_bayes(model, settings, seed, rep_index, m, truth, out);
        break;
      }
      case Method::Csrs: {
        const PosteriorModel model(csrs, ModelVariant::Pop, settings.parameterization);
        summarize_bayes(model, settings, seed, rep_index, m, truth, out);
        break;
      }
      case Method::Freq:
        summarize_freq(sample, settings, rep_index, truth, out);
        break;
    }
  }
  return out;
}

std::vector<MethodResult> run_simulation(const ScenarioConfig &cfg,
                                         std::span<const Method> methods, int reps,
                                         std::uint64_t master_seed,
                                         const AnalysisSettings &settings, int threads,
                                         int first_rep) {
  if (reps < 1) throw std::invalid_argument("need at least one replication");
  std::vector<std::vector<MethodResult>> per_rep(static_cast<std::size_t>(reps));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int k = next++; k < reps; k = next++) {
      try {
        per_rep[static_cast<std::size_t>(k)] =
            run_replication(cfg, methods, master_seed, first_rep + k, settings);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(threads, 1, reps);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<MethodResult> out;
  for (auto &r : per_rep) out.insert(out.end(), r.begin(), r.end());
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

const Metrics &MetricsTable::at(Method m, std::string_view parameter) const {
  for (const auto &c : cells) {
    if (c.method == m && c.parameter == parameter) return c;
  }
  throw std::out_of_range("no metrics for " + std::string(to_string(m)) + "/" + std::string(parameter));
}

bool MetricsTable::contains(Method m, std::string_view parameter) const {
  return std::any_of(cells.begin(), cells.end(), [&](const Metrics &c) {
    return c.method == m && c.parameter == parameter;
  });
}

MetricsTable aggregate_metrics(std::span<const MethodResult> results) {
  // Sorting first makes the sums independent of input order.
  std::vector<MethodResult> sorted(results.begin(), results.end());
  std::sort(sorted.begin(), sorted.end(), [](const MethodResult &a, const MethodResult &b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.parameter != b.parameter) return a.parameter < b.parameter;
    return a.replication < b.replication;
  });
  MetricsTable table;
  for (std::size_t a = 0; a < sorted.size();) {
    std::size_t b = a;
    while (b < sorted.size() && sorted[b].method == sorted[a].method &&
           sorted[b].parameter == sorted[a].parameter) {
      ++b;
    }
    Metrics m;
    m.method = sorted[a].method;
    m.parameter = sorted[a].parameter;
    m.count = static_cast<int>(b - a);
    double err = 0.0, err2 = 0.0, covered = 0.0, length = 0.0;
    for (std::size_t k = a; k < b; ++k) {
      const auto &r = sorted[k];
      const double e = r.estimate - r.truth;
      err += e;
      err2 += e * e;
      covered += (r.lo <= r.truth && r.truth <= r.hi) ? 1.0 : 0.0;
      length += r.hi - r.lo;
    }
    m.bias = err / m.count;
    m.mse = err2 / m.count;
    m.coverage = covered / m.count;
    m.length = length / m.count;
    table.cells.push_back(m);
    a = b;
  }
  return table;
}

}  // namespace infsamp
