// infsamp: simulation study, model fitting and reporting from the command line.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <sstream>

#include "infsamp/cli_io.hpp"

using namespace infsamp;

namespace {

constexpr int kUsageError = 1;
constexpr int kNumericError = 2;

// Values from --config fill only the options not given on the command line.
void apply_config_file(RunConfig &cfg, CLI::App &sub, const std::string &path) {
  if (path.empty()) return;
  for (const auto &[key, value] : read_key_values_file(path)) {
    CLI::Option *opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound &) {
    }
    if (opt && opt->count() > 0) continue;
    cfg.apply(key, value);
  }
}

std::unique_ptr<PosteriorModel> make_model(const LoadedSurvey &data, std::string_view variant) {
  if (variant == "pseudo") return std::make_unique<PseudoPosterior>(data.weighted());
  return std::make_unique<PosteriorModel>(data.sample, parse_variant(variant));
}

void write_summary_files(const std::filesystem::path &dir, const std::string &stem,
                         const std::vector<ParameterSummary> &rows) {
  auto csv = open_output(dir / (stem + ".csv"));
  write_summary_csv(csv, rows);
  auto md = open_output(dir / (stem + ".md"));
  write_summary_markdown(md, rows);
}

int run_simulate(const RunConfig &cfg) {
  ScenarioConfig scenario = ScenarioConfig::preset(cfg.scenario, cfg.multiplier);
  scenario.design = cfg.design;
  AnalysisSettings settings;
  settings.sampler = cfg.sampler;
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_simulation(scenario, cfg.methods, cfg.reps, cfg.seed, settings, cfg.threads);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const MetricsTable table = aggregate_metrics(results);
  auto reps = open_output(cfg.out / "replications.csv");
  write_replications_csv(reps, results);
  auto csv = open_output(cfg.out / "metrics.csv");
  write_metrics_csv(csv, table);
  auto md = open_output(cfg.out / "metrics.md");
  write_metrics_markdown(md, table);

  int flagged = 0;
  for (const auto &r : results) flagged += r.divergence_flag && r.parameter == "beta0";
  std::cout << "scenario " << to_string(cfg.scenario) << " x" << cfg.multiplier << ", " << cfg.reps
            << " replications in " << format_fixed(seconds, 1) << " s";
  if (flagged) std::cout << " (" << flagged << " fits flagged for divergences)";
  std::cout << "\n\n";
  write_metrics_markdown(std::cout, table);
  return 0;
}

int run_fit(const RunConfig &cfg) {
  const LoadedSurvey data = load_survey_csv(cfg.data, DatasetSchema::from_file(cfg.schema), &std::clog);
  const auto model = make_model(data, cfg.variant);
  const PosteriorDraws draws = run_chains(*model, cfg.sampler);
  auto out = open_output(cfg.out / "draws.csv");
  write_draws_csv(out, draws);
  const auto rows = summarize_posterior(draws);
  write_summary_files(cfg.out, "summary", rows);
  if (draws.divergence_flagged) {
    std::clog << "warning: " << draws.divergences << " divergent transitions\n";
  }
  write_summary_markdown(std::cout, rows);
  return 0;
}

struct CompareRow {
  std::string method;
  std::string parameter;
  double mean, lo, hi;
};

int run_compare(const RunConfig &cfg) {
  const LoadedSurvey data = load_survey_csv(cfg.data, DatasetSchema::from_file(cfg.schema), &std::clog);
  std::vector<CompareRow> rows;
  std::optional<CredibleInterval> kappa_y;
  std::uint64_t stream = 0;
  for (const char *variant : {"full-both", "full-y", "pseudo", "pop"}) {
    SamplerConfig sc = cfg.sampler;
    sc.seed = Rng(cfg.seed).split(stream++).seed();
    const auto model = make_model(data, variant);
    const PosteriorDraws draws = run_chains(*model, sc);
    for (const auto &name : draws.names) {
      if (name.rfind("eta_", 0) == 0) continue;  // per-PSU effects are not compared
      const CredibleInterval ci = central_interval(draws, name, 0.95);
      rows.push_back({variant, name, ci.mean, ci.lo, ci.hi});
      if (std::string_view(variant) == "full-both" && name == "kappa_y") kappa_y = ci;
    }
  }
  const FreqFit freq = sandwich_cov(weighted_ols(data.weighted()), data.weighted());
  for (Eigen::Index k = 0; k < freq.beta_hat.size(); ++k) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(freq.beta_hat.size());
    e[k] = 1.0;
    const ConfidenceInterval ci = freq_interval(freq, e, 0.95);
    rows.push_back({"freq", "beta[" + std::to_string(k) + "]", ci.point, ci.lo, ci.hi});
  }

  auto csv = open_output(cfg.out / "compare.csv");
  csv.precision(17);
  csv << "method,parameter,mean,q2.5,q97.5\n";
  for (const auto &r : rows) {
    csv << r.method << ',' << r.parameter << ',' << r.mean << ',' << r.lo << ',' << r.hi << '\n';
  }
  std::ostringstream md;
  md << "| Method | Parameter | Mean | 2.5% | 97.5% |\n|---|---|---:|---:|---:|\n";
  for (const auto &r : rows) {
    md << "| " << r.method << " | " << r.parameter << " | " << format_fixed(r.mean) << " | "
       << format_fixed(r.lo) << " | " << format_fixed(r.hi) << " |\n";
  }
  auto mdf = open_output(cfg.out / "compare.md");
  mdf << md.str();
  std::cout << md.str();
  if (kappa_y) {
    const bool informative = kappa_y->lo > 0.0 || kappa_y->hi < 0.0;
    std::cout << "\nkappa_y 95% interval: [" << format_fixed(kappa_y->lo) << ", "
              << format_fixed(kappa_y->hi) << "] -> "
              << (informative ? "excludes zero: the design is informative"
                              : "contains zero: no evidence of informative sampling")
              << '\n';
  }
  return 0;
}

int run_report(const RunConfig &cfg) {
  std::filesystem::path path = cfg.in;
  if (std::filesystem::is_directory(path)) path /= "replications.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const auto results = read_replications_csv(in);
  const MetricsTable table = aggregate_metrics(results);
  const std::filesystem::path dir = std::filesystem::is_directory(cfg.in) ? cfg.in : cfg.in.parent_path();
  if (cfg.format == ReportFormat::Csv) {
    auto out = open_output(dir / "metrics.csv");
    write_metrics_csv(out, table);
    write_metrics_csv(std::cout, table);
  } else {
    auto out = open_output(dir / "metrics.md");
    write_metrics_markdown(out, table);
    write_metrics_markdown(std::cout, table);
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Bayesian estimation under informative sampling"};
  app.require_subcommand(1);

  RunConfig cfg;
  cfg.threads = threads_from_environment();
  std::string config_path, scenario = "S1", methods, variant = "full-both", format = "markdown",
                           weights = "n", design = "proportional";
  std::string data, schema, in, out = ".";

  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "key = value file; flags take precedence");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--chains", cfg.sampler.chains);
    sub->add_option("--warmup", cfg.sampler.warmup);
    sub->add_option("--draws", cfg.sampler.draws);
    sub->add_option("--target_accept", cfg.sampler.target_accept);
    sub->add_option("--max_leapfrog", cfg.sampler.max_leapfrog);
    sub->add_option("--integration_time", cfg.sampler.integration_time);
    sub->add_option("--threads", cfg.threads, "worker threads (default: INFSAMP_THREADS)");
  };

  auto *simulate = app.add_subcommand("simulate", "run a simulation scenario");
  simulate->add_option("--scenario", scenario)->check(CLI::IsMember({"S1", "S2", "S3"}));
  simulate->add_option("--multiplier", cfg.multiplier);
  simulate->add_option("--reps", cfg.reps);
  simulate->add_option("--design", design, "within-stage selection: proportional or successive")
      ->check(CLI::IsMember({"proportional", "successive"}));
  simulate->add_option("--methods", methods, "comma-separated, default all");
  add_common(simulate);

  auto *fit = app.add_subcommand("fit", "fit one model to a survey CSV");
  fit->add_option("--data", data)->required();
  fit->add_option("--schema", schema)->required();
  fit->add_option("--variant", variant)
      ->check(CLI::IsMember({"full-both", "full-y", "pseudo", "pop"}));
  add_common(fit);

  auto *compare = app.add_subcommand("compare", "fit all methods to a survey CSV");
  compare->add_option("--data", data)->required();
  compare->add_option("--schema", schema)->required();
  add_common(compare);

  auto *report = app.add_subcommand("report", "summarize a replications file");
  report->add_option("--in", in)->required();
  report->add_option("--format", format)->check(CLI::IsMember({"csv", "markdown"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  CLI::App *sub = app.get_subcommands().front();
  try {
    cfg.scenario = parse_scenario(scenario);
    if (!methods.empty()) cfg.apply("methods", methods);
    cfg.design = parse_design(design);
    cfg.variant = variant;
    cfg.format = parse_report_format(format);
    cfg.weight_target = parse_weight_target(weights);
    cfg.data = data;
    cfg.schema = schema;
    cfg.in = in;
    cfg.out = out;
    if (sub == simulate) cfg.command = Command::Simulate;
    if (sub == fit) cfg.command = Command::Fit;
    if (sub == compare) cfg.command = Command::Compare;
    if (sub == report) cfg.command = Command::Report;
    apply_config_file(cfg, *sub, config_path);
    cfg.validate();
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    switch (cfg.command) {
      case Command::Simulate: return run_simulate(cfg);
      case Command::Fit: return run_fit(cfg);
      case Command::Compare: return run_compare(cfg);
      case Command::Report: return run_report(cfg);
    }
  } catch (const SchemaError &e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return kUsageError;
  } catch (const IoError &e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception &e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  }
  return 0;
}
