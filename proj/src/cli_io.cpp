#include "infsamp/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <set>
#include <thread>
#include <unordered_map>

namespace infsamp {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view field, std::string_view what) {
  const std::string_view t = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw SchemaError("cannot parse '" + std::string(field) + "' as a number in " + std::string(what));
  }
  return value;
}

long long parse_integer(std::string_view field, std::string_view what) {
  const std::string_view t = trim(field);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw SchemaError("cannot parse '" + std::string(field) + "' as an integer for " + std::string(what));
  }
  return value;
}

std::string full_precision(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError("column '" + std::string(name) + "' not found");
  return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(std::string_view name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(std::istream &in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  char c;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw SchemaError("unterminated quoted field in CSV");
  if (field_started || !record.empty()) end_record();
  if (records.empty()) throw SchemaError("CSV has no header row");

  CsvTable table;
  table.header = std::move(records.front());
  for (auto &h : table.header) h = std::string(trim(h));
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw SchemaError("CSV row " + std::to_string(r + 1) + " has " +
                        std::to_string(records[r].size()) + " fields, header has " +
                        std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_csv(in);
}

bool is_missing(std::string_view field) {
  const std::string_view t = trim(field);
  return t.empty() || t == "NA" || t == ".";
}

// ---------------------------------------------------------------------------
// Key-value text

KeyValues parse_key_values(std::istream &in) {
  KeyValues kv;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw SchemaError("line " + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key(trim(s.substr(0, eq)));
    if (key.empty()) throw SchemaError("line " + std::to_string(number) + ": empty key");
    kv[key] = std::string(trim(s.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_key_values(in);
}

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  while (!value.empty()) {
    const auto comma = value.find(',');
    const std::string_view item = trim(value.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    value.remove_prefix(comma + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset schema and ingestion

DatasetSchema DatasetSchema::from_key_values(const KeyValues &kv) {
  static const std::set<std::string, std::less<>> known = {
      "response", "response_transform", "predictors", "predictors_pi",
      "categorical", "weight", "log_pi", "psu"};
  for (const auto &[k, v] : kv) {
    if (!known.contains(k)) throw SchemaError("unknown schema key '" + k + "'");
  }
  auto get = [&](std::string_view key) -> std::string {
    const auto it = kv.find(key);
    return it == kv.end() ? std::string() : it->second;
  };
  DatasetSchema s;
  s.response = get("response");
  const std::string transform = get("response_transform");
  if (transform.empty() || transform == "identity") {
    s.transform = ResponseTransform::Identity;
  } else if (transform == "log1p") {
    s.transform = ResponseTransform::Log1p;
  } else {
    throw SchemaError("response_transform must be identity or log1p, got '" + transform + "'");
  }
  s.predictors = split_list(get("predictors"));
  s.predictors_pi = split_list(get("predictors_pi"));
  for (const auto &item : split_list(get("categorical"))) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw SchemaError("categorical entry '" + item + "' must be column:reference");
    }
    s.categorical.push_back({std::string(trim(std::string_view(item).substr(0, colon))),
                             std::string(trim(std::string_view(item).substr(colon + 1)))});
  }
  s.weight = get("weight");
  s.log_pi = get("log_pi");
  s.psu = get("psu");
  s.validate();
  return s;
}

DatasetSchema DatasetSchema::from_file(const std::filesystem::path &path) {
  return from_key_values(read_key_values_file(path));
}

void DatasetSchema::validate() const {
  if (response.empty()) throw SchemaError("schema needs a response column");
  if (psu.empty()) throw SchemaError("schema needs a psu column");
  if (weight.empty() == log_pi.empty()) {
    throw SchemaError("schema needs exactly one of weight or log_pi");
  }
  for (const auto &c : categorical) {
    const bool used = std::find(predictors.begin(), predictors.end(), c.column) != predictors.end() ||
                      std::find(predictors_pi.begin(), predictors_pi.end(), c.column) != predictors_pi.end();
    if (!used) throw SchemaError("categorical column '" + c.column + "' is not a predictor");
  }
}

const CategoricalSpec *DatasetSchema::categorical_for(std::string_view column) const {
  for (const auto &c : categorical) {
    if (c.column == column) return &c;
  }
  return nullptr;
}

WeightedSample LoadedSurvey::weighted() const {
  return make_weighted_sample(sample, weights);
}

namespace {

// Design columns for one predictor list: intercept, then numeric columns as
// they are and categorical columns as indicators of the non-reference levels.
struct DesignBuilder {
  struct Term {
    std::size_t source;
    const CategoricalSpec *cat = nullptr;
    std::vector<std::string> levels;  // non-reference levels, sorted
  };
  std::vector<Term> terms;
  std::vector<std::string> names{"(Intercept)"};

  DesignBuilder(const CsvTable &table, const DatasetSchema &schema,
                const std::vector<std::string> &predictors, const std::vector<std::size_t> &kept) {
    for (const auto &p : predictors) {
      Term t{table.column(p), nullptr, {}};
      t.cat = schema.categorical_for(p);
      if (t.cat) {
        std::set<std::string> levels;
        for (std::size_t r : kept) levels.insert(std::string(trim(table.rows[r][t.source])));
        if (!levels.contains(t.cat->reference)) {
          throw SchemaError("reference level '" + t.cat->reference + "' not present in column '" + p + "'");
        }
        for (const auto &l : levels) {
          if (l == t.cat->reference) continue;
          t.levels.push_back(l);
          names.push_back(p + "[" + l + "]");
        }
      } else {
        names.push_back(p);
      }
      terms.push_back(std::move(t));
    }
  }

  Eigen::MatrixXd build(const CsvTable &table, const std::vector<std::size_t> &kept) const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto &row = table.rows[kept[i]];
      const auto r = static_cast<Eigen::Index>(i);
      Eigen::Index c = 0;
      x(r, c++) = 1.0;
      for (const auto &t : terms) {
        if (t.cat) {
          const std::string_view value = trim(row[t.source]);
          for (const auto &l : t.levels) x(r, c++) = value == l ? 1.0 : 0.0;
        } else {
          x(r, c++) = parse_double(row[t.source], table.header[t.source]);
        }
      }
    }
    return x;
  }
};

}  // namespace

LoadedSurvey load_survey(const CsvTable &table, const DatasetSchema &schema, std::ostream *log) {
  schema.validate();
  const std::size_t response = table.column(schema.response);
  const std::size_t psu = table.column(schema.psu);
  const bool has_weight = !schema.weight.empty();
  const std::size_t design = table.column(has_weight ? schema.weight : schema.log_pi);
  const std::vector<std::string> &pi_predictors =
      schema.predictors_pi.empty() ? schema.predictors : schema.predictors_pi;
  std::vector<std::size_t> needed{response, psu};
  for (const auto *list : {&schema.predictors, &pi_predictors}) {
    for (const auto &p : *list) needed.push_back(table.column(p));
  }

  LoadedSurvey out;
  out.report.rows_read = table.rows.size();
  std::vector<std::size_t> kept;
  std::vector<double> weights;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    if (is_missing(row[design])) {
      ++out.report.dropped_weight;
      continue;
    }
    const double value = parse_double(row[design], table.header[design]);
    const double w = has_weight ? value : std::exp(-value);
    if (!(w > 0.0) || !std::isfinite(w)) {
      ++out.report.dropped_weight;
      continue;
    }
    if (std::any_of(needed.begin(), needed.end(), [&](std::size_t c) { return is_missing(row[c]); })) {
      ++out.report.dropped_missing;
      continue;
    }
    kept.push_back(r);
    weights.push_back(w);
  }
  out.report.rows_kept = kept.size();
  if (log) {
    *log << "read " << out.report.rows_read << " rows; dropped " << out.report.dropped_weight
         << " with non-positive or missing weight, " << out.report.dropped_missing
         << " with missing values; kept " << out.report.rows_kept << "\n";
  }
  if (kept.empty()) throw SchemaError("no rows left after filtering");

  SurveySample &s = out.sample;
  const auto n = static_cast<Eigen::Index>(kept.size());
  s.y.resize(n);
  s.log_pi.resize(n);
  out.weights.resize(n);
  std::unordered_map<std::string, int> psu_index;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto &row = table.rows[kept[i]];
    const auto k = static_cast<Eigen::Index>(i);
    double y = parse_double(row[response], schema.response);
    if (schema.transform == ResponseTransform::Log1p) {
      if (!(y > -1.0)) throw SchemaError("log1p response needs values > -1 in '" + schema.response + "'");
      y = std::log1p(y);
    }
    s.y[k] = y;
    out.weights[k] = weights[i];
    const double raw = parse_double(row[design], table.header[design]);
    s.log_pi[k] = has_weight ? -std::log(raw) : raw;
    const std::string label(trim(row[psu]));
    const auto [it, inserted] = psu_index.emplace(label, static_cast<int>(psu_index.size()));
    if (inserted) out.psu_labels.push_back(label);
    s.psu.push_back(it->second);
  }
  s.num_psu = static_cast<int>(psu_index.size());

  const DesignBuilder by(table, schema, schema.predictors, kept);
  const DesignBuilder bpi(table, schema, pi_predictors, kept);
  s.x_y = by.build(table, kept);
  s.x_pi = bpi.build(table, kept);
  s.x_y_names = by.names;
  s.x_pi_names = bpi.names;
  s.validate();
  return out;
}

LoadedSurvey load_survey_csv(const std::filesystem::path &path, const DatasetSchema &schema,
                             std::ostream *log) {
  return load_survey(read_csv_file(path), schema, log);
}

WeightTarget parse_weight_target(std::string_view s) {
  if (s == "n") return WeightTarget::SampleSize;
  if (s == "none") return WeightTarget::None;
  throw std::invalid_argument("weight normalization must be 'n' or 'none'");
}

Eigen::VectorXd normalize_weights(const Eigen::VectorXd &w, WeightTarget target) {
  if (!(w.array() > 0.0).all()) throw std::invalid_argument("weights must be positive");
  return target == WeightTarget::SampleSize ? normalize_to_size(w) : w;
}

// ---------------------------------------------------------------------------
// Run configuration

std::string_view to_string(Command c) {
  switch (c) {
    case Command::Simulate: return "simulate";
    case Command::Fit: return "fit";
    case Command::Compare: return "compare";
    case Command::Report: return "report";
  }
  return "?";
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  throw std::invalid_argument("report format must be csv or markdown");
}

void RunConfig::apply(std::string_view key, std::string_view value) {
  const std::string k(key);
  if (key == "scenario") {
    scenario = parse_scenario(value);
  } else if (key == "multiplier") {
    multiplier = parse_double(value, k);
  } else if (key == "reps") {
    reps = static_cast<int>(parse_integer(value, k));
  } else if (key == "design") {
    design = parse_design(value);
  } else if (key == "methods") {
    methods.clear();
    for (const auto &m : split_list(value)) methods.push_back(parse_method(m));
  } else if (key == "data") {
    data = std::string(value);
  } else if (key == "schema") {
    schema = std::string(value);
  } else if (key == "variant") {
    variant = std::string(value);
  } else if (key == "in") {
    in = std::string(value);
  } else if (key == "format") {
    format = parse_report_format(value);
  } else if (key == "out") {
    out = std::string(value);
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_integer(value, k));
  } else if (key == "chains") {
    sampler.chains = static_cast<int>(parse_integer(value, k));
  } else if (key == "warmup") {
    sampler.warmup = static_cast<int>(parse_integer(value, k));
  } else if (key == "draws") {
    sampler.draws = static_cast<int>(parse_integer(value, k));
  } else if (key == "target_accept") {
    sampler.target_accept = parse_double(value, k);
  } else if (key == "max_leapfrog") {
    sampler.max_leapfrog = static_cast<int>(parse_integer(value, k));
  } else if (key == "integration_time") {
    sampler.integration_time = parse_double(value, k);
  } else if (key == "threads") {
    threads = static_cast<int>(parse_integer(value, k));
  } else if (key == "weights") {
    weight_target = parse_weight_target(value);
  } else {
    throw SchemaError("unknown configuration key '" + k + "'");
  }
}

void RunConfig::validate() const {
  sampler.validate();
  if (threads < 1) throw std::invalid_argument("thread count must be positive");
  switch (command) {
    case Command::Simulate:
      if (reps < 1) throw std::invalid_argument("reps must be positive");
      if (!(multiplier > 0.0)) throw std::invalid_argument("multiplier must be positive");
      if (methods.empty()) throw std::invalid_argument("no methods selected");
      break;
    case Command::Fit:
    case Command::Compare:
      if (!std::filesystem::exists(data)) throw IoError("data file '" + data.string() + "' not found");
      if (!std::filesystem::exists(schema)) throw IoError("schema file '" + schema.string() + "' not found");
      break;
    case Command::Report:
      if (!std::filesystem::exists(in)) throw IoError("input '" + in.string() + "' not found");
      break;
  }
}

int threads_from_environment() {
  if (const char *env = std::getenv("INFSAMP_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Reports

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

void write_replications_csv(std::ostream &out, std::span<const MethodResult> results) {
  out << "replication,method,parameter,estimate,lo,hi,truth,divergence_flag,max_rhat\n";
  for (const auto &r : results) {
    out << r.replication << ',' << to_string(r.method) << ',' << r.parameter << ','
        << full_precision(r.estimate) << ',' << full_precision(r.lo) << ',' << full_precision(r.hi)
        << ',' << full_precision(r.truth) << ',' << (r.divergence_flag ? 1 : 0) << ','
        << full_precision(r.max_rhat) << '\n';
  }
}

std::vector<MethodResult> read_replications_csv(std::istream &in) {
  const CsvTable t = read_csv(in);
  const std::size_t rep = t.column("replication"), method = t.column("method"),
                    param = t.column("parameter"), est = t.column("estimate"), lo = t.column("lo"),
                    hi = t.column("hi"), truth = t.column("truth"),
                    div = t.column("divergence_flag"), rhat = t.column("max_rhat");
  std::vector<MethodResult> out;
  out.reserve(t.rows.size());
  for (const auto &row : t.rows) {
    MethodResult r;
    r.replication = static_cast<int>(parse_integer(row[rep], "replication"));
    r.method = parse_method(trim(row[method]));
    r.parameter = std::string(trim(row[param]));
    r.estimate = parse_double(row[est], "estimate");
    r.lo = parse_double(row[lo], "lo");
    r.hi = parse_double(row[hi], "hi");
    r.truth = parse_double(row[truth], "truth");
    r.divergence_flag = parse_integer(row[div], "divergence_flag") != 0;
    r.max_rhat = parse_double(row[rhat], "max_rhat");
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::vector<Method> table_methods(const MetricsTable &table) {
  std::vector<Method> methods;
  for (Method m : all_methods()) {
    if (std::any_of(table.cells.begin(), table.cells.end(), [&](const Metrics &c) { return c.method == m; })) {
      methods.push_back(m);
    }
  }
  return methods;
}

std::vector<std::string> table_parameters(const MetricsTable &table) {
  std::vector<std::string> params;
  for (const char *p : {"beta0", "beta1", "sd_eta_y"}) {
    if (std::any_of(table.cells.begin(), table.cells.end(), [&](const Metrics &c) { return c.parameter == p; })) {
      params.emplace_back(p);
    }
  }
  for (const auto &c : table.cells) {
    if (std::find(params.begin(), params.end(), c.parameter) == params.end()) params.push_back(c.parameter);
  }
  return params;
}

}  // namespace

void write_metrics_markdown(std::ostream &out, const MetricsTable &table) {
  if (table.cells.empty()) throw std::invalid_argument("no results to report");
  const auto methods = table_methods(table);
  out << "| Parameter | Metric |";
  for (Method m : methods) out << ' ' << to_string(m) << " |";
  out << "\n|---|---|";
  for (std::size_t k = 0; k < methods.size(); ++k) out << "---:|";
  out << '\n';
  static const std::pair<const char *, double Metrics::*> metrics[] = {
      {"Bias", &Metrics::bias}, {"MSE", &Metrics::mse}, {"Coverage", &Metrics::coverage},
      {"Length", &Metrics::length}};
  for (const auto &p : table_parameters(table)) {
    for (const auto &[label, field] : metrics) {
      out << "| " << p << " | " << label << " |";
      for (Method m : methods) {
        out << ' ' << (table.contains(m, p) ? format_fixed(table.at(m, p).*field) : "–") << " |";
      }
      out << '\n';
    }
  }
}

void write_metrics_csv(std::ostream &out, const MetricsTable &table) {
  out << "method,parameter,bias,mse,coverage,length,count\n";
  for (const auto &c : table.cells) {
    out << to_string(c.method) << ',' << c.parameter << ',' << full_precision(c.bias) << ','
        << full_precision(c.mse) << ',' << full_precision(c.coverage) << ','
        << full_precision(c.length) << ',' << c.count << '\n';
  }
}

std::vector<ParameterSummary> summarize_posterior(const PosteriorDraws &draws) {
  std::vector<ParamDiagnostics> diag;
  if (draws.chains >= 2 && draws.draws >= 4) diag = split_rhat_ess(draws);
  std::vector<ParameterSummary> out;
  for (int k = 0; k < draws.dim; ++k) {
    std::vector<double> v = draws.pooled(k);
    std::sort(v.begin(), v.end());
    ParameterSummary s;
    s.name = draws.names[static_cast<std::size_t>(k)];
    double sum = 0.0, sq = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
    s.q025 = quantile_sorted(v, 0.025);
    s.q975 = quantile_sorted(v, 0.975);
    if (!diag.empty()) {
      s.rhat = diag[static_cast<std::size_t>(k)].rhat;
      s.ess = diag[static_cast<std::size_t>(k)].ess_bulk;
    } else {
      s.rhat = std::nan("");
      s.ess = std::nan("");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_summary_csv(std::ostream &out, std::span<const ParameterSummary> rows) {
  out << "parameter,mean,sd,q2.5,q97.5,rhat,ess_bulk\n";
  for (const auto &r : rows) {
    out << r.name << ',' << full_precision(r.mean) << ',' << full_precision(r.sd) << ','
        << full_precision(r.q025) << ',' << full_precision(r.q975) << ',' << full_precision(r.rhat)
        << ',' << full_precision(r.ess) << '\n';
  }
}

void write_summary_markdown(std::ostream &out, std::span<const ParameterSummary> rows) {
  out << "| Parameter | Mean | SD | 2.5% | 97.5% | R-hat | ESS |\n|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto &r : rows) {
    out << "| " << r.name << " | " << format_fixed(r.mean) << " | " << format_fixed(r.sd) << " | "
        << format_fixed(r.q025) << " | " << format_fixed(r.q975) << " | " << format_fixed(r.rhat)
        << " | " << format_fixed(r.ess, 0) << " |\n";
  }
}

std::ofstream open_output(const std::filesystem::path &path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace infsamp
