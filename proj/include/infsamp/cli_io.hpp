#ifndef INFSAMP_CLI_IO_HPP_
#define INFSAMP_CLI_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "infsamp/comparators.hpp"
#include "infsamp/model.hpp"
#include "infsamp/sampler.hpp"
#include "infsamp/simulation.hpp"

namespace infsamp {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws SchemaError naming the column when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

// RFC 4180-ish: quoted fields may contain commas, doubled quotes and newlines.
CsvTable read_csv(std::istream &in);
CsvTable read_csv_file(const std::filesystem::path &path);

// "", "NA" and "." are missing.
bool is_missing(std::string_view field);

// ---------------------------------------------------------------------------
// Key-value text
//
//   # comment
//   key = value
//
// Keys and values are trimmed; later keys override earlier ones. Values may
// not span lines. A list is written comma-separated.
using KeyValues = std::map<std::string, std::string, std::less<>>;

KeyValues parse_key_values(std::istream &in);
KeyValues read_key_values_file(const std::filesystem::path &path);
std::vector<std::string> split_list(std::string_view value);

// ---------------------------------------------------------------------------
// Dataset ingestion

enum class ResponseTransform { Identity, Log1p };

struct CategoricalSpec {
  std::string column;
  std::string reference;
};

// Keys: response, response_transform (identity | log1p), predictors,
// predictors_pi (defaults to predictors), categorical (col:reference, ...),
// weight OR log_pi, psu.
struct DatasetSchema {
  std::string response;
  ResponseTransform transform = ResponseTransform::Identity;
  std::vector<std::string> predictors;
  std::vector<std::string> predictors_pi;
  std::vector<CategoricalSpec> categorical;
  std::string weight;
  std::string log_pi;
  std::string psu;

  static DatasetSchema from_key_values(const KeyValues &kv);
  static DatasetSchema from_file(const std::filesystem::path &path);
  void validate() const;
  const CategoricalSpec *categorical_for(std::string_view column) const;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t dropped_weight = 0;   // non-positive or missing weight
  std::size_t dropped_missing = 0;  // missing response, predictor or psu
  std::size_t rows_kept = 0;
};

struct LoadedSurvey {
  SurveySample sample;
  Eigen::VectorXd weights;  // raw, as read (or exp(-log_pi))
  std::vector<std::string> psu_labels;  // original id of each dense index
  LoadReport report;

  // Weights standardized to sum to n, for the Pseudo and Freq comparators.
  WeightedSample weighted() const;
};

LoadedSurvey load_survey(const CsvTable &table, const DatasetSchema &schema,
                         std::ostream *log = nullptr);
LoadedSurvey load_survey_csv(const std::filesystem::path &path, const DatasetSchema &schema,
                             std::ostream *log = nullptr);

enum class WeightTarget { SampleSize, None };
WeightTarget parse_weight_target(std::string_view s);
Eigen::VectorXd normalize_weights(const Eigen::VectorXd &w, WeightTarget target);

// ---------------------------------------------------------------------------
// Run configuration

enum class Command { Simulate, Fit, Compare, Report };
std::string_view to_string(Command c);

enum class ReportFormat { Csv, Markdown };
ReportFormat parse_report_format(std::string_view s);

struct RunConfig {
  Command command = Command::Simulate;
  // simulate
  Scenario scenario = Scenario::S1;
  double multiplier = 1.0;
  int reps = 200;
  std::vector<Method> methods = all_methods();
  SelectionDesign design = SelectionDesign::Proportional;
  // fit / compare
  std::filesystem::path data;
  std::filesystem::path schema;
  std::string variant = "full-both";
  // report
  std::filesystem::path in;
  ReportFormat format = ReportFormat::Markdown;

  std::filesystem::path out = ".";
  std::uint64_t seed = 20240601;
  SamplerConfig sampler = AnalysisSettings{}.sampler;
  int threads = 1;
  WeightTarget weight_target = WeightTarget::SampleSize;

  // Sets one field from its key-value spelling (the long flag name).
  void apply(std::string_view key, std::string_view value);
  // Paths exist for fit/compare/report, counts are sane.
  void validate() const;
};

// Thread count from INFSAMP_THREADS, else the hardware concurrency.
int threads_from_environment();

// ---------------------------------------------------------------------------
// Reports

// Fixed-point rendering of the binary value, rounded to nearest.
std::string format_fixed(double value, int decimals = 3);

void write_replications_csv(std::ostream &out, std::span<const MethodResult> results);
std::vector<MethodResult> read_replications_csv(std::istream &in);

// Per-method columns, per-(parameter, metric) rows, 3 decimals.
void write_metrics_markdown(std::ostream &out, const MetricsTable &table);
// Long format, full precision.
void write_metrics_csv(std::ostream &out, const MetricsTable &table);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double rhat = 1.0;
  double ess = 0.0;
};

std::vector<ParameterSummary> summarize_posterior(const PosteriorDraws &draws);
void write_summary_csv(std::ostream &out, std::span<const ParameterSummary> rows);
void write_summary_markdown(std::ostream &out, std::span<const ParameterSummary> rows);

// Opens for writing, creating parent directories; throws IoError on failure.
std::ofstream open_output(const std::filesystem::path &path);

}  // namespace infsamp

#endif  // INFSAMP_CLI_IO_HPP_
