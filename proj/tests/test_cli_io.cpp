#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "infsamp/cli_io.hpp"

using namespace infsamp;
namespace fs = std::filesystem;

namespace {

CsvTable csv(const std::string &text) {
  std::istringstream in(text);
  return read_csv(in);
}

DatasetSchema schema(const std::string &text) {
  std::istringstream in(text);
  return DatasetSchema::from_key_values(parse_key_values(in));
}

fs::path scratch(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("infsamp_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(INFSAMP_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("weights become log inclusion probabilities") {
  const auto t = csv("y,x,w,psu\n1.0,0.1,1,a\n2.0,0.2,2,a\n3.0,0.3,4,b\n");
  const LoadedSurvey s = load_survey(t, schema("response=y\npredictors=x\nweight=w\npsu=psu\n"));
  REQUIRE(s.sample.size() == 3);
  CHECK(s.sample.log_pi[0] == 0.0);
  CHECK(s.sample.log_pi[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(s.sample.log_pi[2] == doctest::Approx(-std::log(4.0)).epsilon(1e-15));
  CHECK(s.sample.num_psu == 2);
  CHECK(s.sample.psu == std::vector<int>{0, 0, 1});
  CHECK(s.psu_labels == std::vector<std::string>{"a", "b"});
  CHECK(s.sample.x_y_names == std::vector<std::string>{"(Intercept)", "x"});
  CHECK(s.sample.x_pi_names == s.sample.x_y_names);

  // a log-pi column is taken as is
  const auto lp = csv("y,x,lp,psu\n1.0,0.1,-0.5,1\n2.0,0.2,-1.5,2\n");
  const LoadedSurvey t2 = load_survey(lp, schema("response=y\npredictors=x\nlog_pi=lp\npsu=psu\n"));
  CHECK(t2.sample.log_pi[1] == -1.5);
  CHECK(t2.weights[1] == doctest::Approx(std::exp(1.5)));
}

TEST_CASE("rows without a positive weight are dropped and counted") {
  const auto t = csv("y,x,w,psu\n1,0.1,1,1\n2,0.2,0,1\n3,0.3,2,2\n4,0.4,3,2\n5,0.5,1,3\n");
  std::ostringstream log;
  const LoadedSurvey s = load_survey(t, schema("response=y\npredictors=x\nweight=w\npsu=psu\n"), &log);
  CHECK(s.sample.size() == 4);
  CHECK(s.report.dropped_weight == 1);
  CHECK(s.report.rows_read == 5);
  CHECK(log.str().find("dropped 1") != std::string::npos);

  // negative and missing weights, and missing predictors
  const auto u = csv("y,x,w,psu\n1,0.1,-1,1\n2,NA,2,1\n3,0.3,,2\n4,0.4,3,2\n5,.,1,3\n6,0.6,1,3\n");
  const LoadedSurvey v = load_survey(u, schema("response=y\npredictors=x\nweight=w\npsu=psu\n"));
  CHECK(v.report.dropped_weight == 2);
  CHECK(v.report.dropped_missing == 2);
  CHECK(v.report.rows_kept == 2);
}

TEST_CASE("categorical predictors expand to indicators with a reference level") {
  std::string text = "y,grp,w,psu\n";
  const char *levels[] = {"red", "green", "blue", "cyan", "gold"};
  for (int i = 0; i < 10; ++i) {
    text += std::to_string(i) + "," + levels[i % 5] + ",1," + std::to_string(i % 2) + "\n";
  }
  const LoadedSurvey s =
      load_survey(csv(text), schema("response=y\npredictors=grp\ncategorical=grp:red\nweight=w\npsu=psu\n"));
  CHECK(s.sample.x_y.cols() == 5);
  CHECK(s.sample.x_y_names ==
        std::vector<std::string>{"(Intercept)", "grp[blue]", "grp[cyan]", "grp[gold]", "grp[green]"});
  // row 0 is the reference level, row 1 is green
  CHECK(s.sample.x_y.row(0).tail(4).isZero(0.0));
  CHECK(s.sample.x_y(1, 4) == 1.0);
  CHECK(s.sample.x_y.row(1).sum() == 2.0);
}

TEST_CASE("schema errors name the problem") {
  const auto t = csv("y,x,w,psu\n1,0.1,1,1\n");
  try {
    load_survey(t, schema("response=y\npredictors=x,z\nweight=w\npsu=psu\n"));
    FAIL("expected a schema error");
  } catch (const SchemaError &e) {
    CHECK(std::string(e.what()).find("'z'") != std::string::npos);
  }
  const auto zero = csv("y,x,w,psu\n1,0.1,0,1\n2,0.2,-3,2\n");
  CHECK_THROWS_AS(load_survey(zero, schema("response=y\npredictors=x\nweight=w\npsu=psu\n")), SchemaError);
  CHECK_THROWS_AS(schema("response=y\nweight=w\nlog_pi=l\npsu=p\n").validate(), SchemaError);
  CHECK_THROWS_AS(schema("response=y\npsu=p\nbogus=1\n"), SchemaError);
  CHECK_THROWS(csv("a,b\n1,2,3\n"));
}

TEST_CASE("CSV reader handles quoting and line endings") {
  const auto t = csv("name,value\r\n\"a, b\",1\r\n\"say \"\"hi\"\"\",2\r\n");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "a, b");
  CHECK(t.rows[1][0] == "say \"hi\"");
  CHECK(t.rows[1][1] == "2");
  CHECK(t.column("value") == 1);
  CHECK_FALSE(t.has_column("missing"));
  CHECK(is_missing("NA"));
  CHECK(is_missing(""));
  CHECK(is_missing("."));
  CHECK_FALSE(is_missing("0"));
}

TEST_CASE("retained numeric fields survive a round trip") {
  const LoadedSurvey s = load_survey_csv(fs::path(INFSAMP_DATA_DIR) / "nhanes_synthetic.csv",
                                         DatasetSchema::from_file(fs::path(INFSAMP_DATA_DIR) / "nhanes_synthetic.schema"));
  CHECK(s.report.rows_read == 300);
  CHECK(s.report.dropped_weight == 1);
  CHECK(s.report.dropped_missing == 2);
  CHECK(s.sample.num_psu == 30);
  // race has five levels, reference 3
  CHECK(s.sample.x_y.cols() == 1 + 1 + 1 + 4 + 1);

  std::ostringstream out;
  out.precision(17);
  out << "y,age,w\n";
  for (Eigen::Index i = 0; i < s.sample.y.size(); ++i) {
    out << s.sample.y[i] << ',' << s.sample.x_y(i, 1) << ',' << s.weights[i] << '\n';
  }
  const CsvTable back = csv(out.str());
  for (std::size_t r = 0; r < back.rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    CHECK(std::abs(std::stod(back.rows[r][0]) / s.sample.y[i] - 1.0) <= 1e-12);
    CHECK(std::abs(std::stod(back.rows[r][2]) / s.weights[i] - 1.0) <= 1e-12);
  }
}

TEST_CASE("weight normalization") {
  CHECK(normalize_weights(Eigen::Vector4d::Ones(), WeightTarget::SampleSize) == Eigen::Vector4d::Ones());
  CHECK(normalize_weights(Eigen::Vector2d(2, 2), WeightTarget::SampleSize) == Eigen::Vector2d(1, 1));
  CHECK(normalize_weights(Eigen::Vector2d(2, 5), WeightTarget::None) == Eigen::Vector2d(2, 5));
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd w(17);
    for (auto &x : w) x = std::exp(3.0 * draw_standard_normal(rng));
    CHECK(std::abs(normalize_weights(w, WeightTarget::SampleSize).sum() - 17.0) <= 1e-9);
  }
  CHECK(parse_weight_target("none") == WeightTarget::None);
  CHECK_THROWS_AS(parse_weight_target("sum"), std::invalid_argument);
}

TEST_CASE("normalizing weights before a FULL fit only moves kappa_0") {
  const LoadedSurvey s = load_survey_csv(fs::path(INFSAMP_DATA_DIR) / "nhanes_synthetic.csv",
                                         DatasetSchema::from_file(fs::path(INFSAMP_DATA_DIR) / "nhanes_synthetic.schema"));
  SurveySample normalized = s.sample;
  const Eigen::VectorXd w = normalize_weights(s.weights, WeightTarget::SampleSize);
  normalized.log_pi = -w.array().log();
  const double shift = normalized.log_pi[0] - s.sample.log_pi[0];

  // the N(0, 100) coefficient prior is not translation invariant in kappa_0;
  // with a flat one the two targets are translates up to a constant
  PriorSpec flat;
  flat.coef_variance = 1e30;
  const PosteriorModel raw(s.sample, ModelVariant::FullY, Parameterization::NonCentered, flat);
  const PosteriorModel norm(normalized, ModelVariant::FullY, Parameterization::NonCentered, flat);
  const int k0 = raw.layout().kappa_x();
  Rng rng(3);
  Eigen::VectorXd ga, gb;
  double constant = 0.0, worst_const = 0.0, worst_grad = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd u(raw.dimension());
    for (auto &x : u) x = 0.3 * draw_standard_normal(rng);
    u[k0] -= 10.0;
    Eigen::VectorXd v = u;
    v[k0] += shift;
    const double diff = raw.log_density_gradient(u, ga) - norm.log_density_gradient(v, gb);
    if (rep == 0) constant = diff;
    worst_const = std::max(worst_const, std::abs(diff - constant) / std::abs(constant));
    worst_grad = std::max(worst_grad, (ga - gb).cwiseAbs().maxCoeff() / std::max(1.0, ga.cwiseAbs().maxCoeff()));
  }
  CHECK(constant == doctest::Approx(static_cast<double>(s.sample.size()) * shift).epsilon(1e-9));
  CHECK(worst_const <= 1e-9);
  CHECK(worst_grad <= 1e-12);

  // under the default prior the posterior still moves only kappa_0
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 500;
  cfg.draws = 500;
  cfg.seed = 5;
  const PosteriorDraws a = run_chains(PosteriorModel(s.sample, ModelVariant::FullY, Parameterization::NonCentered), cfg);
  cfg.seed = 6;
  const PosteriorDraws b = run_chains(PosteriorModel(normalized, ModelVariant::FullY, Parameterization::NonCentered), cfg);
  const auto da = split_rhat_ess(a), db = split_rhat_ess(b);
  for (int k = 0; k < a.dim; ++k) {
    if (a.names[static_cast<std::size_t>(k)].rfind("eta_", 0) == 0) continue;
    auto se = [](const PosteriorDraws &d, const std::vector<ParamDiagnostics> &diag, int j) {
      const auto v = d.pooled(j);
      const double m = d.mean(j);
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::sqrt(ss / static_cast<double>(v.size() - 1) / diag[static_cast<std::size_t>(j)].ess_bulk);
    };
    const double expected = k == k0 ? shift : 0.0;
    INFO(a.names[static_cast<std::size_t>(k)]);
    CHECK(std::abs(b.mean(k) - a.mean(k) - expected) <= 3.0 * std::hypot(se(a, da, k), se(b, db, k)));
  }
}

TEST_CASE("fixed-point rendering") {
  CHECK(format_fixed(0.9485) == "0.949");
  CHECK(format_fixed(0.125, 2) == "0.12");  // the binary value is exactly half: ties to even
  CHECK(format_fixed(-0.0001) == "0.000");
  CHECK(format_fixed(2.0) == "2.000");
  CHECK(format_fixed(-1.23456, 1) == "-1.2");
}

TEST_CASE("metric tables") {
  MethodResult r;
  r.method = Method::Pseudo;
  r.parameter = "beta0";
  r.estimate = 1.2;
  r.lo = 1.0;
  r.hi = 1.5;
  r.truth = 1.1;
  const std::vector<MethodResult> one{r};
  std::ostringstream md;
  write_metrics_markdown(md, aggregate_metrics(one));
  const std::string text = md.str();
  CHECK(text.find("| Pseudo |") != std::string::npos);
  CHECK(text.find("| beta0 | Bias | 0.100 |") != std::string::npos);
  CHECK(text.find("| beta0 | Coverage | 1.000 |") != std::string::npos);

  std::ostringstream out;
  write_metrics_csv(out, aggregate_metrics(one));
  CHECK(out.str().find("Pseudo,beta0") != std::string::npos);
}

TEST_CASE("replication files round trip at full precision") {
  Rng rng(2);
  std::vector<MethodResult> rs;
  for (int k = 0; k < 30; ++k) {
    MethodResult r;
    r.replication = k / 6;
    r.method = all_methods()[static_cast<std::size_t>(k % 6)];
    r.parameter = k % 2 ? "beta1" : "sd_eta_y";
    r.estimate = draw_standard_normal(rng) * 1e-3;
    r.lo = r.estimate - draw_uniform01(rng);
    r.hi = r.estimate + draw_uniform01(rng);
    r.truth = 1.0 / 3.0;
    r.divergence_flag = k % 7 == 0;
    r.max_rhat = 1.0 + draw_uniform01(rng) / 100;
    rs.push_back(r);
  }
  std::stringstream io;
  write_replications_csv(io, rs);
  CHECK(io.str().rfind("replication,method,parameter,estimate,lo,hi,truth,divergence_flag,max_rhat\n", 0) == 0);
  const auto back = read_replications_csv(io);
  REQUIRE(back.size() == rs.size());
  for (std::size_t k = 0; k < rs.size(); ++k) {
    CHECK(back[k].method == rs[k].method);
    CHECK(back[k].parameter == rs[k].parameter);
    CHECK(back[k].estimate == rs[k].estimate);
    CHECK(back[k].lo == rs[k].lo);
    CHECK(back[k].hi == rs[k].hi);
    CHECK(back[k].truth == rs[k].truth);
    CHECK(back[k].divergence_flag == rs[k].divergence_flag);
    CHECK(back[k].max_rhat == rs[k].max_rhat);
  }
}

TEST_CASE("key-value configuration") {
  std::istringstream in("# comment\n scenario = S2 \nmultiplier=3\n\nmethods = FULL.y, Pseudo\nseed = 7\ndesign = successive\n");
  const KeyValues kv = parse_key_values(in);
  CHECK(kv.at("scenario") == "S2");
  RunConfig cfg;
  for (const auto &[k, v] : kv) cfg.apply(k, v);
  CHECK(cfg.scenario == Scenario::S2);
  CHECK(cfg.multiplier == 3.0);
  CHECK(cfg.methods == std::vector<Method>{Method::FullY, Method::Pseudo});
  CHECK(cfg.seed == 7);
  CHECK(cfg.design == SelectionDesign::Successive);
  CHECK_THROWS_AS(cfg.apply("colour", "blue"), SchemaError);
  CHECK_THROWS(cfg.apply("reps", "many"));
  std::istringstream bad("no equals sign here\n");
  CHECK_THROWS(parse_key_values(bad));
  CHECK(split_list(" a, b ,c") == std::vector<std::string>{"a", "b", "c"});

  RunConfig fit;
  fit.command = Command::Fit;
  fit.data = "/nonexistent/file.csv";
  fit.schema = "/nonexistent/schema";
  CHECK_THROWS(fit.validate());
}

TEST_CASE("unwritable output is an IO error") {
  const fs::path dir = scratch("io");
  const fs::path blocker = dir / "file";
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(open_output(blocker / "sub" / "out.csv"), IoError);
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("") == 1);
  CHECK(run_cli("simulate --scenario S9") == 1);
  CHECK(run_cli("fit --data /nonexistent.csv --schema /nonexistent.schema") == 1);
  CHECK(run_cli("report --in " + dir.string()) == 1);

  // a tiny simulation, then a report on its output
  const std::string out = (dir / "sim").string();
  REQUIRE(run_cli("simulate --scenario S3 --reps 2 --methods Freq,Pop --chains 2 --warmup 100 --draws 100 --out " + out) == 0);
  CHECK(fs::exists(dir / "sim" / "replications.csv"));
  CHECK(read_file(dir / "sim" / "metrics.md").find("| Freq |") != std::string::npos);
  CHECK(run_cli("report --format csv --in " + out) == 0);
  CHECK(fs::exists(dir / "sim" / "metrics.csv"));

  // a rank-deficient design is a numeric failure
  std::ofstream(dir / "dup.csv") << "y,a,b,w,psu\n1,1,2,1,1\n2,2,4,1,1\n3,3,6,2,2\n5,4,8,1,2\n";
  std::ofstream(dir / "dup.schema") << "response=y\npredictors=a,b\nweight=w\npsu=psu\n";
  CHECK(run_cli("compare --draws 50 --warmup 50 --data " + (dir / "dup.csv").string() + " --schema " +
                (dir / "dup.schema").string() + " --out " + (dir / "dup").string()) == 2);
}

TEST_CASE("compare on the bundled sample reports the informativeness interval") {
  const fs::path dir = scratch("compare");
  const std::string args = "compare --chains 2 --warmup 300 --draws 300 --data " +
                           (fs::path(INFSAMP_DATA_DIR) / "nhanes_synthetic.csv").string() + " --schema " +
                           (fs::path(INFSAMP_DATA_DIR) / "nhanes_synthetic.schema").string() + " --out " +
                           dir.string();
  REQUIRE(run_cli(args) == 0);
  const std::string table = read_file(dir / "compare.csv");
  CHECK(table.find("kappa_y") != std::string::npos);
  CHECK(table.find("freq,beta[0]") != std::string::npos);
  CHECK(fs::exists(dir / "compare.md"));
}
