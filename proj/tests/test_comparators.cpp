#include <doctest.h>

#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "infsamp/comparators.hpp"
#include "infsamp/sampler.hpp"
#include "oracles.hpp"

using namespace infsamp;

namespace {

Eigen::VectorXd random_point(int dim, double sd, Rng &rng) {
  Eigen::VectorXd u(dim);
  for (int k = 0; k < dim; ++k) u[k] = sd * draw_standard_normal(rng);
  return u;
}

WeightedSample with_unit_weights(const SurveySample &s) {
  return WeightedSample{s, Eigen::VectorXd::Ones(s.y.size())};
}

// Replicates unit i counts[i] times, keeping its PSU.
SurveySample duplicate(const SurveySample &s, const std::vector<int> &counts) {
  const int n = std::accumulate(counts.begin(), counts.end(), 0);
  SurveySample d = s;
  d.y.resize(n);
  d.log_pi.resize(n);
  d.x_y.resize(n, s.x_y.cols());
  d.x_pi.resize(n, s.x_pi.cols());
  d.psu.clear();
  int row = 0;
  for (Eigen::Index i = 0; i < s.y.size(); ++i) {
    for (int c = 0; c < counts[static_cast<std::size_t>(i)]; ++c, ++row) {
      d.y[row] = s.y[i];
      d.log_pi[row] = s.log_pi[i];
      d.x_y.row(row) = s.x_y.row(i);
      d.x_pi.row(row) = s.x_pi.row(i);
      d.psu.push_back(s.psu[static_cast<std::size_t>(i)]);
    }
  }
  return d;
}

}  // namespace

TEST_CASE("unit weights reduce the pseudoposterior to Pop") {
  Rng rng(1);
  const SurveySample s = oracle::random_sample({4, 3, 5}, 1, rng);
  const WeightedSample ws = with_unit_weights(s);
  const ParamLayout L(ModelVariant::Pop, 2, 2, 3);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::VectorXd u = random_point(L.dim(), 0.8, rng);
    CHECK(pseudo_log_posterior(u, ws) == log_posterior(u, s, ModelVariant::Pop));
  }
}

TEST_CASE("exponentiated and weighted-variance forms differ by half the summed log weights") {
  Rng rng(2);
  const SurveySample s = oracle::random_sample({5, 5, 5}, 1, rng);
  const WeightedSample ws = make_weighted_sample(s);
  ws.validate();
  const double half_log_w = 0.5 * ws.w.array().log().sum();
  const ParamLayout L(ModelVariant::Pop, 2, 2, 3);
  for (int rep = 0; rep < 100; ++rep) {
    const ModelParams p = L.transform(random_point(L.dim(), 0.8, rng));
    const double diff = pseudo_loglik_exponentiated(p, ws) - pseudo_loglik_weighted_variance(p, ws);
    CHECK(std::abs(diff + half_log_w) <= 1e-10);
  }
}

TEST_CASE("integer weights act like duplicated units") {
  Rng rng(3);
  const SurveySample s = oracle::random_sample({3, 3}, 1, rng);
  const std::vector<int> counts{1, 3, 2, 1, 4, 1};
  Eigen::VectorXd raw(6);
  for (int i = 0; i < 6; ++i) raw[i] = counts[static_cast<std::size_t>(i)];
  const WeightedSample ws = make_weighted_sample(s, raw);
  const SurveySample dup = duplicate(s, counts);
  const double scale = 6.0 / raw.sum();

  const ParamLayout L(ModelVariant::Pop, 2, 2, 2);
  for (int rep = 0; rep < 20; ++rep) {
    const ModelParams p = L.transform(random_point(L.dim(), 0.6, rng));
    double dup_lik = 0.0;
    for (Eigen::Index i = 0; i < dup.y.size(); ++i) {
      const double mu = dup.x_y.row(i).dot(p.beta) + p.eta_y[dup.psu[static_cast<std::size_t>(i)]];
      dup_lik += std::log(oracle::normal_pdf(dup.y[i], mu, p.sigma_y * p.sigma_y));
    }
    CHECK(pseudo_loglik_exponentiated(p, ws) == doctest::Approx(scale * dup_lik).epsilon(1e-12));
  }

  const OlsFit weighted = weighted_ols(ws);
  const Eigen::VectorXd direct = dup.x_y.colPivHouseholderQr().solve(dup.y);
  CHECK((weighted.beta - direct).norm() <= 1e-10);
}

TEST_CASE("weighted OLS on exact and dominated data") {
  SurveySample s;
  s.y = Eigen::Vector4d(1.0, 3.0, 5.0, 7.0);
  s.x_y.resize(4, 2);
  s.x_y << 1, 0, 1, 1, 1, 2, 1, 3;
  s.x_pi = s.x_y;
  s.log_pi = Eigen::Vector4d::Zero();
  s.psu = {0, 0, 1, 1};
  s.num_psu = 2;
  s.x_y_names = s.x_pi_names = {"(Intercept)", "x"};
  const OlsFit exact = weighted_ols(make_weighted_sample(s, Eigen::Vector4d(1, 2, 3, 4)));
  CHECK(exact.beta[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(exact.beta[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(exact.sigma2 <= 1e-20);

  // two heavy points pin the line through them
  s.y = Eigen::Vector4d(0.0, 5.0, -3.0, 3.0);
  const OlsFit heavy = weighted_ols(make_weighted_sample(s, Eigen::Vector4d(1e8, 1.0, 1.0, 1e8)));
  CHECK(heavy.beta[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(heavy.beta[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("rank deficiency names the offending column") {
  Rng rng(4);
  SurveySample s = oracle::random_sample({4, 4}, 2, rng);
  s.x_y.col(2) = 2.0 * s.x_y.col(1);
  s.x_y_names = {"(Intercept)", "age", "age_twice"};
  try {
    weighted_ols(make_weighted_sample(s));
    FAIL("expected SingularDesignError");
  } catch (const SingularDesignError &e) {
    CHECK(e.column() == "age_twice");
    CHECK(e.index() == 2);
    CHECK(std::string(e.what()).find("age_twice") != std::string::npos);
  }
}

TEST_CASE("sandwich: identical clusters carry no between-PSU variability") {
  Rng rng(5);
  const SurveySample one = oracle::random_sample({5}, 1, rng);
  SurveySample s = duplicate(one, {1, 1, 1, 1, 1});
  // four copies of the same PSU
  SurveySample all = s;
  const int n = 5;
  all.y.resize(4 * n);
  all.log_pi.resize(4 * n);
  all.x_y.resize(4 * n, 2);
  all.psu.clear();
  for (int j = 0; j < 4; ++j) {
    all.y.segment(j * n, n) = s.y;
    all.log_pi.segment(j * n, n) = s.log_pi;
    all.x_y.middleRows(j * n, n) = s.x_y;
    for (int i = 0; i < n; ++i) all.psu.push_back(j);
  }
  all.x_pi = all.x_y;
  all.num_psu = 4;
  const WeightedSample ws = make_weighted_sample(all);
  const FreqFit fit = sandwich_cov(weighted_ols(ws), ws);
  CHECK(fit.cov_hat.norm() <= 1e-20);
  CHECK(fit.df == 3);
}

TEST_CASE("sandwich with one unit per PSU is the HC formula times J/(J-1)") {
  SurveySample s;
  s.y = Eigen::Vector4d(0.3, 1.4, 1.9, 3.6);
  s.x_y.resize(4, 2);
  s.x_y << 1, 0, 1, 1, 1, 2, 1, 3;
  s.x_pi = s.x_y;
  s.log_pi = Eigen::Vector4d(-1.0, -2.0, -1.5, -0.5);
  s.psu = {0, 1, 2, 3};
  s.num_psu = 4;
  s.x_y_names = s.x_pi_names = {"(Intercept)", "x"};
  const WeightedSample ws = make_weighted_sample(s);
  const FreqFit fit = sandwich_cov(weighted_ols(ws), ws);

  const Eigen::MatrixXd X = s.x_y;
  const Eigen::MatrixXd W = ws.w.asDiagonal();
  const Eigen::MatrixXd bread = (X.transpose() * W * X).inverse();
  const Eigen::VectorXd beta = bread * X.transpose() * W * s.y;
  const Eigen::VectorXd e = s.y - X * beta;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < 4; ++i) {
    meat += ws.w[i] * ws.w[i] * e[i] * e[i] * X.row(i).transpose() * X.row(i);
  }
  const Eigen::MatrixXd expected = 4.0 / 3.0 * bread * meat * bread;
  CHECK((fit.cov_hat - expected).norm() <= 1e-10 * expected.norm());
  CHECK((fit.beta_hat - beta).norm() <= 1e-12);
}

TEST_CASE("sandwich is invariant to PSU relabeling and equivariant to scaling y") {
  Rng rng(6);
  const SurveySample s = oracle::random_sample({4, 6, 3, 5, 4}, 1, rng);
  const WeightedSample ws = make_weighted_sample(s);
  const FreqFit base = sandwich_cov(weighted_ols(ws), ws);

  WeightedSample relabeled = ws;
  const std::vector<int> perm{3, 0, 4, 1, 2};
  for (int &j : relabeled.sample.psu) j = perm[static_cast<std::size_t>(j)];
  const FreqFit r = sandwich_cov(weighted_ols(relabeled), relabeled);
  CHECK((r.cov_hat - base.cov_hat).norm() <= 1e-12 * base.cov_hat.norm());

  WeightedSample scaled = ws;
  scaled.sample.y *= 3.0;
  const FreqFit sc = sandwich_cov(weighted_ols(scaled), scaled);
  CHECK((sc.beta_hat - 3.0 * base.beta_hat).norm() <= 1e-12 * base.beta_hat.norm() * 3);
  CHECK((sc.cov_hat - 9.0 * base.cov_hat).norm() <= 1e-10 * base.cov_hat.norm() * 9);
}

TEST_CASE("fewer than two PSUs is an error") {
  Rng rng(7);
  const SurveySample s = oracle::random_sample({6}, 1, rng);
  const WeightedSample ws = make_weighted_sample(s);
  CHECK_THROWS_AS(sandwich_cov(weighted_ols(ws), ws), std::invalid_argument);
}

TEST_CASE("Student-t quantiles and CDF") {
  CHECK(student_t_quantile(0.975, 29) == doctest::Approx(2.0452).epsilon(5e-5));
  for (double df : {1.0, 2.5, 4.0, 29.0, 200.0}) {
    const boost::math::students_t ref(df);
    for (double p : {0.001, 0.05, 0.3, 0.5, 0.8, 0.975, 0.9995}) {
      CHECK(student_t_quantile(p, df) == doctest::Approx(boost::math::quantile(ref, p)).epsilon(1e-9));
    }
    for (double t : {-5.0, -1.0, 0.0, 0.7, 3.0}) {
      CHECK(student_t_cdf(t, df) == doctest::Approx(boost::math::cdf(ref, t)).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(student_t_quantile(0.0, 5), DomainError);
  CHECK_THROWS_AS(student_t_quantile(0.5, 0.0), DomainError);
  CHECK(incomplete_beta(2.0, 3.0, 0.4) == doctest::Approx(0.5248).epsilon(1e-12));
}

TEST_CASE("frequentist intervals") {
  FreqFit fit;
  fit.beta_hat = Eigen::Vector2d(1.0, 2.0);
  fit.cov_hat = Eigen::Matrix2d::Identity() * 0.04;
  fit.df = 10'000;
  const Eigen::Vector2d e0(1.0, 0.0);
  const ConfidenceInterval ci = freq_interval(fit, e0);
  CHECK(ci.point == 1.0);
  CHECK(std::abs((ci.hi - ci.lo) / 2 / (1.96 * 0.2) - 1.0) <= 0.005);

  fit.df = 29;
  const ConfidenceInterval t29 = freq_interval(fit, e0);
  CHECK((t29.hi - t29.lo) / 2 == doctest::Approx(2.0452 * 0.2).epsilon(1e-4));

  fit.cov_hat.setZero();
  const ConfidenceInterval zero = freq_interval(fit, Eigen::Vector2d(0.0, 1.0));
  CHECK(zero.lo == 2.0);
  CHECK(zero.hi == 2.0);

  CHECK_THROWS_AS(freq_interval(fit, e0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(freq_interval(fit, e0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(freq_interval(fit, Eigen::Vector3d::Zero(), 0.9), std::invalid_argument);
}

TEST_CASE("weights are validated and standardized") {
  CHECK(normalize_to_size(Eigen::Vector3d(1, 1, 2)).isApprox(Eigen::Vector3d(0.75, 0.75, 1.5)));
  Rng rng(8);
  const SurveySample s = oracle::random_sample({2, 2}, 1, rng);
  CHECK_THROWS_AS(make_weighted_sample(s, Eigen::Vector4d(1, 0, 1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(make_weighted_sample(s, Eigen::Vector3d(1, 1, 1)), std::invalid_argument);
  WeightedSample ws = make_weighted_sample(s);
  CHECK(ws.w.sum() == doctest::Approx(4.0).epsilon(1e-12));
  // weights are 1/pi up to scale
  for (int i = 1; i < 4; ++i) {
    CHECK(ws.w[i] / ws.w[0] == doctest::Approx(std::exp(s.log_pi[0] - s.log_pi[i])).epsilon(1e-12));
  }
  ws.w[0] *= 2;
  CHECK_THROWS_AS(ws.validate(), std::invalid_argument);
}

TEST_CASE("unit-weight pseudoposterior chains match Pop draw for draw") {
  Rng rng(9);
  const SurveySample s = oracle::random_sample({5, 5, 5, 5}, 1, rng);
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 200;
  cfg.draws = 200;
  cfg.seed = 31;
  const PosteriorDraws pseudo = run_chains(PseudoPosterior(with_unit_weights(s)), cfg);
  const PosteriorDraws pop = run_chains(PosteriorModel(s, ModelVariant::Pop), cfg);
  CHECK(pseudo.names == pop.names);
  CHECK(pseudo.values == pop.values);
}
