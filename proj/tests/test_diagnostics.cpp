#include <doctest.h>

#include <random>

#include "sjlgm/diagnostics.hpp"
#include "sjlgm/simulation.hpp"

using namespace sjlgm;

namespace {

/// O(n^2) product-limit reference: at each distinct event time t, multiply by
/// (1 - d(t)/n(t)) with n(t) = #{T_i >= t}.
double km_reference(const std::vector<double>& times, const std::vector<int>& events,
                    double at) {
  std::vector<double> ev;
  for (size_t i = 0; i < times.size(); ++i)
    if (events[i]) ev.push_back(times[i]);
  std::sort(ev.begin(), ev.end());
  ev.erase(std::unique(ev.begin(), ev.end()), ev.end());
  double s = 1.0;
  for (double t : ev) {
    if (t > at) break;
    int n = 0, d = 0;
    for (size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= t) ++n;
      if (times[i] == t && events[i]) ++d;
    }
    s *= 1.0 - static_cast<double>(d) / n;
  }
  return s;
}

}  // namespace

TEST_CASE("Kaplan-Meier hand-worked example") {
  // times 1,2,3 with the 2 censored: S(1) = 2/3, S(3) = 2/3 * (1 - 1/1) = 0
  const KaplanMeierCurve km = kaplan_meier({1, 2, 3}, {1, 0, 1});
  REQUIRE(km.time.size() == 2);
  CHECK(km.time[0] == 1);
  CHECK(km.survival[0] == doctest::Approx(2.0 / 3.0));
  CHECK(km.time[1] == 3);
  CHECK(km.survival[1] == doctest::Approx(0.0));
  CHECK(km.at_risk[0] == 3);
  CHECK(km.at_risk[1] == 1);

  CHECK(km_at(km, 0.5) == doctest::Approx(1.0));
  CHECK(km_at(km, 1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(km_at(km, 2.9) == doctest::Approx(2.0 / 3.0));
  CHECK(km_at(km, 5.0) == doctest::Approx(0.0));
}

TEST_CASE("Kaplan-Meier equals empirical survival without censoring") {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> t(40);
  std::vector<int> ev(40, 1);
  for (auto& x : t) x = e(rng);
  const KaplanMeierCurve km = kaplan_meier(t, ev);
  for (double q : {0.2, 0.7, 1.5}) {
    int alive = 0;
    for (double x : t)
      if (x > q) ++alive;
    CHECK(km_at(km, q) == doctest::Approx(alive / 40.0).epsilon(1e-12));
  }
}

TEST_CASE("Kaplan-Meier against the brute-force reference, with ties and censoring") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> ti(1, 8);  // many ties
  std::bernoulli_distribution ci(0.35);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> t(30);
    std::vector<int> ev(30);
    for (int i = 0; i < 30; ++i) {
      t[i] = ti(rng);
      ev[i] = ci(rng) ? 0 : 1;
    }
    const KaplanMeierCurve km = kaplan_meier(t, ev);
    for (double q : {0.5, 2.0, 4.5, 7.0, 9.0})
      CHECK(km_at(km, q) == doctest::Approx(km_reference(t, ev, q)).epsilon(1e-12));
  }
  // all censored: no steps, survival constant one
  const KaplanMeierCurve flat = kaplan_meier({1, 2, 3}, {0, 0, 0});
  CHECK(flat.time.empty());
  CHECK(km_at(flat, 100.0) == doctest::Approx(1.0));
}

TEST_CASE("standardized marginal residuals on truth-generated data") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 3;
  cfg.lattice_cols = 3;
  cfg.subjects_per_region = 40;
  const SimulatedReplication sim = generate_replication(cfg, 0);
  ModelSpec spec = ModelSpec::study_preset("IV", static_cast<int>(cfg.beta.size()),
                                           cfg.n_shared_covariates,
                                           SplineConfig{3, {1.0 / 3, 2.0 / 3}, 0.0, 1.0});
  InlaEngine engine(spec, sim.data);
  FitOptions opt;
  opt.strategy = GridStrategy::EB;
  const FitResult f = fit(engine, sim.data, opt);
  const auto res = standardized_marginal_residuals(engine, f);
  REQUIRE(res.size() == sim.data.longitudinal.size());
  double mean = 0, m2 = 0;
  for (const auto& r : res) mean += r.residual;
  mean /= res.size();
  for (const auto& r : res) m2 += (r.residual - mean) * (r.residual - mean);
  const double sd = std::sqrt(m2 / (res.size() - 1));
  CHECK(std::abs(mean) < 0.1);
  CHECK(sd == doctest::Approx(1.0).epsilon(0.12));
}

TEST_CASE("marginal residual scaling: intercept-only variance is D11 + sigma2") {
  // With b ~ N(0, D11) and noise sigma2, the marginal sd at any time is
  // sqrt(D11 + sigma2); check through the residual of a zero observation.
  JointDataset d;
  d.graph.K = 1;
  d.survival.push_back({"a", 0, 10.0, 0, Eigen::VectorXd()});
  d.longitudinal.push_back({"a", 0, 0.0, 0.0, Eigen::VectorXd()});
  d.index();
  ModelSpec spec;
  spec.p1 = 0;
  spec.re = RandomStructure::Intercept;
  spec.include_survival = false;
  InlaEngine engine(spec, d);
  FitResult f;
  f.hyper_names = hyper_names(spec);
  f.grid.points = Eigen::MatrixXd::Zero(1, 2);  // sigma2 = 1, d11_inv = 1
  f.grid.weights = Eigen::VectorXd::Ones(1);
  f.grid.log_post = Eigen::VectorXd::Zero(1);
  const GaussianApproximation a = engine.gaussian_approximation(HyperParameters{});
  f.cond_mean.push_back(a.mode);
  f.cond_sd.push_back(a.marginal_sd);
  f.latent.resize(engine.latent_dim());
  f.latent[0].name = "beta0";
  f.latent[0].mean = -1.0;  // residual = (0 - (-1)) / sqrt(2)
  const auto res = standardized_marginal_residuals(engine, f);
  CHECK(res[0].residual == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("Cox-Snell residuals of a well-specified Weibull model hug exp(-t)") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  JointDataset d;
  d.graph.K = 1;
  const double shape = 1.6, a0 = -0.3, a1 = 0.5;
  for (int i = 0; i < 400; ++i) {
    Eigen::VectorXd x(1);
    x[0] = g(rng);
    const double eta = a0 + a1 * x[0];
    double t = std::pow(-std::log(1.0 - u(rng)) / std::exp(eta), 1.0 / shape);
    const double c = -std::log(1.0 - u(rng)) / 0.4;  // light censoring
    d.survival.push_back({"s" + std::to_string(i), 0, std::min(t, c), t <= c ? 1 : 0,
                          x});
  }
  d.index();
  ModelSpec spec;
  spec.p2 = 1;
  spec.include_longitudinal = false;
  InlaEngine engine(spec, d);
  FitOptions opt;
  opt.strategy = GridStrategy::Grid;
  const FitResult f = fit(engine, d, opt);
  const CoxSnellResult cs = cox_snell_residuals(engine, f, 400);
  CHECK(cs.sup_distance < 0.08);
  CHECK(cs.residual.size() == 400);
  for (double r : cs.residual) CHECK(r > 0.0);
}

TEST_CASE("subject prediction: survival starts at one and decreases") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 2;
  cfg.lattice_cols = 2;
  cfg.subjects_per_region = 30;
  const SimulatedReplication sim = generate_replication(cfg, 1);
  ModelSpec spec = ModelSpec::study_preset("III", static_cast<int>(cfg.beta.size()),
                                           cfg.n_shared_covariates,
                                           SplineConfig{3, {0.5}, 0.0, 1.0});
  InlaEngine engine(spec, sim.data);
  FitOptions opt;
  opt.strategy = GridStrategy::EB;
  const FitResult f = fit(engine, sim.data, opt);

  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  const SubjectPrediction p =
      predict_subject(engine, f, sim.data.subject_ids.front(), grid, 300);
  REQUIRE(p.grid.size() == grid.size());
  CHECK(p.survival_mean.front() == doctest::Approx(1.0));
  for (size_t t = 1; t < grid.size(); ++t) {
    CHECK(p.survival_mean[t] <= p.survival_mean[t - 1] + 1e-12);
    CHECK(p.trajectory_lo[t] <= p.trajectory_mean[t]);
    CHECK(p.trajectory_mean[t] <= p.trajectory_hi[t]);
    CHECK(p.survival_lo[t] <= p.survival_hi[t]);
  }
  CHECK_THROWS(predict_subject(engine, f, "no-such-subject", grid, 300));
}

TEST_CASE("region risk: one entry per region, finite where populated") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 2;
  cfg.lattice_cols = 3;
  cfg.subjects_per_region = 25;
  const SimulatedReplication sim = generate_replication(cfg, 2);
  ModelSpec spec = ModelSpec::study_preset("IV", static_cast<int>(cfg.beta.size()),
                                           cfg.n_shared_covariates,
                                           SplineConfig{3, {0.5}, 0.0, 1.0});
  InlaEngine engine(spec, sim.data);
  FitOptions opt;
  opt.strategy = GridStrategy::EB;
  const FitResult f = fit(engine, sim.data, opt);
  const auto risk = region_risk(engine, f);
  REQUIRE(risk.size() == 6);
  for (const auto& r : risk) {
    CHECK(r.n_subjects == 25);
    CHECK(std::isfinite(r.mean_log_risk));
    CHECK(r.spatial_relative_risk > 0.0);
  }
  // non-spatial model refuses
  ModelSpec ns = ModelSpec::study_preset("III", static_cast<int>(cfg.beta.size()),
                                         cfg.n_shared_covariates,
                                         SplineConfig{3, {0.5}, 0.0, 1.0});
  InlaEngine e2(ns, sim.data);
  const FitResult f2 = fit(e2, sim.data, opt);
  CHECK_THROWS(region_risk(e2, f2));
}
