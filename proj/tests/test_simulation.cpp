#include <doctest.h>

#include <algorithm>

#include "sjlgm/simulation.hpp"

using namespace sjlgm;

TEST_CASE("null generator produces Exp(1) event times (KS test at 1%)") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 5;
  cfg.lattice_cols = 5;
  cfg.subjects_per_region = 40;
  cfg.beta = Eigen::VectorXd::Zero(1);
  cfg.alpha = Eigen::VectorXd::Zero(1);  // intercept 0
  cfg.n_shared_covariates = 0;
  cfg.gamma1 = cfg.gamma2 = 0.0;
  cfg.shape = 1.0;
  cfg.spatial_precision = 1e8;  // spatial field numerically switched off
  cfg.censor_rate = 0.0;

  const SimulatedReplication sim = generate_replication(cfg, 0);
  std::vector<double> t;
  for (const auto& s : sim.data.survival) {
    CHECK(s.event == 1);
    t.push_back(s.time);
  }
  std::sort(t.begin(), t.end());
  const int n = static_cast<int>(t.size());
  REQUIRE(n == 1000);
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = 1.0 - std::exp(-t[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n),
                  std::abs(f - static_cast<double>(i + 1) / n)});
  }
  // 1% critical value of the Kolmogorov statistic
  CHECK(d * (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) < 1.63);
}

TEST_CASE("censoring calibration hits the target rate") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 4;
  cfg.lattice_cols = 4;
  cfg.subjects_per_region = 25;
  double mean = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const SimulatedReplication sim = generate_replication(cfg, rep);
    CHECK(sim.censoring_rate == doctest::Approx(0.40).epsilon(0.25));
    mean += sim.censoring_rate / 5;
  }
  CHECK(mean == doctest::Approx(0.40).epsilon(0.08));

  ScenarioConfig none = cfg;
  none.censor_rate = 0.0;
  const SimulatedReplication sim0 = generate_replication(none, 0);
  CHECK(sim0.censoring_rate == 0.0);
}

TEST_CASE("replication is deterministic in (seed, rep) and varies across reps") {
  ScenarioConfig cfg = ScenarioConfig::scenario(2);
  cfg.subjects_per_region = 5;
  const SimulatedReplication a = generate_replication(cfg, 3);
  const SimulatedReplication b = generate_replication(cfg, 3);
  REQUIRE(a.data.longitudinal.size() == b.data.longitudinal.size());
  for (size_t i = 0; i < a.data.longitudinal.size(); ++i) {
    CHECK(a.data.longitudinal[i].y == b.data.longitudinal[i].y);
    CHECK(a.data.longitudinal[i].time == b.data.longitudinal[i].time);
  }
  for (size_t i = 0; i < a.data.survival.size(); ++i)
    CHECK(a.data.survival[i].time == b.data.survival[i].time);
  CHECK((a.nu_truth - b.nu_truth).norm() == 0.0);

  const SimulatedReplication c = generate_replication(cfg, 4);
  CHECK(a.data.survival[0].time != c.data.survival[0].time);
}

TEST_CASE("scenario truth maps") {
  const ScenarioConfig c1 = ScenarioConfig::scenario(1);
  std::map<std::string, double> t1;
  detail::fill_truth(c1, t1);
  CHECK(t1.at("beta0") == 2.0);
  CHECK(t1.at("beta1") == -1.0);
  CHECK(t1.at("beta2") == 1.0);
  CHECK(t1.at("gamma1") == 1.0);
  CHECK(t1.at("gamma2") == -1.0);
  CHECK(t1.at("rho") == doctest::Approx(0.5));
  CHECK(t1.at("tau") == doctest::Approx(0.1));

  const ScenarioConfig c2 = ScenarioConfig::scenario(2);
  std::map<std::string, double> t2;
  detail::fill_truth(c2, t2);
  CHECK(t2.at("shape") == 2.0);
  CHECK(t2.at("alpha0") == -6.0);
  CHECK(t2.at("d11_inv") == doctest::Approx(1.0 / 25.0));
  CHECK(t2.at("tau") == doctest::Approx(12.0));
  CHECK(c2.regions() == 27);
  CHECK_THROWS(ScenarioConfig::scenario(3));
}

TEST_CASE("scoring: relative bias, absolute fallback, failure skipping") {
  std::map<std::string, double> truth{{"a", 2.0}, {"z", 0.0}};
  ReplicationOutcome r1, r2, bad;
  r1.ok = r2.ok = true;
  r1.estimate = {{"a", 2.042}, {"z", 0.3}};
  r2.estimate = {{"a", 2.042}, {"z", -0.3}};
  bad.ok = false;
  bad.estimate = {{"a", 1000.0}, {"z", 1000.0}};
  const auto scores = score_replications(truth, {r1, r2, bad});
  REQUIRE(scores.size() == 2);
  const auto& a = scores[0].name == "a" ? scores[0] : scores[1];
  const auto& z = scores[0].name == "z" ? scores[0] : scores[1];
  CHECK(a.rbias == doctest::Approx(0.021).epsilon(1e-12));
  CHECK(a.rmse == doctest::Approx(0.042).epsilon(1e-12));
  CHECK(a.se == doctest::Approx(0.0));
  CHECK(z.rbias == doctest::Approx(0.0));  // absolute bias at zero truth
  CHECK(z.rmse == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("with no linkage the joint fit factorizes into the separate fits") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 2;
  cfg.lattice_cols = 2;
  cfg.subjects_per_region = 20;
  const SimulatedReplication sim = generate_replication(cfg, 0);
  const SplineConfig spl{3, {0.5}, 0.0, 1.0};

  ModelSpec joint = ModelSpec::study_preset("I", 2, 1, spl);
  ModelSpec lng = joint;
  lng.include_survival = false;
  ModelSpec srv;
  srv.p2 = 1;
  srv.include_longitudinal = false;

  InlaEngine ej(joint, sim.data), el(lng, sim.data), es(srv, sim.data);
  HyperParameters h;
  h.sigma2 = 1.2;
  h.shape = 1.1;
  h.d11_inv = 0.9;
  h.d22_inv = 1.1;
  h.rho = 0.3;
  const GaussianApproximation aj = ej.gaussian_approximation(h);
  const GaussianApproximation al = el.gaussian_approximation(h);
  const GaussianApproximation as = es.gaussian_approximation(h);
  const LatentLayout& lj = ej.model().layout();
  const int nl = el.latent_dim();
  for (int j = 0; j < nl; ++j) {
    CHECK(aj.mode[j] == doctest::Approx(al.mode[j]).epsilon(1e-8));
    CHECK(aj.marginal_sd[j] == doctest::Approx(al.marginal_sd[j]).epsilon(1e-8));
  }
  for (int j = 0; j < lj.n_alpha; ++j) {
    CHECK(aj.mode[lj.alpha_off() + j] == doctest::Approx(as.mode[j]).epsilon(1e-6));
    CHECK(aj.marginal_sd[lj.alpha_off() + j] ==
          doctest::Approx(as.marginal_sd[j]).epsilon(1e-6));
  }

  // hyper-posterior differences split along the same lines: moving sigma2
  // only moves the longitudinal factor, moving the shape only the survival one
  Eigen::VectorXd tj = hyper_to_vector(joint, h);
  Eigen::VectorXd tl = hyper_to_vector(lng, h);
  Eigen::VectorXd ts = hyper_to_vector(srv, h);
  Eigen::VectorXd w;
  const double f0 = ej.log_hyper_posterior(tj, &w);
  Eigen::VectorXd tj2 = tj;
  tj2[0] += 0.3;  // log_prec_obs
  Eigen::VectorXd tl2 = tl;
  tl2[0] += 0.3;
  Eigen::VectorXd wl;
  CHECK(ej.log_hyper_posterior(tj2, &w) - f0 ==
        doctest::Approx(el.log_hyper_posterior(tl2, &wl) - el.log_hyper_posterior(tl, &wl))
            .epsilon(1e-8));
  Eigen::VectorXd tj3 = tj;
  tj3[1] += 0.3;  // log_shape
  Eigen::VectorXd ts2 = ts;
  ts2[0] += 0.3;
  Eigen::VectorXd ws;
  CHECK(ej.log_hyper_posterior(tj3, &w) - f0 ==
        doctest::Approx(es.log_hyper_posterior(ts2, &ws) - es.log_hyper_posterior(ts, &ws))
            .epsilon(1e-6));
}

TEST_CASE("run_study output is independent of the thread count") {
  ScenarioConfig cfg = ScenarioConfig::scenario(1);
  cfg.lattice_rows = 2;
  cfg.lattice_cols = 2;
  cfg.subjects_per_region = 10;
  StudyOptions o1;
  o1.replications = 3;
  o1.criteria_samples = 200;
  o1.spline = SplineConfig{2, {0.5}, 0.0, 1.0};
  StudyOptions o2 = o1;
  o2.threads = 3;
  const StudyResult r1 = run_study(cfg, {"I", "IV"}, o1);
  const StudyResult r2 = run_study(cfg, {"I", "IV"}, o2);
  REQUIRE(r1.models.size() == 2);
  for (size_t m = 0; m < r1.models.size(); ++m) {
    CHECK(r1.models[m].failures == 0);
    CHECK(r1.models[m].mean_dic == r2.models[m].mean_dic);
    CHECK(r1.models[m].mean_waic == r2.models[m].mean_waic);
    for (size_t s = 0; s < r1.models[m].scores.size(); ++s) {
      CHECK(r1.models[m].scores[s].est == r2.models[m].scores[s].est);
      CHECK(r1.models[m].scores[s].rmse == r2.models[m].scores[s].rmse);
    }
  }
  CHECK(r1.mean_censoring == doctest::Approx(r2.mean_censoring));
}
