#pragma once

#include <atomic>
#include <map>
#include <thread>

#include "sjlgm/diagnostics.hpp"

namespace sjlgm {

/// Data-generating configuration for the two bundled scenarios. Everything is
/// overridable; `scenario(1)` and `scenario(2)` give the canned defaults.
struct ScenarioConfig {
  int id = 1;
  int lattice_rows = 10, lattice_cols = 10;
  int subjects_per_region = 20;
  std::vector<double> time_grid;  // visit schedule, truncated at the event time

  double curve_level = 2.0;      // constant part of the nonlinear mean curve
  Eigen::VectorXd beta;          // longitudinal covariate effects
  Eigen::VectorXd alpha;         // survival intercept first, then covariates
  double gamma1 = 1.0, gamma2 = -1.0;
  double shape = 1.0, sigma2 = 1.0;
  Eigen::Matrix2d D;             // random-effect covariance
  double spatial_precision = 0.1;  // intrinsic CAR scale for generation
  double censor_rate = 0.40;
  // scenario 1 shares x1 between the submodels; scenario 2 shares all three
  int n_shared_covariates = 1;
  std::uint64_t seed = 12345;

  int regions() const { return lattice_rows * lattice_cols; }
  int n_subjects() const { return regions() * subjects_per_region; }

  static ScenarioConfig scenario(int id) {
    ScenarioConfig c;
    c.id = id;
    for (int i = 0; i <= 20; ++i) c.time_grid.push_back(0.05 * i);
    if (id == 1) {
      c.curve_level = 2.0;
      c.beta = Eigen::Vector2d(-1.0, 1.0);
      c.alpha = Eigen::Vector2d(0.5, -0.5);
      c.gamma1 = 1.0;
      c.gamma2 = -1.0;
      c.shape = 1.0;
      c.sigma2 = 1.0;
      c.D << 1.0, 0.5, 0.5, 1.0;
      c.spatial_precision = 0.1;
      c.n_shared_covariates = 1;
    } else if (id == 2) {
      c.lattice_rows = 3;
      c.lattice_cols = 9;
      c.subjects_per_region = 20;
      c.curve_level = 9.0;
      c.beta = Eigen::Vector3d(-1.0, -1.0, -1.5);
      c.alpha = Eigen::Vector4d(-6.0, 0.5, 0.5, 1.0);
      c.gamma1 = -0.2;
      c.gamma2 = -0.5;
      c.shape = 2.0;
      c.sigma2 = 5.0;
      c.D << 25.0, -4.0, -4.0, 6.0;
      c.spatial_precision = 12.0;
      c.n_shared_covariates = 3;
    } else {
      throw std::invalid_argument("unknown scenario id");
    }
    return c;
  }
};

struct SimulatedReplication {
  JointDataset data;
  double censoring_rate = 0;
  Eigen::VectorXd nu_truth;
  std::map<std::string, double> truth;  // parameter name -> generating value
};

namespace detail {

inline void fill_truth(const ScenarioConfig& cfg, std::map<std::string, double>& t) {
  t["beta0"] = cfg.curve_level;
  for (int j = 0; j < cfg.beta.size(); ++j) t["beta" + std::to_string(j + 1)] = cfg.beta[j];
  for (int j = 0; j < cfg.alpha.size(); ++j) t["alpha" + std::to_string(j)] = cfg.alpha[j];
  t["sigma2"] = cfg.sigma2;
  t["shape"] = cfg.shape;
  t["d11_inv"] = 1.0 / cfg.D(0, 0);
  t["d22_inv"] = 1.0 / cfg.D(1, 1);
  t["rho"] = cfg.D(0, 1) / std::sqrt(cfg.D(0, 0) * cfg.D(1, 1));
  t["gamma1"] = cfg.gamma1;
  t["gamma2"] = cfg.gamma2;
  t["tau"] = cfg.spatial_precision;
  t["tau_inv"] = 1.0 / cfg.spatial_precision;
}

}  // namespace detail

/// Deterministic in (cfg.seed, rep). Event times by inverse transform from the
/// Weibull hazard; censoring is exponential with its rate tuned by bisection
/// to hit cfg.censor_rate in expectation given the realized event times.
inline SimulatedReplication generate_replication(const ScenarioConfig& cfg, int rep) {
  SimulatedReplication out;
  const int n = cfg.n_subjects();
  const int p = static_cast<int>(cfg.beta.size());
  if (cfg.alpha.size() != cfg.n_shared_covariates + 1)
    throw std::invalid_argument("alpha must hold the intercept plus the shared covariates");

  std::mt19937_64 rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (rep + 1)));
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  out.data.graph = AdjacencyGraph::lattice(cfg.lattice_rows, cfg.lattice_cols);
  out.nu_truth = sample_car_field({out.data.graph, cfg.spatial_precision, 1.0},
                                  cfg.seed ^ (0xbf58476d1ce4e5b9ULL * (rep + 1)));

  const Eigen::Matrix2d chol = Eigen::LLT<Eigen::Matrix2d>(cfg.D).matrixL();
  std::vector<Eigen::VectorXd> x(n);
  Eigen::MatrixXd b(n, 2);
  Eigen::VectorXd tstar(n);
  for (int i = 0; i < n; ++i) {
    x[i].resize(p);
    x[i][0] = stdnorm(rng);  // first covariate continuous, the rest binary
    for (int j = 1; j < p; ++j) x[i][j] = coin(rng) ? 1.0 : 0.0;
    const Eigen::Vector2d z(stdnorm(rng), stdnorm(rng));
    b.row(i) = (chol * z).transpose();
    double eta = cfg.alpha[0];
    for (int j = 0; j < cfg.n_shared_covariates; ++j) eta += cfg.alpha[j + 1] * x[i][j];
    eta += cfg.gamma1 * b(i, 0) + cfg.gamma2 * b(i, 1);
    eta += out.nu_truth[i / cfg.subjects_per_region];
    tstar[i] = std::pow(-std::log(unif(rng)) / std::exp(eta), 1.0 / cfg.shape);
  }

  // expected censoring fraction under C ~ Exp(c): mean_i (1 - exp(-c T*_i))
  double crate = 0.0;
  if (cfg.censor_rate > 0) {
    double lo = 0, hi = 1;
    auto frac = [&](double c) {
      double f = 0;
      for (int i = 0; i < n; ++i) f += 1.0 - std::exp(-c * tstar[i]);
      return f / n;
    };
    while (frac(hi) < cfg.censor_rate) hi *= 2;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (frac(mid) < cfg.censor_rate ? lo : hi) = mid;
    }
    crate = 0.5 * (lo + hi);
  }

  int censored = 0;
  for (int i = 0; i < n; ++i) {
    const int region = i / cfg.subjects_per_region;
    const std::string id = "s" + std::to_string(i + 1);
    double t = tstar[i];
    int event = 1;
    if (crate > 0) {
      const double c = -std::log(unif(rng)) / crate;
      if (c < t) {
        t = c;
        event = 0;
        ++censored;
      }
    }
    Eigen::VectorXd xs(cfg.n_shared_covariates);
    for (int j = 0; j < cfg.n_shared_covariates; ++j) xs[j] = x[i][j];
    out.data.survival.push_back({id, region, t, event, xs});
    for (double tt : cfg.time_grid) {
      if (tt >= t) break;
      double mu = cfg.curve_level + std::sin(2.0 * M_PI * tt) + cfg.beta.dot(x[i]) +
                  b(i, 0) + b(i, 1) * tt;
      out.data.longitudinal.push_back(
          {id, region, tt, mu + std::sqrt(cfg.sigma2) * stdnorm(rng), x[i]});
    }
  }
  out.censoring_rate = static_cast<double>(censored) / n;
  out.data.index();
  detail::fill_truth(cfg, out.truth);
  return out;
}

/// Pull the study's scalar estimates out of a fit, keyed like the truth map.
inline std::map<std::string, double> extract_estimates(const FitResult& fit,
                                                       const ModelSpec& spec) {
  std::map<std::string, double> est;
  if (spec.spline && fit.mean_level)
    est["beta0"] = fit.mean_level->mean;
  else if (const auto* s = find_latent(fit, "beta0"))
    est["beta0"] = s->mean;
  for (int j = 1; j <= spec.p1; ++j)
    if (const auto* s = find_latent(fit, "beta" + std::to_string(j)))
      est["beta" + std::to_string(j)] = s->mean;
  for (int j = 0; j <= spec.p2; ++j)
    if (const auto* s = find_latent(fit, "alpha" + std::to_string(j)))
      est["alpha" + std::to_string(j)] = s->mean;
  for (const auto& h : fit.hyper) {
    est[h.name] = h.natural.mean;
    if (h.has_reciprocal) est[h.reciprocal.name] = h.reciprocal.mean;
  }
  return est;
}

struct ReplicationOutcome {
  bool ok = false;
  std::string error;
  std::map<std::string, double> estimate;
  double dic = 0, pd = 0, waic = 0, pwaic = 0;
  double seconds = 0;
};

struct ParameterScore {
  std::string name;
  double truth = 0, est = 0, se = 0, rbias = 0, rmse = 0;
};

struct ModelStudyResult {
  std::string model;
  std::vector<ReplicationOutcome> reps;
  std::vector<ParameterScore> scores;
  double mean_dic = 0, mean_pd = 0, mean_waic = 0, mean_pwaic = 0;
  double mean_seconds = 0;
  int failures = 0;
};

struct StudyResult {
  ScenarioConfig config;
  std::vector<ModelStudyResult> models;
  double mean_censoring = 0;
};

struct StudyOptions {
  int replications = 20;
  int threads = 1;
  int criteria_samples = 1000;
  FitOptions fit;  // default grid strategy decided by fit(); studies use EB
  std::optional<SplineConfig> spline;  // default: cubic, 5 interior knots
  StudyOptions() { fit.strategy = GridStrategy::EB; }
};

/// Relative bias where the truth is nonzero, absolute bias otherwise.
inline std::vector<ParameterScore> score_replications(
    const std::map<std::string, double>& truth, const std::vector<ReplicationOutcome>& reps) {
  std::vector<ParameterScore> out;
  for (const auto& [name, real] : truth) {
    ParameterScore s;
    s.name = name;
    s.truth = real;
    double sum = 0, sq = 0, sqerr = 0;
    int m = 0;
    for (const auto& r : reps) {
      if (!r.ok) continue;
      const auto it = r.estimate.find(name);
      if (it == r.estimate.end()) continue;
      sum += it->second;
      sq += it->second * it->second;
      sqerr += (it->second - real) * (it->second - real);
      ++m;
    }
    if (m == 0) continue;
    s.est = sum / m;
    s.se = m > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / m) / (m - 1))) : 0.0;
    s.rbias = real != 0.0 ? s.est / real - 1.0 : s.est - real;
    s.rmse = std::sqrt(sqerr / m);
    out.push_back(s);
  }
  return out;
}

/// Fit every requested model to every replication. Replications run in
/// parallel; each one is seeded independently and results are merged in
/// replication order, so the output does not depend on the thread count.
inline StudyResult run_study(const ScenarioConfig& cfg, const std::vector<std::string>& models,
                             const StudyOptions& opt = {}) {
  StudyResult study;
  study.config = cfg;
  const int M = opt.replications;
  std::vector<std::vector<ReplicationOutcome>> grid(models.size());
  for (auto& g : grid) g.resize(M);
  std::vector<double> crate(M, 0.0);
  std::map<std::string, double> truth;
  detail::fill_truth(cfg, truth);

  SplineConfig spl;
  if (opt.spline) {
    spl = *opt.spline;
  } else {
    spl.degree = 3;
    spl.interior_knots = {1.0 / 6, 2.0 / 6, 3.0 / 6, 4.0 / 6, 5.0 / 6};
    spl.lo = cfg.time_grid.front();
    spl.hi = cfg.time_grid.back();
  }

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int rep = next++; rep < M; rep = next++) {
      SimulatedReplication sim = generate_replication(cfg, rep);
      crate[rep] = sim.censoring_rate;
      for (size_t mi = 0; mi < models.size(); ++mi) {
        ReplicationOutcome& r = grid[mi][rep];
        const auto t0 = std::chrono::steady_clock::now();
        try {
          ModelSpec spec = ModelSpec::study_preset(models[mi], static_cast<int>(cfg.beta.size()),
                                                   cfg.n_shared_covariates, spl);
          InlaEngine engine(spec, sim.data);
          FitResult fit = sjlgm::fit(engine, sim.data, opt.fit);
          r.estimate = extract_estimates(fit, spec);
          const DicResult dic = compute_dic(engine, fit, opt.criteria_samples,
                                            cfg.seed + 1000003ULL * rep);
          const WaicResult waic = compute_waic(engine, fit, opt.criteria_samples,
                                               cfg.seed + 2000003ULL * rep);
          r.dic = dic.dic;
          r.pd = dic.pd;
          r.waic = waic.waic;
          r.pwaic = waic.pwaic;
          r.ok = true;
        } catch (const std::exception& e) {
          r.error = e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    }
  };
  const int nthreads = std::max(1, std::min(opt.threads, M));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (size_t mi = 0; mi < models.size(); ++mi) {
    ModelStudyResult mr;
    mr.model = models[mi];
    mr.reps = std::move(grid[mi]);
    mr.scores = score_replications(truth, mr.reps);
    int ok = 0;
    for (const auto& r : mr.reps) {
      if (!r.ok) {
        ++mr.failures;
        continue;
      }
      mr.mean_dic += r.dic;
      mr.mean_pd += r.pd;
      mr.mean_waic += r.waic;
      mr.mean_pwaic += r.pwaic;
      mr.mean_seconds += r.seconds;
      ++ok;
    }
    if (ok > 0) {
      mr.mean_dic /= ok;
      mr.mean_pd /= ok;
      mr.mean_waic /= ok;
      mr.mean_pwaic /= ok;
      mr.mean_seconds /= ok;
    }
    study.models.push_back(std::move(mr));
  }
  for (int rep = 0; rep < M; ++rep) study.mean_censoring += crate[rep] / M;
  return study;
}

}  // namespace sjlgm
