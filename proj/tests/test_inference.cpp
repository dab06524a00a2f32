#include <doctest.h>

#include <random>

#include "sjlgm/fit.hpp"
#include "sjlgm/inference.hpp"
#include "sjlgm/io.hpp"

using namespace sjlgm;

namespace {

JointDataset gaussian_only_data(int n_subjects, int m, int p1, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  JointDataset d;
  d.graph.K = 1;
  for (int i = 0; i < n_subjects; ++i) {
    const std::string id = "s" + std::to_string(i);
    d.survival.push_back({id, 0, 10.0, 0, Eigen::VectorXd()});
    Eigen::VectorXd x(p1);
    for (int j = 0; j < p1; ++j) x[j] = g(rng);
    for (int r = 0; r < m; ++r) d.longitudinal.push_back({id, 0, u(rng), g(rng), x});
  }
  d.index();
  return d;
}

JointDataset survival_only_data(int n, double shape, double eta,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  JointDataset d;
  d.graph.K = 1;
  for (int i = 0; i < n; ++i) {
    const double t = std::pow(-std::log(1.0 - u(rng)) / std::exp(eta), 1.0 / shape);
    d.survival.push_back({"s" + std::to_string(i), 0, t, 1, Eigen::VectorXd()});
  }
  d.index();
  return d;
}

/// Dense posterior precision at the mode: prior precision plus the
/// finite-difference Hessian of the data log-likelihood (exact for the
/// Gaussian part, accurate for the Weibull part).
Eigen::MatrixXd dense_precision(const JointModel& m, const HyperParameters& h,
                                const Eigen::VectorXd& at) {
  const int n = static_cast<int>(at.size());
  std::vector<Eigen::Triplet<double>> trip;
  m.prior_precision(h, trip);
  Eigen::SparseMatrix<double> q(n, n);
  q.setFromTriplets(trip.begin(), trip.end());
  Eigen::MatrixXd p = Eigen::MatrixXd(q);
  const double step = 1e-5;
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd xp = at, xm = at, gp, gm;
    xp[j] += step;
    xm[j] -= step;
    m.joint_loglik(xp, h, &gp);
    m.joint_loglik(xm, h, &gm);
    p.col(j) -= (gp - gm) / (2 * step);
  }
  return 0.5 * (p + p.transpose());
}

}  // namespace

TEST_CASE("Gaussian approximation is exact GLS for longitudinal-only models") {
  SplineConfig sc{3, {0.5}, 0.0, 1.0};
  std::mt19937_64 seeds(2024);
  for (int trial = 0; trial < 4; ++trial) {
    const JointDataset d = gaussian_only_data(12, 3, 2, seeds());
    ModelSpec spec = ModelSpec::study_preset("I", 2, 0, sc);
    spec.include_survival = false;
    InlaEngine engine(spec, d);
    HyperParameters h;
    h.sigma2 = 0.7;
    h.d11_inv = 2.0;
    h.rho = 0.3;
    const GaussianApproximation a = engine.gaussian_approximation(h);
    CHECK(a.converged);

    const int n = engine.latent_dim();
    const Eigen::MatrixXd p = dense_precision(engine.model(), h, a.mode);
    Eigen::VectorXd g0;
    engine.model().joint_loglik(Eigen::VectorXd::Zero(n), h, &g0);
    const Eigen::VectorXd exact = p.ldlt().solve(g0);
    CHECK((a.mode - exact).cwiseAbs().maxCoeff() < 1e-8);

    const Eigen::MatrixXd cov = p.inverse();
    for (int j = 0; j < n; ++j)
      CHECK(a.marginal_sd[j] == doctest::Approx(std::sqrt(cov(j, j))).epsilon(1e-8));
  }
}

TEST_CASE("conjugate normal-normal sweep matches closed form") {
  // Single latent mean with unit prior precision and known sigma2(theta):
  // posterior of mu is N(sum(y)/sigma2 / (1 + n/sigma2), 1/(1 + n/sigma2)),
  // and the theta-posterior is the exact Gaussian marginal likelihood.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.4, 1.0);
  JointDataset d;
  d.graph.K = 1;
  d.survival.push_back({"a", 0, 10.0, 0, Eigen::VectorXd()});
  const int n = 9;
  double sum_y = 0.0, sum_y2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = g(rng);
    sum_y += y;
    sum_y2 += y * y;
    d.longitudinal.push_back({"a", 0, 0.1 * i, y, Eigen::VectorXd()});
  }
  d.index();
  ModelSpec spec;
  spec.p1 = 0;
  spec.include_survival = false;
  spec.fixed_effect_precision = 1.0;
  InlaEngine engine(spec, d);
  REQUIRE(engine.latent_dim() == 1);

  Eigen::VectorXd theta(1), warm;
  std::vector<double> lp_engine, lp_exact;
  for (int k = -10; k <= 10; ++k) {
    theta[0] = 0.3 * k;  // log precision
    const double s2 = std::exp(-theta[0]);
    const GaussianApproximation a = engine.gaussian_approximation(
        hyper_from_vector(spec, theta));
    const double post_prec = 1.0 + n / s2;
    CHECK(a.mode[0] == doctest::Approx(sum_y / s2 / post_prec).epsilon(1e-10));
    CHECK(a.marginal_sd[0] ==
          doctest::Approx(1.0 / std::sqrt(post_prec)).epsilon(1e-10));

    lp_engine.push_back(engine.log_hyper_posterior(theta, &warm));
    // log N(y | 0, sigma2 I + 11') + log prior(theta), constants dropped
    const double mu = sum_y / s2 / post_prec;
    const double marg = -0.5 * n * std::log(s2) - 0.5 * std::log(post_prec) -
                        0.5 * (sum_y2 / s2 - mu * mu * post_prec);
    lp_exact.push_back(marg + log_hyper_prior(spec, theta));
  }
  for (size_t i = 1; i < lp_engine.size(); ++i) {
    const double de = lp_engine[i] - lp_engine[0];
    const double dx = lp_exact[i] - lp_exact[0];
    CHECK(de == doctest::Approx(dx).epsilon(1e-10));
  }
}

TEST_CASE("partial-inverse marginal sds match the dense inverse on a joint model") {
  SplineConfig sc{2, {0.5}, 0.0, 1.0};
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 1.5);
  JointDataset d;
  d.graph = AdjacencyGraph::lattice(2, 3);
  for (int i = 0; i < 18; ++i) {
    const std::string id = "s" + std::to_string(i);
    Eigen::VectorXd x2(1);
    x2[0] = g(rng);
    d.survival.push_back({id, i % 6, u(rng), i % 3 ? 1 : 0, x2});
    Eigen::VectorXd x1(1);
    x1[0] = g(rng);
    for (int r = 0; r < 2; ++r) d.longitudinal.push_back({id, i % 6, 0.3 * r, g(rng), x1});
  }
  d.index();
  ModelSpec spec = ModelSpec::study_preset("IV", 1, 1, sc);
  InlaEngine engine(spec, d);
  HyperParameters h;
  h.shape = 1.2;
  h.tau = 2.0;
  h.gamma1 = 0.5;
  h.gamma2 = -0.5;
  const GaussianApproximation a = engine.gaussian_approximation(h);
  REQUIRE(a.converged);
  const Eigen::MatrixXd cov = dense_precision(engine.model(), h, a.mode).inverse();
  for (int j = 0; j < engine.latent_dim(); ++j)
    CHECK(a.marginal_sd[j] == doctest::Approx(std::sqrt(cov(j, j))).epsilon(1e-5));
}

TEST_CASE("log hyper posterior is invariant to subject order") {
  SplineConfig sc{2, {0.5}, 0.0, 1.0};
  JointDataset d = gaussian_only_data(10, 3, 1, 44);
  // attach informative survival: reuse times as event times
  for (auto& s : d.survival) {
    s.time = 0.5 + 0.05 * (&s - d.survival.data());
    s.event = 1;
    s.x = Eigen::VectorXd::Constant(1, 0.2);
  }
  d.index();
  JointDataset rev = d;
  std::reverse(rev.survival.begin(), rev.survival.end());
  std::reverse(rev.longitudinal.begin(), rev.longitudinal.end());
  rev.index();

  ModelSpec spec = ModelSpec::study_preset("III", 1, 1, sc);
  InlaEngine e1(spec, d), e2(spec, rev);
  Eigen::VectorXd theta = hyper_to_vector(spec, HyperParameters{});
  Eigen::VectorXd w1, w2;
  const double l1 = e1.log_hyper_posterior(theta, &w1);
  const double l2 = e2.log_hyper_posterior(theta, &w2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-10));

  // modes agree subject-by-subject under the permutation
  const GaussianApproximation a1 = e1.gaussian_approximation(HyperParameters{});
  const GaussianApproximation a2 = e2.gaussian_approximation(HyperParameters{});
  const LatentLayout& l = e1.model().layout();
  for (int i = 0; i < d.n_subjects(); ++i) {
    const int j = rev.subject_index.at(d.subject_ids[i]);
    for (int c = 0; c < l.q; ++c)
      CHECK(a1.mode[l.b_off(i) + c] ==
            doctest::Approx(a2.mode[l.b_off(j) + c]).epsilon(1e-8));
  }
}

TEST_CASE("grid strategies: EB point mass, symmetric axis grid, CCD size") {
  const JointDataset d = gaussian_only_data(15, 3, 1, 3);
  ModelSpec spec;
  spec.p1 = 1;
  spec.include_survival = false;
  InlaEngine engine(spec, d);  // theta = log precision only
  Eigen::VectorXd warm;
  const Eigen::VectorXd star =
      engine.optimize_hyper(hyper_to_vector(spec, HyperParameters{}), warm);

  const HyperGrid eb = engine.explore_hypergrid(GridStrategy::EB, star, warm);
  CHECK(eb.size() == 1);
  CHECK(eb.weights[0] == doctest::Approx(1.0));
  CHECK((eb.points.row(0).transpose() - star).norm() == 0.0);

  const HyperGrid grid = engine.explore_hypergrid(GridStrategy::Grid, star, warm);
  CHECK(grid.size() >= 3);
  CHECK(grid.size() % 2 == 1);  // symmetric star around theta*
  CHECK(grid.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(grid.weights.maxCoeff() <= grid.weights[0] * 1.05);
  // log-posterior drop from the mode never exceeds the trimming threshold
  for (int r = 0; r < grid.size(); ++r)
    CHECK(grid.log_post[0] - grid.log_post[r] <= 6.0 + 1e-6);
  // off-center points sit at integer multiples of one step, on both sides,
  // at most five steps out
  std::vector<double> offs;
  for (int r = 1; r < grid.size(); ++r) offs.push_back(grid.points(r, 0) - star[0]);
  double step = std::abs(offs[0]);
  for (double o : offs) step = std::min(step, std::abs(o));
  bool pos = false, neg = false;
  for (double o : offs) {
    const double k = std::abs(o) / step;
    CHECK(k == doctest::Approx(std::round(k)).epsilon(1e-9));
    CHECK(std::round(k) <= 5);
    (o > 0 ? pos : neg) = true;
  }
  CHECK(pos);
  CHECK(neg);
}

TEST_CASE("mixture latent summaries are consistent with the grid weights") {
  const JointDataset d = gaussian_only_data(20, 4, 1, 5);
  ModelSpec spec;
  spec.p1 = 1;
  spec.include_survival = false;
  spec.re = RandomStructure::Intercept;
  InlaEngine engine(spec, d);
  FitOptions opt;
  opt.strategy = GridStrategy::Grid;
  opt.density_points = 201;
  const FitResult res = fit(engine, d, opt);
  const int j = 0;  // intercept coordinate
  double mean = 0.0;
  for (int r = 0; r < res.grid.size(); ++r)
    mean += res.grid.weights[r] * res.cond_mean[r][j];
  CHECK(res.latent[j].mean == doctest::Approx(mean).epsilon(5e-3));
  CHECK(res.latent[j].q025 < res.latent[j].q50);
  CHECK(res.latent[j].q50 < res.latent[j].q975);
}

TEST_CASE("hyper marginal medians respect the reciprocal transform") {
  const JointDataset d = gaussian_only_data(25, 4, 1, 6);
  ModelSpec spec;
  spec.p1 = 1;
  spec.include_survival = false;
  InlaEngine engine(spec, d);
  const FitResult res = fit(engine, d, {});
  const HyperSummary* s = find_hyper(res, "sigma2");
  REQUIRE(s != nullptr);
  REQUIRE(s->has_reciprocal);
  CHECK(s->natural.q50 == doctest::Approx(1.0 / s->reciprocal.q50).epsilon(1e-9));
  // profile marginals integrate a 21-point density trace, so the identity
  // holds only up to the trapezoid discretization there
  FitOptions opt;
  opt.profile_hyper_marginals = true;
  const FitResult res2 = fit(engine, d, opt);
  const HyperSummary* s2 = find_hyper(res2, "sigma2");
  REQUIRE(s2 != nullptr);
  CHECK(s2->natural.q50 == doctest::Approx(1.0 / s2->reciprocal.q50).epsilon(1e-2));
  CHECK(s2->natural.q50 == doctest::Approx(s->natural.q50).epsilon(0.15));
}

TEST_CASE("simplified Laplace shifts the survival intercept toward the skew") {
  // Exponential-rate posterior: p(alpha | data) has negative skew on the log
  // scale, so the corrected mean must sit below the Gaussian mean.
  const JointDataset d = survival_only_data(12, 1.0, 0.0, 19);
  ModelSpec spec;
  spec.p2 = 0;
  spec.include_longitudinal = false;
  InlaEngine engine(spec, d);
  FitOptions gauss;
  gauss.strategy = GridStrategy::EB;
  FitOptions sla = gauss;
  sla.correction = MarginalCorrection::SimplifiedLaplace;
  const FitResult rg = fit(engine, d, gauss);
  const FitResult rs = fit(engine, d, sla);
  const CoordinateSummary* ag = find_latent(rg, "alpha0");
  const CoordinateSummary* as = find_latent(rs, "alpha0");
  REQUIRE(ag != nullptr);
  REQUIRE(as != nullptr);
  CHECK(as->mean < ag->mean);
  CHECK(std::abs(as->mean - ag->mean) < ag->sd);  // a correction, not a jump
}

TEST_CASE("fits are deterministic: identical serialized results on rerun") {
  SplineConfig sc{2, {0.5}, 0.0, 1.0};
  JointDataset d = gaussian_only_data(10, 3, 1, 77);
  for (auto& s : d.survival) {
    s.time = 0.4 + 0.03 * (&s - d.survival.data());
    s.event = 1;
    s.x = Eigen::VectorXd::Constant(1, -0.1);
  }
  d.index();
  ModelSpec spec = ModelSpec::study_preset("III", 1, 1, sc);
  InlaEngine e1(spec, d), e2(spec, d);
  const std::string j1 = fit_result_to_json(fit(e1, d, {}), spec).dump();
  const std::string j2 = fit_result_to_json(fit(e2, d, {}), spec).dump();
  CHECK(j1 == j2);
}
