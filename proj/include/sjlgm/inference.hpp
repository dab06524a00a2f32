#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sjlgm/model.hpp"

namespace sjlgm {

enum class GridStrategy { EB, Grid, CCD };
enum class MarginalCorrection { Gaussian, SimplifiedLaplace };

struct NewtonOptions {
  double grad_tol = 1e-6;
  int max_iterations = 50;
};

struct FitOptions {
  // Auto: CCD for dim(theta) >= 4, otherwise the axis grid.
  std::optional<GridStrategy> strategy;
  MarginalCorrection correction = MarginalCorrection::Gaussian;
  // Accurate 1-d profile marginals for hyperparameters (extra evaluations);
  // otherwise Gaussian/lognormal summaries from the mode and curvature.
  bool profile_hyper_marginals = false;
  int density_points = 75;
  NewtonOptions newton;
  int max_outer_iterations = 200;
  std::optional<Eigen::VectorXd> theta_init;
};

struct MarginalDensity {
  std::vector<double> x, density;
};

struct CoordinateSummary {
  std::string name;
  double mean = 0, sd = 0, q025 = 0, q50 = 0, q975 = 0;
};

struct HyperSummary {
  std::string name;          // natural-scale name, e.g. "sigma2"
  CoordinateSummary natural;
  bool has_reciprocal = false;
  CoordinateSummary reciprocal;  // e.g. "prec_obs" for sigma2
};

struct HyperGrid {
  Eigen::MatrixXd points;     // R x dim, transformed scale
  Eigen::VectorXd log_post;   // unnormalized
  Eigen::VectorXd weights;    // sum to 1
  Eigen::VectorXd theta_star;
  Eigen::MatrixXd hessian;    // of -log posterior at theta_star
  int size() const { return static_cast<int>(points.rows()); }
};

struct FitResult {
  std::string model_name;
  std::vector<std::string> hyper_names;
  HyperGrid grid;
  std::vector<CoordinateSummary> latent;          // every latent coordinate
  std::optional<CoordinateSummary> mean_level;    // spline curve average (plays the
                                                  // role of the longitudinal intercept)
  std::vector<HyperSummary> hyper;
  std::vector<int> density_coords;
  std::vector<MarginalDensity> latent_density;
  // Conditional Gaussian stats per grid point, for mixture post-processing.
  std::vector<Eigen::VectorXd> cond_mean, cond_sd;
  double dic = std::numeric_limits<double>::quiet_NaN();
  double pd = std::numeric_limits<double>::quiet_NaN();
  double waic = std::numeric_limits<double>::quiet_NaN();
  double pwaic = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0;
  int newton_iterations_total = 0;
};

namespace detail {

/// Takahashi partial inverse on the pattern of the LDL' factor: returns the
/// diagonal of P^-1 without forming the dense inverse. Entries of the
/// inverse are computed on the factor's (closed) sparsity pattern only.
class PartialInverse {
 public:
  PartialInverse(const Eigen::SparseMatrix<double>& unit_lower, const Eigen::VectorXd& d)
      : n_(static_cast<int>(unit_lower.rows())) {
    col_rows_.resize(n_);
    col_vals_.resize(n_);
    z_.resize(n_);
    for (int j = 0; j < n_; ++j) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(unit_lower, j); it; ++it) {
        const int i = static_cast<int>(it.row());
        if (i <= j) continue;  // strict lower part; unit diagonal implicit
        col_rows_[j].push_back(i);
        col_vals_[j].push_back(it.value());
      }
      z_[j].assign(col_rows_[j].size() + 1, 0.0);  // [diag, below-diagonal...]
    }
    for (int j = n_ - 1; j >= 0; --j) {
      const auto& rows = col_rows_[j];
      const auto& vals = col_vals_[j];
      const int m = static_cast<int>(rows.size());
      // Below-diagonal entries, bottom-up.
      for (int a = m - 1; a >= 0; --a) {
        double s = 0.0;
        for (int b = 0; b < m; ++b) s += vals[b] * entry(std::max(rows[a], rows[b]),
                                                         std::min(rows[a], rows[b]));
        z_[j][a + 1] = -s;
      }
      double s = 1.0 / d[j];
      for (int b = 0; b < m; ++b) s -= vals[b] * z_[j][b + 1];
      z_[j][0] = s;
    }
  }

  double diagonal(int j) const { return z_[j][0]; }

 private:
  double entry(int i, int j) const {  // i >= j, on pattern
    if (i == j) return z_[j][0];
    const auto& rows = col_rows_[j];
    const auto it = std::lower_bound(rows.begin(), rows.end(), i);
    if (it == rows.end() || *it != i) return 0.0;  // outside pattern
    return z_[j][(it - rows.begin()) + 1];
  }

  int n_;
  std::vector<std::vector<int>> col_rows_;
  std::vector<std::vector<double>> col_vals_;
  std::vector<std::vector<double>> z_;
};

inline double normal_pdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

/// Summaries of a density given on an abscissa grid: trapezoid CDF inversion.
inline CoordinateSummary summarize_density(const std::vector<double>& x,
                                           const std::vector<double>& dens,
                                           const std::string& name) {
  const int n = static_cast<int>(x.size());
  std::vector<double> cdf(n, 0.0);
  double mass = 0, mean = 0, m2 = 0;
  for (int i = 1; i < n; ++i) {
    const double dx = x[i] - x[i - 1];
    const double seg = 0.5 * (dens[i] + dens[i - 1]) * dx;
    mass += seg;
    cdf[i] = mass;
    mean += 0.5 * (dens[i] * x[i] + dens[i - 1] * x[i - 1]) * dx;
    m2 += 0.5 * (dens[i] * x[i] * x[i] + dens[i - 1] * x[i - 1] * x[i - 1]) * dx;
  }
  CoordinateSummary s;
  s.name = name;
  if (mass <= 0) throw std::runtime_error("summarize_density: zero mass for " + name);
  mean /= mass;
  m2 /= mass;
  s.mean = mean;
  s.sd = std::sqrt(std::max(0.0, m2 - mean * mean));
  const auto quantile = [&](double p) {
    const double target = p * mass;
    for (int i = 1; i < n; ++i)
      if (cdf[i] >= target) {
        const double seg = cdf[i] - cdf[i - 1];
        const double f = seg > 0 ? (target - cdf[i - 1]) / seg : 0.0;
        return x[i - 1] + f * (x[i] - x[i - 1]);
      }
    return x[n - 1];
  };
  s.q025 = quantile(0.025);
  s.q50 = quantile(0.5);
  s.q975 = quantile(0.975);
  return s;
}

}  // namespace detail

/// Gaussian approximation of the latent field at one hyperparameter value.
struct GaussianApproximation {
  Eigen::VectorXd mode;
  Eigen::VectorXd marginal_sd;   // sqrt(diag P^-1), via partial inverse
  Eigen::VectorXd surv_weight;   // -d2 loglik / d eta_t^2 at the mode, per subject
  double loglik = 0;             // joint log-likelihood at the mode
  double quad = 0;               // mode' Q mode
  double logdet_Q = 0;
  double logdet_P = 0;
  int iterations = 0;
  bool converged = false;
};

/// Deterministic approximate-inference engine for one (spec, dataset) pair.
/// Not thread-safe: each thread should own its engine.
class InlaEngine {
 public:
  using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                                       Eigen::AMDOrdering<int>>;

  InlaEngine(ModelSpec spec, const JointDataset& data)
      : model_(std::move(spec), data), dim_(model_.layout().total()) {
    analyze_pattern();
  }

  const JointModel& model() const { return model_; }
  const ModelSpec& spec() const { return model_.spec(); }
  int latent_dim() const { return dim_; }
  int hyper_dim() const { return static_cast<int>(hyper_names(spec()).size()); }

  /// Newton mode-finding with step halving. Leaves the internal factorization
  /// positioned at the returned mode, so covariance_column / sample_latent /
  /// functional_variance refer to this approximation until the next call.
  GaussianApproximation gaussian_approximation(const HyperParameters& h,
                                               const Eigen::VectorXd* warm = nullptr,
                                               bool want_marginal_sd = true,
                                               const NewtonOptions& opt = {}) {
    std::vector<Eigen::Triplet<double>> qtrip;
    const double logdet_q = model_.prior_precision(h, qtrip);
    Eigen::SparseMatrix<double> q(dim_, dim_);
    q.setFromTriplets(qtrip.begin(), qtrip.end());

    GaussianApproximation approx;
    approx.logdet_Q = logdet_q;
    Eigen::VectorXd lambda = warm ? *warm : Eigen::VectorXd::Zero(dim_);
    Eigen::VectorXd grad, w;
    double loglik = model_.joint_loglik(lambda, h, &grad, &w);
    double objective = loglik - 0.5 * lambda.dot(q * lambda);

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
      ++approx.iterations;
      Eigen::VectorXd full_grad = grad - q * lambda;
      factorize(q, h, w);
      if (full_grad.lpNorm<Eigen::Infinity>() < opt.grad_tol) break;
      const Eigen::VectorXd step = solver_.solve(full_grad);
      double t = 1.0;
      Eigen::VectorXd cand;
      double cand_loglik = 0, cand_obj = -std::numeric_limits<double>::infinity();
      Eigen::VectorXd cand_grad, cand_w;
      bool accepted = false;
      for (int half = 0; half < 40; ++half) {
        cand = lambda + t * step;
        cand_loglik = model_.joint_loglik(cand, h, &cand_grad, &cand_w);
        cand_obj = cand_loglik - 0.5 * cand.dot(q * cand);
        if (cand_obj >= objective - 1e-12 * (1.0 + std::abs(objective))) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted)
        throw std::runtime_error("gaussian_approximation: line search failed");
      lambda.swap(cand);
      grad.swap(cand_grad);
      w.swap(cand_w);
      loglik = cand_loglik;
      objective = cand_obj;
      if ((t * step).lpNorm<Eigen::Infinity>() < 1e-14) break;
    }

    // Final curvature at the accepted mode.
    factorize(q, h, w);
    Eigen::VectorXd full_grad = grad - q * lambda;
    approx.converged = full_grad.lpNorm<Eigen::Infinity>() < opt.grad_tol * 100;
    if (!approx.converged) {
      // One more solve usually closes the gap for near-quadratic problems.
      const Eigen::VectorXd step = solver_.solve(full_grad);
      Eigen::VectorXd cand = lambda + step;
      Eigen::VectorXd cand_grad, cand_w;
      const double cand_loglik = model_.joint_loglik(cand, h, &cand_grad, &cand_w);
      const double cand_obj = cand_loglik - 0.5 * cand.dot(q * cand);
      if (cand_obj >= objective) {
        lambda.swap(cand);
        grad.swap(cand_grad);
        w.swap(cand_w);
        loglik = cand_loglik;
        factorize(q, h, w);
        full_grad = grad - q * lambda;
        approx.converged = full_grad.lpNorm<Eigen::Infinity>() < opt.grad_tol * 100;
      }
      if (!approx.converged)
        throw std::runtime_error("gaussian_approximation: Newton did not converge (grad " +
                                 std::to_string(full_grad.lpNorm<Eigen::Infinity>()) + ")");
    }

    approx.mode = lambda;
    approx.surv_weight = w;
    approx.loglik = loglik;
    approx.quad = lambda.dot(q * lambda);
    approx.logdet_P = solver_.vectorD().array().log().sum();
    if (want_marginal_sd) approx.marginal_sd = marginal_sd_from_factor();
    return approx;
  }

  /// Column j of the covariance of the last approximation.
  Eigen::VectorXd covariance_column(int j) const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim_);
    e[j] = 1.0;
    return solver_.solve(e);
  }

  /// c' P^-1 c for the last approximation.
  double functional_variance(const Eigen::VectorXd& c) const {
    return c.dot(solver_.solve(c));
  }

  /// One draw from N(mode, P^-1) for the last approximation.
  Eigen::VectorXd sample_latent(const Eigen::VectorXd& mode, std::mt19937_64& rng) const {
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::VectorXd z(dim_);
    for (int i = 0; i < dim_; ++i) z[i] = norm(rng);
    z.array() /= solver_.vectorD().array().sqrt();
    Eigen::VectorXd u = solver_.matrixU().solve(z);
    return mode + solver_.permutationPinv() * u;
  }

  /// log pi~(theta | data): joint at the conditional mode minus the Gaussian
  /// approximation at its own mode, plus the hyperprior. `warm_mode` is
  /// updated in place when provided.
  double log_hyper_posterior(const Eigen::VectorXd& theta,
                             Eigen::VectorXd* warm_mode = nullptr,
                             const NewtonOptions& opt = {}) {
    const HyperParameters h = hyper_from_vector(spec(), theta);
    GaussianApproximation a =
        gaussian_approximation(h, warm_mode && warm_mode->size() == dim_ ? warm_mode : nullptr,
                               /*want_marginal_sd=*/false, opt);
    if (warm_mode) *warm_mode = a.mode;
    return a.loglik - 0.5 * a.quad + 0.5 * a.logdet_Q - 0.5 * a.logdet_P +
           log_hyper_prior(spec(), theta);
  }

  /// Quasi-Newton (BFGS) maximization of the log hyperposterior with central
  /// finite-difference gradients (step 1e-4).
  Eigen::VectorXd optimize_hyper(const Eigen::VectorXd& theta0, Eigen::VectorXd& warm_mode,
                                 int max_iterations = 200) {
    const int d = static_cast<int>(theta0.size());
    if (d == 0) return theta0;
    const double fd = 1e-4;
    Eigen::VectorXd theta = theta0;
    // Trial points proposed by the line search can sit where the inner
    // Gaussian approximation breaks down (e.g. an indefinite posterior
    // precision at extreme hyper values); score them -inf so backtracking
    // retreats instead of aborting, and keep the warm start uncontaminated.
    const auto safe_eval = [&](const Eigen::VectorXd& t) {
      const Eigen::VectorXd save = warm_mode;
      try {
        return log_hyper_posterior(t, &warm_mode);
      } catch (const std::exception&) {
        warm_mode = save;
        return -std::numeric_limits<double>::infinity();
      }
    };
    double f = log_hyper_posterior(theta, &warm_mode);
    const auto gradient = [&](const Eigen::VectorXd& t, double ft) {
      Eigen::VectorXd g(d);
      Eigen::VectorXd tp = t;
      for (int i = 0; i < d; ++i) {
        tp[i] = t[i] + fd;
        double fp = safe_eval(tp);
        tp[i] = t[i] - fd;
        double fm = safe_eval(tp);
        tp[i] = t[i];
        // One-sided fallback when a probe lands just past a feasibility edge.
        if (!std::isfinite(fp)) fp = ft, g[i] = (ft - fm) / fd;
        else if (!std::isfinite(fm)) g[i] = (fp - ft) / fd;
        else g[i] = (fp - fm) / (2.0 * fd);
        if (!std::isfinite(g[i])) g[i] = 0.0;
      }
      return g;
    };
    Eigen::VectorXd g = gradient(theta, f);
    Eigen::MatrixXd binv = Eigen::MatrixXd::Identity(d, d);
    int stall = 0;
    for (int iter = 0; iter < max_iterations; ++iter) {
      if (g.lpNorm<Eigen::Infinity>() < 1e-3) return theta;
      Eigen::VectorXd p = binv * g;
      if (p.dot(g) <= 0) {
        binv = Eigen::MatrixXd::Identity(d, d);
        p = g;
      }
      // Keep initial steps sane in the transformed scale.
      const double pmax = p.lpNorm<Eigen::Infinity>();
      if (pmax > 2.0) p *= 2.0 / pmax;
      double t = 1.0;
      double fnew = -std::numeric_limits<double>::infinity();
      Eigen::VectorXd tnew;
      bool ok = false;
      for (int half = 0; half < 30; ++half) {
        tnew = theta + t * p;
        fnew = safe_eval(tnew);
        if (fnew > f + 1e-4 * t * g.dot(p)) {
          ok = true;
          break;
        }
        t *= 0.5;
      }
      if (!ok) return theta;  // no ascent direction left; mode to working precision
      const Eigen::VectorXd gnew = gradient(tnew, fnew);
      const Eigen::VectorXd s = tnew - theta;
      const Eigen::VectorXd yv = g - gnew;  // gradient of -f decreases
      const double sy = s.dot(yv);
      if (sy > 1e-12) {
        const Eigen::VectorXd bs = binv * yv;
        binv += ((sy + yv.dot(bs)) / (sy * sy)) * (s * s.transpose()) -
                (bs * s.transpose() + s * bs.transpose()) / sy;
      }
      if (std::abs(fnew - f) < 1e-8 * (1.0 + std::abs(f))) {
        if (++stall >= 2) return tnew;
      } else {
        stall = 0;
      }
      theta = tnew;
      f = fnew;
      g = gnew;
    }
    throw std::runtime_error("optimize_hyper: no convergence within iteration budget");
  }

  /// Dense finite-difference Hessian of -log posterior at theta.
  Eigen::MatrixXd hyper_hessian(const Eigen::VectorXd& theta, Eigen::VectorXd& warm_mode,
                                double step = 1e-3) {
    const int d = static_cast<int>(theta.size());
    Eigen::MatrixXd hess(d, d);
    const double f0 = log_hyper_posterior(theta, &warm_mode);
    Eigen::VectorXd t = theta;
    for (int i = 0; i < d; ++i) {
      t[i] = theta[i] + step;
      const double fp = log_hyper_posterior(t, &warm_mode);
      t[i] = theta[i] - step;
      const double fm = log_hyper_posterior(t, &warm_mode);
      t[i] = theta[i];
      hess(i, i) = -(fp + fm - 2.0 * f0) / (step * step);
    }
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) {
        t[i] = theta[i] + step;
        t[j] = theta[j] + step;
        const double fpp = log_hyper_posterior(t, &warm_mode);
        t[j] = theta[j] - step;
        const double fpm = log_hyper_posterior(t, &warm_mode);
        t[i] = theta[i] - step;
        const double fmm = log_hyper_posterior(t, &warm_mode);
        t[j] = theta[j] + step;
        const double fmp = log_hyper_posterior(t, &warm_mode);
        t[i] = theta[i];
        t[j] = theta[j];
        hess(i, j) = hess(j, i) = -(fpp - fpm - fmp + fmm) / (4.0 * step * step);
      }
    return hess;
  }

  /// Builds the integration point set. EB: the mode alone. Grid: points along
  /// each standardized principal axis (step 1), dropped 6 log units below the
  /// mode. CCD: center + axial + fractional-factorial corner points.
  HyperGrid explore_hypergrid(GridStrategy strategy, Eigen::VectorXd theta_star,
                              Eigen::VectorXd& warm_mode) {
    const int d = static_cast<int>(theta_star.size());
    HyperGrid grid;
    grid.theta_star = theta_star;
    const double f_star = log_hyper_posterior(theta_star, &warm_mode);

    std::vector<Eigen::VectorXd> pts{theta_star};
    std::vector<double> lp{f_star};

    if (strategy != GridStrategy::EB && d > 0) {
      grid.hessian = hyper_hessian(theta_star, warm_mode);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(grid.hessian);
      Eigen::VectorXd evals = es.eigenvalues().cwiseMax(1e-8);
      const Eigen::MatrixXd dirs = es.eigenvectors();  // columns
      const Eigen::VectorXd scale = evals.cwiseInverse().cwiseSqrt();

      if (strategy == GridStrategy::Grid) {
        const double dz = 1.0;
        for (int axis = 0; axis < d; ++axis)
          for (int sign : {-1, 1})
            for (int k = 1; k <= 5; ++k) {
              const Eigen::VectorXd p =
                  theta_star + sign * k * dz * scale[axis] * dirs.col(axis);
              const double f = log_hyper_posterior(p, &warm_mode);
              if (f < f_star - 6.0) break;
              pts.push_back(p);
              lp.push_back(f);
            }
      } else {  // CCD
        const double radius = std::sqrt(static_cast<double>(d));
        for (int axis = 0; axis < d; ++axis)
          for (int sign : {-1, 1}) {
            const Eigen::VectorXd p =
                theta_star + sign * radius * scale[axis] * dirs.col(axis);
            pts.push_back(p);
            lp.push_back(log_hyper_posterior(p, &warm_mode));
          }
        const int bits = std::min(d, 5);
        for (int c = 0; c < (1 << bits); ++c) {
          Eigen::VectorXd z(d);
          for (int i = 0; i < d; ++i) z[i] = ((c >> (i % bits)) & 1) ? 1.0 : -1.0;
          z *= radius / z.norm();
          Eigen::VectorXd p = theta_star;
          for (int i = 0; i < d; ++i) p += z[i] * scale[i] * dirs.col(i);
          pts.push_back(p);
          lp.push_back(log_hyper_posterior(p, &warm_mode));
        }
      }
    }

    const int R = static_cast<int>(pts.size());
    grid.points.resize(R, d);
    grid.log_post.resize(R);
    for (int r = 0; r < R; ++r) {
      grid.points.row(r) = pts[r].transpose();
      grid.log_post[r] = lp[r];
    }
    const double m = grid.log_post.maxCoeff();
    grid.weights = (grid.log_post.array() - m).exp();
    grid.weights /= grid.weights.sum();
    return grid;
  }

  const Solver& last_solver() const { return solver_; }

 private:
  void analyze_pattern() {
    // The sparsity pattern of P is constant across theta; analyze it once
    // from an all-ones assembly.
    HyperParameters h;
    h.gamma1 = h.gamma2 = 1.0;  // make linkage entries structurally present
    std::vector<Eigen::Triplet<double>> trip;
    model_.prior_precision(h, trip);
    append_likelihood_curvature(h, Eigen::VectorXd::Ones(model_.layout().n_subjects), trip);
    Eigen::SparseMatrix<double> p(dim_, dim_);
    p.setFromTriplets(trip.begin(), trip.end());
    pattern_ = p;
    solver_.analyzePattern(pattern_);
  }

  void append_likelihood_curvature(const HyperParameters& h, const Eigen::VectorXd& surv_w,
                                   std::vector<Eigen::Triplet<double>>& trip) const {
    if (spec().include_longitudinal) {
      const auto& g = model_.long_gram();
      const double prec = 1.0 / h.sigma2;
      for (int k = 0; k < g.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(g, k); it; ++it)
          trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                            prec * it.value());
    }
    if (spec().include_survival) {
      std::vector<int> idx;
      std::vector<double> val;
      for (int i = 0; i < model_.layout().n_subjects; ++i) {
        model_.surv_design_row(i, h, idx, val);
        const double w = surv_w[i];
        for (size_t a = 0; a < idx.size(); ++a)
          for (size_t b = 0; b < idx.size(); ++b)
            trip.emplace_back(idx[a], idx[b], w * val[a] * val[b]);
      }
    }
  }

  void factorize(const Eigen::SparseMatrix<double>& q, const HyperParameters& h,
                 const Eigen::VectorXd& surv_w) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < q.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(q, k); it; ++it)
        trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    append_likelihood_curvature(h, surv_w, trip);
    Eigen::SparseMatrix<double> p(dim_, dim_);
    p.setFromTriplets(trip.begin(), trip.end());
    // Keep the analyzed pattern: add explicit zeros where needed.
    p += 0.0 * pattern_;
    solver_.factorize(p);
    if (solver_.info() != Eigen::Success)
      throw std::runtime_error("factorize: indefinite or singular posterior precision");
  }

  Eigen::VectorXd marginal_sd_from_factor() const {
    const Eigen::SparseMatrix<double> lower = solver_.matrixL();
    detail::PartialInverse pinv(lower, solver_.vectorD());
    const auto& perm = solver_.permutationP().indices();
    Eigen::VectorXd sd(dim_);
    for (int i = 0; i < dim_; ++i) sd[i] = std::sqrt(std::max(0.0, pinv.diagonal(perm[i])));
    return sd;
  }

  JointModel model_;
  int dim_;
  Eigen::SparseMatrix<double> pattern_;
  Solver solver_;
};

}  // namespace sjlgm
