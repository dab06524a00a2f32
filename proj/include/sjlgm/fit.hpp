#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sjlgm/inference.hpp"

namespace sjlgm {

namespace detail {

inline std::vector<std::string> latent_names(const ModelSpec& spec, const JointDataset& data) {
  const LatentLayout l = build_latent_layout(spec, data);
  std::vector<std::string> names;
  names.reserve(l.total());
  int b = 0;
  if (spec.long_intercept()) names.push_back("beta0");
  for (int j = 0; j < spec.p1; ++j) names.push_back("beta" + std::to_string(++b));
  for (int j = 0; j < l.n_spline; ++j) names.push_back("spline" + std::to_string(j + 1));
  for (int i = 0; i < l.n_subjects; ++i)
    for (int k = 0; k < l.q; ++k)
      names.push_back("b" + std::to_string(k) + "[" + data.subject_ids[i] + "]");
  for (int k = 0; k < l.n_nu; ++k) names.push_back("nu[" + std::to_string(k) + "]");
  for (int j = 0; j < l.n_alpha; ++j) names.push_back("alpha" + std::to_string(j));
  return names;
}

/// Average of the spline basis over the boundary interval; with a
/// partition-of-unity basis this functional extracts the curve's mean level,
/// which plays the role of the longitudinal intercept.
inline Eigen::VectorXd spline_level_functional(const ModelSpec& spec, const LatentLayout& l) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(l.total());
  const auto& sc = *spec.spline;
  const int npts = 201;
  for (int i = 0; i < npts; ++i) {
    const double t = sc.lo + (sc.hi - sc.lo) * i / (npts - 1);
    const double w = (i == 0 || i == npts - 1) ? 0.5 : 1.0;
    const Eigen::VectorXd b = evaluate_basis_at(sc, t);
    for (int j = 0; j < b.size(); ++j) c[l.spline_off() + j] += w * b[j];
  }
  c /= (npts - 1);
  return c;
}

struct GaussianMixture1d {
  std::vector<double> w, mu, sd;

  CoordinateSummary summarize(const std::string& name, int npoints) const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (size_t r = 0; r < w.size(); ++r) {
      lo = std::min(lo, mu[r] - 6.0 * sd[r]);
      hi = std::max(hi, mu[r] + 6.0 * sd[r]);
    }
    std::vector<double> x(npoints), dens(npoints);
    for (int i = 0; i < npoints; ++i) {
      x[i] = lo + (hi - lo) * i / (npoints - 1);
      double f = 0;
      for (size_t r = 0; r < w.size(); ++r) f += w[r] * normal_pdf(x[i], mu[r], sd[r]);
      dens[i] = f;
    }
    CoordinateSummary s = summarize_density(x, dens, name);
    // Mixture moments are available in closed form; use them for mean/sd.
    double m = 0, m2 = 0;
    for (size_t r = 0; r < w.size(); ++r) {
      m += w[r] * mu[r];
      m2 += w[r] * (sd[r] * sd[r] + mu[r] * mu[r]);
    }
    s.mean = m;
    s.sd = std::sqrt(std::max(0.0, m2 - m * m));
    return s;
  }

  MarginalDensity density(int npoints) const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (size_t r = 0; r < w.size(); ++r) {
      lo = std::min(lo, mu[r] - 6.0 * sd[r]);
      hi = std::max(hi, mu[r] + 6.0 * sd[r]);
    }
    MarginalDensity d;
    d.x.resize(npoints);
    d.density.resize(npoints);
    for (int i = 0; i < npoints; ++i) {
      d.x[i] = lo + (hi - lo) * i / (npoints - 1);
      double f = 0;
      for (size_t r = 0; r < w.size(); ++r) f += w[r] * normal_pdf(d.x[i], mu[r], sd[r]);
      d.density[i] = f;
    }
    return d;
  }
};

inline double erfinv_approx(double x) {
  // Winitzki approximation, refined by one Newton step on erf.
  const double a = 0.147;
  const double ln1mx2 = std::log(1.0 - x * x);
  const double t1 = 2.0 / (M_PI * a) + ln1mx2 / 2.0;
  double v = std::copysign(std::sqrt(std::sqrt(t1 * t1 - ln1mx2 / a) - t1), x);
  for (int i = 0; i < 2; ++i)
    v -= (std::erf(v) - x) * std::sqrt(M_PI) / 2.0 * std::exp(v * v);
  return v;
}

}  // namespace detail

struct HyperScaleInfo {
  std::string natural_name;
  std::string reciprocal_name;  // empty when not a variance-type parameter
  // transform from the unconstrained coordinate to the natural scale
  double (*to_natural)(double);
};

inline std::vector<HyperScaleInfo> hyper_scales(const ModelSpec& spec) {
  std::vector<HyperScaleInfo> out;
  const auto expneg = +[](double t) { return std::exp(-t); };
  const auto expf = +[](double t) { return std::exp(t); };
  const auto tanhf = +[](double t) { return std::tanh(t); };
  const auto logistic = +[](double t) { return 1.0 / (1.0 + std::exp(-t)); };
  const auto ident = +[](double t) { return t; };
  for (const auto& n : hyper_names(spec)) {
    if (n == "log_prec_obs") out.push_back({"sigma2", "prec_obs", expneg});
    else if (n == "log_shape") out.push_back({"shape", "", expf});
    else if (n == "log_d11_inv") out.push_back({"d11_inv", "d11", expf});
    else if (n == "log_d22_inv") out.push_back({"d22_inv", "d22", expf});
    else if (n == "z_rho") out.push_back({"rho", "", tanhf});
    else if (n == "log_tau") out.push_back({"tau", "tau_inv", expf});
    else if (n == "logit_zeta") out.push_back({"zeta", "", logistic});
    else out.push_back({n, "", ident});  // gamma1, gamma2
  }
  return out;
}

/// Laplace-style 1-d marginal of hyperparameter j: the log posterior is
/// profiled along the conditional-mode path (exact for a Gaussian
/// hyperposterior), then transformed to the natural scale.
inline HyperSummary profile_hyper_marginal(InlaEngine& engine, int j,
                                           const Eigen::VectorXd& theta_star,
                                           const Eigen::MatrixXd& hessian,
                                           Eigen::VectorXd& warm_mode,
                                           int npoints = 21) {
  const int d = static_cast<int>(theta_star.size());
  const Eigen::MatrixXd cov = hessian.inverse();
  const double sd_j = std::sqrt(std::max(cov(j, j), 1e-12));

  // Conditional-mode direction: move theta_{-j} to its conditional optimum.
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(d);
  dir[j] = 1.0;
  if (d > 1) {
    Eigen::MatrixXd hmm(d - 1, d - 1);
    Eigen::VectorXd hmj(d - 1);
    for (int a = 0, ia = 0; a < d; ++a) {
      if (a == j) continue;
      hmj[ia] = hessian(a, j);
      for (int b = 0, ib = 0; b < d; ++b) {
        if (b == j) continue;
        hmm(ia, ib) = hessian(a, b);
        ++ib;
      }
      ++ia;
    }
    const Eigen::VectorXd shift = -hmm.ldlt().solve(hmj);
    for (int a = 0, ia = 0; a < d; ++a) {
      if (a == j) continue;
      dir[a] = shift[ia++];
    }
  }

  std::vector<double> t(npoints), logd(npoints);
  for (int i = 0; i < npoints; ++i) {
    const double delta = -4.0 * sd_j + 8.0 * sd_j * i / (npoints - 1);
    t[i] = theta_star[j] + delta;
    logd[i] = engine.log_hyper_posterior(theta_star + delta * dir, &warm_mode);
  }
  const double m = *std::max_element(logd.begin(), logd.end());
  std::vector<double> dens(npoints);
  for (int i = 0; i < npoints; ++i) dens[i] = std::exp(logd[i] - m);

  const auto scales = hyper_scales(engine.spec());
  HyperSummary out;
  out.name = scales[j].natural_name;
  // Transform density to the natural scale with the Jacobian |dt/dx|.
  std::vector<double> xn(npoints), dn(npoints);
  bool increasing = scales[j].to_natural(t[npoints - 1]) > scales[j].to_natural(t[0]);
  for (int i = 0; i < npoints; ++i) {
    const int src = increasing ? i : npoints - 1 - i;
    xn[i] = scales[j].to_natural(t[src]);
    dn[i] = dens[src];
  }
  // Numeric Jacobian from the transform itself.
  for (int i = 0; i < npoints; ++i) {
    const double tt = increasing ? t[i] : t[npoints - 1 - i];
    const double h = 1e-6;
    const double dxdt = std::abs(scales[j].to_natural(tt + h) - scales[j].to_natural(tt - h)) / (2 * h);
    if (dxdt > 0) dn[i] /= dxdt;
  }
  out.natural = detail::summarize_density(xn, dn, out.name);
  if (!scales[j].reciprocal_name.empty()) {
    out.has_reciprocal = true;
    std::vector<double> xr(npoints), dr(npoints);
    for (int i = 0; i < npoints; ++i) {
      const int src = npoints - 1 - i;  // 1/x reverses order
      xr[i] = 1.0 / xn[src];
      dr[i] = dn[src] * xn[src] * xn[src];  // Jacobian of x -> 1/x
    }
    out.reciprocal = detail::summarize_density(xr, dr, scales[j].reciprocal_name);
  }
  return out;
}

/// Cheap hyper summaries: Gaussian in the transformed coordinate with the
/// marginal curvature sd; exact lognormal moments for log-scale parameters.
inline HyperSummary gaussian_hyper_marginal(const ModelSpec& spec, int j,
                                            const Eigen::VectorXd& theta_star,
                                            const Eigen::MatrixXd& hessian) {
  const auto scales = hyper_scales(spec);
  const int d = static_cast<int>(theta_star.size());
  double var = 0.0;
  if (hessian.size() == d * d && d > 0) {
    const Eigen::MatrixXd cov = hessian.inverse();
    var = std::max(cov(j, j), 0.0);
  }
  const double mu = theta_star[j], s2 = var, s = std::sqrt(var);
  const double z975 = 1.959963984540054;
  HyperSummary out;
  out.name = scales[j].natural_name;
  const auto& f = scales[j].to_natural;
  const std::string& n = out.name;
  const bool logscale = (n == "sigma2" || n == "shape" || n == "d11_inv" ||
                         n == "d22_inv" || n == "tau");
  if (logscale) {
    const double sign = (n == "sigma2") ? -1.0 : 1.0;  // sigma2 = exp(-t)
    const double lmu = sign * mu;
    out.natural.name = n;
    out.natural.mean = std::exp(lmu + s2 / 2.0);
    out.natural.sd = out.natural.mean * std::sqrt(std::expm1(s2));
    out.natural.q50 = std::exp(lmu);
    out.natural.q025 = std::exp(lmu - z975 * s);
    out.natural.q975 = std::exp(lmu + z975 * s);
    if (!scales[j].reciprocal_name.empty()) {
      out.has_reciprocal = true;
      out.reciprocal.name = scales[j].reciprocal_name;
      out.reciprocal.mean = std::exp(-lmu + s2 / 2.0);
      out.reciprocal.sd = out.reciprocal.mean * std::sqrt(std::expm1(s2));
      out.reciprocal.q50 = std::exp(-lmu);
      out.reciprocal.q025 = std::exp(-lmu - z975 * s);
      out.reciprocal.q975 = std::exp(-lmu + z975 * s);
    }
  } else {
    // Delta method around the mode for bounded transforms and identity.
    out.natural.name = n;
    out.natural.mean = f(mu);
    const double h = 1e-6;
    const double dfdt = (f(mu + h) - f(mu - h)) / (2 * h);
    out.natural.sd = std::abs(dfdt) * s;
    out.natural.q50 = f(mu);
    out.natural.q025 = f(mu - z975 * s);
    out.natural.q975 = f(mu + z975 * s);
    if (out.natural.q025 > out.natural.q975) std::swap(out.natural.q025, out.natural.q975);
  }
  return out;
}

/// Full pipeline: hyper mode search, integration grid, per-point Gaussian
/// approximations warm-started from the mode, mixture latent marginals, and
/// hyperparameter summaries. Deterministic given data and options.
inline FitResult fit(InlaEngine& engine, const JointDataset& data, const FitOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelSpec& spec = engine.spec();
  FitResult res;
  res.model_name = spec.name;
  res.hyper_names = hyper_names(spec);
  const int d = static_cast<int>(res.hyper_names.size());

  // Starting point: moment-matched observation variance, defaults elsewhere.
  HyperParameters h0;
  h0.zeta = spec.zeta;
  if (spec.include_longitudinal && !data.longitudinal.empty()) {
    double m = 0;
    for (const auto& r : data.longitudinal) m += r.y;
    m /= data.longitudinal.size();
    double v = 0;
    for (const auto& r : data.longitudinal) v += (r.y - m) * (r.y - m);
    v = std::max(v / data.longitudinal.size(), 1e-4);
    h0.sigma2 = v / 2.0;
  }
  Eigen::VectorXd theta0 = opt.theta_init ? *opt.theta_init : hyper_to_vector(spec, h0);

  Eigen::VectorXd warm_mode;
  Eigen::VectorXd theta_star = engine.optimize_hyper(theta0, warm_mode,
                                                     opt.max_outer_iterations);

  GridStrategy strategy =
      opt.strategy.value_or(d >= 4 ? GridStrategy::CCD : GridStrategy::Grid);
  res.grid = engine.explore_hypergrid(strategy, theta_star, warm_mode);
  if (res.grid.hessian.size() == 0 && d > 0)
    res.grid.hessian = engine.hyper_hessian(theta_star, warm_mode);

  const LatentLayout layout = build_latent_layout(spec, data);
  const int n = layout.total();
  const int R = res.grid.size();
  res.cond_mean.resize(R);
  res.cond_sd.resize(R);

  // Coordinates that get a full density trace and the simplified-Laplace
  // correction when requested: the fixed effects and the spline.
  for (int j = 0; j < layout.n_beta + layout.n_spline; ++j) res.density_coords.push_back(j);
  for (int j = 0; j < layout.n_alpha; ++j) res.density_coords.push_back(layout.alpha_off() + j);

  std::vector<std::vector<double>> shift(R);  // SLA mean shift per density coord
  Eigen::VectorXd level_c;
  std::vector<double> level_mu(R, 0.0), level_sd(R, 0.0);
  if (spec.spline) level_c = detail::spline_level_functional(spec, layout);

  for (int r = 0; r < R; ++r) {
    const HyperParameters h = hyper_from_vector(spec, res.grid.points.row(r).transpose());
    GaussianApproximation a =
        engine.gaussian_approximation(h, &warm_mode, true, opt.newton);
    res.newton_iterations_total += a.iterations;
    res.cond_mean[r] = a.mode;
    res.cond_sd[r] = a.marginal_sd;
    if (spec.spline) {
      level_mu[r] = level_c.dot(a.mode);
      level_sd[r] = std::sqrt(std::max(0.0, engine.functional_variance(level_c)));
    }
    shift[r].assign(res.density_coords.size(), 0.0);
    if (opt.correction == MarginalCorrection::SimplifiedLaplace && spec.include_survival) {
      // Third-order mean correction along the conditional path of each
      // requested coordinate; the Gaussian part contributes nothing.
      std::vector<int> idx;
      std::vector<double> val;
      for (size_t c = 0; c < res.density_coords.size(); ++c) {
        const int j = res.density_coords[c];
        const double sd_j = a.marginal_sd[j];
        if (!(sd_j > 0)) continue;
        const Eigen::VectorXd col = engine.covariance_column(j);
        double kappa3 = 0.0;
        for (int i = 0; i < layout.n_subjects; ++i) {
          engine.model().surv_design_row(i, h, idx, val);
          double proj = 0.0;
          for (size_t a2 = 0; a2 < idx.size(); ++a2) proj += val[a2] * col[idx[a2]];
          proj /= sd_j;
          kappa3 += -a.surv_weight[i] * proj * proj * proj;  // third = second derivative
        }
        shift[r][c] = 0.5 * sd_j * kappa3;
      }
    }
  }

  // Latent coordinate summaries from the weighted mixture of conditionals.
  const auto names = detail::latent_names(spec, data);
  res.latent.resize(n);
  for (int j = 0; j < n; ++j) {
    detail::GaussianMixture1d mix;
    for (int r = 0; r < R; ++r) {
      mix.w.push_back(res.grid.weights[r]);
      mix.mu.push_back(res.cond_mean[r][j]);
      mix.sd.push_back(std::max(res.cond_sd[r][j], 1e-300));
    }
    res.latent[j] = mix.summarize(names[j], opt.density_points);
  }
  for (size_t c = 0; c < res.density_coords.size(); ++c) {
    const int j = res.density_coords[c];
    detail::GaussianMixture1d mix;
    for (int r = 0; r < R; ++r) {
      mix.w.push_back(res.grid.weights[r]);
      mix.mu.push_back(res.cond_mean[r][j] + shift[r][c]);
      mix.sd.push_back(std::max(res.cond_sd[r][j], 1e-300));
    }
    res.latent_density.push_back(mix.density(opt.density_points));
    if (opt.correction == MarginalCorrection::SimplifiedLaplace)
      res.latent[j] = mix.summarize(names[j], opt.density_points);
  }
  if (spec.spline) {
    detail::GaussianMixture1d mix;
    for (int r = 0; r < R; ++r) {
      mix.w.push_back(res.grid.weights[r]);
      mix.mu.push_back(level_mu[r]);
      mix.sd.push_back(std::max(level_sd[r], 1e-300));
    }
    res.mean_level = mix.summarize("mean_level", opt.density_points);
  }

  for (int j = 0; j < d; ++j) {
    if (opt.profile_hyper_marginals)
      res.hyper.push_back(profile_hyper_marginal(engine, j, theta_star,
                                                 res.grid.hessian, warm_mode));
    else
      res.hyper.push_back(gaussian_hyper_marginal(spec, j, theta_star, res.grid.hessian));
  }

  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline const CoordinateSummary* find_latent(const FitResult& fit, const std::string& name) {
  for (const auto& s : fit.latent)
    if (s.name == name) return &s;
  return nullptr;
}

inline const HyperSummary* find_hyper(const FitResult& fit, const std::string& natural_name) {
  for (const auto& s : fit.hyper)
    if (s.name == natural_name) return &s;
  return nullptr;
}

}  // namespace sjlgm
