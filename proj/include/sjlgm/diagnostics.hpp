#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "sjlgm/criteria.hpp"

namespace sjlgm {

struct KaplanMeierCurve {
  std::vector<double> time;      // distinct event times, ascending
  std::vector<double> survival;  // product-limit estimate just after each time
  std::vector<int> at_risk;
  std::vector<int> events;
};

/// Product-limit estimator. Censored observations leave the risk set without
/// producing a step.
inline KaplanMeierCurve kaplan_meier(const std::vector<double>& times,
                                     const std::vector<int>& events) {
  if (times.size() != events.size() || times.empty())
    throw std::invalid_argument("kaplan_meier: empty or mismatched input");
  std::vector<int> idx(times.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return times[a] < times[b]; });

  KaplanMeierCurve km;
  double s = 1.0;
  int n = static_cast<int>(times.size());
  size_t i = 0;
  while (i < idx.size()) {
    const double t = times[idx[i]];
    int d = 0, removed = 0;
    while (i < idx.size() && times[idx[i]] == t) {
      d += events[idx[i]];
      ++removed;
      ++i;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / n;
      km.time.push_back(t);
      km.survival.push_back(s);
      km.at_risk.push_back(n);
      km.events.push_back(d);
    }
    n -= removed;
  }
  return km;
}

/// Evaluate a KM curve at t (right-continuous step function, S(0)=1).
inline double km_at(const KaplanMeierCurve& km, double t) {
  double s = 1.0;
  for (size_t i = 0; i < km.time.size() && km.time[i] <= t; ++i) s = km.survival[i];
  return s;
}

struct MarginalResidual {
  std::string subject;
  int region = 0;
  double time = 0, residual = 0;
};

/// (y - x'beta - g(t)) / sqrt(z' D z + sigma2) with all quantities at their
/// posterior means; random effects are integrated out, not plugged in.
inline std::vector<MarginalResidual> standardized_marginal_residuals(const InlaEngine& engine,
                                                                     const FitResult& fit) {
  const auto& spec = engine.spec();
  const auto& data = engine.model().data();
  const auto& layout = engine.model().layout();
  if (!spec.include_longitudinal)
    throw std::invalid_argument("marginal residuals need a longitudinal submodel");

  Eigen::VectorXd fixed = Eigen::VectorXd::Zero(engine.latent_dim());
  for (int j = 0; j < layout.n_beta + layout.n_spline; ++j) fixed[j] = fit.latent[j].mean;

  HyperParameters h;
  const auto names = hyper_names(spec);
  Eigen::VectorXd tbar = Eigen::VectorXd::Zero(static_cast<int>(names.size()));
  for (int r = 0; r < fit.grid.size(); ++r)
    tbar += fit.grid.weights[r] * fit.grid.points.row(r).transpose();
  h = hyper_from_vector(spec, tbar);
  const Eigen::Matrix2d d2 = h.d_matrix(2);

  const Eigen::SparseMatrix<double>& ay = engine.model().long_design();
  const Eigen::VectorXd etay = ay * fixed;
  std::vector<MarginalResidual> out(data.longitudinal.size());
  for (size_t i = 0; i < data.longitudinal.size(); ++i) {
    const auto& rec = data.longitudinal[i];
    double var = h.sigma2;
    if (spec.re == RandomStructure::Intercept) {
      var += d2(0, 0);
    } else if (spec.re == RandomStructure::InterceptSlope) {
      const Eigen::Vector2d z(1.0, rec.time);
      var += z.dot(d2 * z);
    }
    out[i] = {rec.subject, rec.region, rec.time,
              (rec.y - etay[static_cast<int>(i)]) / std::sqrt(var)};
  }
  return out;
}

struct CoxSnellResult {
  std::vector<double> residual;  // posterior mean cumulative hazard at T, per subject
  std::vector<int> event;
  KaplanMeierCurve km;
  double sup_distance = 0;  // sup |KM(t) - exp(-t)| at the step points
};

/// Cox-Snell residuals r_i = E[H(T_i) | data] over mixture draws. Under a
/// correct model the (r_i, delta_i) behave like censored Exp(1) data.
inline CoxSnellResult cox_snell_residuals(InlaEngine& engine, const FitResult& fit,
                                          int samples = 500, std::uint64_t seed = 20240903) {
  const auto& spec = engine.spec();
  const auto& data = engine.model().data();
  if (!spec.include_survival)
    throw std::invalid_argument("Cox-Snell residuals need a survival submodel");
  const int n = engine.model().layout().n_subjects;
  const auto alloc = detail::allocate_draws(fit.grid.weights, samples);

  Eigen::VectorXd hz = Eigen::VectorXd::Zero(n);
  long drawn = 0;
  for (int r = 0; r < fit.grid.size(); ++r) {
    if (alloc[r] == 0) continue;
    const HyperParameters h = hyper_from_vector(spec, fit.grid.points.row(r).transpose());
    engine.gaussian_approximation(h, &fit.cond_mean[r], false);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (r + 1)));
    for (int s = 0; s < alloc[r]; ++s) {
      const Eigen::VectorXd draw = engine.sample_latent(fit.cond_mean[r], rng);
      const auto [etay, etat] = engine.model().linear_predictors(draw, h);
      for (int i = 0; i < n; ++i) {
        const double eta = std::min(etat[i], kEtaClamp);
        hz[i] += std::exp(eta + h.shape * std::log(data.survival[i].time));
      }
      ++drawn;
    }
  }
  hz /= static_cast<double>(drawn);

  CoxSnellResult out;
  out.residual.assign(hz.data(), hz.data() + n);
  out.event.resize(n);
  for (int i = 0; i < n; ++i) out.event[i] = data.survival[i].event;
  out.km = kaplan_meier(out.residual, out.event);
  double prev = 1.0;
  for (size_t i = 0; i < out.km.time.size(); ++i) {
    const double ref = std::exp(-out.km.time[i]);
    // both sides of the step
    out.sup_distance = std::max({out.sup_distance, std::abs(prev - ref),
                                 std::abs(out.km.survival[i] - ref)});
    prev = out.km.survival[i];
  }
  return out;
}

struct SubjectPrediction {
  std::vector<double> grid;
  std::vector<double> trajectory_mean, trajectory_lo, trajectory_hi;  // 95% bands
  std::vector<double> survival_mean, survival_lo, survival_hi;
};

/// Posterior predictive summaries of the mean trajectory x'beta + g(t) + z'b
/// and the survival function for one subject, from mixture draws.
inline SubjectPrediction predict_subject(InlaEngine& engine, const FitResult& fit,
                                         const std::string& subject,
                                         const std::vector<double>& grid,
                                         int samples = 500, std::uint64_t seed = 20240904) {
  const auto& spec = engine.spec();
  const auto& data = engine.model().data();
  const auto& layout = engine.model().layout();
  const auto it = data.subject_index.find(subject);
  if (it == data.subject_index.end())
    throw std::invalid_argument("predict_subject: unknown subject id");
  const int i = it->second;
  const auto alloc = detail::allocate_draws(fit.grid.weights, samples);
  const int g = static_cast<int>(grid.size());

  // covariates taken from the subject's own records
  const Eigen::VectorXd& x1 = data.longitudinal[data.subject_long_rows[i].front()].x;

  std::vector<std::vector<double>> traj(g), surv(g);
  for (int r = 0; r < fit.grid.size(); ++r) {
    if (alloc[r] == 0) continue;
    const HyperParameters h = hyper_from_vector(spec, fit.grid.points.row(r).transpose());
    engine.gaussian_approximation(h, &fit.cond_mean[r], false);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (r + 1)));
    for (int s = 0; s < alloc[r]; ++s) {
      const Eigen::VectorXd draw = engine.sample_latent(fit.cond_mean[r], rng);
      double etat = 0.0;
      if (spec.include_survival) {
        std::vector<int> idx;
        std::vector<double> val;
        engine.model().surv_design_row(i, h, idx, val);
        for (size_t k = 0; k < idx.size(); ++k) etat += val[k] * draw[idx[k]];
      }
      for (int t = 0; t < g; ++t) {
        double mu = 0.0;
        if (spec.long_intercept()) mu += draw[layout.beta_off()];
        for (int j = 0; j < spec.p1; ++j)
          mu += x1[j] * draw[layout.beta_off() + (spec.long_intercept() ? 1 : 0) + j];
        if (spec.spline) {
          int clamped = 0;
          const Eigen::VectorXd bs = evaluate_basis_at(*spec.spline, grid[t], &clamped);
          for (int j = 0; j < bs.size(); ++j) mu += bs[j] * draw[layout.spline_off() + j];
        }
        if (spec.re == RandomStructure::Intercept) {
          mu += draw[layout.b_off(i)];
        } else if (spec.re == RandomStructure::InterceptSlope) {
          mu += draw[layout.b_off(i)] + grid[t] * draw[layout.b_off(i) + 1];
        }
        traj[t].push_back(mu);
        if (spec.include_survival && grid[t] > 0)
          surv[t].push_back(std::exp(-std::exp(std::min(etat, kEtaClamp) +
                                               h.shape * std::log(grid[t]))));
      }
    }
  }

  auto band = [](std::vector<double>& v, double& mean, double& lo, double& hi) {
    std::sort(v.begin(), v.end());
    mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    lo = v[static_cast<size_t>(0.025 * (v.size() - 1))];
    hi = v[static_cast<size_t>(0.975 * (v.size() - 1))];
  };
  SubjectPrediction out;
  out.grid = grid;
  out.trajectory_mean.resize(g);
  out.trajectory_lo.resize(g);
  out.trajectory_hi.resize(g);
  for (int t = 0; t < g; ++t)
    band(traj[t], out.trajectory_mean[t], out.trajectory_lo[t], out.trajectory_hi[t]);
  if (spec.include_survival) {
    out.survival_mean.assign(g, 1.0);
    out.survival_lo.assign(g, 1.0);
    out.survival_hi.assign(g, 1.0);
    for (int t = 0; t < g; ++t)
      if (!surv[t].empty())
        band(surv[t], out.survival_mean[t], out.survival_lo[t], out.survival_hi[t]);
  }
  return out;
}

struct RegionRisk {
  int region = 0;
  int n_subjects = 0;
  double mean_log_risk = 0;        // average lambda_ik over the region's subjects
  double spatial_relative_risk = 0;  // posterior mean of exp(nu_k)
};

/// Region-level risk summaries. Regions without subjects still report the
/// posterior mean spatial relative risk.
inline std::vector<RegionRisk> region_risk(const InlaEngine& engine, const FitResult& fit) {
  const auto& spec = engine.spec();
  const auto& data = engine.model().data();
  const auto& layout = engine.model().layout();
  if (!spec.include_survival || !spec.spatial)
    throw std::invalid_argument("region risk needs a survival submodel with a spatial term");

  Eigen::VectorXd lam = Eigen::VectorXd::Zero(data.graph.K);
  std::vector<int> cnt(data.graph.K, 0);
  for (int i = 0; i < layout.n_subjects; ++i) {
    const auto& s = data.survival[i];
    double eta = fit.latent[layout.alpha_off()].mean;  // survival intercept
    for (int j = 0; j < spec.p2; ++j)
      eta += s.x[j] * fit.latent[layout.alpha_off() + 1 + j].mean;
    if (spec.link_b0)
      eta += find_hyper(fit, "gamma1")->natural.mean * fit.latent[layout.b_off(i)].mean;
    if (spec.link_b1 && spec.re == RandomStructure::InterceptSlope)
      eta += find_hyper(fit, "gamma2")->natural.mean * fit.latent[layout.b_off(i) + 1].mean;
    eta += fit.latent[layout.nu_off() + s.region].mean;
    lam[s.region] += eta;
    ++cnt[s.region];
  }

  std::vector<RegionRisk> out(data.graph.K);
  for (int k = 0; k < data.graph.K; ++k) {
    out[k].region = k;
    out[k].n_subjects = cnt[k];
    out[k].mean_log_risk = cnt[k] > 0 ? lam[k] / cnt[k]
                                      : std::numeric_limits<double>::quiet_NaN();
    // lognormal mean of exp(nu_k) from the mixture components
    double m = 0.0;
    for (int r = 0; r < fit.grid.size(); ++r) {
      const double mu = fit.cond_mean[r][layout.nu_off() + k];
      const double sd = fit.cond_sd[r][layout.nu_off() + k];
      m += fit.grid.weights[r] * std::exp(mu + 0.5 * sd * sd);
    }
    out[k].spatial_relative_risk = m;
  }
  return out;
}

}  // namespace sjlgm
