#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "sjlgm/fit.hpp"

namespace sjlgm {

struct DicResult {
  double dic = 0, pd = 0;
  double mc_se = 0;  // Monte Carlo standard error of the mean deviance
};

struct WaicResult {
  double waic = 0, pwaic = 0, lppd = 0;
};

namespace detail {

/// Largest-remainder allocation of `total` draws across grid weights.
inline std::vector<int> allocate_draws(const Eigen::VectorXd& w, int total) {
  const int r = static_cast<int>(w.size());
  std::vector<int> n(r);
  std::vector<std::pair<double, int>> frac(r);
  int used = 0;
  for (int i = 0; i < r; ++i) {
    const double exact = w[i] * total;
    n[i] = static_cast<int>(std::floor(exact));
    used += n[i];
    frac[i] = {exact - n[i], i};
  }
  std::sort(frac.rbegin(), frac.rend());
  for (int i = 0; used < total; ++i, ++used) ++n[frac[i % r].second];
  return n;
}

/// Streaming log-sum-exp plus Welford moments, one state per pointwise unit.
struct PointwiseAccumulator {
  double max_val = -std::numeric_limits<double>::infinity();
  double sum_exp = 0;  // sum of exp(x - max_val)
  double mean = 0, m2 = 0;
  long count = 0;

  void add(double x) {
    if (x > max_val) {
      sum_exp = sum_exp * std::exp(max_val - x) + 1.0;
      max_val = x;
    } else {
      sum_exp += std::exp(x - max_val);
    }
    ++count;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  double log_mean_exp() const { return max_val + std::log(sum_exp / count); }
  double variance() const { return count > 1 ? m2 / (count - 1) : 0.0; }
};

/// Per-unit conditional log likelihoods at one (lambda, theta) draw.
/// Units: one entry per longitudinal record, then one per survival subject.
inline void pointwise_loglik(const JointModel& model, const Eigen::VectorXd& lambda,
                             const HyperParameters& h, std::vector<double>& out,
                             bool per_subject_units = false) {
  const auto& spec = model.spec();
  const auto& data = model.data();
  out.clear();
  const auto [etay, etat] = model.linear_predictors(lambda, h);
  std::vector<double> subj_long;
  if (per_subject_units) subj_long.assign(model.layout().n_subjects, 0.0);
  if (spec.include_longitudinal) {
    const double c = -0.5 * std::log(2.0 * M_PI * h.sigma2);
    for (int i = 0; i < etay.size(); ++i) {
      const double r = data.longitudinal[i].y - etay[i];
      const double ll = c - 0.5 * r * r / h.sigma2;
      if (per_subject_units)
        subj_long[data.subject_index.at(data.longitudinal[i].subject)] += ll;
      else
        out.push_back(ll);
    }
  }
  if (spec.include_survival) {
    for (int i = 0; i < model.layout().n_subjects; ++i) {
      const auto& s = data.survival[i];
      const double eta = std::min(etat[i], kEtaClamp);
      const double logT = std::log(s.time);
      double ll = s.event * (std::log(h.shape) + (h.shape - 1.0) * logT + eta) -
                  std::exp(eta + h.shape * logT);
      if (per_subject_units) ll += subj_long[i];
      out.push_back(ll);
    }
  } else if (per_subject_units) {
    out = subj_long;
  }
}

}  // namespace detail

/// DIC from joint draws out of the mixture of per-grid-point Gaussian
/// approximations. Deviance is the conditional likelihood given the latent
/// field; the plug-in point is the mixture mean of (lambda, theta).
inline DicResult compute_dic(InlaEngine& engine, const FitResult& fit, int samples = 1000,
                             std::uint64_t seed = 20240901) {
  if (samples < 100) throw std::invalid_argument("compute_dic: need at least 100 samples");
  if (!engine.spec().include_longitudinal && !engine.spec().include_survival)
    throw std::invalid_argument("compute_dic: model has no data likelihood");
  const int R = fit.grid.size();
  const auto alloc = detail::allocate_draws(fit.grid.weights, samples);

  double dev_sum = 0, dev_sq = 0;
  long n_drawn = 0;
  Eigen::VectorXd lambda_bar = Eigen::VectorXd::Zero(engine.latent_dim());
  Eigen::VectorXd theta_bar = Eigen::VectorXd::Zero(fit.grid.points.cols());
  for (int r = 0; r < R; ++r) {
    lambda_bar += fit.grid.weights[r] * fit.cond_mean[r];
    theta_bar += fit.grid.weights[r] * fit.grid.points.row(r).transpose();
  }

  for (int r = 0; r < R; ++r) {
    if (alloc[r] == 0) continue;
    const HyperParameters h =
        hyper_from_vector(engine.spec(), fit.grid.points.row(r).transpose());
    engine.gaussian_approximation(h, &fit.cond_mean[r], false);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (r + 1)));
    for (int s = 0; s < alloc[r]; ++s) {
      const Eigen::VectorXd draw = engine.sample_latent(fit.cond_mean[r], rng);
      const double dev = -2.0 * engine.model().joint_loglik(draw, h);
      dev_sum += dev;
      dev_sq += dev * dev;
      ++n_drawn;
    }
  }
  const double dbar = dev_sum / n_drawn;
  const HyperParameters hbar = hyper_from_vector(engine.spec(), theta_bar);
  const double dhat = -2.0 * engine.model().joint_loglik(lambda_bar, hbar);
  DicResult out;
  out.pd = dbar - dhat;
  out.dic = 2.0 * dbar - dhat;
  const double var = std::max(0.0, dev_sq / n_drawn - dbar * dbar);
  out.mc_se = std::sqrt(var / n_drawn);
  return out;
}

/// WAIC with one pointwise unit per longitudinal record and per survival
/// record (subject-level units behind the flag).
inline WaicResult compute_waic(InlaEngine& engine, const FitResult& fit, int samples = 1000,
                               std::uint64_t seed = 20240902, bool subject_units = false) {
  if (samples < 100) throw std::invalid_argument("compute_waic: need at least 100 samples");
  if (!engine.spec().include_longitudinal && !engine.spec().include_survival)
    throw std::invalid_argument("compute_waic: model has no data likelihood");
  const int R = fit.grid.size();
  const auto alloc = detail::allocate_draws(fit.grid.weights, samples);

  std::vector<detail::PointwiseAccumulator> acc;
  std::vector<double> ll;
  for (int r = 0; r < R; ++r) {
    if (alloc[r] == 0) continue;
    const HyperParameters h =
        hyper_from_vector(engine.spec(), fit.grid.points.row(r).transpose());
    engine.gaussian_approximation(h, &fit.cond_mean[r], false);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (r + 1)));
    for (int s = 0; s < alloc[r]; ++s) {
      const Eigen::VectorXd draw = engine.sample_latent(fit.cond_mean[r], rng);
      detail::pointwise_loglik(engine.model(), draw, h, ll, subject_units);
      if (acc.empty()) acc.resize(ll.size());
      if (acc.size() != ll.size())
        throw std::runtime_error("compute_waic: inconsistent pointwise unit count");
      for (size_t u = 0; u < ll.size(); ++u) acc[u].add(ll[u]);
    }
  }
  WaicResult out;
  for (const auto& a : acc) {
    out.lppd += a.log_mean_exp();
    out.pwaic += a.variance();
  }
  out.waic = -2.0 * (out.lppd - out.pwaic);
  return out;
}

}  // namespace sjlgm
