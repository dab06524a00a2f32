#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sjlgm/data.hpp"
#include "sjlgm/spatial.hpp"
#include "sjlgm/spline.hpp"

namespace sjlgm {

enum class RandomStructure { None, Intercept, InterceptSlope };

/// Declarative description of one model variant: which fixed effects,
/// spline, random-effect structure, linkage terms, and spatial component
/// enter the two linear predictors.
struct ModelSpec {
  int p1 = 0;  // longitudinal covariate columns
  int p2 = 0;  // survival covariate columns (intercept added separately)
  double fixed_effect_precision = 1e-3;  // vague prior on beta, spline, alpha
  std::optional<SplineConfig> spline;
  RandomStructure re = RandomStructure::None;
  bool link_b0 = false;  // gamma1 * b0 in the log hazard
  bool link_b1 = false;  // gamma2 * b1 in the log hazard
  bool spatial = false;
  double zeta = 0.95;
  bool estimate_zeta = false;
  bool include_longitudinal = true;
  bool include_survival = true;
  std::string name = "custom";

  int q() const {
    switch (re) {
      case RandomStructure::None: return 0;
      case RandomStructure::Intercept: return 1;
      case RandomStructure::InterceptSlope: return 2;
    }
    return 0;
  }

  // The clamped B-spline basis sums to one, so it absorbs the longitudinal
  // intercept; an explicit intercept column is used only without a spline.
  bool long_intercept() const { return include_longitudinal && !spline.has_value(); }
  int spline_dim() const { return spline ? basis_dimension(*spline) : 0; }

  void validate() const {
    if ((link_b0 || link_b1) && re == RandomStructure::None)
      throw std::invalid_argument("model: linkage requires random effects");
    if (link_b1 && re != RandomStructure::InterceptSlope)
      throw std::invalid_argument("model: gamma2 linkage requires a random slope");
    if (spline) spline->validate();
  }

  /// Rows N, i..xi of the candidate-model table.
  static ModelSpec table1_preset(const std::string& row, int p1, int p2,
                                 std::optional<SplineConfig> spline) {
    ModelSpec m;
    m.p1 = p1;
    m.p2 = p2;
    m.spline = std::move(spline);
    m.name = row;
    const auto set = [&](RandomStructure re, bool g1, bool g2, bool sp) {
      m.re = re;
      m.link_b0 = g1;
      m.link_b1 = g2;
      m.spatial = sp;
    };
    using RS = RandomStructure;
    if (row == "N") set(RS::None, false, false, false);
    else if (row == "i") set(RS::Intercept, false, false, false);
    else if (row == "ii") set(RS::Intercept, true, false, false);
    else if (row == "iii") set(RS::Intercept, true, false, true);
    else if (row == "iv") set(RS::None, false, false, true);
    else if (row == "v") set(RS::InterceptSlope, true, false, true);
    else if (row == "vi") set(RS::InterceptSlope, false, true, true);
    else if (row == "vii") set(RS::InterceptSlope, true, false, false);
    else if (row == "viii") set(RS::InterceptSlope, false, true, false);
    else if (row == "ix") set(RS::InterceptSlope, true, true, false);
    else if (row == "x") set(RS::InterceptSlope, false, false, true);
    else if (row == "xi") set(RS::InterceptSlope, true, true, true);
    else throw std::invalid_argument("unknown model preset '" + row + "'");
    return m;
  }

  /// Simulation-study models I..IV. I/II are the separate fits (no linkage),
  /// III/IV the joint fits; II/IV carry the spatial component.
  static ModelSpec study_preset(const std::string& id, int p1, int p2,
                                std::optional<SplineConfig> spline) {
    ModelSpec m;
    m.p1 = p1;
    m.p2 = p2;
    m.spline = std::move(spline);
    m.re = RandomStructure::InterceptSlope;
    m.name = id;
    if (id == "I") { /* defaults */ }
    else if (id == "II") m.spatial = true;
    else if (id == "III") m.link_b0 = m.link_b1 = true;
    else if (id == "IV") { m.link_b0 = m.link_b1 = true; m.spatial = true; }
    else throw std::invalid_argument("unknown study model '" + id + "'");
    return m;
  }
};

/// Index map of the concatenated latent vector:
/// beta, spline coefficients, per-subject random effects, spatial effects,
/// survival fixed effects; in that order.
struct LatentLayout {
  int n_beta = 0;    // longitudinal fixed effects (incl. intercept if present)
  int n_spline = 0;
  int n_subjects = 0;
  int q = 0;
  int n_nu = 0;
  int n_alpha = 0;   // survival intercept + covariates

  int beta_off() const { return 0; }
  int spline_off() const { return n_beta; }
  int b_off(int subject) const { return n_beta + n_spline + q * subject; }
  int nu_off() const { return n_beta + n_spline + q * n_subjects; }
  int alpha_off() const { return nu_off() + n_nu; }
  int total() const { return alpha_off() + n_alpha; }
  int n_fixed() const { return n_beta + n_spline + n_alpha; }
};

inline LatentLayout build_latent_layout(const ModelSpec& spec, const JointDataset& data) {
  spec.validate();
  if (spec.include_longitudinal && data.p1() != spec.p1)
    throw std::invalid_argument("model/data mismatch: longitudinal covariate count");
  if (spec.include_survival && !data.survival.empty() && data.p2() != spec.p2)
    throw std::invalid_argument("model/data mismatch: survival covariate count");
  LatentLayout l;
  l.n_beta = spec.include_longitudinal ? spec.p1 + (spec.long_intercept() ? 1 : 0) : 0;
  l.n_spline = spec.include_longitudinal ? spec.spline_dim() : 0;
  l.n_subjects = data.n_subjects();
  l.q = spec.q();
  l.n_nu = spec.spatial ? data.graph.K : 0;
  l.n_alpha = spec.include_survival ? 1 + spec.p2 : 0;
  return l;
}

/// Hyperparameters on natural scales. The transformed vector used by the
/// optimizer holds logs of precisions/shape/tau, Fisher-z of rho, logit of
/// zeta, and the gammas untransformed.
struct HyperParameters {
  double sigma2 = 1.0;   // observation variance
  double shape = 1.0;    // Weibull shape
  double d11_inv = 1.0;  // 1 / var(b0)
  double d22_inv = 1.0;  // 1 / var(b1)
  double rho = 0.0;      // corr(b0, b1)
  double tau = 1.0;      // spatial precision scale
  double zeta = 0.95;
  double gamma1 = 0.0;
  double gamma2 = 0.0;

  /// Random-effect covariance D (q x q) and its inverse.
  Eigen::MatrixXd d_matrix(int q) const {
    Eigen::MatrixXd d(q, q);
    if (q >= 1) d(0, 0) = 1.0 / d11_inv;
    if (q == 2) {
      d(1, 1) = 1.0 / d22_inv;
      d(0, 1) = d(1, 0) = rho / std::sqrt(d11_inv * d22_inv);
    }
    return d;
  }
  Eigen::MatrixXd d_precision(int q) const {
    return d_matrix(q).inverse();
  }
};

inline std::vector<std::string> hyper_names(const ModelSpec& spec) {
  std::vector<std::string> n;
  if (spec.include_longitudinal) n.push_back("log_prec_obs");
  if (spec.include_survival) n.push_back("log_shape");
  if (spec.q() >= 1) n.push_back("log_d11_inv");
  if (spec.q() == 2) {
    n.push_back("log_d22_inv");
    n.push_back("z_rho");
  }
  if (spec.spatial) {
    n.push_back("log_tau");
    if (spec.estimate_zeta) n.push_back("logit_zeta");
  }
  if (spec.link_b0 && spec.include_survival) n.push_back("gamma1");
  if (spec.link_b1 && spec.include_survival) n.push_back("gamma2");
  return n;
}

inline Eigen::VectorXd hyper_to_vector(const ModelSpec& spec, const HyperParameters& h) {
  std::vector<double> v;
  if (spec.include_longitudinal) v.push_back(-std::log(h.sigma2));
  if (spec.include_survival) v.push_back(std::log(h.shape));
  if (spec.q() >= 1) v.push_back(std::log(h.d11_inv));
  if (spec.q() == 2) {
    v.push_back(std::log(h.d22_inv));
    v.push_back(std::atanh(h.rho));
  }
  if (spec.spatial) {
    v.push_back(std::log(h.tau));
    if (spec.estimate_zeta) v.push_back(std::log(h.zeta / (1.0 - h.zeta)));
  }
  if (spec.link_b0 && spec.include_survival) v.push_back(h.gamma1);
  if (spec.link_b1 && spec.include_survival) v.push_back(h.gamma2);
  return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

inline HyperParameters hyper_from_vector(const ModelSpec& spec, const Eigen::VectorXd& t) {
  HyperParameters h;
  h.zeta = spec.zeta;
  int i = 0;
  if (spec.include_longitudinal) h.sigma2 = std::exp(-t[i++]);
  if (spec.include_survival) h.shape = std::exp(t[i++]);
  if (spec.q() >= 1) h.d11_inv = std::exp(t[i++]);
  if (spec.q() == 2) {
    h.d22_inv = std::exp(t[i++]);
    h.rho = std::tanh(t[i++]);
  }
  if (spec.spatial) {
    h.tau = std::exp(t[i++]);
    if (spec.estimate_zeta) {
      const double z = t[i++];
      h.zeta = 1.0 / (1.0 + std::exp(-z));
    }
  }
  if (spec.link_b0 && spec.include_survival) h.gamma1 = t[i++];
  if (spec.link_b1 && spec.include_survival) h.gamma2 = t[i++];
  if (i != t.size()) throw std::invalid_argument("hyper vector length mismatch");
  return h;
}

/// Weakly informative defaults: Gamma(1, 5e-5) on precisions on their
/// natural scale, N(0,100) on log shape, N(0,10) on gammas, N(0,3) on
/// Fisher-z(rho) and logit(zeta). Evaluated on the transformed scale
/// (Jacobians included).
inline double log_hyper_prior(const ModelSpec& spec, const Eigen::VectorXd& t) {
  const double gamma_rate = 5e-5;
  const auto log_gamma1_prior = [&](double log_x) {
    // Gamma(1, b) density in x, plus the log-scale Jacobian x.
    return std::log(gamma_rate) - gamma_rate * std::exp(log_x) + log_x;
  };
  double lp = 0.0;
  int i = 0;
  if (spec.include_longitudinal) lp += log_gamma1_prior(t[i++]);
  if (spec.include_survival) {
    lp += -t[i] * t[i] / 200.0;
    ++i;
  }
  if (spec.q() >= 1) lp += log_gamma1_prior(t[i++]);
  if (spec.q() == 2) {
    lp += log_gamma1_prior(t[i++]);
    lp += -t[i] * t[i] / 6.0;
    ++i;
  }
  if (spec.spatial) {
    lp += log_gamma1_prior(t[i++]);
    if (spec.estimate_zeta) {
      lp += -t[i] * t[i] / 6.0;
      ++i;
    }
  }
  if (spec.link_b0 && spec.include_survival) {
    lp += -t[i] * t[i] / 20.0;
    ++i;
  }
  if (spec.link_b1 && spec.include_survival) {
    lp += -t[i] * t[i] / 20.0;
    ++i;
  }
  return lp;
}

/// Log-hazard linear predictors are clamped here before exponentiation.
constexpr double kEtaClamp = 35.0;

/// Bound evaluation of one model on one dataset: caches the longitudinal
/// design matrix and the per-subject survival design so that likelihood,
/// gradient, and curvature evaluations are cheap.
class JointModel {
 public:
  JointModel(ModelSpec spec, const JointDataset& data)
      : spec_(std::move(spec)), data_(&data), layout_(build_latent_layout(spec_, data)) {
    build_designs();
  }

  const ModelSpec& spec() const { return spec_; }
  const JointDataset& data() const { return *data_; }
  const LatentLayout& layout() const { return layout_; }
  const Eigen::SparseMatrix<double>& long_design() const { return ay_; }
  const Eigen::VectorXd& y() const { return yvec_; }

  /// (eta_y per longitudinal record, eta_t per subject).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> linear_predictors(
      const Eigen::VectorXd& lambda, const HyperParameters& h) const {
    Eigen::VectorXd etay = spec_.include_longitudinal
                               ? Eigen::VectorXd(ay_ * lambda)
                               : Eigen::VectorXd();
    Eigen::VectorXd etat;
    if (spec_.include_survival) {
      const int n = layout_.n_subjects;
      etat.resize(n);
      for (int i = 0; i < n; ++i) etat[i] = eta_t_subject(i, lambda, h);
    }
    return {std::move(etay), std::move(etat)};
  }

  /// Log joint likelihood; optionally its gradient in lambda and the
  /// per-unit negative curvatures (survival weights) needed for the
  /// Gaussian approximation. `clamp_events` counts log-hazard clamps.
  double joint_loglik(const Eigen::VectorXd& lambda, const HyperParameters& h,
                      Eigen::VectorXd* grad = nullptr,
                      Eigen::VectorXd* surv_weight = nullptr,
                      int* clamp_events = nullptr) const {
    double value = 0.0;
    if (grad) grad->setZero(layout_.total());
    if (surv_weight) surv_weight->setZero(layout_.n_subjects);

    if (spec_.include_longitudinal) {
      const Eigen::VectorXd etay = ay_ * lambda;
      const Eigen::VectorXd resid = yvec_ - etay;
      const double n = static_cast<double>(yvec_.size());
      value += -0.5 * n * std::log(2.0 * M_PI * h.sigma2) -
               0.5 * resid.squaredNorm() / h.sigma2;
      if (grad) *grad += ay_.transpose() * (resid / h.sigma2);
    }

    if (spec_.include_survival) {
      const double log_shape = std::log(h.shape);
      for (int i = 0; i < layout_.n_subjects; ++i) {
        const auto& s = data_->survival[i];
        double eta = eta_t_subject(i, lambda, h);
        if (eta > kEtaClamp) {
          eta = kEtaClamp;
          if (clamp_events) ++*clamp_events;
        }
        const double logT = std::log(s.time);
        const double cumhaz = std::exp(eta + h.shape * logT);
        if (!std::isfinite(cumhaz))
          throw std::runtime_error("joint_loglik: non-finite cumulative hazard for subject " +
                                   s.subject);
        value += s.event * (log_shape + (h.shape - 1.0) * logT + eta) - cumhaz;
        if (grad) add_surv_grad(i, s.event - cumhaz, h, *grad);
        if (surv_weight) (*surv_weight)[i] = cumhaz;  // -d2/deta2
      }
    }
    return value;
  }

  /// Column indices and coefficients of eta_t for one subject, given gamma.
  void surv_design_row(int i, const HyperParameters& h, std::vector<int>& idx,
                       std::vector<double>& val) const {
    idx.clear();
    val.clear();
    const auto& s = data_->survival[i];
    idx.push_back(layout_.alpha_off());
    val.push_back(1.0);
    for (int j = 0; j < spec_.p2; ++j) {
      idx.push_back(layout_.alpha_off() + 1 + j);
      val.push_back(s.x[j]);
    }
    if (spec_.link_b0 && layout_.q >= 1) {
      idx.push_back(layout_.b_off(i));
      val.push_back(h.gamma1);
    }
    if (spec_.link_b1 && layout_.q == 2) {
      idx.push_back(layout_.b_off(i) + 1);
      val.push_back(h.gamma2);
    }
    if (spec_.spatial) {
      idx.push_back(layout_.nu_off() + s.region);
      val.push_back(1.0);
    }
  }

  /// Prior precision Q(theta) as triplets, plus its log-determinant.
  /// Blocks: vague diagonal on fixed effects and spline, D^-1 replicates on
  /// the random effects, the proper-Besag precision on nu.
  double prior_precision(const HyperParameters& h,
                         std::vector<Eigen::Triplet<double>>& trip) const {
    double logdet = 0.0;
    const double efix = spec_.fixed_effect_precision;
    for (int j = 0; j < layout_.n_beta + layout_.n_spline; ++j) {
      trip.emplace_back(j, j, efix);
      logdet += std::log(efix);
    }
    for (int j = 0; j < layout_.n_alpha; ++j) {
      const int c = layout_.alpha_off() + j;
      trip.emplace_back(c, c, efix);
      logdet += std::log(efix);
    }
    const int q = layout_.q;
    if (q > 0) {
      const Eigen::MatrixXd dinv = h.d_precision(q);
      Eigen::LLT<Eigen::MatrixXd> llt(dinv);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("prior_precision: random-effect precision not PD");
      double block_logdet = 0.0;
      for (int j = 0; j < q; ++j) block_logdet += 2.0 * std::log(llt.matrixL()(j, j));
      logdet += layout_.n_subjects * block_logdet;
      for (int i = 0; i < layout_.n_subjects; ++i)
        for (int a = 0; a < q; ++a)
          for (int b = 0; b < q; ++b)
            trip.emplace_back(layout_.b_off(i) + a, layout_.b_off(i) + b, dinv(a, b));
    }
    if (spec_.spatial) {
      CarStructure car{data_->graph, h.tau, h.zeta};
      Eigen::SparseMatrix<double> qnu = proper_besag_precision(car);
      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(qnu);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("prior_precision: CAR precision factorization failed");
      logdet += 2.0 * llt.matrixL().toDense().diagonal().array().log().sum();
      const int off = layout_.nu_off();
      for (int k = 0; k < qnu.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(qnu, k); it; ++it)
          trip.emplace_back(off + static_cast<int>(it.row()), off + static_cast<int>(it.col()),
                            it.value());
    }
    return logdet;
  }

  /// Gram matrix of the longitudinal design (constant across theta).
  const Eigen::SparseMatrix<double>& long_gram() const { return gram_; }

 private:
  double eta_t_subject(int i, const Eigen::VectorXd& lambda, const HyperParameters& h) const {
    const auto& s = data_->survival[i];
    double eta = lambda[layout_.alpha_off()];
    for (int j = 0; j < spec_.p2; ++j) eta += s.x[j] * lambda[layout_.alpha_off() + 1 + j];
    if (spec_.link_b0 && layout_.q >= 1) eta += h.gamma1 * lambda[layout_.b_off(i)];
    if (spec_.link_b1 && layout_.q == 2) eta += h.gamma2 * lambda[layout_.b_off(i) + 1];
    if (spec_.spatial) eta += lambda[layout_.nu_off() + s.region];
    return eta;
  }

  void add_surv_grad(int i, double g, const HyperParameters& h, Eigen::VectorXd& grad) const {
    const auto& s = data_->survival[i];
    grad[layout_.alpha_off()] += g;
    for (int j = 0; j < spec_.p2; ++j) grad[layout_.alpha_off() + 1 + j] += g * s.x[j];
    if (spec_.link_b0 && layout_.q >= 1) grad[layout_.b_off(i)] += g * h.gamma1;
    if (spec_.link_b1 && layout_.q == 2) grad[layout_.b_off(i) + 1] += g * h.gamma2;
    if (spec_.spatial) grad[layout_.nu_off() + s.region] += g;
  }

  void build_designs() {
    if (!spec_.include_longitudinal) return;
    const auto& recs = data_->longitudinal;
    yvec_.resize(recs.size());
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t r = 0; r < recs.size(); ++r) {
      const auto& rec = recs[r];
      yvec_[r] = rec.y;
      const int subj = data_->subject_index.at(rec.subject);
      int col = 0;
      if (spec_.long_intercept()) trip.emplace_back(r, col++, 1.0);
      for (int j = 0; j < spec_.p1; ++j) trip.emplace_back(r, col++, rec.x[j]);
      if (spec_.spline) {
        const Eigen::VectorXd b = evaluate_basis_at(*spec_.spline, rec.time);
        for (int j = 0; j < b.size(); ++j)
          if (b[j] != 0.0) trip.emplace_back(r, layout_.spline_off() + j, b[j]);
      }
      if (layout_.q >= 1) trip.emplace_back(r, layout_.b_off(subj), 1.0);
      if (layout_.q == 2) trip.emplace_back(r, layout_.b_off(subj) + 1, rec.time);
    }
    ay_.resize(recs.size(), layout_.total());
    ay_.setFromTriplets(trip.begin(), trip.end());
    gram_ = ay_.transpose() * ay_;
  }

  ModelSpec spec_;
  const JointDataset* data_;
  LatentLayout layout_;
  Eigen::SparseMatrix<double> ay_;    // longitudinal design, rows = records
  Eigen::SparseMatrix<double> gram_;  // Ay' Ay
  Eigen::VectorXd yvec_;
};

}  // namespace sjlgm
