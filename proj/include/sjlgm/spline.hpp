#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace sjlgm {

/// Clamped B-spline basis on a bounded interval. Boundary knots are
/// repeated degree+1 times, interior knots are strictly increasing, and
/// the basis dimension is n_interior + degree + 1.
struct SplineConfig {
  int degree = 3;
  std::vector<double> interior_knots;  // strictly increasing, inside (lo, hi)
  double lo = 0.0;
  double hi = 1.0;

  void validate() const {
    if (degree < 0) throw std::invalid_argument("spline degree must be >= 0");
    if (!(lo < hi)) throw std::invalid_argument("spline boundary interval is empty");
    double prev = lo;
    for (double k : interior_knots) {
      if (!(k > prev) || !(k < hi))
        throw std::invalid_argument("interior knots must be strictly increasing inside the boundary");
      prev = k;
    }
  }
};

inline int basis_dimension(const SplineConfig& c) {
  return static_cast<int>(c.interior_knots.size()) + c.degree + 1;
}

/// Full (clamped) knot vector: lo repeated degree+1 times, interior knots,
/// hi repeated degree+1 times.
inline std::vector<double> full_knot_vector(const SplineConfig& c) {
  std::vector<double> t;
  t.reserve(c.interior_knots.size() + 2 * (c.degree + 1));
  for (int i = 0; i <= c.degree; ++i) t.push_back(c.lo);
  t.insert(t.end(), c.interior_knots.begin(), c.interior_knots.end());
  for (int i = 0; i <= c.degree; ++i) t.push_back(c.hi);
  return t;
}

/// Cox-de Boor evaluation of all basis functions at one point.
/// Out-of-range points are clamped to the boundary; `clamped` is bumped
/// for each such point when non-null.
inline Eigen::VectorXd evaluate_basis_at(const SplineConfig& c, double s,
                                         int* clamped = nullptr) {
  const int m = basis_dimension(c);
  const std::vector<double> t = full_knot_vector(c);
  if (s < c.lo || s > c.hi) {
    if (clamped) ++*clamped;
    s = std::clamp(s, c.lo, c.hi);
  }

  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  // Degree-0 seed: indicator of the half-open knot span, right-closed at hi.
  const int nspans = m + c.degree;  // number of degree-0 functions
  for (int j = 0; j < nspans; ++j) {
    const bool last = t[j] < c.hi && t[j + 1] >= c.hi;
    if ((s >= t[j] && s < t[j + 1]) || (last && s >= c.hi)) {
      if (c.degree == 0) {
        b[j] = 1.0;
        return b;
      }
      // Triangular recursion over increasing degree, only the active window.
      std::vector<double> w(c.degree + 1, 0.0);
      w[c.degree] = 1.0;  // local index of span j at offset degree
      for (int d = 1; d <= c.degree; ++d) {
        for (int r = c.degree - d; r <= c.degree; ++r) {
          const int i = j - (c.degree - r);  // global basis index
          double v = 0.0;
          const double dl = t[i + d] - t[i];
          if (dl > 0.0 && w[r] != 0.0) v += (s - t[i]) * w[r] / dl;
          const double dr = t[i + d + 1] - t[i + 1];
          if (r + 1 <= c.degree && dr > 0.0 && w[r + 1] != 0.0)
            v += (t[i + d + 1] - s) * w[r + 1] / dr;
          w[r] = v;
        }
      }
      for (int r = 0; r <= c.degree; ++r) {
        const int i = j - (c.degree - r);
        if (i >= 0 && i < m) b[i] = w[r];
      }
      return b;
    }
  }
  return b;  // unreachable for s in [lo, hi]
}

/// Basis matrix, one row per evaluation point.
inline Eigen::MatrixXd evaluate_basis(const SplineConfig& c,
                                      const std::vector<double>& times,
                                      int* clamped = nullptr) {
  if (times.empty()) throw std::invalid_argument("evaluate_basis: empty time vector");
  c.validate();
  Eigen::MatrixXd B(times.size(), basis_dimension(c));
  for (size_t i = 0; i < times.size(); ++i)
    B.row(i) = evaluate_basis_at(c, times[i], clamped).transpose();
  return B;
}

/// Interior knots at equally spaced quantiles j/(l+1) of the observed times.
inline std::vector<double> default_knots(std::vector<double> times, int l) {
  if (l < 0) throw std::invalid_argument("default_knots: l must be >= 0");
  if (l == 0) return {};
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const int n = static_cast<int>(times.size());
  if (n < l + 2) throw std::invalid_argument("default_knots: too few distinct times");
  std::vector<double> knots(l);
  for (int j = 1; j <= l; ++j) {
    // Type-7 quantile (linear interpolation of order statistics).
    const double p = static_cast<double>(j) / (l + 1);
    const double h = p * (n - 1);
    const int k = static_cast<int>(std::floor(h));
    const double frac = h - k;
    knots[j - 1] = (k + 1 < n) ? times[k] * (1 - frac) + times[k + 1] * frac : times[k];
  }
  return knots;
}

}  // namespace sjlgm
