#include <doctest.h>

#include <random>

#include "sjlgm/spline.hpp"

using namespace sjlgm;

namespace {
SplineConfig cfg(int degree, std::vector<double> knots, double lo = 0, double hi = 1) {
  SplineConfig c;
  c.degree = degree;
  c.interior_knots = std::move(knots);
  c.lo = lo;
  c.hi = hi;
  return c;
}
}  // namespace

TEST_CASE("basis dimension is interior knots + degree + 1") {
  CHECK(basis_dimension(cfg(3, {0.5})) == 5);
  CHECK(basis_dimension(cfg(0, {0.5})) == 2);
  CHECK(basis_dimension(cfg(3, {0.25, 0.5, 0.75})) == 7);
}

TEST_CASE("degree-0 basis is the knot-interval indicator") {
  const Eigen::VectorXd b = evaluate_basis_at(cfg(0, {0.5}), 0.2);
  REQUIRE(b.size() == 2);
  CHECK(b[0] == doctest::Approx(1.0));
  CHECK(b[1] == doctest::Approx(0.0));
}

TEST_CASE("degree-1 hat functions at the midpoint of the first span") {
  const Eigen::VectorXd b = evaluate_basis_at(cfg(1, {0.5}), 0.25);
  REQUIRE(b.size() == 3);
  CHECK(b[0] == doctest::Approx(0.5));
  CHECK(b[1] == doctest::Approx(0.5));
  CHECK(b[2] == doctest::Approx(0.0));
}

TEST_CASE("partition of unity on random configurations") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int degree = static_cast<int>(rng() % 4);
    const int l = static_cast<int>(rng() % 6);
    std::vector<double> knots(l);
    for (auto& k : knots) k = 0.05 + 0.9 * u(rng);
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    const SplineConfig c = cfg(degree, knots);
    for (int i = 0; i < 10; ++i) {
      const Eigen::VectorXd b = evaluate_basis_at(c, u(rng));
      CHECK(std::abs(b.sum() - 1.0) < 1e-12);
      CHECK((b.array() >= -1e-15).all());
    }
  }
}

TEST_CASE("local support: each basis vanishes outside its knot span") {
  const SplineConfig c = cfg(3, {0.2, 0.4, 0.6, 0.8});
  const std::vector<double> kv = full_knot_vector(c);
  const int dim = basis_dimension(c);
  for (int j = 0; j < dim; ++j) {
    for (double t = 0.005; t < 1.0; t += 0.01) {
      if (t < kv[j] || t > kv[j + c.degree + 1]) {
        const Eigen::VectorXd b = evaluate_basis_at(c, t);
        CHECK(std::abs(b[j]) < 1e-14);
      }
    }
  }
}

TEST_CASE("linear functions are reproduced exactly for degree >= 1") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int degree = 1; degree <= 3; ++degree) {
    const SplineConfig c = cfg(degree, {0.3, 0.7});
    std::vector<double> times;
    for (int i = 0; i <= 40; ++i) times.push_back(i / 40.0);
    int clamped = 0;
    const Eigen::MatrixXd B = evaluate_basis(c, times, &clamped);
    Eigen::VectorXd f(B.rows());
    for (int i = 0; i < f.size(); ++i) f[i] = 2.0 + 3.0 * times[i];
    const Eigen::VectorXd coef = B.colPivHouseholderQr().solve(f);
    CHECK((B * coef - f).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("out-of-range evaluation clamps to the boundary and counts") {
  const SplineConfig c = cfg(2, {0.5});
  int clamped = 0;
  const Eigen::VectorXd inside = evaluate_basis_at(c, 1.0, &clamped);
  CHECK(clamped == 0);
  const Eigen::VectorXd outside = evaluate_basis_at(c, 1.7, &clamped);
  CHECK(clamped == 1);
  CHECK((inside - outside).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("default knots sit at equally spaced quantiles") {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(0.05 * i);

  CHECK(default_knots(grid, 0).empty());

  const auto median = default_knots(grid, 1);
  REQUIRE(median.size() == 1);
  CHECK(median[0] == doctest::Approx(0.5).epsilon(1e-9));

  const auto thirds = default_knots(grid, 2);
  REQUIRE(thirds.size() == 2);
  CHECK(thirds[0] == doctest::Approx(1.0 / 3.0).epsilon(0.06));
  CHECK(thirds[1] == doctest::Approx(2.0 / 3.0).epsilon(0.06));

  CHECK_THROWS(default_knots({0.0, 1.0}, 3));
}

TEST_CASE("invalid configurations are rejected") {
  CHECK_THROWS(cfg(3, {0.5, 0.4}).validate());   // not increasing
  CHECK_THROWS(cfg(3, {0.0}).validate());        // knot on the boundary
  CHECK_THROWS(cfg(-1, {}).validate());
  SplineConfig bad = cfg(2, {});
  bad.hi = bad.lo;
  CHECK_THROWS(bad.validate());
}
