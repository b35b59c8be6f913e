#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "pgm/oracles.hpp"
#include "pgm/random.hpp"

using pgm::Composite;
using pgm::Matrix;
using pgm::ProxFriendly;
using pgm::Smooth;
using pgm::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

std::vector<double> normals(std::size_t n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  pgm::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = mean + sd * rng.normal();
  return v;
}

}  // namespace

TEST(Quadrature, SimpsonIsExactOnCubics) {
  const double v = pgm::simpson([](double x) { return x * x * x - 2.0 * x + 1.0; }, -1.0, 2.0, 4);
  EXPECT_NEAR(v, 3.75 - 3.0 + 3.0, 1e-13);
}

// Reference scores below were computed offline with 40-digit adaptive
// quadrature of the Gaussian convolution.
TEST(Quadrature, LaplaceTrueScore) {
  const Composite c(Smooth::half_square(1), ProxFriendly::l1(1, 1.0), 0.0);
  const double s = pgm::true_score_quadrature(pgm::density_of(c), 1.0, 0.5, 2.0);
  EXPECT_NEAR(s, -0.97765069717234286299, 1e-9);
}

TEST(Quadrature, TruncatedNormalTrueScore) {
  const Composite c(Smooth::half_square(1), ProxFriendly::interval(1, -1.0, 1.0), 10.0);
  const double s = pgm::true_score_quadrature(pgm::density_of(c), 1.0, 0.1, 0.8);
  EXPECT_NEAR(s, -4.0244636276452110128, 1e-9);
}

TEST(Quadrature, GaussianScoreClosedForm) {
  // pi0 = N(m, 1/(beta a)); p_t = N(mu m, mu^2 (1/(beta a) + lambda)).
  const double a = 2.0, bq = -1.0, beta = 3.0;
  const Composite c(Smooth::quadratic(Matrix::Constant(1, 1, a), vec({bq})), ProxFriendly::zero(1), beta);
  const double m = -bq / a;
  const double v0 = 1.0 / (beta * a);
  for (double mu : {1.0, 0.6}) {
    for (double lambda : {1e-3, 0.1, 5.0}) {
      for (double x : {-2.0, 0.3, 4.0}) {
        const double expect = -(x - mu * m) / (mu * mu * (v0 + lambda));
        EXPECT_NEAR(pgm::true_score_quadrature(pgm::density_of(c), mu, lambda, x), expect,
                    1e-8 * (1.0 + std::abs(expect)));
      }
    }
  }
}

TEST(Quadrature, TwoDimensionalGaussianScore) {
  Matrix A(2, 2);
  A << 2.0, 0.5, 0.5, 1.0;
  const Vector b = vec({0.2, -0.3});
  const Composite c(Smooth::quadratic(A, b), ProxFriendly::zero(2), 1.5);
  const Matrix cov0 = (1.5 * A).inverse();
  const Vector mean0 = -A.ldlt().solve(b);
  const double mu = 0.8, lambda = 0.3;
  const Vector xt = vec({0.5, 1.0});
  const Matrix cov = mu * mu * (cov0 + lambda * Matrix::Identity(2, 2));
  const Vector expect = -cov.ldlt().solve(xt - mu * mean0);
  const Vector got = pgm::true_score(c, mu, lambda, xt);
  EXPECT_LT((got - expect).norm(), 1e-6);
}

TEST(Quadrature, PosteriorModeIsClampForFlatPrior) {
  const Composite c(Smooth::quadratic(Matrix::Zero(1, 1), vec({0.0})),
                    ProxFriendly::interval(1, -1.0, 1.0), 0.0);
  const auto d = pgm::density_of(c);
  for (double x : {-2.0, -0.4, 0.7, 1.3}) {
    const auto pm = pgm::posterior_moments_quadrature(d, 1.0, 0.2, x);
    EXPECT_NEAR(pm.mode, std::clamp(x, -1.0, 1.0), 1e-6);
    EXPECT_GE(pm.mean, -1.0);
    EXPECT_LE(pm.mean, 1.0);
  }
}

TEST(Quadrature, RejectsDegenerateInput) {
  const Composite c(Smooth::half_square(1), ProxFriendly::zero(1), 1.0);
  EXPECT_THROW(pgm::true_score_quadrature(pgm::density_of(c), 1.0, 0.1, NAN), pgm::OracleError);
  EXPECT_THROW(pgm::simpson([](double x) { return x; }, 1.0, 0.0, 8), pgm::OracleError);
  const Composite c3(Smooth::half_square(3), ProxFriendly::zero(3), 1.0);
  EXPECT_THROW(pgm::true_score(c3, 1.0, 0.1, Vector::Zero(3)), pgm::ShapeError);
}

TEST(W1, SortedSampleFormula) {
  EXPECT_DOUBLE_EQ(pgm::empirical_w1({0.0, 1.0, 2.0}, {0.5, 1.5, 2.5}), 0.5);
  EXPECT_DOUBLE_EQ(pgm::empirical_w1({3.0, 1.0}, {1.0, 3.0}), 0.0);
  // Unequal sizes: W1 between {0} and {0, 1} is 1/2.
  EXPECT_DOUBLE_EQ(pgm::empirical_w1({0.0}, {0.0, 1.0}), 0.5);
  EXPECT_THROW(pgm::empirical_w1(std::vector<double>{}, {1.0}), pgm::OracleError);
}

TEST(W1, MetricAxioms) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = normals(200, seed);
    const auto b = normals(150, seed + 100, 0.3, 1.2);
    const auto c = normals(250, seed + 200, -0.2, 0.7);
    const double ab = pgm::empirical_w1(a, b);
    EXPECT_DOUBLE_EQ(pgm::empirical_w1(a, a), 0.0);
    EXPECT_NEAR(ab, pgm::empirical_w1(b, a), 1e-14);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, pgm::empirical_w1(a, c) + pgm::empirical_w1(c, b) + 1e-12);
  }
}

TEST(W1, ShiftGivesTranslationDistance) {
  auto a = normals(500, 3);
  auto b = a;
  for (double& x : b) x += 0.7;
  EXPECT_NEAR(pgm::empirical_w1(a, b), 0.7, 1e-12);
}

TEST(W1, AgainstQuantileFunction) {
  const auto q = pgm::normal_quantile(0.0, 1.0);
  EXPECT_NEAR(q(0.975), 1.959963984540054, 1e-12);
  const double w = pgm::empirical_w1(normals(20000, 5), q);
  EXPECT_LT(w, 0.03);
  const double shifted = pgm::empirical_w1(normals(20000, 5, 1.0), q);
  EXPECT_NEAR(shifted, 1.0, 0.03);
}

TEST(W1, QuantileFromDensityMatchesUniform) {
  const Composite c(Smooth::quadratic(Matrix::Zero(1, 1), vec({0.0})),
                    ProxFriendly::interval(1, -1.0, 1.0), 0.0);
  const auto q = pgm::quantile_from_density(pgm::density_of(c), -5.0, 5.0);
  for (double u : {0.0, 0.1, 0.5, 0.93, 1.0}) EXPECT_NEAR(q(u), 2.0 * u - 1.0, 1e-9);
}

TEST(ConstrainedMinimizer, ProjectionForIsotropicQuadratic) {
  // min 1/2 |x - c|^2 over the unit ball is the projection of c.
  const Vector ctr = vec({2.0, -1.0});
  const auto f = Smooth::quadratic(Matrix::Identity(2, 2), -ctr);
  const Vector x = pgm::constrained_minimizer(f, ProxFriendly::ball(2, 1.0));
  EXPECT_LT((x - ctr.normalized()).norm(), 1e-9);
  const Vector inside = pgm::constrained_minimizer(
      Smooth::quadratic(Matrix::Identity(2, 2), -0.5 * ctr), ProxFriendly::ball(2, 2.0));
  EXPECT_LT((inside - 0.5 * ctr).norm(), 1e-9);
}

TEST(ConstrainedMinimizer, SatisfiesFixedPointCondition) {
  pgm::Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const Matrix Q = rng.normal_vector(4).reshaped(2, 2);
    const Matrix A = Q * Q.transpose() + 0.2 * Matrix::Identity(2, 2);
    const Vector b = 2.0 * rng.normal_vector(2);
    const auto f = Smooth::quadratic(A, b);
    const auto g = ProxFriendly::ball(2, 1.0);
    const Vector x = pgm::constrained_minimizer(f, g);
    const Vector step = g.prox(x - f.grad(x) / f.smoothness(), 1.0);
    EXPECT_LT((step - x).norm(), 1e-8);
  }
}

TEST(Metrics, FeasibilityAndGap) {
  const Composite c(Smooth::half_square(1), ProxFriendly::interval(1, -1.0, 1.0), 1.0);
  Matrix s(4, 1);
  s << 0.0, 1.0, 1.0 + 1e-10, 2.0;
  const auto m = pgm::metrics(s, c, vec({0.0}));
  EXPECT_DOUBLE_EQ(m.feasibility, 0.75);
  ASSERT_TRUE(m.optimality_gap.has_value());
  EXPECT_NEAR(*m.optimality_gap, (0.0 + 0.5 + 0.5 * std::pow(1.0 + 1e-10, 2) + 2.0) / 4.0, 1e-12);
}

TEST(Bounds, ScoreGapFormula) {
  EXPECT_DOUBLE_EQ(pgm::score_gap_bound(2, 10.0, 1.0, 1.0, 0.5), std::sqrt(4.0 / 3.0));
  EXPECT_DOUBLE_EQ(pgm::score_gap_bound(1, 0.0, 1.0, 0.5, 2.0), std::sqrt(1.0) / 0.5);
  EXPECT_TRUE(pgm::splitting_bound_applies(4.0, 1.0, 1.0 / 16.0));
  EXPECT_FALSE(pgm::splitting_bound_applies(4.0, 1.0, 1.0 / 15.0));
  EXPECT_FALSE(pgm::splitting_bound_applies(1.0, 1.0, 1e-9));
  EXPECT_DOUBLE_EQ(pgm::splitting_bound(4.0, 2.0, 1.0), 1.0);
}

TEST(Bounds, SweepOnTruncatedGaussianPasses) {
  const Composite c(Smooth::half_square(1), ProxFriendly::interval(1, -1.0, 1.0), 10.0);
  const auto s = pgm::Schedule::ve_exp_linear(10.0, -8.0, 1.0, 10);
  pgm::BoundSweep sweep;
  sweep.times = {0.0, 0.3, 0.6, 0.9};
  for (double x : {-1.5, -0.5, 0.0, 0.9, 2.0}) sweep.points.push_back(vec({x}));
  const auto rep = pgm::bound_checks(c, s, sweep);
  EXPECT_TRUE(rep.passed());
  EXPECT_GT(rep.checks, sweep.times.size() * sweep.points.size() - 1);
  for (const auto& p : rep.points) EXPECT_LE(p.gap_exact, p.bound_gap);
}

TEST(Bounds, NotesForVacuousCases) {
  const Composite c(Smooth::quadratic(Matrix::Zero(1, 1), vec({0.0})), ProxFriendly::l1(1, 1.0), 1.0);
  const auto s = pgm::Schedule::ve_exp_linear(10.0, -8.0, 1.0, 10);
  pgm::BoundSweep sweep;
  sweep.times = {0.5};
  sweep.points = {vec({0.4})};
  const auto rep = pgm::bound_checks(c, s, sweep);
  EXPECT_EQ(rep.notes.size(), 3u);
  EXPECT_FALSE(rep.points.front().bound_constant.has_value());
  EXPECT_TRUE(rep.passed());
}
