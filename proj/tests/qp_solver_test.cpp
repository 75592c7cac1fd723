#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles/qp_oracle.hpp"
#include "posefuse/qp_solver.hpp"

using namespace posefuse;

namespace {

QpProblem box_1d(double target, double lo, double hi) {
  auto p = QpProblem::unconstrained(1);
  p.H(0, 0) = 2.0;  // (x - target)^2 up to a constant
  p.g[0] = -2.0 * target;
  p.lb[0] = lo;
  p.ub[0] = hi;
  return p;
}

}  // namespace

TEST(QpSolver, UnconstrainedIdentity) {
  auto s = solve(QpProblem::unconstrained(4));
  EXPECT_EQ(s.status, QpStatus::Optimal);
  EXPECT_EQ(s.x, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(s.objective, 0.0);
}

TEST(QpSolver, ActiveUpperBound) {
  auto s = solve(box_1d(3.0, 0.0, 2.0));
  EXPECT_EQ(s.status, QpStatus::Optimal);
  EXPECT_EQ(s.x[0], 2.0);
  ASSERT_EQ(s.active_bounds.size(), 1u);
  EXPECT_EQ(s.active_bounds[0], 1);
}

TEST(QpSolver, ActiveLowerBound) {
  auto s = solve(box_1d(-3.0, -1.0, 2.0));
  EXPECT_EQ(s.x[0], -1.0);
}

TEST(QpSolver, EqualityOnly) {
  // min x^2 + y^2  s.t. x + y = 2  ->  (1, 1)
  auto p = QpProblem::unconstrained(2);
  p.A_eq.resize(1, 2);
  p.A_eq << 1, 1;
  p.b_eq.resize(1);
  p.b_eq << 2;
  auto s = solve(p);
  EXPECT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.x[0], 1.0, 1e-12);
  EXPECT_NEAR(s.x[1], 1.0, 1e-12);
}

TEST(QpSolver, EqualityAndBound) {
  // min x^2 + y^2  s.t. x + y = 2, x <= 0.5  ->  (0.5, 1.5)
  auto p = QpProblem::unconstrained(2);
  p.A_eq.resize(1, 2);
  p.A_eq << 1, 1;
  p.b_eq.resize(1);
  p.b_eq << 2;
  p.ub[0] = 0.5;
  auto s = solve(p);
  EXPECT_EQ(s.status, QpStatus::Optimal);
  EXPECT_EQ(s.x[0], 0.5);
  EXPECT_NEAR(s.x[1], 1.5, 1e-12);
}

TEST(QpSolver, InfeasibleEqualityAgainstBounds) {
  auto p = QpProblem::unconstrained(2);
  p.A_eq.resize(1, 2);
  p.A_eq << 1, 1;
  p.b_eq.resize(1);
  p.b_eq << 5;
  p.lb.setConstant(-1);
  p.ub.setConstant(1);
  EXPECT_EQ(solve(p).status, QpStatus::Infeasible);
}

TEST(QpSolver, InconsistentEqualities) {
  auto p = QpProblem::unconstrained(2);
  p.A_eq.resize(2, 2);
  p.A_eq << 1, 1, 1, 1;
  p.b_eq.resize(2);
  p.b_eq << 1, 2;
  EXPECT_EQ(solve(p).status, QpStatus::Infeasible);
  p.b_eq << 1, 1;  // redundant but consistent
  auto s = solve(p);
  EXPECT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.x[0], 0.5, 1e-12);
}

TEST(QpSolver, CrossedBoundsInfeasible) {
  EXPECT_EQ(solve(box_1d(0.0, 1.0, 0.0)).status, QpStatus::Infeasible);
}

TEST(QpSolver, RejectsBadInput) {
  auto p = QpProblem::unconstrained(3);
  p.g.resize(2);
  EXPECT_THROW(solve(p), DimensionError);
  p = QpProblem::unconstrained(2);
  p.H(0, 0) = -1.0;
  EXPECT_THROW(solve(p), std::invalid_argument);
  p = QpProblem::unconstrained(2);
  p.H(0, 1) = 0.5;
  EXPECT_THROW(solve(p), std::invalid_argument);
}

TEST(QpSolver, MaxIterationsFlagged) {
  std::mt19937_64 rng(1);
  auto p = oracle::random_problem(rng, 20, 0);
  p.g *= 50.0;  // push the unconstrained optimum far outside the box
  for (Eigen::Index j = 0; j < 20; ++j) {
    p.lb[j] = -0.1;
    p.ub[j] = 0.1;
  }
  QpOptions opts;
  opts.max_iter = 2;
  auto s = QpSolver(opts).solve(p);
  EXPECT_EQ(s.status, QpStatus::MaxIterations);
  EXPECT_LE(s.iterations, 2);
  EXPECT_TRUE(((s.x - p.lb).array() >= 0).all() && ((p.ub - s.x).array() >= 0).all());
}

TEST(QpSolver, MatchesOracleOnSmallRandomProblem) {
  std::mt19937_64 rng(8);
  auto p = oracle::random_problem(rng, 8, 3);
  auto s = solve(p);
  auto o = oracle::projected_gradient(p);
  ASSERT_EQ(s.status, QpStatus::Optimal);
  EXPECT_LT(o.eq_residual, 1e-9);
  EXPECT_LT((s.x - o.x).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(QpSolver, RandomSuiteInvariants) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 30);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = dim(rng);
    const int m = std::uniform_int_distribution<int>(0, n / 3)(rng);
    auto p = oracle::random_problem(rng, n, m);
    std::vector<double> trace;
    QpOptions opts;
    opts.trace = [&](const QpTraceEvent& e) { trace.push_back(e.objective); };
    auto s = QpSolver(opts).solve(p);
    ASSERT_EQ(s.status, QpStatus::Optimal) << "trial " << trial;
    // Bounds hold exactly, equalities to tolerance.
    EXPECT_TRUE(((s.x - p.lb).array() >= 0).all() && ((p.ub - s.x).array() >= 0).all());
    if (m > 0) EXPECT_LT((p.A_eq * s.x - p.b_eq).lpNorm<Eigen::Infinity>(), 1e-8);
    // Dual method: objective never decreases along the iterations.
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_GE(trace[k], trace[k - 1] - 1e-9);
    // KKT: gradient components on free variables vanish after removing the
    // equality multipliers.
    Eigen::VectorXd grad = p.H * s.x + p.g;
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < n; ++j)
      if (s.x[j] > p.lb[j] + 1e-9 && s.x[j] < p.ub[j] - 1e-9) free.push_back(j);
    if (m > 0 && !free.empty()) {
      Eigen::MatrixXd Af(m, static_cast<Eigen::Index>(free.size()));
      Eigen::VectorXd gf(static_cast<Eigen::Index>(free.size()));
      for (std::size_t k = 0; k < free.size(); ++k) {
        Af.col(static_cast<Eigen::Index>(k)) = p.A_eq.col(free[k]);
        gf[static_cast<Eigen::Index>(k)] = grad[free[k]];
      }
      lambda = Af.transpose().completeOrthogonalDecomposition().solve(-gf);
    }
    Eigen::VectorXd reduced = grad + (m > 0 ? Eigen::VectorXd(p.A_eq.transpose() * lambda) : Eigen::VectorXd::Zero(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      if (s.x[j] <= p.lb[j] + 1e-9)
        EXPECT_GE(reduced[j], -1e-6);
      else if (s.x[j] >= p.ub[j] - 1e-9)
        EXPECT_LE(reduced[j], 1e-6);
      else
        EXPECT_NEAR(reduced[j], 0.0, 1e-6);
    }
  }
}

TEST(QpSolver, DumpRoundTrip) {
  std::mt19937_64 rng(3);
  auto p = oracle::random_problem(rng, 5, 2);
  std::stringstream ss;
  write_problem(ss, p);
  auto q = read_problem(ss);
  EXPECT_EQ(q.H, p.H);
  EXPECT_EQ(q.g, p.g);
  EXPECT_EQ(q.A_eq, p.A_eq);
  EXPECT_EQ(q.b_eq, p.b_eq);
  EXPECT_EQ(q.lb, p.lb);
  EXPECT_EQ(q.ub, p.ub);
}
