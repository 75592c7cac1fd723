#pragma once

// Reference solver for the QP suites: augmented Lagrangian on the equality
// rows, accelerated projected gradient (FISTA with restart) on the box for
// each subproblem. Slow but simple enough to trust.

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "posefuse/qp_solver.hpp"

namespace posefuse::oracle {

struct PgResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  double eq_residual = 0.0;
};

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const QpProblem& p) {
  return x.cwiseMax(p.lb).cwiseMin(p.ub);
}

inline PgResult projected_gradient(const QpProblem& p, double tol = 1e-10, int max_outer = 200) {
  const Eigen::Index n = p.size();
  const double rho = p.A_eq.rows() > 0 ? 50.0 : 0.0;
  Eigen::MatrixXd Q = p.H;
  if (p.A_eq.rows() > 0) Q += rho * p.A_eq.transpose() * p.A_eq;
  const double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Q, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(p.A_eq.rows());
  Eigen::VectorXd x = project_box(Eigen::VectorXd::Zero(n), p);

  for (int outer = 0; outer < max_outer; ++outer) {
    // Subproblem: 0.5 x'Qx + c'x over the box.
    Eigen::VectorXd c = p.g;
    if (p.A_eq.rows() > 0) c += p.A_eq.transpose() * (lambda - rho * p.b_eq);
    Eigen::VectorXd y = x, x_prev = x;
    double tk = 1.0;
    for (int it = 0; it < 200000; ++it) {
      Eigen::VectorXd grad = Q * y + c;
      Eigen::VectorXd xn = project_box(y - grad / L, p);
      // Gradient-mapping restart keeps the momentum from oscillating.
      if ((y - xn).dot(xn - x_prev) > 0.0) {
        tk = 1.0;
        y = x_prev;
        continue;
      }
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      y = xn + ((tk - 1.0) / tn) * (xn - x_prev);
      tk = tn;
      const double step = (xn - x_prev).lpNorm<Eigen::Infinity>();
      x_prev = xn;
      if (step < 1e-14) break;
    }
    x = x_prev;
    if (p.A_eq.rows() == 0) break;
    Eigen::VectorXd res = p.A_eq * x - p.b_eq;
    lambda += rho * res;
    if (res.lpNorm<Eigen::Infinity>() < tol) break;
  }
  PgResult out;
  out.x = x;
  out.objective = p.objective(x);
  out.eq_residual = p.A_eq.rows() > 0 ? (p.A_eq * x - p.b_eq).lpNorm<Eigen::Infinity>() : 0.0;
  return out;
}

/// Random strictly convex problem with a known feasible point. Eigenvalues of
/// H lie in [0.5, 5], equality rows have unit norm, and roughly a quarter of
/// the bounds are infinite.
inline QpProblem random_problem(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd G(n, n);
  for (auto& v : G.reshaped()) v = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Qm = qr.householderQ();
  Eigen::VectorXd eig(n);
  for (auto& v : eig) v = 0.5 + 4.5 * u(rng);
  QpProblem p;
  p.H = Qm * eig.asDiagonal() * Qm.transpose();
  p.H = 0.5 * (p.H + p.H.transpose()).eval();
  p.g.resize(n);
  for (auto& v : p.g) v = 4.0 * normal(rng);
  Eigen::VectorXd feas(n);
  for (auto& v : feas) v = -1.0 + 2.0 * u(rng);
  p.lb.resize(n);
  p.ub.resize(n);
  const double inf = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    p.lb[j] = u(rng) < 0.25 ? -inf : feas[j] - u(rng);
    p.ub[j] = u(rng) < 0.25 ? inf : feas[j] + u(rng);
  }
  p.A_eq.resize(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) p.A_eq(i, j) = normal(rng);
    p.A_eq.row(i).normalize();
  }
  p.b_eq = p.A_eq * feas;
  return p;
}

}  // namespace posefuse::oracle
