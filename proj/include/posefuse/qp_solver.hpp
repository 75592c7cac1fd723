#pragma once

#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "posefuse/errors.hpp"

namespace posefuse {

/// minimize 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq,  lb <= x <= ub.
/// Bounds may be infinite; A_eq may have zero rows.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  /// An unconstrained problem of dimension n with identity cost.
  static QpProblem unconstrained(Eigen::Index n) {
    QpProblem p;
    p.H = Eigen::MatrixXd::Identity(n, n);
    p.g = Eigen::VectorXd::Zero(n);
    p.A_eq.resize(0, n);
    p.b_eq.resize(0);
    p.lb = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
    p.ub = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    return p;
  }

  Eigen::Index size() const { return H.rows(); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + g.dot(x); }
};

enum class QpStatus { Optimal, MaxIterations, Infeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::MaxIterations: return "max_iterations";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

struct QpSolution {
  Eigen::VectorXd x;
  double objective = 0.0;
  QpStatus status = QpStatus::Infeasible;
  int iterations = 0;
  std::vector<int> active_bounds;  // +(j+1) upper, -(j+1) lower
};

/// One record per outer iteration: the dual objective after the step and the
/// size of the working set.
struct QpTraceEvent {
  int iteration = 0;
  double objective = 0.0;
  int active = 0;
  bool added = false;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 200;
  std::function<void(const QpTraceEvent&)> trace;
};

/// Dual active-set method of Goldfarb and Idnani, specialized to equality rows
/// plus simple bounds. Starts at the unconstrained minimum and adds violated
/// constraints one by one; the objective rises monotonically toward the
/// optimum. Equalities enter first and are never dropped.
class QpSolver {
 public:
  explicit QpSolver(QpOptions opts = {}) : opts_(std::move(opts)) {}

  QpSolution solve(const QpProblem& p) {
    validate(p);
    const Eigen::Index n = p.size();
    const Eigen::Index me = p.A_eq.rows();
    QpSolution sol;
    sol.iterations = 0;

    for (Eigen::Index j = 0; j < n; ++j) {
      if (p.lb[j] > p.ub[j]) {
        sol.x = Eigen::VectorXd::Zero(n);
        sol.status = QpStatus::Infeasible;
        return sol;
      }
    }

    llt_.compute(p.H);
    if (llt_.info() != Eigen::Success) throw std::invalid_argument("QP cost matrix is not positive definite");
    if (me == 0) {
      x_ = -llt_.solve(p.g);
      if (((x_ - p.lb).array() >= -opts_.tol).all() && ((p.ub - x_).array() >= -opts_.tol).all()) {
        sol.x = x_.cwiseMax(p.lb).cwiseMin(p.ub);
        sol.objective = p.objective(sol.x);
        sol.status = QpStatus::Optimal;
        return sol;
      }
    }
    // J = L^-T, so that J J' = H^-1.
    J_ = llt_.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
    R_.setZero(n, n);
    r_norm_ = 1.0;
    iq_ = 0;
    active_.clear();
    u_.clear();
    d_.resize(n);
    z_.resize(n);
    np_.resize(n);

    x_ = -(J_ * (J_.transpose() * p.g));
    f_ = 0.5 * p.g.dot(x_);

    for (Eigen::Index i = 0; i < me; ++i) {
      np_ = p.A_eq.row(i).transpose();
      compute_direction();
      const double zn = z_.dot(np_);
      const double viol = p.b_eq[i] - np_.dot(x_);
      if (std::abs(zn) <= kEps * (1.0 + np_.squaredNorm())) {
        if (std::abs(viol) > opts_.tol) return fail(sol, n, QpStatus::Infeasible);
        continue;  // redundant row
      }
      const double t = viol / zn;
      x_ += t * z_;
      f_ += 0.5 * t * t * zn;
      for (int k = 0; k < iq_; ++k) u_[static_cast<std::size_t>(k)] -= t * r_[k];
      if (!add_constraint()) return fail(sol, n, QpStatus::Infeasible);
      active_.push_back(Constraint{Constraint::Equality, static_cast<int>(i)});
      u_.push_back(t);
    }
    const int n_eq_active = iq_;

    auto bound_slack = [&](int j, bool upper) { return upper ? p.ub[j] - x_[j] : x_[j] - p.lb[j]; };

    int iter = 0;
    while (true) {
      // Most violated bound.
      int p_idx = -1;
      bool p_upper = false;
      double worst = -opts_.tol;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (std::isfinite(p.lb[j]) && x_[j] - p.lb[j] < worst) {
          worst = x_[j] - p.lb[j];
          p_idx = static_cast<int>(j);
          p_upper = false;
        }
        if (std::isfinite(p.ub[j]) && p.ub[j] - x_[j] < worst) {
          worst = p.ub[j] - x_[j];
          p_idx = static_cast<int>(j);
          p_upper = true;
        }
      }
      if (p_idx < 0) {
        sol.status = QpStatus::Optimal;
        break;
      }
      if (iter >= opts_.max_iter) {
        sol.status = QpStatus::MaxIterations;
        break;
      }

      const double sign = p_upper ? -1.0 : 1.0;
      double u_plus = 0.0;
      double s_p = bound_slack(p_idx, p_upper);
      while (true) {
        ++iter;
        np_.setZero();
        np_[p_idx] = sign;
        compute_direction();

        // Partial (dual) step length: the first active inequality whose
        // multiplier would turn negative.
        double t1 = std::numeric_limits<double>::infinity();
        int l = -1;
        for (int k = n_eq_active; k < iq_; ++k) {
          if (r_[k] > 0.0) {
            const double ratio = u_[static_cast<std::size_t>(k)] / r_[k];
            if (ratio < t1) {
              t1 = ratio;
              l = k;
            }
          }
        }
        double t2 = std::numeric_limits<double>::infinity();
        const double zn = z_.dot(np_);
        if (z_.squaredNorm() > kEps) t2 = -s_p / zn;

        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) return fail(sol, n, QpStatus::Infeasible);

        if (!std::isfinite(t2)) {
          // Normal already spanned by the working set: dual step only.
          for (int k = 0; k < iq_; ++k) u_[static_cast<std::size_t>(k)] -= t * r_[k];
          u_plus += t;
          delete_constraint(l);
          emit(iter, false);
          if (iter >= opts_.max_iter) break;
          continue;
        }

        x_ += t * z_;
        f_ += t * zn * (0.5 * t + u_plus);
        for (int k = 0; k < iq_; ++k) u_[static_cast<std::size_t>(k)] -= t * r_[k];
        u_plus += t;

        if (t2 <= t1) {
          if (!add_constraint()) {
            // Numerically dependent: treat the bound as satisfied by snapping.
            x_[p_idx] = p_upper ? p.ub[p_idx] : p.lb[p_idx];
          } else {
            active_.push_back(Constraint{p_upper ? Constraint::Upper : Constraint::Lower, p_idx});
            u_.push_back(u_plus);
          }
          emit(iter, true);
          break;
        }
        delete_constraint(l);
        emit(iter, false);
        s_p = bound_slack(p_idx, p_upper);
        if (iter >= opts_.max_iter) break;
      }
    }

    sol.iterations = iter;
    sol.x = x_.cwiseMax(p.lb).cwiseMin(p.ub);
    sol.objective = p.objective(sol.x);
    for (int k = n_eq_active; k < iq_; ++k) {
      const auto& c = active_[static_cast<std::size_t>(k)];
      sol.active_bounds.push_back(c.kind == Constraint::Upper ? c.index + 1 : -(c.index + 1));
    }
    return sol;
  }

 private:
  struct Constraint {
    enum Kind { Equality, Lower, Upper } kind;
    int index;
  };

  static constexpr double kEps = 1e-14;

  static void validate(const QpProblem& p) {
    const Eigen::Index n = p.H.rows();
    if (p.H.cols() != n || p.g.size() != n || p.lb.size() != n || p.ub.size() != n ||
        (p.A_eq.rows() > 0 && p.A_eq.cols() != n) || p.A_eq.rows() != p.b_eq.size())
      throw DimensionError("QP problem dimensions are inconsistent");
    const double scale = std::max(1.0, p.H.cwiseAbs().maxCoeff());
    if ((p.H - p.H.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
      throw std::invalid_argument("QP cost matrix is not symmetric");
  }

  QpSolution& fail(QpSolution& sol, Eigen::Index n, QpStatus status) {
    sol.x = x_.size() == n ? x_ : Eigen::VectorXd::Zero(n);
    sol.status = status;
    sol.objective = std::numeric_limits<double>::quiet_NaN();
    return sol;
  }

  void emit(int iter, bool added) {
    if (opts_.trace) opts_.trace(QpTraceEvent{iter, f_, iq_, added});
  }

  // d = J' np; z = J2 d2 (primal step); r = R^-1 d1 (multiplier change).
  void compute_direction() {
    const Eigen::Index n = J_.rows();
    d_.noalias() = J_.transpose() * np_;
    z_.noalias() = J_.rightCols(n - iq_) * d_.tail(n - iq_);
    r_.resize(iq_);
    if (iq_ > 0)
      r_ = R_.topLeftCorner(iq_, iq_).triangularView<Eigen::Upper>().solve(d_.head(iq_));
  }

  bool add_constraint() {
    const Eigen::Index n = J_.rows();
    for (Eigen::Index j = n - 1; j >= iq_ + 1; --j) {
      double cc = d_[j - 1];
      double ss = d_[j];
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d_[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_[j - 1] = -h;
      } else {
        d_[j - 1] = h;
      }
      const double xny = ss / (1.0 + cc);
      tmp_ = J_.col(j - 1);
      J_.col(j - 1) = cc * tmp_ + ss * J_.col(j);
      J_.col(j) = xny * (tmp_ + J_.col(j - 1)) - J_.col(j);
    }
    ++iq_;
    for (int i = 0; i < iq_; ++i) R_(i, iq_ - 1) = d_[i];
    if (std::abs(d_[iq_ - 1]) <= 1e-12 * r_norm_) {
      R_.col(iq_ - 1).setZero();
      --iq_;
      return false;
    }
    r_norm_ = std::max(r_norm_, std::abs(d_[iq_ - 1]));
    return true;
  }

  void delete_constraint(int qq) {
    active_.erase(active_.begin() + qq);
    u_.erase(u_.begin() + qq);
    for (int i = qq; i < iq_ - 1; ++i) R_.col(i) = R_.col(i + 1);
    R_.col(iq_ - 1).setZero();
    --iq_;
    for (int j = qq; j < iq_; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < iq_; ++k) {
        const double a = R_(j, k);
        const double b = R_(j + 1, k);
        R_(j, k) = a * cc + b * ss;
        R_(j + 1, k) = xny * (a + R_(j, k)) - b;
      }
      tmp_ = J_.col(j);
      J_.col(j) = cc * tmp_ + ss * J_.col(j + 1);
      J_.col(j + 1) = xny * (J_.col(j) + tmp_) - J_.col(j + 1);
    }
  }

  QpOptions opts_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::MatrixXd J_, R_;
  Eigen::VectorXd x_, d_, z_, r_, np_, tmp_;
  double f_ = 0.0;
  double r_norm_ = 1.0;
  int iq_ = 0;
  std::vector<Constraint> active_;
  std::vector<double> u_;
};

inline QpSolution solve(const QpProblem& p, double tol = 1e-8, int max_iter = 200) {
  QpOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return QpSolver(std::move(opts)).solve(p);
}

/// Plain-text dump for offline inspection: a header line with the dimension
/// and equality count, then H, g, A_eq, b_eq, lb, ub one row per line.
inline void write_problem(std::ostream& os, const QpProblem& p) {
  const auto prec = os.precision(17);
  os << "qp " << p.size() << ' ' << p.A_eq.rows() << '\n';
  auto row = [&](const auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    os << '\n';
  };
  for (Eigen::Index i = 0; i < p.H.rows(); ++i) row(Eigen::VectorXd(p.H.row(i)));
  row(p.g);
  for (Eigen::Index i = 0; i < p.A_eq.rows(); ++i) row(Eigen::VectorXd(p.A_eq.row(i)));
  row(p.b_eq);
  row(p.lb);
  row(p.ub);
  os.precision(prec);
}

inline QpProblem read_problem(std::istream& is) {
  std::string tag;
  Eigen::Index n = 0, m = 0;
  if (!(is >> tag >> n >> m) || tag != "qp" || n < 0 || m < 0)
    throw std::runtime_error("not a QP dump");
  auto read = [&](double& v) {
    std::string tok;
    if (!(is >> tok)) throw std::runtime_error("truncated QP dump");
    v = std::stod(tok);
  };
  QpProblem p;
  p.H.resize(n, n);
  p.g.resize(n);
  p.A_eq.resize(m, n);
  p.b_eq.resize(m);
  p.lb.resize(n);
  p.ub.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) read(p.H(i, j));
  for (Eigen::Index i = 0; i < n; ++i) read(p.g[i]);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) read(p.A_eq(i, j));
  for (Eigen::Index i = 0; i < m; ++i) read(p.b_eq[i]);
  for (Eigen::Index i = 0; i < n; ++i) read(p.lb[i]);
  for (Eigen::Index i = 0; i < n; ++i) read(p.ub[i]);
  return p;
}

}  // namespace posefuse
