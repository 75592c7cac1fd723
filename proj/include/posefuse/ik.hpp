#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "posefuse/keypoints.hpp"
#include "posefuse/qp_solver.hpp"
#include "posefuse/skeleton.hpp"

namespace posefuse {

enum class SourceWeighting {
  Normalized,  // each of n sources weighs 1/n, so duplicated sources change nothing
  Sum,         // every source weighs 1
};

struct IkConfig {
  Eigen::MatrixXd lambda;   // DOF x DOF damping; empty means identity
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();  // per-keypoint slack weight
  double gamma = 1.0;
  int max_outer_iterations = 100;
  double step_dt = 1.0 / 30.0;
  double convergence_eps = 1e-6;  // meters, on the RMS target residual
  double base_velocity_cap = 3.0;  // m/s on the base translation DOFs
  bool enforce_velocity_limits = true;
  bool confidence_weighting = false;
  SourceWeighting weighting = SourceWeighting::Normalized;
  double qp_tol = 1e-8;
  int qp_max_iter = 200;

  void validate(std::size_t dofs) const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!(step_dt > 0.0)) throw std::invalid_argument("step_dt must be positive");
    if (max_outer_iterations < 1) throw std::invalid_argument("max_outer_iterations must be >= 1");
    if (lambda.size() != 0 &&
        (lambda.rows() != static_cast<Eigen::Index>(dofs) || lambda.cols() != static_cast<Eigen::Index>(dofs)))
      throw DimensionError("lambda does not match the DOF count");
  }
};

/// One target set per source (device). Absent keypoints contribute no rows.
struct IkTargets {
  std::vector<KeypointSet> sources;
};

enum class IkStatus { Converged, MaxIterations, Degenerate };

struct IkResult {
  Eigen::VectorXd q_new;
  Eigen::VectorXd qdot_total;  // accumulated velocity over the tick
  std::vector<std::array<double, kNumKeypoints>> residuals;  // NaN where absent
  int outer_iterations = 0;
  IkStatus status = IkStatus::Converged;
  bool velocity_reset = false;
  double rms_residual = 0.0;
};

/// Per-coordinate box on one step's displacement: the barrier-scaled position
/// box intersected with what remains of the tick's velocity budget.
struct StepBox {
  Eigen::VectorXd lo, hi;
};

/// Reusable workspace for the iterative QP inverse kinematics. Each step's
/// variable is the joint displacement v = qdot * step_dt; the cost is
/// v'Λv + Σ_i w_i δ_i'Dδ_i with δ_i = x + Jv - x_Ti.
class IkSolver {
 public:
  explicit IkSolver(const SkeletonModel& model) : eval_(model) {
    const auto n = static_cast<Eigen::Index>(model.dof_count());
    H_.resize(n, n);
    g_.resize(n);
    jac_.resize(3, n);
  }

  const SkeletonModel& model() const { return eval_.model(); }

  StepBox step_box(const Eigen::VectorXd& q, Eigen::VectorXd& qdot0, const IkConfig& cfg,
                   bool* reset = nullptr) const {
    const auto& m = model();
    const auto n = static_cast<Eigen::Index>(m.dof_count());
    StepBox box{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& d = m.dofs()[static_cast<std::size_t>(j)];
      double plo = std::isfinite(d.lower) ? -cfg.gamma * (q[j] - d.lower) : -kInf;
      double phi = std::isfinite(d.upper) ? cfg.gamma * (d.upper - q[j]) : kInf;
      plo = std::min(plo, 0.0);
      phi = std::max(phi, 0.0);
      double lo = plo, hi = phi;
      if (cfg.enforce_velocity_limits) {
        auto [vlo, vhi] = velocity_bounds(d, cfg);
        double a = std::max(plo, (vlo - qdot0[j]) * cfg.step_dt);
        double b = std::min(phi, (vhi - qdot0[j]) * cfg.step_dt);
        if (a > b) {
          // Empty intersection: drop the accumulated velocity on this
          // coordinate and fall back to a box that contains zero.
          qdot0[j] = 0.0;
          if (reset) *reset = true;
          a = std::max(plo, vlo * cfg.step_dt);
          b = std::min(phi, vhi * cfg.step_dt);
        }
        lo = a;
        hi = b;
      }
      box.lo[j] = lo;
      box.hi[j] = hi;
    }
    return box;
  }

  /// Substituted QP: only the displacement is a variable.
  QpProblem assemble(const Eigen::VectorXd& q, Eigen::VectorXd& qdot0, const IkTargets& targets,
                     const IkConfig& cfg) {
    eval_.update(q);
    const auto n = static_cast<Eigen::Index>(model().dof_count());
    QpProblem p;
    if (cfg.lambda.size() == 0)
      H_ = Eigen::MatrixXd::Identity(n, n);
    else
      H_ = cfg.lambda;
    g_.setZero();
    // H gains W_k J_k' D J_k per keypoint; with D = L L' this is A'A for the
    // stacked rows sqrt(W_k) L' J_k, done as one rank update.
    const Eigen::Matrix3d Lt = cfg.D.llt().matrixU();
    stacked_.resize(3 * static_cast<Eigen::Index>(kNumKeypoints), n);
    Eigen::Index rows = 0;
    const double base_w = source_weight(targets, cfg);
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
      const auto l = label_at(k);
      double W = 0.0;
      Vec3 wt = Vec3::Zero();
      for (const auto& s : targets.sources) {
        if (!s.has(l)) continue;
        const double w = base_w * (cfg.confidence_weighting ? s.confidence[k] : 1.0);
        W += w;
        wt += w * s.at(l);
      }
      if (W <= 0.0) continue;
      eval_.jacobian(l, jac_);
      stacked_.middleRows(rows, 3).noalias() = std::sqrt(W) * Lt * jac_;
      rows += 3;
      g_.noalias() += jac_.transpose() * (cfg.D * (W * eval_.keypoint(l) - wt));
    }
    H_.selfadjointView<Eigen::Lower>().rankUpdate(stacked_.topRows(rows).transpose());
    H_.triangularView<Eigen::StrictlyUpper>() = H_.transpose();
    p.H = 2.0 * H_;
    p.g = 2.0 * g_;
    p.A_eq.resize(0, n);
    p.b_eq.resize(0);
    auto box = step_box(q, qdot0, cfg);
    p.lb = std::move(box.lo);
    p.ub = std::move(box.hi);
    return p;
  }

  /// Explicit QP with one slack 3-vector per present (source, keypoint) pair
  /// and the linearized target equalities x + Jv - δ = x_T.
  QpProblem assemble_explicit(const Eigen::VectorXd& q, Eigen::VectorXd& qdot0, const IkTargets& targets,
                              const IkConfig& cfg) {
    eval_.update(q);
    const auto n = static_cast<Eigen::Index>(model().dof_count());
    Eigen::Index rows = 0;
    for (const auto& s : targets.sources) rows += 3 * static_cast<Eigen::Index>(s.count());
    QpProblem p;
    p.H = Eigen::MatrixXd::Zero(n + rows, n + rows);
    p.H.topLeftCorner(n, n) = cfg.lambda.size() == 0 ? Eigen::MatrixXd::Identity(n, n) : cfg.lambda;
    p.g = Eigen::VectorXd::Zero(n + rows);
    p.A_eq = Eigen::MatrixXd::Zero(rows, n + rows);
    p.b_eq.resize(rows);
    const double base_w = source_weight(targets, cfg);
    Eigen::Index r = 0;
    for (const auto& s : targets.sources) {
      for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        if (!s.present.test(k)) continue;
        const auto l = label_at(k);
        const double w = base_w * (cfg.confidence_weighting ? s.confidence[k] : 1.0);
        eval_.jacobian(l, jac_);
        p.H.block(n + r, n + r, 3, 3) = w * cfg.D;
        p.A_eq.block(r, 0, 3, n) = jac_;
        p.A_eq.block(r, n + r, 3, 3) = -Eigen::Matrix3d::Identity();
        p.b_eq.segment(r, 3) = s.at(l) - eval_.keypoint(l);
        r += 3;
      }
    }
    p.H *= 2.0;
    auto box = step_box(q, qdot0, cfg);
    p.lb = Eigen::VectorXd::Constant(n + rows, -kInf);
    p.ub = Eigen::VectorXd::Constant(n + rows, kInf);
    p.lb.head(n) = box.lo;
    p.ub.head(n) = box.hi;
    return p;
  }

  /// One QP step. Returns the displacement, or nothing when the problem is
  /// degenerate even after resetting the accumulated velocity.
  std::optional<Eigen::VectorXd> solve_step(const Eigen::VectorXd& q, Eigen::VectorXd& qdot0,
                                            const IkTargets& targets, const IkConfig& cfg,
                                            bool* reset = nullptr) {
    QpOptions opts;
    opts.tol = cfg.qp_tol;
    opts.max_iter = cfg.qp_max_iter;
    QpSolver solver(opts);
    for (int attempt = 0; attempt < 2; ++attempt) {
      auto p = assemble(q, qdot0, targets, cfg);
      auto sol = solver.solve(p);
      if (sol.status != QpStatus::Infeasible) return sol.x;
      qdot0.setZero();
      if (reset) *reset = true;
    }
    return std::nullopt;
  }

  IkResult solve(const Eigen::VectorXd& q_init, const IkTargets& targets, const IkConfig& cfg) {
    const auto& m = model();
    cfg.validate(m.dof_count());
    if (static_cast<std::size_t>(q_init.size()) != m.dof_count())
      throw DimensionError("initial configuration does not match the model");
    IkResult res;
    Eigen::VectorXd q = clamp_to_limits(m, q_init);
    Eigen::VectorXd qdot0 = Eigen::VectorXd::Zero(q.size());
    double prev = rms_residual(q, targets);
    res.status = IkStatus::MaxIterations;
    if (prev == 0.0 || total_rows(targets) == 0) {
      res.status = IkStatus::Converged;
    } else {
      for (int it = 0; it < cfg.max_outer_iterations; ++it) {
        auto v = solve_step(q, qdot0, targets, cfg, &res.velocity_reset);
        if (!v) {
          res.status = IkStatus::Degenerate;
          break;
        }
        res.outer_iterations = it + 1;
        q = clamp_to_limits(m, q + *v);
        qdot0 += *v / cfg.step_dt;
        const double now = rms_residual(q, targets);
        if (prev - now < cfg.convergence_eps) {
          res.status = IkStatus::Converged;
          break;
        }
        prev = now;
      }
    }
    if (cfg.enforce_velocity_limits) {
      // Guard the tick budget against round-off from the repeated updates.
      for (Eigen::Index j = 0; j < qdot0.size(); ++j) {
        auto [vlo, vhi] = velocity_bounds(m.dofs()[static_cast<std::size_t>(j)], cfg);
        qdot0[j] = std::clamp(qdot0[j], vlo, vhi);
      }
    }
    res.q_new = q;
    res.qdot_total = qdot0;
    eval_.update(q);
    res.residuals.resize(targets.sources.size());
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < targets.sources.size(); ++i) {
      auto& row = res.residuals[i];
      row.fill(std::numeric_limits<double>::quiet_NaN());
      for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        if (!targets.sources[i].present.test(k)) continue;
        row[k] = (eval_.keypoint(label_at(k)) - targets.sources[i].position[k]).norm();
        sum += row[k] * row[k];
        ++cnt;
      }
    }
    res.rms_residual = cnt ? std::sqrt(sum / static_cast<double>(cnt)) : 0.0;
    return res;
  }

  double rms_residual(const Eigen::VectorXd& q, const IkTargets& targets) {
    eval_.update(q);
    double sum = 0.0;
    std::size_t cnt = 0;
    for (const auto& s : targets.sources) {
      for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        if (!s.present.test(k)) continue;
        sum += (eval_.keypoint(label_at(k)) - s.position[k]).squaredNorm();
        ++cnt;
      }
    }
    return cnt ? std::sqrt(sum / static_cast<double>(cnt)) : 0.0;
  }

  /// Velocity bounds used for a DOF, including the cap on base translation.
  static std::pair<double, double> velocity_bounds(const DofSpec& d, const IkConfig& cfg) {
    if (d.base && d.kind == DofKind::Translational) return {-cfg.base_velocity_cap, cfg.base_velocity_cap};
    return {d.velocity_lower, d.velocity_upper};
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  static double source_weight(const IkTargets& t, const IkConfig& cfg) {
    if (cfg.weighting == SourceWeighting::Sum || t.sources.empty()) return 1.0;
    return 1.0 / static_cast<double>(t.sources.size());
  }

  static std::size_t total_rows(const IkTargets& t) {
    std::size_t n = 0;
    for (const auto& s : t.sources) n += s.count();
    return n;
  }

  PoseEvaluator eval_;
  Eigen::MatrixXd H_;
  Eigen::VectorXd g_;
  Eigen::Matrix<double, 3, Eigen::Dynamic> jac_;
  Eigen::MatrixXd stacked_;
};

inline IkResult solve_ik(const SkeletonModel& model, const Eigen::VectorXd& q_init, const IkTargets& targets,
                         const IkConfig& cfg = {}) {
  IkSolver solver(model);
  return solver.solve(q_init, targets, cfg);
}

/// Single QP step with an explicit accumulated velocity; returns the joint
/// velocity (displacement / step_dt), or nothing when degenerate.
inline std::optional<Eigen::VectorXd> solve_step(const SkeletonModel& model, const Eigen::VectorXd& q,
                                                 Eigen::VectorXd& qdot0, const IkTargets& targets,
                                                 const IkConfig& cfg = {}) {
  IkSolver solver(model);
  auto v = solver.solve_step(q, qdot0, targets, cfg);
  if (!v) return std::nullopt;
  return Eigen::VectorXd(*v / cfg.step_dt);
}

}  // namespace posefuse
