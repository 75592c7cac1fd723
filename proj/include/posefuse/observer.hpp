#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "posefuse/errors.hpp"
#include "posefuse/skeleton.hpp"

namespace posefuse {

struct ObserverConfig {
  Eigen::Matrix3d Sigma = 0.5 * Eigen::Matrix3d::Identity();  // process noise
  double R = 1.0;                                              // measurement noise
  Eigen::Vector3d bootstrap_variance{1.0, 10.0, 100.0};

  void validate() const {
    if (!(R > 0.0)) throw std::invalid_argument("observer R must be positive");
    if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(Sigma).eigenvalues().minCoeff() < -1e-12)
      throw std::invalid_argument("observer Sigma must be positive semidefinite");
  }
};

/// Position, velocity, acceleration of one DOF with its covariance.
struct JointObserverState {
  Eigen::Vector3d Q = Eigen::Vector3d::Zero();
  Eigen::Matrix3d P = Eigen::Matrix3d::Identity();
  double last_update = 0.0;
};

inline Eigen::Matrix3d ca_transition(double dt) {
  Eigen::Matrix3d F;
  F << 1.0, dt, 0.5 * dt * dt,
       0.0, 1.0, dt,
       0.0, 0.0, 1.0;
  return F;
}

/// Shortest signed angular difference a - b in (-pi, pi].
inline double angle_diff(double a, double b) {
  double d = std::remainder(a - b, 2.0 * std::numbers::pi);
  if (d <= -std::numbers::pi) d += 2.0 * std::numbers::pi;
  return d;
}

inline JointObserverState predict(const JointObserverState& s, double dt, const ObserverConfig& cfg = {}) {
  if (!(dt > 0.0)) throw std::invalid_argument("predict needs dt > 0");
  const Eigen::Matrix3d F = ca_transition(dt);
  JointObserverState out;
  out.Q = F * s.Q;
  out.P = F * s.P * F.transpose() + cfg.Sigma;
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  out.last_update = s.last_update + dt;
  return out;
}

/// Scalar-measurement update with H = [1 0 0]. With `wrap` the innovation is
/// the shortest angular difference.
inline JointObserverState correct(const JointObserverState& s, double z, const ObserverConfig& cfg = {},
                                  bool wrap = false) {
  const double innovation = wrap ? angle_diff(z, s.Q[0]) : z - s.Q[0];
  const double S = s.P(0, 0) + cfg.R;
  const Eigen::Vector3d K = s.P.col(0) / S;
  JointObserverState out = s;
  out.Q = s.Q + K * innovation;
  // (I - KH) P, symmetrized.
  out.P = s.P - K * s.P.row(0);
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  return out;
}

/// One filter per DOF of a skeleton.
class ObserverBank {
 public:
  ObserverBank() = default;

  ObserverBank(const SkeletonModel& model, const Eigen::VectorXd& q, double t, ObserverConfig cfg = {})
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (static_cast<std::size_t>(q.size()) != model.dof_count())
      throw DimensionError("observer bootstrap does not match the model");
    states_.resize(model.dof_count());
    wrap_.resize(model.dof_count());
    for (std::size_t i = 0; i < model.dof_count(); ++i) {
      const auto& d = model.dofs()[i];
      wrap_[i] = d.kind == DofKind::Revolute && !std::isfinite(d.lower) && !std::isfinite(d.upper);
      auto& s = states_[i];
      s.Q << q[static_cast<Eigen::Index>(i)], 0.0, 0.0;
      s.P = cfg_.bootstrap_variance.asDiagonal();
      s.last_update = t;
    }
  }

  std::size_t size() const { return states_.size(); }
  const JointObserverState& state(std::size_t i) const { return states_[i]; }
  const ObserverConfig& config() const { return cfg_; }

  Eigen::VectorXd positions() const {
    Eigen::VectorXd q(static_cast<Eigen::Index>(states_.size()));
    for (std::size_t i = 0; i < states_.size(); ++i) q[static_cast<Eigen::Index>(i)] = states_[i].Q[0];
    return q;
  }

  Eigen::VectorXd velocities() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(states_.size()));
    for (std::size_t i = 0; i < states_.size(); ++i) v[static_cast<Eigen::Index>(i)] = states_[i].Q[1];
    return v;
  }

  double covariance_trace() const {
    double t = 0.0;
    for (const auto& s : states_) t += s.P.trace();
    return t;
  }

  void predict(double dt) {
    for (auto& s : states_) s = posefuse::predict(s, dt, cfg_);
  }

  /// Corrects every DOF with z, then clamps positions into the model limits.
  void correct(const SkeletonModel& model, const Eigen::VectorXd& z) {
    if (static_cast<std::size_t>(z.size()) != states_.size())
      throw DimensionError("observer measurement does not match the bank");
    for (std::size_t i = 0; i < states_.size(); ++i)
      states_[i] = posefuse::correct(states_[i], z[static_cast<Eigen::Index>(i)], cfg_, wrap_[i]);
    clamp(model);
  }

  /// Predicted positions clamped into the limits, without touching the state.
  Eigen::VectorXd predicted_positions(const SkeletonModel& model, double dt) const {
    Eigen::VectorXd q(static_cast<Eigen::Index>(states_.size()));
    for (std::size_t i = 0; i < states_.size(); ++i) {
      const auto& Q = states_[i].Q;
      q[static_cast<Eigen::Index>(i)] = Q[0] + dt * Q[1] + 0.5 * dt * dt * Q[2];
    }
    return clamp_to_limits(model, q);
  }

  void clamp(const SkeletonModel& model) {
    for (std::size_t i = 0; i < states_.size(); ++i) {
      const auto& d = model.dofs()[i];
      states_[i].Q[0] = std::clamp(states_[i].Q[0], d.lower, d.upper);
    }
  }

 private:
  ObserverConfig cfg_;
  std::vector<JointObserverState> states_;
  std::vector<bool> wrap_;
};

}  // namespace posefuse
