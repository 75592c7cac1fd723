#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "posefuse/ik.hpp"
#include "posefuse/observer.hpp"
#include "posefuse/scaling.hpp"
#include "posefuse/skeleton.hpp"

namespace posefuse {

struct TrackConfig {
  IkConfig ik;
  ObserverConfig observer;
  ScalingConfig scaling;
  std::size_t min_keypoints = 4;
  double max_step_dt = 0.5;  // cap on the per-update velocity budget window
};

/// Rough placement from a single measurement: base at the hip midpoint (or
/// the centroid), yaw from the shoulder line, every other DOF at rest.
inline Eigen::VectorXd initial_pose(const SkeletonModel& model, const KeypointSet& kp) {
  Eigen::VectorXd q = model.rest_configuration();
  auto centroid = kp.centroid();
  if (!centroid) return q;
  Vec3 base = *centroid;
  if (kp.has(KeypointLabel::LeftHip) && kp.has(KeypointLabel::RightHip))
    base = 0.5 * (kp.at(KeypointLabel::LeftHip) + kp.at(KeypointLabel::RightHip));
  std::optional<Vec3> lateral;
  if (kp.has(KeypointLabel::LeftShoulder) && kp.has(KeypointLabel::RightShoulder))
    lateral = kp.at(KeypointLabel::LeftShoulder) - kp.at(KeypointLabel::RightShoulder);
  else if (kp.has(KeypointLabel::LeftHip) && kp.has(KeypointLabel::RightHip))
    lateral = kp.at(KeypointLabel::LeftHip) - kp.at(KeypointLabel::RightHip);
  // Base DOFs are, by convention of the bundled profiles, tx ty tz rx ry rz.
  std::size_t b = 0;
  for (std::size_t i = 0; i < model.dof_count() && b < 6; ++i) {
    if (!model.dofs()[i].base) continue;
    const auto idx = static_cast<Eigen::Index>(i);
    if (b < 3) q[idx] = base[static_cast<Eigen::Index>(b)];
    if (b == 5 && lateral && lateral->head<2>().norm() > 1e-6) q[idx] = std::atan2(-lateral->x(), lateral->y());
    ++b;
  }
  return q;
}

/// One tracked person: its own scaled skeleton, observer bank, scale history
/// and identity.
class BodyTrack {
 public:
  BodyTrack(std::uint64_t id, const SkeletonModel& proto, const ProportionTable& table, const KeypointSet& first,
            double t, const TrackConfig& cfg)
      : id_(id),
        model_(std::make_unique<SkeletonModel>(proto)),
        table_(&table),
        ik_(std::make_unique<IkSolver>(*model_)),
        scales_(initial_scale_state(*model_, table)),
        last_seen_(t),
        last_update_(t) {
    update_scales(scales_, first, table, *model_, cfg.scaling);
    Eigen::VectorXd q0 = initial_pose(*model_, first);
    IkConfig ik = cfg.ik;
    ik.enforce_velocity_limits = false;
    auto res = ik_->solve(q0, IkTargets{{first}}, ik);
    q_ = res.q_new;
    observers_ = ObserverBank(*model_, q_, t, cfg.observer);
    newborn_ = true;
  }

  std::uint64_t id() const { return id_; }
  const SkeletonModel& model() const { return *model_; }
  const Eigen::VectorXd& q() const { return q_; }
  const ObserverBank& observers() const { return observers_; }
  const ScaleState& scales() const { return scales_; }
  double last_seen() const { return last_seen_; }
  double last_update() const { return last_update_; }
  std::uint64_t age() const { return age_; }
  bool newborn() const { return newborn_; }
  const IkResult& last_ik() const { return last_ik_; }
  /// Whether the last update ran the IK; last_ik() is stale otherwise.
  bool fitted() const { return fitted_; }

  /// Keypoints at the observer's prediction for time t, used for association.
  KeypointPositions predicted_keypoints(double t) const {
    const double dt = t - last_update_;
    if (dt <= 0.0) return forward_kinematics(*model_, q_);
    return forward_kinematics(*model_, observers_.predicted_positions(*model_, dt));
  }

  KeypointPositions keypoints() const { return forward_kinematics(*model_, q_); }

  /// Fuses this tick's associated sources: scale update, bone-length outlier
  /// rejection, multi-source IK, observer predict + correct. With no usable
  /// source the track coasts on its prediction.
  void update(const std::vector<KeypointSet>& sources, double t, double period, const TrackConfig& cfg) {
    ++age_;
    fitted_ = false;
    const double dt = t - last_update_;
    IkTargets targets;
    bool seen = false;
    for (const auto& s : sources) update_scales(scales_, s, *table_, *model_, cfg.scaling);
    for (const auto& s : sources) {
      auto kept = reject_incompatible(s, *model_, *table_, cfg.scaling.reject_tolerance);
      if (kept.count() >= cfg.min_keypoints) seen = true;
      if (!kept.empty()) targets.sources.push_back(std::move(kept));
    }
    if (seen) last_seen_ = t;

    if (newborn_) {
      // First tick of the track: other devices may have joined the creating
      // measurement; fit all of them without a velocity budget and restart
      // the observers there.
      newborn_ = false;
      if (!targets.sources.empty()) {
        IkConfig ik = cfg.ik;
        ik.enforce_velocity_limits = false;
        last_ik_ = ik_->solve(q_, targets, ik);
        fitted_ = true;
        if (last_ik_.status != IkStatus::Degenerate) q_ = last_ik_.q_new;
      }
      observers_ = ObserverBank(*model_, q_, t, cfg.observer);
      last_update_ = t;
      return;
    }

    if (dt <= 0.0) return;
    observers_.predict(dt);
    if (!targets.sources.empty()) {
      IkConfig ik = cfg.ik;
      ik.step_dt = std::clamp(dt, period, cfg.max_step_dt);
      last_ik_ = ik_->solve(q_, targets, ik);
      fitted_ = true;
      if (last_ik_.status != IkStatus::Degenerate) observers_.correct(*model_, last_ik_.q_new);
    } else {
      observers_.clamp(*model_);
    }
    q_ = observers_.positions();
    last_update_ = t;
  }

 private:
  std::uint64_t id_;
  std::unique_ptr<SkeletonModel> model_;
  const ProportionTable* table_;
  std::unique_ptr<IkSolver> ik_;
  ScaleState scales_;
  ObserverBank observers_;
  Eigen::VectorXd q_;
  IkResult last_ik_;
  double last_seen_ = 0.0;
  double last_update_ = 0.0;
  std::uint64_t age_ = 0;
  bool newborn_ = false;
  bool fitted_ = false;
};

}  // namespace posefuse
