#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "posefuse/errors.hpp"
#include "posefuse/metrics.hpp"
#include "posefuse/skeleton.hpp"

namespace posefuse::harness {

enum class Scenario { Wander, Crossing, Static };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Wander: return "wander";
    case Scenario::Crossing: return "crossing";
    case Scenario::Static: return "static";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "wander") return Scenario::Wander;
  if (s == "crossing") return Scenario::Crossing;
  if (s == "static") return Scenario::Static;
  throw ConfigError("scenario", "unknown scenario '" + s + "'");
}

struct DeviceSpec {
  std::uint32_t id = 0;
  Vec3 origin = Vec3::Zero();
  Vec3 target = Vec3(0, 0, 1);  // point on the optical axis
  double fov_deg = 35.0;        // half-angle of the viewing cone
  double range = 8.0;
  double rate_hz = 30.0;
  double phase = 0.0;  // first capture time, seconds
  double latency_mean = 0.02;
  double latency_jitter = 0.01;

  bool sees(const Vec3& p) const {
    const Vec3 d = p - origin;
    const double dist = d.norm();
    if (dist > range || dist == 0.0) return false;
    const Vec3 axis = (target - origin).normalized();
    return d.dot(axis) / dist >= std::cos(fov_deg * std::numbers::pi / 180.0);
  }
};

struct SceneConfig {
  Scenario scenario = Scenario::Wander;
  std::size_t n_subjects = 3;
  std::size_t n_devices = 3;
  double duration = 10.0;
  double noise_sigma = 0.02;
  double dropout = 0.1;
  double outlier_prob = 0.01;
  double outlier_min = 0.5;
  double outlier_max = 2.0;
  double latency_mean = 0.02;
  double latency_jitter = 0.01;
  double frame_rate = 30.0;
  double fov_deg = 35.0;
  double range = 8.0;
  double ring_radius = 4.0;
  double device_height = 2.5;
  double arena_radius = 2.5;
  double min_height = 1.55;
  double max_height = 1.95;
  bool occlusion = true;  // self-occlusion and occlusion by other subjects
  std::uint64_t seed = 1;
  std::vector<DeviceSpec> devices;  // empty: evenly spaced ring around the arena

  void validate() const {
    auto prob = [](double p, const char* key) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(key, "must lie in [0, 1]");
    };
    prob(dropout, "dropout");
    prob(outlier_prob, "outlier_prob");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "must be >= 0");
    if (!(duration >= 0.0)) throw ConfigError("duration", "must be >= 0");
    if (!(frame_rate > 0.0)) throw ConfigError("frame_rate", "must be > 0");
    if (!(outlier_min <= outlier_max)) throw ConfigError("outlier_min", "exceeds outlier_max");
    if (latency_jitter < 0.0 || latency_mean < 0.0) throw ConfigError("latency_mean", "must be >= 0");
    if (!(min_height > 0.0 && min_height <= max_height)) throw ConfigError("min_height", "invalid height range");
  }

  /// Devices actually used: the explicit list or a ring layout.
  std::vector<DeviceSpec> device_layout() const {
    if (!devices.empty()) return devices;
    std::vector<DeviceSpec> out;
    for (std::size_t i = 0; i < n_devices; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_devices);
      DeviceSpec d;
      d.id = static_cast<std::uint32_t>(i + 1);
      d.origin = Vec3(ring_radius * std::cos(a), ring_radius * std::sin(a), device_height);
      d.fov_deg = fov_deg;
      d.range = range;
      d.rate_hz = frame_rate;
      d.latency_mean = latency_mean;
      d.latency_jitter = latency_jitter;
      out.push_back(d);
    }
    return out;
  }
};

inline nlohmann::json to_json(const SceneConfig& c) {
  nlohmann::json j = {{"scenario", to_string(c.scenario)},
                      {"n_subjects", c.n_subjects},
                      {"n_devices", c.n_devices},
                      {"duration", c.duration},
                      {"noise_sigma", c.noise_sigma},
                      {"dropout", c.dropout},
                      {"outlier_prob", c.outlier_prob},
                      {"outlier_min", c.outlier_min},
                      {"outlier_max", c.outlier_max},
                      {"latency_mean", c.latency_mean},
                      {"latency_jitter", c.latency_jitter},
                      {"frame_rate", c.frame_rate},
                      {"fov_deg", c.fov_deg},
                      {"range", c.range},
                      {"ring_radius", c.ring_radius},
                      {"device_height", c.device_height},
                      {"arena_radius", c.arena_radius},
                      {"min_height", c.min_height},
                      {"max_height", c.max_height},
                      {"occlusion", c.occlusion},
                      {"seed", c.seed}};
  return j;
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  try {
    if (j.contains("scenario")) c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    auto get = [&](const char* k, auto& v) {
      if (j.contains(k)) v = j.at(k).get<std::remove_reference_t<decltype(v)>>();
    };
    get("n_subjects", c.n_subjects);
    get("n_devices", c.n_devices);
    get("duration", c.duration);
    get("noise_sigma", c.noise_sigma);
    get("dropout", c.dropout);
    get("outlier_prob", c.outlier_prob);
    get("outlier_min", c.outlier_min);
    get("outlier_max", c.outlier_max);
    get("latency_mean", c.latency_mean);
    get("latency_jitter", c.latency_jitter);
    get("frame_rate", c.frame_rate);
    get("fov_deg", c.fov_deg);
    get("range", c.range);
    get("ring_radius", c.ring_radius);
    get("device_height", c.device_height);
    get("arena_radius", c.arena_radius);
    get("min_height", c.min_height);
    get("max_height", c.max_height);
    get("occlusion", c.occlusion);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scene", e.what());
  }
  c.validate();
  return c;
}

/// Sinusoid c + a sin(w t + phi).
struct Harmonic {
  double c = 0, a = 0, w = 0, phi = 0;
  double at(double t) const { return c + a * std::sin(w * t + phi); }
  double rate(double t) const { return a * w * std::cos(w * t + phi); }
};

/// Smooth, seeded motion of one subject: planar base path, heading, and a
/// sinusoid per internal DOF kept inside the range of motion and the
/// velocity box.
struct SubjectMotion {
  SkeletonModel model;
  double height = 1.75;
  Harmonic x1, x2, y1, y2, yaw;
  Vec3 line_start = Vec3::Zero();
  Vec3 line_velocity = Vec3::Zero();
  bool straight = false;
  std::vector<Harmonic> joints;  // per DOF; base entries unused

  Eigen::VectorXd q(double t) const {
    Eigen::VectorXd out = model.rest_configuration();
    std::size_t b = 0;
    for (std::size_t i = 0; i < model.dof_count(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (!model.dofs()[i].base) {
        out[idx] = joints[i].at(t);
        continue;
      }
      if (b == 0) out[idx] = straight ? line_start.x() + line_velocity.x() * t : x1.at(t) + x2.at(t);
      if (b == 1) out[idx] = straight ? line_start.y() + line_velocity.y() * t : y1.at(t) + y2.at(t);
      if (b == 2) out[idx] *= height / model.nominal_height();
      if (b == 5) out[idx] = yaw.at(t);
      ++b;
    }
    return out;
  }

  Eigen::VectorXd qdot(double t) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.dof_count()));
    std::size_t b = 0;
    for (std::size_t i = 0; i < model.dof_count(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (!model.dofs()[i].base) {
        out[idx] = joints[i].rate(t);
        continue;
      }
      if (b == 0) out[idx] = straight ? line_velocity.x() : x1.rate(t) + x2.rate(t);
      if (b == 1) out[idx] = straight ? line_velocity.y() : y1.rate(t) + y2.rate(t);
      if (b == 5) out[idx] = yaw.rate(t);
      ++b;
    }
    return out;
  }
};

/// One message as it reaches the aggregator.
struct TimedBatch {
  double arrival = 0.0;
  MeasurementBatch batch;
};

struct Scene {
  SceneConfig config;
  std::vector<DeviceSpec> devices;
  std::vector<SubjectMotion> subjects;
  std::vector<TimedBatch> stream;  // sorted by (arrival, device, capture time)
  double crossing_time = 0.0;      // Crossing scenario only

  /// Ground truth of every subject at time t; ids are subject indices.
  LabeledFrame truth_at(double t) const {
    LabeledFrame f;
    f.t = t;
    for (std::size_t s = 0; s < subjects.size(); ++s)
      f.skeletons.push_back(
          {static_cast<std::uint64_t>(s), KeypointSet::from_positions(forward_kinematics(subjects[s].model, subjects[s].q(t)))});
    return f;
  }

  /// Ground truth sampled at the scene frame rate.
  std::vector<LabeledFrame> ground_truth() const {
    std::vector<LabeledFrame> out;
    const double dt = 1.0 / config.frame_rate;
    for (std::size_t k = 0; static_cast<double>(k) * dt <= config.duration + 1e-9; ++k)
      out.push_back(truth_at(static_cast<double>(k) * dt));
    return out;
  }
};

namespace detail {

inline SubjectMotion make_subject(const SkeletonModel& proto, const SceneConfig& cfg, std::size_t index,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  SubjectMotion m;
  m.model = proto;
  m.height = uni(cfg.min_height, cfg.max_height);
  for (std::size_t b = 0; b < m.model.bones().size(); ++b) m.model.set_bone_scale(b, m.height / proto.nominal_height());

  const bool still = cfg.scenario == Scenario::Static;
  m.joints.resize(proto.dof_count());
  for (std::size_t i = 0; i < proto.dof_count(); ++i) {
    const auto& d = proto.dofs()[i];
    if (d.base) continue;
    const double r = d.upper - d.lower;
    Harmonic h;
    h.c = std::clamp(0.0, d.lower + 0.15 * r, d.upper - 0.15 * r);
    h.w = uni(1.0, 3.0);
    h.phi = uni(0.0, 2.0 * std::numbers::pi);
    const double vmax = std::min(-d.velocity_lower, d.velocity_upper);
    h.a = still ? 0.0 : std::min(0.12 * r, 0.5 * vmax / h.w);
    m.joints[i] = h;
  }

  const double phase = uni(0.0, 2.0 * std::numbers::pi);
  if (cfg.scenario == Scenario::Crossing) {
    // Perpendicular straight paths through the arena center; the second
    // subject reaches the center 0.8 s after the first.
    const double speed = 1.0, offset = 0.8;
    const double t_center = 0.5 * cfg.duration + (index == 0 ? -0.5 : 0.5) * offset;
    const Vec3 dir = index == 0 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    m.straight = true;
    m.line_velocity = speed * dir;
    m.line_start = -speed * t_center * dir;
    m.yaw.c = std::atan2(dir.y(), dir.x());
  } else {
    // Centers spread on a circle so subjects start apart.
    const double ring = std::max(0.0, cfg.arena_radius - 1.2);
    const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(index) /
                                 static_cast<double>(std::max<std::size_t>(cfg.n_subjects, 1));
    const double cx = ring * std::cos(a), cy = ring * std::sin(a);
    const double amp = still ? 0.0 : 1.0;
    m.x1 = {cx, amp * uni(0.4, 0.8), uni(0.2, 0.5), uni(0.0, 6.3)};
    m.x2 = {0.0, amp * uni(0.1, 0.3), uni(0.5, 1.0), uni(0.0, 6.3)};
    m.y1 = {cy, amp * uni(0.4, 0.8), uni(0.2, 0.5), uni(0.0, 6.3)};
    m.y2 = {0.0, amp * uni(0.1, 0.3), uni(0.5, 1.0), uni(0.0, 6.3)};
    m.yaw = {uni(-std::numbers::pi, std::numbers::pi), amp * uni(0.2, 0.8), uni(0.2, 0.6), uni(0.0, 6.3)};
  }
  return m;
}

inline void check_motion(const SubjectMotion& m, double t) {
  const auto q = m.q(t);
  const auto qd = m.qdot(t);
  if (!within_limits(m.model, q, 1e-12)) throw std::logic_error("generated pose leaves the range of motion");
  for (std::size_t i = 0; i < m.model.dof_count(); ++i) {
    const auto& d = m.model.dofs()[i];
    const double v = qd[static_cast<Eigen::Index>(i)];
    if (!d.base && (v < d.velocity_lower - 1e-12 || v > d.velocity_upper + 1e-12))
      throw std::logic_error("generated motion exceeds the velocity box of " + d.name);
  }
}

// Squared distance between segments [p0, p1] and [q0, q1], plus the parameter
// of the closest point on the first segment.
inline std::pair<double, double> segment_distance2(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  const Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= 1e-15 && e <= 1e-15) return {r.squaredNorm(), 0.0};
  if (a <= 1e-15) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-15) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2), den = a * e - b * b;
      s = den > 1e-15 ? std::clamp((b * f - c * e) / den, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return {(p0 + s * d1 - (q0 + t * d2)).squaredNorm(), s};
}

inline bool is_left(std::size_t i) { return i % 2 == 0; }

// A keypoint is self-occluded when the device looks at it from well behind
// the body's opposite side, and occluded by another subject when the line of
// sight passes through that subject's trunk (a capsule from the floor to the
// shoulders).
inline bool occluded(const DeviceSpec& dev, const Vec3& p, std::size_t label, const KeypointPositions& own,
                     const std::vector<KeypointPositions>& others) {
  const auto L = index(KeypointLabel::LeftShoulder), R = index(KeypointLabel::RightShoulder);
  Vec3 lateral = own[L] - own[R];
  lateral.z() = 0.0;
  Vec3 view = dev.origin - p;
  view.z() = 0.0;
  if (lateral.norm() > 1e-9 && view.norm() > 1e-9) {
    const double side = lateral.normalized().dot(view.normalized());
    if (is_left(label) ? side < -0.5 : side > 0.5) return true;
  }
  constexpr double kTrunkRadius = 0.18;
  for (const auto& o : others) {
    const Vec3 top = 0.5 * (o[L] + o[R]);
    const Vec3 hips = 0.5 * (o[index(KeypointLabel::LeftHip)] + o[index(KeypointLabel::RightHip)]);
    const Vec3 floor(hips.x(), hips.y(), 0.1);
    const auto [d2, s] = segment_distance2(dev.origin, p, floor, top);
    if (d2 < kTrunkRadius * kTrunkRadius && s < 0.95) return true;
  }
  return false;
}

inline Vec3 to_float(const Vec3& v) {
  return Vec3(static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z()));
}

}  // namespace detail

/// Builds a deterministic scene: subject motions, ground truth, and the
/// corrupted, latency-stamped measurement stream of every device. Measured
/// coordinates and confidences are rounded to float so that the stream
/// survives the wire format unchanged.
inline Scene generate_scene(const SceneConfig& cfg, const SkeletonModel& proto = SkeletonModel::default_profile()) {
  cfg.validate();
  Scene scene;
  scene.config = cfg;
  scene.devices = cfg.device_layout();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t n_subjects = cfg.scenario == Scenario::Crossing ? 2 : cfg.n_subjects;
  for (std::size_t s = 0; s < n_subjects; ++s) scene.subjects.push_back(detail::make_subject(proto, cfg, s, rng));
  if (cfg.scenario == Scenario::Crossing) scene.crossing_time = 0.5 * cfg.duration;

  for (auto& dev : scene.devices) {
    if (cfg.devices.empty()) dev.phase = u(rng) / dev.rate_hz;
    const double period = 1.0 / dev.rate_hz;
    for (std::size_t k = 0;; ++k) {
      const double t = dev.phase + static_cast<double>(k) * period;
      if (t > cfg.duration) break;
      MeasurementBatch batch;
      batch.device_id = dev.id;
      batch.stamp = Timestamp::from_seconds(t);
      const double tc = batch.stamp.seconds();
      std::vector<KeypointPositions> truths;
      for (const auto& subject : scene.subjects) {
        detail::check_motion(subject, tc);
        truths.push_back(forward_kinematics(subject.model, subject.q(tc)));
      }
      for (std::size_t si = 0; si < truths.size(); ++si) {
        const auto& truth = truths[si];
        std::vector<KeypointPositions> others;
        if (cfg.occlusion)
          for (std::size_t o = 0; o < truths.size(); ++o)
            if (o != si) others.push_back(truths[o]);
        KeypointSet seen;
        for (std::size_t i = 0; i < kNumKeypoints; ++i) {
          if (!dev.sees(truth[i])) continue;
          if (cfg.occlusion && detail::occluded(dev, truth[i], i, truth, others)) continue;
          if (u(rng) < cfg.dropout) continue;
          Vec3 p = truth[i];
          if (cfg.noise_sigma > 0.0) p += cfg.noise_sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
          if (cfg.outlier_prob > 0.0 && u(rng) < cfg.outlier_prob) {
            Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
            p += (cfg.outlier_min + (cfg.outlier_max - cfg.outlier_min) * u(rng)) * dir.normalized();
          }
          const double conf = static_cast<float>(0.5 + 0.5 * u(rng));
          seen.set(label_at(i), detail::to_float(p), conf);
        }
        if (!seen.empty()) batch.persons.push_back(seen);
      }
      std::shuffle(batch.persons.begin(), batch.persons.end(), rng);
      const double lo = std::max(0.0, dev.latency_mean - dev.latency_jitter);
      const double latency = lo + (dev.latency_mean + dev.latency_jitter - lo) * u(rng);
      scene.stream.push_back({tc + latency, std::move(batch)});
    }
  }
  std::stable_sort(scene.stream.begin(), scene.stream.end(), [](const TimedBatch& a, const TimedBatch& b) {
    return std::tie(a.arrival, a.batch.device_id, a.batch.stamp) < std::tie(b.arrival, b.batch.device_id, b.batch.stamp);
  });
  return scene;
}

}  // namespace posefuse::harness
