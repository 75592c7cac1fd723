#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace posefuse {

using Vec3 = Eigen::Vector3d;

/// The twelve tracked anatomical landmarks. The integer values are the wire
/// encoding and must never be reordered.
enum class KeypointLabel : std::uint8_t {
  LeftShoulder = 0,
  RightShoulder = 1,
  LeftElbow = 2,
  RightElbow = 3,
  LeftWrist = 4,
  RightWrist = 5,
  LeftHip = 6,
  RightHip = 7,
  LeftKnee = 8,
  RightKnee = 9,
  LeftAnkle = 10,
  RightAnkle = 11,
};

inline constexpr std::size_t kNumKeypoints = 12;

inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist",    "right_wrist",    "left_hip",   "right_hip",
    "left_knee",     "right_knee",     "left_ankle", "right_ankle",
};

constexpr std::size_t index(KeypointLabel label) { return static_cast<std::size_t>(label); }

constexpr KeypointLabel label_at(std::size_t i) { return static_cast<KeypointLabel>(i); }

constexpr std::string_view name(KeypointLabel label) { return kKeypointNames[index(label)]; }

inline std::optional<KeypointLabel> keypoint_from_name(std::string_view text) {
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    if (kKeypointNames[i] == text) return label_at(i);
  }
  return std::nullopt;
}

inline std::array<KeypointLabel, kNumKeypoints> all_keypoints() {
  std::array<KeypointLabel, kNumKeypoints> out{};
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out[i] = label_at(i);
  return out;
}

/// Positions of all twelve keypoints, e.g. the output of forward kinematics.
using KeypointPositions = std::array<Vec3, kNumKeypoints>;

/// A labeled keypoint set with a presence mask and per-point confidence.
/// Absent slots hold zeros so that equality comparison is well defined.
struct KeypointSet {
  std::array<Vec3, kNumKeypoints> position{};
  std::array<double, kNumKeypoints> confidence{};
  std::bitset<kNumKeypoints> present;

  KeypointSet() {
    position.fill(Vec3::Zero());
    confidence.fill(0.0);
  }

  static KeypointSet from_positions(const KeypointPositions& p, double conf = 1.0) {
    KeypointSet s;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) s.set(label_at(i), p[i], conf);
    return s;
  }

  bool has(KeypointLabel l) const { return present.test(index(l)); }
  const Vec3& at(KeypointLabel l) const { return position[index(l)]; }
  std::size_t count() const { return present.count(); }
  bool empty() const { return present.none(); }

  void set(KeypointLabel l, const Vec3& p, double conf = 1.0) {
    position[index(l)] = p;
    confidence[index(l)] = conf;
    present.set(index(l));
  }

  void erase(KeypointLabel l) {
    position[index(l)] = Vec3::Zero();
    confidence[index(l)] = 0.0;
    present.reset(index(l));
  }

  std::optional<Vec3> centroid() const {
    if (empty()) return std::nullopt;
    Vec3 sum = Vec3::Zero();
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      if (present.test(i)) sum += position[i];
    return sum / static_cast<double>(count());
  }

  friend bool operator==(const KeypointSet& a, const KeypointSet& b) {
    if (a.present != b.present) return false;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      if (a.position[i] != b.position[i] || a.confidence[i] != b.confidence[i]) return false;
    }
    return true;
  }
};

/// Capture time in integer microseconds, the resolution of the wire format.
struct Timestamp {
  std::uint64_t micros = 0;

  static Timestamp from_seconds(double s) {
    return Timestamp{static_cast<std::uint64_t>(s <= 0.0 ? 0.0 : s * 1e6 + 0.5)};
  }
  double seconds() const { return static_cast<double>(micros) * 1e-6; }

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

/// One person seen by one device at one capture time.
struct Measurement {
  std::uint32_t device_id = 0;
  Timestamp stamp;
  KeypointSet keypoints;

  double t() const { return stamp.seconds(); }
  friend bool operator==(const Measurement&, const Measurement&) = default;
};

/// Everything one device reported for a single capture: zero or more persons.
struct MeasurementBatch {
  std::uint32_t device_id = 0;
  Timestamp stamp;
  std::vector<KeypointSet> persons;

  std::vector<Measurement> measurements() const {
    std::vector<Measurement> out;
    out.reserve(persons.size());
    for (const auto& p : persons) out.push_back(Measurement{device_id, stamp, p});
    return out;
  }
  friend bool operator==(const MeasurementBatch&, const MeasurementBatch&) = default;
};

}  // namespace posefuse
