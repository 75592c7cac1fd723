#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "posefuse/hungarian.hpp"
#include "posefuse/keypoints.hpp"
#include "posefuse/track.hpp"

namespace posefuse {

struct AssociationConfig {
  double delta = 0.07;       // staleness window, seconds
  double max_range = 8.0;    // meters from the device origin
  std::size_t min_keypoints = 4;
  double gate = 1.0;         // meters
  double ttl = 2.0;          // seconds
  double sentinel = 1e6;     // cost when a pair shares no keypoint label
};

/// Multi-producer buffer of measurement batches. Producers push from their
/// own threads; the aggregator drains once per tick.
class SyncQueue {
 public:
  explicit SyncQueue(double delta = 0.07) : delta_(delta) {}

  void push(MeasurementBatch batch) {
    std::lock_guard lock(mu_);
    const auto key = std::make_pair(batch.stamp.micros, batch.device_id);
    auto it = std::upper_bound(buf_.begin(), buf_.end(), key, [](const auto& k, const MeasurementBatch& b) {
      return k < std::make_pair(b.stamp.micros, b.device_id);
    });
    buf_.insert(it, std::move(batch));
  }

  /// Removes everything queued and returns, per device, the newest batch with
  /// t_a - t_X < delta. Older batches are discarded.
  std::map<std::uint32_t, MeasurementBatch> drain(double t_a) {
    std::vector<MeasurementBatch> taken;
    {
      std::lock_guard lock(mu_);
      taken.swap(buf_);
    }
    std::map<std::uint32_t, MeasurementBatch> out;
    for (auto& b : taken) {
      if (!(t_a - b.stamp.seconds() < delta_)) continue;
      auto it = out.find(b.device_id);
      if (it == out.end() || it->second.stamp <= b.stamp) out[b.device_id] = std::move(b);
    }
    return out;
  }

  /// Latest capture time currently queued.
  std::optional<double> newest() const {
    std::lock_guard lock(mu_);
    if (buf_.empty()) return std::nullopt;
    return buf_.back().stamp.seconds();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return buf_.size();
  }

  double delta() const { return delta_; }

 private:
  double delta_;
  mutable std::mutex mu_;
  std::vector<MeasurementBatch> buf_;  // ordered by (t_X, device)
};

/// Drops keypoints farther than max_range from the device origin; returns
/// nothing when fewer than k keypoints survive.
inline std::optional<KeypointSet> prefilter(const KeypointSet& kp, double max_range,
                                            const std::optional<Vec3>& origin, std::size_t k) {
  KeypointSet out = kp;
  if (origin) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      if (out.present.test(i) && (out.position[i] - *origin).norm() > max_range) out.erase(label_at(i));
    }
  }
  if (out.count() < k) return std::nullopt;
  return out;
}

/// Second-smallest element; the smallest when only one value exists.
inline std::optional<double> kappa2(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  if (values.size() == 1) return values[0];
  std::nth_element(values.begin(), values.begin() + 1, values.end());
  return values[1];
}

/// Distance between a track's keypoints and one measurement: kappa2 over the
/// Euclidean distances of commonly present labels.
inline double association_cost(const KeypointPositions& track, const KeypointSet& m, double sentinel = 1e6) {
  double lo1 = std::numeric_limits<double>::infinity(), lo2 = lo1;
  std::size_t n = 0;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    if (!m.present.test(i)) continue;
    const double d = (track[i] - m.position[i]).norm();
    ++n;
    if (d < lo1) {
      lo2 = lo1;
      lo1 = d;
    } else if (d < lo2) {
      lo2 = d;
    }
  }
  if (n == 0) return sentinel;
  return n == 1 ? lo1 : lo2;
}

inline Eigen::MatrixXd cost_matrix(const std::vector<KeypointPositions>& tracks, const std::vector<KeypointSet>& ms,
                                   double sentinel = 1e6) {
  Eigen::MatrixXd W(static_cast<Eigen::Index>(tracks.size()), static_cast<Eigen::Index>(ms.size()));
  for (std::size_t r = 0; r < tracks.size(); ++r)
    for (std::size_t c = 0; c < ms.size(); ++c)
      W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = association_cost(tracks[r], ms[c], sentinel);
  return W;
}

/// Minimum-cost matching; pairs costing more than the gate are left unmatched.
inline std::vector<std::pair<int, int>> assign(const Eigen::MatrixXd& W, double gate = std::numeric_limits<double>::infinity()) {
  std::vector<std::pair<int, int>> out;
  auto rows = hungarian(W);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int c = rows[r];
    if (c >= 0 && W(static_cast<Eigen::Index>(r), c) <= gate) out.emplace_back(static_cast<int>(r), c);
  }
  return out;
}

/// Removes tracks not seen for longer than ttl. Returns the removed ids.
inline std::vector<std::uint64_t> expire_tracks(std::vector<BodyTrack>& tracks, double t_a, double ttl) {
  std::vector<std::uint64_t> gone;
  std::erase_if(tracks, [&](const BodyTrack& t) {
    if (t_a - t.last_seen() > ttl) {
      gone.push_back(t.id());
      return true;
    }
    return false;
  });
  return gone;
}

}  // namespace posefuse
