#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "posefuse/keypoints.hpp"

namespace posefuse {

struct FusedTrack {
  std::uint64_t id = 0;
  KeypointPositions keypoints{};  // FK of q
  Eigen::VectorXd q;
  double rms_residual = std::numeric_limits<double>::quiet_NaN();  // NaN when no IK ran this tick
  std::size_t sources = 0;
  std::uint64_t age = 0;
  double covariance_trace = 0.0;
};

/// Output of one aggregator tick. Immutable once emitted.
struct FusedFrame {
  double t_a = 0.0;
  std::size_t measurements = 0;  // person measurements drained this tick
  std::vector<FusedTrack> tracks;
  std::vector<std::pair<std::string, double>> stage_ms;  // in execution order
  double total_ms = 0.0;
};

}  // namespace posefuse
