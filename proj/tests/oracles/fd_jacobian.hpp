#pragma once

// Central differences of forward kinematics over every DOF.

#include <Eigen/Dense>

#include "posefuse/skeleton.hpp"

namespace posefuse::oracle {

inline Eigen::MatrixXd numeric_jacobian(const SkeletonModel& m, const Eigen::VectorXd& q, double h = 1e-6) {
  Eigen::MatrixXd out(3 * kNumKeypoints, q.size());
  for (Eigen::Index c = 0; c < q.size(); ++c) {
    Eigen::VectorXd qp = q, qm = q;
    qp[c] += h;
    qm[c] -= h;
    auto fp = forward_kinematics(m, qp);
    auto fm = forward_kinematics(m, qm);
    for (std::size_t k = 0; k < kNumKeypoints; ++k)
      out.block(3 * static_cast<Eigen::Index>(k), c, 3, 1) = (fp[k] - fm[k]) / (2 * h);
  }
  return out;
}

}  // namespace posefuse::oracle
