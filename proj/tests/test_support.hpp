#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "posefuse/skeleton.hpp"

namespace posefuse::testing {

// Uniform draw inside the ROM box; base DOFs get a modest random placement.
inline Eigen::VectorXd random_configuration(const SkeletonModel& model, std::mt19937_64& rng,
                                            double margin = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd q(static_cast<Eigen::Index>(model.dof_count()));
  for (std::size_t i = 0; i < model.dof_count(); ++i) {
    const auto& d = model.dofs()[i];
    double v;
    if (d.base) {
      v = d.kind == DofKind::Translational ? -2.0 + 4.0 * u(rng) : -M_PI + 2.0 * M_PI * u(rng);
    } else {
      const double lo = d.lower + margin * (d.upper - d.lower);
      const double hi = d.upper - margin * (d.upper - d.lower);
      v = lo + (hi - lo) * u(rng);
    }
    q[static_cast<Eigen::Index>(i)] = v;
  }
  return q;
}

inline double deg(double d) { return d * M_PI / 180.0; }

}  // namespace posefuse::testing

namespace posefuse::testing {

// Planar chain hanging from a fixed root along -z, every joint rotating about
// +y. The last joint carries the left wrist; the previous joint the left
// elbow; all remaining labels sit on the root.
inline SkeletonModel planar_chain(const std::vector<double>& lengths, double lo_deg = -170.0,
                                  double hi_deg = 170.0) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["root"] = "j0";
  doc["bones"] = nlohmann::json::array();
  doc["dofs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::string a = "j" + std::to_string(i), b = "j" + std::to_string(i + 1);
    doc["bones"].push_back({{"name", "link" + std::to_string(i)},
                            {"parent", a},
                            {"child", b},
                            {"rest_length", lengths[i]},
                            {"direction", {0, 0, -1}}});
  }
  // The first link is fixed to the root; DOFs sit on j1..jn-1 so that j1 acts
  // as the shoulder: a chain of lengths {0.1, L1, L2} has two DOFs.
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    doc["dofs"].push_back({{"name", "theta" + std::to_string(i)},
                           {"joint", "j" + std::to_string(i)},
                           {"kind", "revolute"},
                           {"axis", {0, 1, 0}},
                           {"limits_deg", {lo_deg, hi_deg}}});
  }
  nlohmann::json kp = nlohmann::json::object();
  for (auto n : kKeypointNames) kp[std::string(n)] = "j0";
  kp["left_wrist"] = "j" + std::to_string(lengths.size());
  kp["left_elbow"] = "j" + std::to_string(lengths.size() - 1);
  doc["keypoints"] = kp;
  return SkeletonModel::from_json(doc);
}

}  // namespace posefuse::testing
