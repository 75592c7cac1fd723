#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "posefuse/association.hpp"
#include "posefuse/errors.hpp"
#include "posefuse/track.hpp"

namespace posefuse {

struct PipelineConfig {
  double tick_rate = 30.0;  // Hz
  double latency_budget_ms = 33.0;
  unsigned threads = 1;  // per-track update workers; 0 picks the hardware count
  double ik_damping = 1.0;  // diagonal of the IK damping matrix
  double ik_slack_weight = 1.0;  // diagonal of the per-keypoint slack weight
  AssociationConfig association;
  TrackConfig track;
  std::map<std::uint32_t, Vec3> device_origins;
  std::string skeleton_file;  // empty: bundled default profile
  std::string proportions_file;

  double period() const { return 1.0 / tick_rate; }

  void validate() const {
    if (!(tick_rate > 0.0)) throw ConfigError("tick_rate", "must be > 0");
    if (!(association.delta > 0.0)) throw ConfigError("association.delta", "must be > 0");
    if (!(association.ttl > 0.0)) throw ConfigError("association.ttl", "must be > 0");
    if (!(association.gate > 0.0)) throw ConfigError("association.gate", "must be > 0");
    if (association.min_keypoints < 1) throw ConfigError("association.k", "must be >= 1");
    if (!(ik_damping > 0.0)) throw ConfigError("ik.damping", "must be > 0");
    if (!(ik_slack_weight > 0.0)) throw ConfigError("ik.slack_weight", "must be > 0");
    if (!(track.ik.gamma > 0.0 && track.ik.gamma <= 1.0)) throw ConfigError("ik.gamma", "must lie in (0, 1]");
    if (track.ik.max_outer_iterations < 1) throw ConfigError("ik.max_iterations", "must be >= 1");
    if (!(track.observer.R > 0.0)) throw ConfigError("observer.r", "must be > 0");
    if (!(track.scaling.band >= 0.0)) throw ConfigError("scaling.band", "must be >= 0");
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& a = c.association;
  const auto& ik = c.track.ik;
  const auto& s = c.track.scaling;
  const auto& o = c.track.observer;
  nlohmann::json origins = nlohmann::json::object();
  for (const auto& [id, p] : c.device_origins) origins[std::to_string(id)] = {p.x(), p.y(), p.z()};
  return {
      {"tick_rate", c.tick_rate},
      {"latency_budget_ms", c.latency_budget_ms},
      {"threads", c.threads},
      {"skeleton", c.skeleton_file},
      {"proportions", c.proportions_file},
      {"association",
       {{"delta", a.delta}, {"max_range", a.max_range}, {"k", a.min_keypoints}, {"gate", a.gate}, {"ttl", a.ttl}}},
      {"scaling",
       {{"band", s.band},
        {"reject_tolerance", s.reject_tolerance},
        {"min_pairs", s.min_pairs},
        {"min_height", s.min_height},
        {"max_height", s.max_height}}},
      {"ik",
       {{"damping", c.ik_damping},
        {"slack_weight", c.ik_slack_weight},
        {"gamma", ik.gamma},
        {"max_iterations", ik.max_outer_iterations},
        {"convergence_eps", ik.convergence_eps},
        {"base_velocity_cap", ik.base_velocity_cap},
        {"confidence_weighting", ik.confidence_weighting},
        {"weighting", ik.weighting == SourceWeighting::Sum ? "sum" : "normalized"},
        {"qp_tol", ik.qp_tol},
        {"qp_max_iter", ik.qp_max_iter}}},
      {"observer",
       {{"sigma", o.Sigma(0, 0)},
        {"r", o.R},
        {"bootstrap_variance", {o.bootstrap_variance[0], o.bootstrap_variance[1], o.bootstrap_variance[2]}}}},
      {"track", {{"max_step_dt", c.track.max_step_dt}}},
      {"device_origins", origins},
  };
}

namespace detail {

template <class T>
void read(const nlohmann::json& doc, const std::string& path, T& field) {
  std::string p = "/" + path;
  std::replace(p.begin(), p.end(), '.', '/');
  const nlohmann::json::json_pointer ptr(p);
  if (!doc.contains(ptr)) return;
  try {
    field = doc.at(ptr).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace detail

/// Applies every key present in `doc` on top of `c`. Unknown keys are errors
/// so that typos do not pass silently.
inline void merge_config(PipelineConfig& c, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("", "config must be an object");
  const nlohmann::json known = to_json(c);
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw ConfigError(key, "unknown key");
    if (known.at(key).is_object() && key != "device_origins") {
      if (!value.is_object()) throw ConfigError(key, "expected an object");
      for (const auto& [sub, v] : value.items())
        if (!known.at(key).contains(sub)) throw ConfigError(key + "." + sub, "unknown key");
    }
  }
  using detail::read;
  read(doc, "tick_rate", c.tick_rate);
  read(doc, "latency_budget_ms", c.latency_budget_ms);
  read(doc, "threads", c.threads);
  read(doc, "skeleton", c.skeleton_file);
  read(doc, "proportions", c.proportions_file);
  auto& a = c.association;
  read(doc, "association.delta", a.delta);
  read(doc, "association.max_range", a.max_range);
  read(doc, "association.k", a.min_keypoints);
  read(doc, "association.gate", a.gate);
  read(doc, "association.ttl", a.ttl);
  c.track.min_keypoints = a.min_keypoints;
  auto& s = c.track.scaling;
  read(doc, "scaling.band", s.band);
  read(doc, "scaling.reject_tolerance", s.reject_tolerance);
  read(doc, "scaling.min_pairs", s.min_pairs);
  read(doc, "scaling.min_height", s.min_height);
  read(doc, "scaling.max_height", s.max_height);
  auto& ik = c.track.ik;
  read(doc, "ik.damping", c.ik_damping);
  read(doc, "ik.slack_weight", c.ik_slack_weight);
  read(doc, "ik.gamma", ik.gamma);
  read(doc, "ik.max_iterations", ik.max_outer_iterations);
  read(doc, "ik.convergence_eps", ik.convergence_eps);
  read(doc, "ik.base_velocity_cap", ik.base_velocity_cap);
  read(doc, "ik.confidence_weighting", ik.confidence_weighting);
  read(doc, "ik.qp_tol", ik.qp_tol);
  read(doc, "ik.qp_max_iter", ik.qp_max_iter);
  std::string weighting = ik.weighting == SourceWeighting::Sum ? "sum" : "normalized";
  read(doc, "ik.weighting", weighting);
  if (weighting == "sum")
    ik.weighting = SourceWeighting::Sum;
  else if (weighting == "normalized")
    ik.weighting = SourceWeighting::Normalized;
  else
    throw ConfigError("ik.weighting", "expected 'normalized' or 'sum'");
  ik.D = c.ik_slack_weight * Eigen::Matrix3d::Identity();
  auto& o = c.track.observer;
  double sigma = o.Sigma(0, 0);
  read(doc, "observer.sigma", sigma);
  o.Sigma = sigma * Eigen::Matrix3d::Identity();
  read(doc, "observer.r", o.R);
  if (doc.contains("observer") && doc["observer"].contains("bootstrap_variance")) {
    std::array<double, 3> v{};
    read(doc, "observer.bootstrap_variance", v);
    o.bootstrap_variance = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  read(doc, "track.max_step_dt", c.track.max_step_dt);
  if (doc.contains("device_origins")) {
    for (const auto& [id, p] : doc.at("device_origins").items()) {
      const std::string path = "device_origins." + id;
      try {
        c.device_origins[static_cast<std::uint32_t>(std::stoul(id))] =
            Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
      } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
      }
    }
  }
  c.validate();
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
  PipelineConfig c;
  merge_config(c, doc);
  return c;
}

/// Applies a `dotted.key=value` override; the value is parsed as JSON and
/// falls back to a plain string.
inline void apply_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "expected key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json doc = nlohmann::json::object();
  const auto dot = key.find('.');
  if (dot == std::string::npos)
    doc[key] = value;
  else
    doc[key.substr(0, dot)][key.substr(dot + 1)] = value;
  merge_config(c, doc);
}

}  // namespace posefuse
