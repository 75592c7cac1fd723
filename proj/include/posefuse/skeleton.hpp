#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <json.hpp>

#include "posefuse/embedded_profiles.hpp"
#include "posefuse/errors.hpp"
#include "posefuse/keypoints.hpp"

namespace posefuse {

enum class DofKind { Translational, Revolute };

/// One scalar degree of freedom. Limits are radians (or meters for
/// translational DOFs); velocity limits are rad/s (or m/s). Floating-base
/// DOFs carry infinite limits.
struct DofSpec {
  std::string name;
  DofKind kind = DofKind::Revolute;
  Vec3 axis = Vec3::UnitZ();
  int joint = 0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  double velocity_lower = -std::numeric_limits<double>::infinity();
  double velocity_upper = std::numeric_limits<double>::infinity();
  bool base = false;
};

/// A rigid link from `parent` joint to `child` joint. The child joint sits at
/// scale * rest_length * direction in the parent joint frame.
struct BoneSpec {
  std::string name;
  int parent = -1;
  int child = -1;
  double rest_length = 0.0;
  Vec3 direction = Vec3::UnitZ();
  double scale = 1.0;

  Vec3 offset() const { return scale * rest_length * direction; }
};

struct JointSpec {
  std::string name;
  int parent = -1;
  int bone = -1;
  std::vector<int> dofs;
};

/// Parametric kinematic tree: joints in topological order, scalar DOFs applied
/// per joint in declaration order (intrinsic sequence), bones with per-bone
/// scale factors, and the keypoint attachment map.
class SkeletonModel {
 public:
  static SkeletonModel from_json(const nlohmann::json& doc);

  static SkeletonModel parse(std::string_view text) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("", std::string("malformed document: ") + e.what());
    }
    return from_json(doc);
  }

  static SkeletonModel load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open skeleton document");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  static const SkeletonModel& default_profile() {
    static const SkeletonModel model = parse(embedded::kDefaultSkeletonJson);
    return model;
  }

  const std::string& name() const { return name_; }
  double nominal_height() const { return nominal_height_; }
  std::size_t dof_count() const { return dofs_.size(); }
  const std::vector<DofSpec>& dofs() const { return dofs_; }
  const std::vector<JointSpec>& joints() const { return joints_; }
  const std::vector<BoneSpec>& bones() const { return bones_; }
  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& upper() const { return upper_; }
  const Eigen::VectorXd& velocity_lower() const { return vel_lower_; }
  const Eigen::VectorXd& velocity_upper() const { return vel_upper_; }
  const Eigen::VectorXd& base_pose() const { return base_pose_; }
  int keypoint_joint(KeypointLabel l) const { return keypoint_joint_[index(l)]; }

  /// Root DOFs in declaration order followed by zeros elsewhere.
  Eigen::VectorXd rest_configuration() const {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dof_count()));
    Eigen::Index b = 0;
    for (std::size_t i = 0; i < dofs_.size(); ++i) {
      if (dofs_[i].base) q[static_cast<Eigen::Index>(i)] = base_pose_[b++];
    }
    return q;
  }

  std::optional<int> find_dof(std::string_view n) const { return find(dof_index_, n); }
  std::optional<int> find_joint(std::string_view n) const { return find(joint_index_, n); }
  std::optional<int> find_bone(std::string_view n) const { return find(bone_index_, n); }

  void set_bone_scale(std::size_t bone, double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw std::invalid_argument("bone scale must be positive and finite");
    bones_.at(bone).scale = scale;
  }

  /// True when `joint` lies in the subtree rooted at `ancestor` (inclusive).
  bool in_subtree(int ancestor, int joint) const {
    return subtree_[static_cast<std::size_t>(ancestor) * joints_.size() +
                    static_cast<std::size_t>(joint)];
  }

 private:
  template <class Map>
  static std::optional<int> find(const Map& m, std::string_view n) {
    auto it = m.find(std::string(n));
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  std::string name_;
  double nominal_height_ = 1.75;
  std::vector<DofSpec> dofs_;
  std::vector<JointSpec> joints_;
  std::vector<BoneSpec> bones_;
  std::array<int, kNumKeypoints> keypoint_joint_{};
  std::unordered_map<std::string, int> dof_index_, joint_index_, bone_index_;
  std::vector<bool> subtree_;
  Eigen::VectorXd lower_, upper_, vel_lower_, vel_upper_, base_pose_;
};

namespace detail {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

inline Vec3 parse_unit_vector(const nlohmann::json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) throw ConfigError(path, "expected a 3-vector");
  Vec3 a;
  for (int i = 0; i < 3; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number()) throw ConfigError(path, "expected numbers");
    a[i] = v[static_cast<std::size_t>(i)].get<double>();
  }
  if (std::abs(a.norm() - 1.0) > 1e-6) throw ConfigError(path, "vector must have unit norm");
  return a.normalized();
}

inline std::pair<double, double> parse_interval(const nlohmann::json& v, const std::string& path,
                                                double factor) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(path, "expected [lower, upper]");
  const double lo = v[0].get<double>() * factor;
  const double hi = v[1].get<double>() * factor;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError(path, "limits must be finite");
  if (lo > hi) throw ConfigError(path, "lower limit exceeds upper limit");
  return {lo, hi};
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  const std::string& path) {
  if (!obj.contains(key) || !obj[key].is_string())
    throw ConfigError(path + "." + key, "missing or not a string");
  return obj[key].get<std::string>();
}

}  // namespace detail

inline SkeletonModel SkeletonModel::from_json(const nlohmann::json& doc) {
  using detail::require_string;
  if (!doc.is_object()) throw ConfigError("", "malformed document: expected an object");
  if (doc.contains("version") && doc["version"] != 1)
    throw ConfigError("version", "unsupported skeleton document version");

  SkeletonModel m;
  m.name_ = doc.value("name", std::string("unnamed"));
  m.nominal_height_ = doc.value("nominal_height", 1.75);
  if (!(m.nominal_height_ > 0.0)) throw ConfigError("nominal_height", "must be positive");

  const std::string root = require_string(doc, "root", "");
  if (!doc.contains("bones") || !doc["bones"].is_array())
    throw ConfigError("bones", "missing bone list");

  // Collect joints from the bone list; every non-root joint needs exactly one
  // incoming bone.
  struct RawBone {
    BoneSpec spec;
    std::string parent, child;
  };
  std::vector<RawBone> raw;
  std::unordered_map<std::string, std::size_t> incoming;
  for (std::size_t i = 0; i < doc["bones"].size(); ++i) {
    const auto& b = doc["bones"][i];
    const std::string path = "bones[" + std::to_string(i) + "]";
    RawBone rb;
    rb.spec.name = require_string(b, "name", path);
    rb.parent = require_string(b, "parent", path);
    rb.child = require_string(b, "child", path);
    if (rb.parent == rb.child) throw ConfigError(path, "cycle: bone parent equals its child");
    if (rb.child == root) throw ConfigError(path + ".child", "cycle: root joint cannot be a child");
    if (!b.contains("rest_length") || !b["rest_length"].is_number() ||
        !(b["rest_length"].get<double>() > 0.0))
      throw ConfigError(path + ".rest_length", "must be a positive number");
    rb.spec.rest_length = b["rest_length"].get<double>();
    rb.spec.direction = detail::parse_unit_vector(b.value("direction", nlohmann::json()),
                                                  path + ".direction");
    rb.spec.scale = b.value("scale", 1.0);
    if (!(rb.spec.scale > 0.0)) throw ConfigError(path + ".scale", "scale must be positive");
    if (m.bone_index_.count(rb.spec.name)) throw ConfigError(path + ".name", "duplicate bone");
    if (incoming.count(rb.child))
      throw ConfigError(path + ".child", "joint '" + rb.child + "' already has a parent");
    incoming[rb.child] = i;
    m.bone_index_[rb.spec.name] = static_cast<int>(i);
    raw.push_back(std::move(rb));
  }

  // Topological order by breadth-first traversal from the root. Joints that
  // are never reached sit on a cycle detached from the root.
  std::unordered_map<std::string, std::vector<std::size_t>> children;
  for (std::size_t i = 0; i < raw.size(); ++i) children[raw[i].parent].push_back(i);
  m.joints_.push_back(JointSpec{root, -1, -1, {}});
  m.joint_index_[root] = 0;
  for (std::size_t head = 0; head < m.joints_.size(); ++head) {
    const std::string jname = m.joints_[head].name;
    for (std::size_t bi : children[jname]) {
      const std::string& child = raw[bi].child;
      if (m.joint_index_.count(child))
        throw ConfigError("bones[" + std::to_string(bi) + "]", "cycle through joint '" + child + "'");
      m.joint_index_[child] = static_cast<int>(m.joints_.size());
      m.joints_.push_back(JointSpec{child, static_cast<int>(head), static_cast<int>(bi), {}});
    }
  }
  if (m.joints_.size() != raw.size() + 1) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!m.joint_index_.count(raw[i].child))
        throw ConfigError("bones[" + std::to_string(i) + "]",
                          "cycle: joint '" + raw[i].child + "' is not reachable from the root");
    }
  }
  for (auto& rb : raw) {
    rb.spec.parent = m.joint_index_.at(rb.parent);
    rb.spec.child = m.joint_index_.at(rb.child);
    m.bones_.push_back(rb.spec);
  }

  if (!doc.contains("dofs") || !doc["dofs"].is_array()) throw ConfigError("dofs", "missing DOF list");
  for (std::size_t i = 0; i < doc["dofs"].size(); ++i) {
    const auto& d = doc["dofs"][i];
    const std::string path = "dofs[" + std::to_string(i) + "]";
    DofSpec spec;
    spec.name = require_string(d, "name", path);
    if (m.dof_index_.count(spec.name)) throw ConfigError(path + ".name", "duplicate DOF");
    const std::string joint = require_string(d, "joint", path);
    auto j = m.joint_index_.find(joint);
    if (j == m.joint_index_.end()) throw ConfigError(path + ".joint", "unknown joint '" + joint + "'");
    spec.joint = j->second;
    const std::string kind = require_string(d, "kind", path);
    if (kind == "revolute")
      spec.kind = DofKind::Revolute;
    else if (kind == "translational")
      spec.kind = DofKind::Translational;
    else
      throw ConfigError(path + ".kind", "expected 'revolute' or 'translational'");
    spec.axis = detail::parse_unit_vector(d.value("axis", nlohmann::json()), path + ".axis");
    spec.base = spec.joint == 0;
    const bool has_limits = d.contains("limits_deg") || d.contains("limits");
    if (spec.base) {
      if (has_limits || d.contains("velocity_limits"))
        throw ConfigError(path, "floating-base DOFs must be unbounded");
    } else {
      if (d.contains("limits_deg")) {
        if (spec.kind != DofKind::Revolute)
          throw ConfigError(path + ".limits_deg", "degrees only apply to revolute DOFs");
        std::tie(spec.lower, spec.upper) =
            detail::parse_interval(d["limits_deg"], path + ".limits_deg", std::numbers::pi / 180.0);
      } else if (d.contains("limits")) {
        std::tie(spec.lower, spec.upper) = detail::parse_interval(d["limits"], path + ".limits", 1.0);
      } else if (spec.kind == DofKind::Revolute) {
        throw ConfigError(path + ".limits_deg", "non-base revolute DOFs need finite limits");
      }
      if (d.contains("velocity_limits")) {
        std::tie(spec.velocity_lower, spec.velocity_upper) =
            detail::parse_interval(d["velocity_limits"], path + ".velocity_limits", 1.0);
        if (spec.velocity_lower > 0.0 || spec.velocity_upper < 0.0)
          throw ConfigError(path + ".velocity_limits", "velocity limits must bracket zero");
      }
    }
    m.dof_index_[spec.name] = static_cast<int>(i);
    m.joints_[static_cast<std::size_t>(spec.joint)].dofs.push_back(static_cast<int>(i));
    m.dofs_.push_back(spec);
  }

  std::size_t n_base = 0;
  for (const auto& d : m.dofs_) n_base += d.base ? 1 : 0;
  m.base_pose_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_base));
  if (doc.contains("base_pose")) {
    const auto& bp = doc["base_pose"];
    if (!bp.is_array() || bp.size() != n_base)
      throw ConfigError("base_pose", "expected one value per floating-base DOF");
    for (std::size_t i = 0; i < n_base; ++i) {
      if (!bp[i].is_number()) throw ConfigError("base_pose", "expected numbers");
      m.base_pose_[static_cast<Eigen::Index>(i)] = bp[i].get<double>();
    }
  }

  if (!doc.contains("keypoints") || !doc["keypoints"].is_object())
    throw ConfigError("keypoints", "missing keypoint map");
  std::bitset<kNumKeypoints> seen;
  for (const auto& [label, joint] : doc["keypoints"].items()) {
    const std::string path = "keypoints." + label;
    auto kp = keypoint_from_name(label);
    if (!kp) throw ConfigError(path, "unknown keypoint label");
    if (!joint.is_string()) throw ConfigError(path, "expected a joint name");
    auto j = m.joint_index_.find(joint.get<std::string>());
    if (j == m.joint_index_.end()) throw ConfigError(path, "unknown joint '" + joint.get<std::string>() + "'");
    m.keypoint_joint_[index(*kp)] = j->second;
    seen.set(index(*kp));
  }
  if (!seen.all()) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      if (!seen.test(i)) throw ConfigError("keypoints." + std::string(kKeypointNames[i]), "label not mapped");
  }

  const auto n = static_cast<Eigen::Index>(m.dofs_.size());
  m.lower_.resize(n);
  m.upper_.resize(n);
  m.vel_lower_.resize(n);
  m.vel_upper_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& d = m.dofs_[static_cast<std::size_t>(i)];
    m.lower_[i] = d.lower;
    m.upper_[i] = d.upper;
    m.vel_lower_[i] = d.velocity_lower;
    m.vel_upper_[i] = d.velocity_upper;
  }

  const std::size_t nj = m.joints_.size();
  m.subtree_.assign(nj * nj, false);
  for (std::size_t j = 0; j < nj; ++j) {
    for (int a = static_cast<int>(j); a >= 0; a = m.joints_[static_cast<std::size_t>(a)].parent)
      m.subtree_[static_cast<std::size_t>(a) * nj + j] = true;
  }
  return m;
}

/// World-frame joint placements for one configuration, plus the world axis
/// and origin of every DOF. Reusable across calls to avoid reallocation.
class PoseEvaluator {
 public:
  explicit PoseEvaluator(const SkeletonModel& model) : model_(&model) {
    rot_.resize(model.joints().size());
    pos_.resize(model.joints().size());
    axis_.resize(model.dof_count());
    origin_.resize(model.dof_count());
  }

  const SkeletonModel& model() const { return *model_; }

  void update(const Eigen::Ref<const Eigen::VectorXd>& q) {
    const auto& m = *model_;
    if (static_cast<std::size_t>(q.size()) != m.dof_count())
      throw DimensionError("configuration has " + std::to_string(q.size()) + " entries, model has " +
                           std::to_string(m.dof_count()) + " DOFs");
    const auto& joints = m.joints();
    for (std::size_t j = 0; j < joints.size(); ++j) {
      const auto& js = joints[j];
      Eigen::Matrix3d r;
      Vec3 p;
      if (js.parent < 0) {
        r.setIdentity();
        p.setZero();
      } else {
        const auto pj = static_cast<std::size_t>(js.parent);
        r = rot_[pj];
        p = pos_[pj] + rot_[pj] * m.bones()[static_cast<std::size_t>(js.bone)].offset();
      }
      for (int d : js.dofs) {
        const auto& spec = m.dofs()[static_cast<std::size_t>(d)];
        const double v = q[d];
        axis_[static_cast<std::size_t>(d)] = r * spec.axis;
        origin_[static_cast<std::size_t>(d)] = p;
        if (spec.kind == DofKind::Translational)
          p += axis_[static_cast<std::size_t>(d)] * v;
        else
          r = r * Eigen::AngleAxisd(v, spec.axis).toRotationMatrix();
      }
      rot_[j] = r;
      pos_[j] = p;
    }
  }

  const Vec3& joint_position(std::size_t j) const { return pos_[j]; }
  const Eigen::Matrix3d& joint_rotation(std::size_t j) const { return rot_[j]; }

  const Vec3& keypoint(KeypointLabel l) const {
    return pos_[static_cast<std::size_t>(model_->keypoint_joint(l))];
  }

  KeypointPositions keypoints() const {
    KeypointPositions out;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) out[i] = keypoint(label_at(i));
    return out;
  }

  /// Writes the 3 x dof positional Jacobian of one keypoint into `out`.
  template <class Derived>
  void jacobian(KeypointLabel l, Eigen::MatrixBase<Derived> const& out_const) const {
    auto& out = const_cast<Eigen::MatrixBase<Derived>&>(out_const);
    const auto& m = *model_;
    const int kj = m.keypoint_joint(l);
    const Vec3& pk = keypoint(l);
    for (std::size_t d = 0; d < m.dof_count(); ++d) {
      const auto& spec = m.dofs()[d];
      const auto col = static_cast<Eigen::Index>(d);
      if (!m.in_subtree(spec.joint, kj)) {
        out.col(col).setZero();
      } else if (spec.kind == DofKind::Translational) {
        out.col(col) = axis_[d];
      } else {
        out.col(col) = axis_[d].cross(pk - origin_[d]);
      }
    }
  }

 private:
  const SkeletonModel* model_;
  std::vector<Eigen::Matrix3d> rot_;
  std::vector<Vec3> pos_;
  std::vector<Vec3> axis_;
  std::vector<Vec3> origin_;
};

inline KeypointPositions forward_kinematics(const SkeletonModel& model,
                                            const Eigen::Ref<const Eigen::VectorXd>& q) {
  PoseEvaluator eval(model);
  eval.update(q);
  return eval.keypoints();
}

/// Analytic positional Jacobian of the selected keypoints, stacked in order.
inline Eigen::MatrixXd jacobian(const SkeletonModel& model, const Eigen::Ref<const Eigen::VectorXd>& q,
                                std::span<const KeypointLabel> labels) {
  PoseEvaluator eval(model);
  eval.update(q);
  Eigen::MatrixXd jac(3 * static_cast<Eigen::Index>(labels.size()),
                      static_cast<Eigen::Index>(model.dof_count()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (index(labels[i]) >= kNumKeypoints) throw std::invalid_argument("unknown keypoint label");
    eval.jacobian(labels[i], jac.middleRows(3 * static_cast<Eigen::Index>(i), 3));
  }
  return jac;
}

/// Clips every bounded coordinate into [lower, upper]; floating-base
/// coordinates have infinite bounds and pass through untouched.
inline Eigen::VectorXd clamp_to_limits(const SkeletonModel& model, const Eigen::Ref<const Eigen::VectorXd>& q) {
  if (static_cast<std::size_t>(q.size()) != model.dof_count())
    throw DimensionError("configuration size does not match the model");
  return q.cwiseMax(model.lower()).cwiseMin(model.upper());
}

inline bool within_limits(const SkeletonModel& model, const Eigen::Ref<const Eigen::VectorXd>& q,
                          double tol = 0.0) {
  return ((q - model.lower()).array() >= -tol).all() && ((model.upper() - q).array() >= -tol).all();
}

}  // namespace posefuse
