#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "posefuse/embedded_profiles.hpp"
#include "posefuse/errors.hpp"
#include "posefuse/keypoints.hpp"
#include "posefuse/skeleton.hpp"

namespace posefuse {

/// A keypoint pair whose distance is a fixed fraction of stature, and the
/// skeleton bones that realize it.
struct ProportionSegment {
  std::string name;
  KeypointLabel from = KeypointLabel::LeftShoulder;
  KeypointLabel to = KeypointLabel::LeftElbow;
  double fraction = 0.0;
  std::vector<std::string> bones;
};

class ProportionTable {
 public:
  static ProportionTable from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("", "malformed document: expected an object");
    if (doc.contains("version") && doc["version"] != 1)
      throw ConfigError("version", "unsupported proportion table version");
    ProportionTable t;
    t.nominal_height_ = doc.value("nominal_height", 1.75);
    if (!(t.nominal_height_ > 0.0)) throw ConfigError("nominal_height", "must be positive");
    if (!doc.contains("segments") || !doc["segments"].is_array())
      throw ConfigError("segments", "missing segment list");
    for (std::size_t i = 0; i < doc["segments"].size(); ++i) {
      const auto& s = doc["segments"][i];
      const std::string path = "segments[" + std::to_string(i) + "]";
      ProportionSegment seg;
      seg.name = detail::require_string(s, "name", path);
      auto from = keypoint_from_name(detail::require_string(s, "from", path));
      auto to = keypoint_from_name(detail::require_string(s, "to", path));
      if (!from) throw ConfigError(path + ".from", "unknown keypoint label");
      if (!to) throw ConfigError(path + ".to", "unknown keypoint label");
      if (*from == *to) throw ConfigError(path, "segment endpoints must differ");
      seg.from = *from;
      seg.to = *to;
      if (!s.contains("fraction") || !s["fraction"].is_number())
        throw ConfigError(path + ".fraction", "missing or not a number");
      seg.fraction = s["fraction"].get<double>();
      if (!(seg.fraction > 0.0 && seg.fraction < 1.0))
        throw ConfigError(path + ".fraction", "fraction must lie in (0, 1)");
      if (!s.contains("bones") || !s["bones"].is_array() || s["bones"].empty())
        throw ConfigError(path + ".bones", "expected a non-empty list of bone names");
      for (const auto& b : s["bones"]) seg.bones.push_back(b.get<std::string>());
      t.segments_.push_back(std::move(seg));
    }
    return t;
  }

  static ProportionTable parse(std::string_view text) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("", std::string("malformed document: ") + e.what());
    }
    return from_json(doc);
  }

  static ProportionTable load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open proportion table");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  static const ProportionTable& default_table() {
    static const ProportionTable table = parse(embedded::kDefaultProportionsJson);
    return table;
  }

  double nominal_height() const { return nominal_height_; }
  const std::vector<ProportionSegment>& segments() const { return segments_; }

  double expected_length(std::size_t seg, double height) const { return segments_[seg].fraction * height; }

 private:
  double nominal_height_ = 1.75;
  std::vector<ProportionSegment> segments_;
};

struct ScalingConfig {
  double band = 0.05;              // per-bone clip around s_avg
  double reject_tolerance = 0.20;  // relative bone-length deviation
  std::size_t min_pairs = 2;       // connected pairs needed to re-estimate
  double min_height = 1.0;         // plausibility gate on pair-implied heights, meters
  double max_height = 2.5;
};

/// Per-track anthropometric state. `per_bone` is indexed like the skeleton's
/// bone list.
struct ScaleState {
  double s_avg = 1.0;
  std::vector<double> per_bone;
  std::size_t history_count = 0;
  std::vector<double> segment_sum;
  std::vector<std::size_t> segment_count;
};

/// Mean of distance / fraction over every segment whose two endpoints are
/// present; absent when no such segment exists.
inline std::optional<double> estimate_height(const KeypointSet& kp, const ProportionTable& table) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& seg : table.segments()) {
    if (!kp.has(seg.from) || !kp.has(seg.to)) continue;
    sum += (kp.at(seg.from) - kp.at(seg.to)).norm() / seg.fraction;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::optional<double> estimate_height(const Measurement& m, const ProportionTable& table) {
  return estimate_height(m.keypoints, table);
}

namespace detail {

inline std::vector<std::vector<int>> segment_bones(const ProportionTable& table, const SkeletonModel& model) {
  std::vector<std::vector<int>> out;
  out.reserve(table.segments().size());
  for (const auto& seg : table.segments()) {
    std::vector<int> ids;
    for (const auto& b : seg.bones) {
      auto id = model.find_bone(b);
      if (!id) throw ConfigError("segments." + seg.name, "unknown bone '" + b + "'");
      ids.push_back(*id);
    }
    out.push_back(std::move(ids));
  }
  return out;
}

}  // namespace detail

inline ScaleState initial_scale_state(const SkeletonModel& model, const ProportionTable& table) {
  ScaleState s;
  s.per_bone.assign(model.bones().size(), 1.0);
  s.segment_sum.assign(table.segments().size(), 0.0);
  s.segment_count.assign(table.segments().size(), 0);
  return s;
}

/// Writes the state's per-bone factors into the model.
inline void apply_scales(const ScaleState& state, SkeletonModel& model) {
  for (std::size_t b = 0; b < model.bones().size() && b < state.per_bone.size(); ++b)
    model.set_bone_scale(b, state.per_bone[b]);
}

/// Folds one measurement into the running scale estimate and pushes the new
/// factors into `model`. Returns false (state untouched) when fewer than
/// `cfg.min_pairs` plausible connected pairs are present.
inline bool update_scales(ScaleState& state, const KeypointSet& kp, const ProportionTable& table,
                          SkeletonModel& model, const ScalingConfig& cfg = {}) {
  if (state.per_bone.size() != model.bones().size() || state.segment_sum.size() != table.segments().size())
    state = initial_scale_state(model, table);

  const double h0 = table.nominal_height();
  std::vector<double> ratio(table.segments().size(), -1.0);
  double height_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < table.segments().size(); ++i) {
    const auto& seg = table.segments()[i];
    if (!kp.has(seg.from) || !kp.has(seg.to)) continue;
    const double h = (kp.at(seg.from) - kp.at(seg.to)).norm() / seg.fraction;
    if (h < cfg.min_height || h > cfg.max_height) continue;
    ratio[i] = h / h0;
    height_sum += h;
    ++pairs;
  }
  if (pairs < cfg.min_pairs) return false;

  const double s_now = height_sum / static_cast<double>(pairs) / h0;
  state.history_count += 1;
  if (state.history_count == 1)
    state.s_avg = s_now;
  else
    state.s_avg += (s_now - state.s_avg) / static_cast<double>(state.history_count);
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    if (ratio[i] < 0.0) continue;
    state.segment_sum[i] += ratio[i];
    state.segment_count[i] += 1;
  }

  const double lo = (1.0 - cfg.band) * state.s_avg;
  const double hi = (1.0 + cfg.band) * state.s_avg;
  std::fill(state.per_bone.begin(), state.per_bone.end(), state.s_avg);
  const auto bones = detail::segment_bones(table, model);
  for (std::size_t i = 0; i < bones.size(); ++i) {
    if (state.segment_count[i] == 0) continue;
    const double s = state.segment_sum[i] / static_cast<double>(state.segment_count[i]);
    for (int b : bones[i]) state.per_bone[static_cast<std::size_t>(b)] = std::clamp(s, lo, hi);
  }
  apply_scales(state, model);
  return true;
}

/// Removes keypoints whose every observed incident segment deviates from the
/// model's scaled length by more than `tol` (relative). Keypoints without any
/// observed incident segment are kept.
inline KeypointSet reject_incompatible(const KeypointSet& kp, const SkeletonModel& model,
                                       const ProportionTable& table, double tol = 0.20) {
  const auto bones = detail::segment_bones(table, model);
  std::array<int, kNumKeypoints> observed{};
  std::array<int, kNumKeypoints> compatible{};
  for (std::size_t i = 0; i < table.segments().size(); ++i) {
    const auto& seg = table.segments()[i];
    if (!kp.has(seg.from) || !kp.has(seg.to)) continue;
    double expected = 0.0;
    for (int b : bones[i]) {
      const auto& bone = model.bones()[static_cast<std::size_t>(b)];
      expected += bone.rest_length * bone.scale;
    }
    const double len = (kp.at(seg.from) - kp.at(seg.to)).norm();
    const bool ok = std::abs(len - expected) <= tol * expected;
    for (auto l : {seg.from, seg.to}) {
      observed[index(l)] += 1;
      compatible[index(l)] += ok ? 1 : 0;
    }
  }
  KeypointSet out = kp;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    if (kp.present.test(i) && observed[i] > 0 && compatible[i] == 0) out.erase(label_at(i));
  }
  return out;
}

inline Measurement reject_incompatible(const Measurement& m, const SkeletonModel& model,
                                       const ProportionTable& table, double tol = 0.20) {
  Measurement out = m;
  out.keypoints = reject_incompatible(m.keypoints, model, table, tol);
  return out;
}

}  // namespace posefuse
