#pragma once

// Line-delimited JSON files. The first line is a header naming the format and
// version; every further line is one record.
//
//   measurements: {"arrival": s, "device": id, "t_us": us, "persons": [{"left_hip": [x, y, z, c], ...}]}
//   frames:       {"t": s, "tracks": [{"id": n, "keypoints": {"left_hip": [x, y, z], ...}, ...}]}

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "posefuse/frame.hpp"
#include "posefuse/harness/scene.hpp"
#include "posefuse/metrics.hpp"

namespace posefuse::harness {

inline constexpr const char* kMeasurementsFormat = "posefuse-measurements";
inline constexpr const char* kFramesFormat = "posefuse-frames";
inline constexpr int kFileVersion = 1;

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline nlohmann::json header(const char* format) { return {{"format", format}, {"version", kFileVersion}}; }

inline void check_header(const nlohmann::json& h, const char* format) {
  if (!h.is_object() || h.value("format", "") != format)
    throw ParseError(1, std::string("expected a '") + format + "' header");
  if (h.value("version", 0) != kFileVersion)
    throw ParseError(1, "unsupported file version " + h.value("version", nlohmann::json()).dump());
}

inline nlohmann::json keypoints_json(const KeypointSet& s, bool with_confidence) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    if (!s.present.test(i)) continue;
    const auto& p = s.position[i];
    auto v = nlohmann::json::array({p.x(), p.y(), p.z()});
    if (with_confidence) v.push_back(s.confidence[i]);
    j[std::string(kKeypointNames[i])] = v;
  }
  return j;
}

inline KeypointSet keypoints_from_json(const nlohmann::json& j) {
  KeypointSet s;
  for (const auto& [key, v] : j.items()) {
    auto label = keypoint_from_name(key);
    if (!label) throw std::invalid_argument("unknown keypoint '" + key + "'");
    if (!v.is_array() || v.size() < 3 || v.size() > 4) throw std::invalid_argument("keypoint '" + key + "' needs 3 or 4 numbers");
    const Vec3 p(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
    const double c = v.size() == 4 ? v[3].get<double>() : 1.0;
    if (!p.allFinite()) throw std::invalid_argument("keypoint '" + key + "' is not finite");
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("keypoint '" + key + "' confidence outside [0, 1]");
    s.set(*label, p, c);
  }
  return s;
}

template <class Fn>
void for_each_record(std::istream& in, const char* format, Fn&& fn) {
  std::string line;
  std::size_t n = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      if (!have_header) throw ParseError(n, e.what());
      fn(n, std::optional<nlohmann::json>{}, std::string(e.what()));
      continue;
    }
    if (!have_header) {
      check_header(j, format);
      have_header = true;
      continue;
    }
    fn(n, std::optional<nlohmann::json>(std::move(j)), std::string());
  }
}

}  // namespace detail

struct MeasurementLog {
  std::vector<DeviceSpec> devices;
  std::vector<TimedBatch> stream;
};

inline void write_measurements(std::ostream& out, const std::vector<DeviceSpec>& devices,
                               const std::vector<TimedBatch>& stream) {
  auto h = detail::header(kMeasurementsFormat);
  h["devices"] = nlohmann::json::array();
  for (const auto& d : devices)
    h["devices"].push_back({{"id", d.id}, {"origin", {d.origin.x(), d.origin.y(), d.origin.z()}}});
  out << h.dump() << '\n';
  for (const auto& tb : stream) {
    nlohmann::json r = {{"arrival", tb.arrival}, {"device", tb.batch.device_id}, {"t_us", tb.batch.stamp.micros}};
    r["persons"] = nlohmann::json::array();
    for (const auto& p : tb.batch.persons) r["persons"].push_back(detail::keypoints_json(p, true));
    out << r.dump() << '\n';
  }
}

/// Reads a measurement log. Malformed records are always errors here: a
/// replay must see exactly what was recorded.
inline MeasurementLog read_measurements(std::istream& in) {
  MeasurementLog log;
  std::string first;
  std::size_t n = 0;
  while (first.empty() && std::getline(in, first)) ++n;
  if (first.empty()) return log;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(first);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(n, e.what());
  }
  detail::check_header(h, kMeasurementsFormat);
  for (const auto& d : h.value("devices", nlohmann::json::array())) {
    DeviceSpec spec;
    spec.id = d.at("id").get<std::uint32_t>();
    const auto& o = d.at("origin");
    spec.origin = Vec3(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
    log.devices.push_back(spec);
  }
  std::string line;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto r = nlohmann::json::parse(line);
      TimedBatch tb;
      tb.arrival = r.at("arrival").get<double>();
      tb.batch.device_id = r.at("device").get<std::uint32_t>();
      tb.batch.stamp.micros = r.at("t_us").get<std::uint64_t>();
      for (const auto& p : r.at("persons")) tb.batch.persons.push_back(detail::keypoints_from_json(p));
      log.stream.push_back(std::move(tb));
    } catch (const std::exception& e) {
      throw ParseError(n, e.what());
    }
  }
  return log;
}

inline MeasurementLog read_measurements(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_measurements(in);
}

/// Writer for fused output. Latencies are wall-clock measurements and are
/// left out unless asked for, so that replays stay byte-identical.
class FrameWriter {
 public:
  explicit FrameWriter(std::ostream& out, bool with_latency = false) : out_(&out), with_latency_(with_latency) {
    *out_ << detail::header(kFramesFormat).dump() << '\n';
  }

  void write(const FusedFrame& f) {
    nlohmann::json r = {{"t", f.t_a}, {"measurements", f.measurements}};
    r["tracks"] = nlohmann::json::array();
    for (const auto& t : f.tracks) {
      nlohmann::json kp = nlohmann::json::object();
      for (std::size_t i = 0; i < kNumKeypoints; ++i)
        kp[std::string(kKeypointNames[i])] = {t.keypoints[i].x(), t.keypoints[i].y(), t.keypoints[i].z()};
      r["tracks"].push_back({{"id", t.id},
                             {"keypoints", kp},
                             {"q", std::vector<double>(t.q.data(), t.q.data() + t.q.size())},
                             {"rms_residual", t.rms_residual},
                             {"sources", t.sources},
                             {"age", t.age}});
    }
    if (with_latency_) {
      nlohmann::json lat = nlohmann::json::object();
      for (const auto& [stage, ms] : f.stage_ms) lat[stage] = ms;
      lat["total"] = f.total_ms;
      r["latency_ms"] = lat;
    }
    *out_ << r.dump() << '\n';
  }

  /// Writes a ground-truth or converted frame with explicit presence.
  void write(const LabeledFrame& f) {
    nlohmann::json r = {{"t", f.t}};
    r["tracks"] = nlohmann::json::array();
    for (const auto& s : f.skeletons)
      r["tracks"].push_back({{"id", s.id}, {"keypoints", detail::keypoints_json(s.keypoints, false)}});
    *out_ << r.dump() << '\n';
  }

 private:
  std::ostream* out_;
  bool with_latency_;
};

struct LoadOptions {
  bool strict = true;  // malformed lines throw; otherwise they are skipped with a warning
};

/// Reads a frames file into labeled frames for evaluation.
inline std::vector<LabeledFrame> load_keypoint_file(std::istream& in, const LoadOptions& opt = {},
                                                    std::vector<std::string>* warnings = nullptr) {
  std::vector<LabeledFrame> frames;
  auto warn = [&](std::size_t line, const std::string& msg) {
    if (warnings) warnings->push_back("line " + std::to_string(line) + ": " + msg);
  };
  detail::for_each_record(in, kFramesFormat, [&](std::size_t line, std::optional<nlohmann::json> j, const std::string& err) {
    try {
      if (!j) throw std::invalid_argument(err);
      LabeledFrame f;
      f.t = j->at("t").get<double>();
      for (const auto& t : j->at("tracks"))
        f.skeletons.push_back({t.at("id").get<std::uint64_t>(), detail::keypoints_from_json(t.at("keypoints"))});
      if (!frames.empty() && f.t < frames.back().t) warn(line, "timestamp goes backwards");
      frames.push_back(std::move(f));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      if (opt.strict) throw ParseError(line, e.what());
      warn(line, e.what());
    }
  });
  return frames;
}

inline std::vector<LabeledFrame> load_keypoint_file(const std::filesystem::path& path, const LoadOptions& opt = {},
                                                    std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_keypoint_file(in, opt, warnings);
}

/// CMU Panoptic joints19 export: one JSON document per frame with
/// {"univTime": ms, "bodies": [{"id": n, "joints19": [x, y, z, c] x 19]}} in
/// centimeters, y pointing down. Converted to meters, z up; joints with
/// negative confidence are treated as missing.
inline LabeledFrame panoptic_frame(const nlohmann::json& doc, double fallback_t) {
  // joints19 indices of the twelve tracked keypoints, in label order.
  static constexpr std::array<int, kNumKeypoints> kIndex = {3, 9, 4, 10, 5, 11, 6, 12, 7, 13, 8, 14};
  LabeledFrame f;
  f.t = doc.contains("univTime") ? doc.at("univTime").get<double>() * 1e-3 : fallback_t;
  for (const auto& body : doc.at("bodies")) {
    const auto& j = body.at("joints19");
    if (j.size() != 19 * 4) throw std::invalid_argument("joints19 must hold 76 numbers");
    KeypointSet s;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      const auto b = static_cast<std::size_t>(4 * kIndex[i]);
      const double c = j.at(b + 3).get<double>();
      if (c < 0.0) continue;
      const double x = j.at(b).get<double>(), y = j.at(b + 1).get<double>(), z = j.at(b + 2).get<double>();
      s.set(label_at(i), 0.01 * Vec3(x, z, -y), std::min(c, 1.0));
    }
    f.skeletons.push_back({body.at("id").get<std::uint64_t>(), s});
  }
  return f;
}

/// Loads a Panoptic sequence: either one frame file or a directory of
/// frame files processed in name order.
inline std::vector<LabeledFrame> load_panoptic(const std::filesystem::path& path, double fps = 30.0) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<LabeledFrame> out;
  for (std::size_t k = 0; k < files.size(); ++k) {
    std::ifstream in(files[k]);
    if (!in) throw std::runtime_error("cannot open " + files[k].string());
    try {
      out.push_back(panoptic_frame(nlohmann::json::parse(in), static_cast<double>(k) / fps));
    } catch (const std::exception& e) {
      throw std::runtime_error(files[k].string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace posefuse::harness
