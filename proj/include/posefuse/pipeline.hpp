#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "posefuse/association.hpp"
#include "posefuse/config.hpp"
#include "posefuse/frame.hpp"
#include "posefuse/harness/scene.hpp"
#include "posefuse/scaling.hpp"
#include "posefuse/skeleton.hpp"
#include "posefuse/track.hpp"

namespace posefuse {

namespace detail {

class StageClock {
 public:
  using clock = std::chrono::steady_clock;
  StageClock() : start_(clock::now()), last_(start_) {}

  void lap(const char* stage, FusedFrame& f) {
    const auto now = clock::now();
    f.stage_ms.emplace_back(stage, std::chrono::duration<double, std::milli>(now - last_).count());
    last_ = now;
  }

  double total_ms() const { return std::chrono::duration<double, std::milli>(last_ - start_).count(); }

 private:
  clock::time_point start_, last_;
};

}  // namespace detail

/// The central fusion loop: one tick drains the synchronized measurements,
/// associates them per device, updates every track and emits fused poses.
class Aggregator {
 public:
  Aggregator(const SkeletonModel& proto, const ProportionTable& table, PipelineConfig cfg)
      : proto_(std::make_unique<SkeletonModel>(proto)),
        table_(std::make_unique<ProportionTable>(table)),
        cfg_(std::move(cfg)),
        queue_(cfg_.association.delta) {
    cfg_.validate();
    cfg_.track.min_keypoints = cfg_.association.min_keypoints;
    if (cfg_.ik_damping != 1.0) {
      const auto n = static_cast<Eigen::Index>(proto.dof_count());
      cfg_.track.ik.lambda = cfg_.ik_damping * Eigen::MatrixXd::Identity(n, n);
    }
    cfg_.track.ik.D = cfg_.ik_slack_weight * Eigen::Matrix3d::Identity();
    cfg_.track.ik.validate(proto.dof_count());
    cfg_.track.observer.validate();
  }

  /// Uses the skeleton and proportion files named in the config, or the
  /// bundled profiles when those are empty.
  explicit Aggregator(const PipelineConfig& cfg = {})
      : Aggregator(cfg.skeleton_file.empty() ? SkeletonModel::default_profile() : SkeletonModel::load_file(cfg.skeleton_file),
                   cfg.proportions_file.empty() ? ProportionTable::default_table()
                                                : ProportionTable::load_file(cfg.proportions_file),
                   cfg) {}

  Aggregator(const Aggregator&) = delete;
  Aggregator& operator=(const Aggregator&) = delete;

  SyncQueue& queue() { return queue_; }
  const PipelineConfig& config() const { return cfg_; }
  const std::vector<BodyTrack>& tracks() const { return tracks_; }
  std::uint64_t tracks_created() const { return next_id_ - 1; }
  std::optional<double> last_tick() const { return last_t_a_; }

  void set_device_origin(std::uint32_t device, const Vec3& origin) { cfg_.device_origins[device] = origin; }

  FusedFrame tick(double t_a) {
    FusedFrame frame;
    frame.t_a = t_a;
    detail::StageClock clock;

    auto drained = queue_.drain(t_a);
    clock.lap("drain", frame);

    std::vector<KeypointPositions> predicted;
    predicted.reserve(tracks_.size());
    for (const auto& t : tracks_) predicted.push_back(t.predicted_keypoints(t_a));
    std::vector<std::vector<KeypointSet>> sources(tracks_.size());
    const auto& ac = cfg_.association;
    for (const auto& [device, batch] : drained) {
      std::optional<Vec3> origin;
      if (auto it = cfg_.device_origins.find(device); it != cfg_.device_origins.end()) origin = it->second;
      std::vector<KeypointSet> ms;
      for (const auto& p : batch.persons) {
        ++frame.measurements;
        if (auto kept = prefilter(p, ac.max_range, origin, ac.min_keypoints)) ms.push_back(std::move(*kept));
      }
      if (ms.empty()) continue;
      std::vector<bool> matched(ms.size(), false);
      for (auto [r, c] : assign(cost_matrix(predicted, ms, ac.sentinel), ac.gate)) {
        sources[static_cast<std::size_t>(r)].push_back(ms[static_cast<std::size_t>(c)]);
        matched[static_cast<std::size_t>(c)] = true;
      }
      // Tracks spawned here are visible to the devices that follow.
      for (std::size_t c = 0; c < ms.size(); ++c) {
        if (matched[c]) continue;
        tracks_.emplace_back(next_id_++, *proto_, *table_, ms[c], t_a, cfg_.track);
        predicted.push_back(tracks_.back().keypoints());
        sources.push_back({ms[c]});
      }
    }
    expire(t_a, sources);
    clock.lap("associate", frame);

    const double dt_tick = cfg_.period();
    auto update_one = [&](std::size_t i) { tracks_[i].update(sources[i], t_a, dt_tick, cfg_.track); };
    const unsigned workers =
        std::min<unsigned>(cfg_.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg_.threads,
                           static_cast<unsigned>(tracks_.size()));
    if (workers <= 1) {
      for (std::size_t i = 0; i < tracks_.size(); ++i) update_one(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < tracks_.size();) update_one(i);
        });
    }
    clock.lap("update", frame);

    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      const auto& t = tracks_[i];
      FusedTrack ft;
      ft.id = t.id();
      ft.q = t.q();
      ft.keypoints = t.keypoints();
      if (t.fitted()) ft.rms_residual = t.last_ik().rms_residual;
      ft.sources = sources[i].size();
      ft.age = t.age();
      ft.covariance_trace = t.observers().covariance_trace();
      frame.tracks.push_back(std::move(ft));
    }
    clock.lap("emit", frame);
    frame.total_ms = clock.total_ms();
    last_t_a_ = t_a;
    return frame;
  }

 private:
  // Drops tracks that received nothing this tick and have been unseen for
  // longer than the ttl.
  void expire(double t_a, std::vector<std::vector<KeypointSet>>& sources) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      if (sources[i].empty() && t_a - tracks_[i].last_seen() > cfg_.association.ttl) continue;
      if (w != i) {
        tracks_[w] = std::move(tracks_[i]);
        sources[w] = std::move(sources[i]);
      }
      ++w;
    }
    tracks_.erase(tracks_.begin() + static_cast<std::ptrdiff_t>(w), tracks_.end());
    sources.resize(w);
  }

  std::unique_ptr<SkeletonModel> proto_;
  std::unique_ptr<ProportionTable> table_;  // tracks keep a pointer to it
  PipelineConfig cfg_;
  SyncQueue queue_;
  std::vector<BodyTrack> tracks_;
  std::uint64_t next_id_ = 1;
  std::optional<double> last_t_a_;
};

struct LatencyStats {
  double mean = 0, p50 = 0, p95 = 0, p99 = 0, max = 0;
  std::size_t count = 0;

  static LatencyStats of(std::vector<double> v) {
    LatencyStats s;
    s.count = v.size();
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    // Nearest-rank percentiles.
    auto pct = [&](double p) {
      const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
      return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
    };
    s.p50 = pct(0.50);
    s.p95 = pct(0.95);
    s.p99 = pct(0.99);
    s.max = v.back();
    return s;
  }
};

inline nlohmann::json to_json(const LatencyStats& s) {
  return {{"mean", s.mean}, {"p50", s.p50}, {"p95", s.p95}, {"p99", s.p99}, {"max", s.max}, {"count", s.count}};
}

struct RunReport {
  std::size_t ticks = 0;
  std::size_t batches = 0;
  std::size_t measurements = 0;
  std::uint64_t tracks_created = 0;
  std::size_t max_live_tracks = 0;
  std::size_t over_budget = 0;
  double budget_ms = 0.0;
  double wall_seconds = 0.0;
  double ticks_per_second = 0.0;  // compute throughput: ticks / time spent inside tick()
  LatencyStats total;
  std::map<std::string, LatencyStats> stages;
  std::vector<double> tick_ms;                 // per tick
  std::vector<std::size_t> tick_measurements;  // per tick
};

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [k, v] : r.stages) stages[k] = to_json(v);
  return {{"ticks", r.ticks},
          {"batches", r.batches},
          {"measurements", r.measurements},
          {"tracks_created", r.tracks_created},
          {"max_live_tracks", r.max_live_tracks},
          {"latency_budget_ms", r.budget_ms},
          {"ticks_over_budget", r.over_budget},
          {"wall_seconds", r.wall_seconds},
          {"ticks_per_second", r.ticks_per_second},
          {"tick_latency_ms", to_json(r.total)},
          {"stage_latency_ms", stages}};
}

/// Accumulates per-tick latencies into a report.
class ReportBuilder {
 public:
  explicit ReportBuilder(double budget_ms) { report_.budget_ms = budget_ms; }

  void add(const FusedFrame& f) {
    ++report_.ticks;
    report_.measurements += f.measurements;
    report_.max_live_tracks = std::max(report_.max_live_tracks, f.tracks.size());
    report_.tick_ms.push_back(f.total_ms);
    report_.tick_measurements.push_back(f.measurements);
    if (f.total_ms > report_.budget_ms) ++report_.over_budget;
    for (const auto& [stage, ms] : f.stage_ms) stage_ms_[stage].push_back(ms);
  }

  RunReport finish(std::size_t batches, std::uint64_t created, double wall_seconds) {
    report_.batches = batches;
    report_.tracks_created = created;
    report_.wall_seconds = wall_seconds;
    report_.total = LatencyStats::of(report_.tick_ms);
    double busy = 0.0;
    for (double ms : report_.tick_ms) busy += ms;
    report_.ticks_per_second = busy > 0.0 ? static_cast<double>(report_.ticks) / (busy * 1e-3) : 0.0;
    for (auto& [stage, v] : stage_ms_) report_.stages[stage] = LatencyStats::of(std::move(v));
    return std::move(report_);
  }

 private:
  RunReport report_;
  std::map<std::string, std::vector<double>> stage_ms_;
};

using FrameSink = std::function<void(const FusedFrame&)>;

/// Deterministic replay of a recorded stream. A simulated clock advances by
/// one tick period from the first arrival; every message that has arrived by
/// then is queued, and the tick runs at the newest queued capture time (or one
/// period after the previous tick when nothing newer is queued). Ends once the
/// stream is exhausted and the queue is empty.
inline RunReport replay(const std::vector<harness::TimedBatch>& stream, Aggregator& agg, const FrameSink& sink = {}) {
  const auto wall0 = std::chrono::steady_clock::now();
  ReportBuilder builder(agg.config().latency_budget_ms);
  std::vector<const harness::TimedBatch*> order;
  for (const auto& tb : stream) order.push_back(&tb);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->arrival < b->arrival; });
  const double period = agg.config().period();
  std::size_t next = 0;
  double clock = order.empty() ? 0.0 : order.front()->arrival;
  std::optional<double> last = agg.last_tick();
  while (next < order.size() || agg.queue().size() > 0) {
    while (next < order.size() && order[next]->arrival <= clock) agg.queue().push(order[next++]->batch);
    const auto newest = agg.queue().newest();
    if (!newest && agg.tracks().empty()) {
      clock += period;
      continue;
    }
    double t_a;
    if (newest && (!last || *newest > *last))
      t_a = *newest;
    else
      t_a = last ? *last + period : clock;
    auto frame = agg.tick(t_a);
    last = t_a;
    builder.add(frame);
    if (sink) sink(frame);
    clock += period;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return builder.finish(stream.size(), agg.tracks_created(), wall);
}

/// Convenience: registers the scene's device origins and replays its stream.
inline RunReport replay_scene(const harness::Scene& scene, Aggregator& agg, const FrameSink& sink = {}) {
  for (const auto& d : scene.devices) agg.set_device_origin(d.id, d.origin);
  return replay(scene.stream, agg, sink);
}

}  // namespace posefuse
