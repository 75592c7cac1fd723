#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "posefuse/harness/io.hpp"
#include "posefuse/metrics.hpp"
#include "posefuse/pipeline.hpp"

using namespace posefuse;
using namespace posefuse::harness;

namespace {

std::vector<LabeledFrame> as_labeled(const std::vector<FusedFrame>& frames) {
  std::vector<LabeledFrame> out;
  for (const auto& f : frames) {
    LabeledFrame l;
    l.t = f.t_a;
    for (const auto& t : f.tracks) l.skeletons.push_back({t.id, KeypointSet::from_positions(t.keypoints)});
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<FusedFrame> run(const Scene& scene, PipelineConfig cfg = {}) {
  Aggregator agg(cfg);
  std::vector<FusedFrame> frames;
  replay_scene(scene, agg, [&](const FusedFrame& f) { frames.push_back(f); });
  return frames;
}

std::string replay_text(const Scene& scene) {
  std::stringstream ss;
  FrameWriter w(ss);
  Aggregator agg;
  replay_scene(scene, agg, [&](const FusedFrame& f) { w.write(f); });
  return ss.str();
}

}  // namespace

TEST(Pipeline, EmptySource) {
  Aggregator agg;
  std::size_t n = 0;
  auto rep = replay({}, agg, [&](const FusedFrame&) { ++n; });
  EXPECT_EQ(n, 0u);
  EXPECT_EQ(rep.ticks, 0u);
  EXPECT_EQ(rep.tracks_created, 0u);
}

TEST(Pipeline, StaticSubjectConverges) {
  SceneConfig cfg;
  cfg.scenario = Scenario::Static;
  cfg.n_subjects = 1;
  cfg.n_devices = 3;
  cfg.fov_deg = 180.0;
  cfg.noise_sigma = 0.0;
  cfg.dropout = 0.0;
  cfg.outlier_prob = 0.0;
  cfg.occlusion = false;
  cfg.duration = 1.0;
  cfg.seed = 3;
  auto scene = generate_scene(cfg);
  auto frames = run(scene);
  ASSERT_GT(frames.size(), 12u);
  for (std::size_t k = 10; k < frames.size(); ++k) {
    ASSERT_EQ(frames[k].tracks.size(), 1u) << k;
    const auto truth = scene.truth_at(frames[k].t_a).skeletons[0].keypoints;
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      EXPECT_LT((frames[k].tracks[0].keypoints[i] - truth.position[i]).norm(), 1e-3) << "tick " << k << " kp " << i;
  }
}

TEST(Pipeline, CoastsWithoutMeasurements) {
  SceneConfig cfg;
  cfg.scenario = Scenario::Static;
  cfg.n_subjects = 1;
  cfg.fov_deg = 180.0;
  cfg.duration = 0.5;
  auto scene = generate_scene(cfg);
  Aggregator agg;
  replay_scene(scene, agg);
  ASSERT_EQ(agg.tracks().size(), 1u);
  const double before = agg.tracks()[0].observers().covariance_trace();
  auto f = agg.tick(*agg.last_tick() + 1.0 / 30.0);
  ASSERT_EQ(f.tracks.size(), 1u);
  EXPECT_EQ(f.tracks[0].sources, 0u);
  EXPECT_TRUE(std::isnan(f.tracks[0].rms_residual));
  EXPECT_GT(f.tracks[0].covariance_trace, before);
}

TEST(Pipeline, TracksExpireAfterTtl) {
  SceneConfig cfg;
  cfg.scenario = Scenario::Static;
  cfg.n_subjects = 1;
  cfg.fov_deg = 180.0;
  cfg.duration = 0.3;
  auto scene = generate_scene(cfg);
  Aggregator agg;
  replay_scene(scene, agg);
  const double t = *agg.last_tick();
  EXPECT_EQ(agg.tick(t + 1.9).tracks.size(), 1u);
  EXPECT_EQ(agg.tick(t + 2.2).tracks.size(), 0u);
}

TEST(Pipeline, EmittedPosesAreConsistent) {
  SceneConfig cfg;
  cfg.n_subjects = 3;
  cfg.n_devices = 4;
  cfg.duration = 3.0;
  cfg.noise_sigma = 0.05;
  cfg.outlier_prob = 0.05;
  auto scene = generate_scene(cfg);
  const auto& model = SkeletonModel::default_profile();
  Aggregator agg;
  std::set<std::uint64_t> ids;
  replay_scene(scene, agg, [&](const FusedFrame& f) {
    std::set<std::uint64_t> seen;
    double stages = 0.0;
    for (const auto& [name, ms] : f.stage_ms) stages += ms;
    EXPECT_NEAR(stages, f.total_ms, 1.0);
    for (const auto& t : f.tracks) {
      EXPECT_TRUE(seen.insert(t.id).second);
      EXPECT_TRUE(within_limits(model, t.q, 1e-9));
      const auto it = std::find_if(agg.tracks().begin(), agg.tracks().end(), [&](const auto& b) { return b.id() == t.id; });
      ASSERT_NE(it, agg.tracks().end());
      const auto fk = forward_kinematics(it->model(), t.q);
      for (std::size_t i = 0; i < kNumKeypoints; ++i) EXPECT_EQ(fk[i], t.keypoints[i]);
    }
    for (auto id : seen) ids.insert(id);
  });
  EXPECT_GE(ids.size(), 3u);
}

TEST(Pipeline, ReplayIsByteIdentical) {
  SceneConfig cfg;
  cfg.n_subjects = 3;
  cfg.duration = 2.0;
  cfg.seed = 5;
  auto scene = generate_scene(cfg);
  const auto a = replay_text(scene), b = replay_text(scene);
  EXPECT_GT(a.size(), 1000u);
  EXPECT_EQ(a, b);
}

TEST(Pipeline, ParallelUpdateMatchesSerial) {
  SceneConfig sc;
  sc.n_subjects = 4;
  sc.duration = 1.5;
  auto scene = generate_scene(sc);
  PipelineConfig serial, parallel;
  parallel.threads = 4;
  auto a = run(scene, serial), b = run(scene, parallel);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_EQ(a[k].tracks.size(), b[k].tracks.size());
    for (std::size_t i = 0; i < a[k].tracks.size(); ++i) EXPECT_EQ(a[k].tracks[i].q, b[k].tracks[i].q);
  }
}

TEST(Pipeline, TracksFollowSubjects) {
  SceneConfig cfg;
  cfg.n_subjects = 3;
  cfg.n_devices = 5;
  cfg.duration = 5.0;
  cfg.fov_deg = 60.0;
  auto scene = generate_scene(cfg);
  auto frames = run(scene);
  std::vector<LabeledFrame> gt;
  for (const auto& f : frames) gt.push_back(scene.truth_at(f.t_a));
  auto rep = evaluate(as_labeled(frames), gt);
  EXPECT_GT(rep.det_a, 0.8);
  EXPECT_GT(rep.hota, 0.75);
}

TEST(Config, DefaultsAndOverrides) {
  PipelineConfig c;
  apply_override(c, "association.gate=0.8");
  apply_override(c, "tick_rate=60");
  apply_override(c, "ik.weighting=sum");
  apply_override(c, "observer.sigma=0.25");
  EXPECT_EQ(c.association.gate, 0.8);
  EXPECT_EQ(c.tick_rate, 60.0);
  EXPECT_EQ(c.track.ik.weighting, SourceWeighting::Sum);
  EXPECT_EQ(c.track.observer.Sigma(1, 1), 0.25);
  EXPECT_THROW(apply_override(c, "association.gait=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "tick_rate=-1"), ConfigError);
  EXPECT_THROW(apply_override(c, "nonsense"), ConfigError);
  try {
    apply_override(c, "ik.weighting=mean");
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "ik.weighting");
  }
}

TEST(Config, JsonRoundTrip) {
  PipelineConfig c;
  c.association.ttl = 3.5;
  c.device_origins[2] = Vec3(1, 2, 3);
  PipelineConfig d;
  merge_config(d, to_json(c));
  EXPECT_EQ(to_json(d), to_json(c));
  EXPECT_EQ(d.device_origins.at(2), Vec3(1, 2, 3));
}
