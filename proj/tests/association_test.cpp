#include <random>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "oracles/brute_assignment.hpp"
#include "posefuse/association.hpp"
#include "test_support.hpp"

using namespace posefuse;

namespace {

MeasurementBatch batch(std::uint32_t device, double t, int persons = 1) {
  MeasurementBatch b;
  b.device_id = device;
  b.stamp = Timestamp::from_seconds(t);
  for (int i = 0; i < persons; ++i) {
    KeypointSet s;
    s.set(KeypointLabel::LeftHip, Vec3(i, 0, 1));
    b.persons.push_back(s);
  }
  return b;
}

KeypointSet all_at(double r) {
  KeypointSet s;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const double a = 0.3 * static_cast<double>(i);
    s.set(label_at(i), Vec3(r * std::cos(a), r * std::sin(a), 0.0));
  }
  return s;
}

}  // namespace

TEST(SyncQueue, WindowBoundaries) {
  SyncQueue q(0.07);
  q.push(batch(1, 9.95));
  q.push(batch(2, 9.90));
  auto out = q.drain(10.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.begin()->first, 1u);
  EXPECT_EQ(q.size(), 0u);
}

TEST(SyncQueue, NewestPerDeviceWins) {
  SyncQueue q(0.07);
  q.push(batch(3, 9.98, 2));
  q.push(batch(3, 9.96, 1));
  auto out = q.drain(10.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.at(3).stamp, Timestamp::from_seconds(9.98));
  EXPECT_EQ(out.at(3).persons.size(), 2u);
}

TEST(SyncQueue, NeverReturnsStale) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> t(0.0, 1.0);
  std::uniform_int_distribution<int> dev(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    SyncQueue q(0.07);
    for (int i = 0; i < 20; ++i) q.push(batch(static_cast<std::uint32_t>(dev(rng)), t(rng)));
    const double ta = t(rng);
    for (const auto& [d, b] : q.drain(ta)) {
      EXPECT_LT(ta - b.stamp.seconds(), 0.07);
      EXPECT_EQ(d, b.device_id);
    }
  }
}

TEST(SyncQueue, ConcurrentProducers) {
  SyncQueue q(10.0);
  std::vector<std::thread> producers;
  for (std::uint32_t d = 0; d < 4; ++d)
    producers.emplace_back([&q, d] {
      for (int i = 0; i < 500; ++i) q.push(batch(d, 0.001 * i));
    });
  for (auto& p : producers) p.join();
  EXPECT_EQ(q.size(), 2000u);
  auto out = q.drain(0.5);
  ASSERT_EQ(out.size(), 4u);
  for (const auto& [d, b] : out) EXPECT_EQ(b.stamp, Timestamp::from_seconds(0.499));
}

TEST(Prefilter, Examples) {
  const Vec3 origin(0, 0, 0);
  auto near = all_at(3.0);
  auto kept = prefilter(near, 8.0, origin, 4);
  ASSERT_TRUE(kept);
  EXPECT_EQ(*kept, near);

  auto one_far = near;
  one_far.set(KeypointLabel::RightKnee, Vec3(12, 0, 0));
  kept = prefilter(one_far, 8.0, origin, 4);
  ASSERT_TRUE(kept);
  EXPECT_FALSE(kept->has(KeypointLabel::RightKnee));
  EXPECT_EQ(kept->count(), 11u);

  KeypointSet few;
  few.set(KeypointLabel::LeftHip, Vec3(1, 0, 0));
  few.set(KeypointLabel::RightHip, Vec3(1, 0.3, 0));
  few.set(KeypointLabel::LeftKnee, Vec3(20, 0, 0));
  few.set(KeypointLabel::RightKnee, Vec3(20, 0.3, 0));
  EXPECT_FALSE(prefilter(few, 8.0, origin, 4));
  // Without a known origin only the count is checked.
  EXPECT_TRUE(prefilter(few, 8.0, std::nullopt, 4));
}

TEST(Kappa2, Examples) {
  KeypointSet m;
  KeypointPositions track;
  track.fill(Vec3::Zero());
  EXPECT_EQ(association_cost(track, m), 1e6);
  m.set(KeypointLabel::LeftHip, Vec3(0.3, 0, 0));
  EXPECT_DOUBLE_EQ(association_cost(track, m), 0.3);
  m.set(KeypointLabel::RightHip, Vec3(0.01, 0, 0));
  m.set(KeypointLabel::LeftKnee, Vec3(0, 0.05, 0));
  m.set(KeypointLabel::RightKnee, Vec3(0, 0, 0.06));
  m.erase(KeypointLabel::LeftHip);
  EXPECT_DOUBLE_EQ(association_cost(track, m), 0.05);
  EXPECT_EQ(association_cost(track, KeypointSet::from_positions(track)), 0.0);
}

TEST(Kappa2, MatchesSortOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::bernoulli_distribution keep(0.4);
  for (int trial = 0; trial < 2000; ++trial) {
    KeypointPositions track;
    KeypointSet m;
    std::vector<double> d;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      track[i] = Vec3(u(rng), u(rng), u(rng));
      if (keep(rng)) {
        m.set(label_at(i), Vec3(u(rng), u(rng), u(rng)));
        d.push_back((track[i] - m.position[i]).norm());
      }
    }
    std::sort(d.begin(), d.end());
    const double expect = d.empty() ? 1e6 : (d.size() == 1 ? d[0] : d[1]);
    EXPECT_EQ(association_cost(track, m), expect);
    auto k = kappa2(d);
    if (d.empty())
      EXPECT_FALSE(k);
    else
      EXPECT_EQ(*k, expect);
  }
}

TEST(Assign, Examples) {
  Eigen::MatrixXd W(2, 2);
  W << 0, 5, 5, 0;
  EXPECT_EQ(assign(W), (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}}));
  W << 1, 2, 2, 100;
  EXPECT_EQ(assign(W), (std::vector<std::pair<int, int>>{{0, 1}, {1, 0}}));
  W << 0.2, 3, 3, 1.5;
  EXPECT_EQ(assign(W, 1.0), (std::vector<std::pair<int, int>>{{0, 0}}));
  EXPECT_TRUE(assign(Eigen::MatrixXd(0, 3)).empty());
}

TEST(Assign, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> val(0, 20), dim(1, 6);
  for (int seed = 0; seed < 500; ++seed) {
    Eigen::MatrixXd W(5, 5);
    for (auto& v : W.reshaped()) v = val(rng);
    EXPECT_EQ(oracle::assignment_cost(W, hungarian(W)), oracle::brute_force_min_cost(W));
  }
  std::uniform_real_distribution<double> real(0.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::MatrixXd W(dim(rng), dim(rng));
    for (auto& v : W.reshaped()) v = real(rng);
    auto rows = hungarian(W);
    EXPECT_NEAR(oracle::assignment_cost(W, rows), oracle::brute_force_min_cost(W), 1e-12);
    std::set<int> cols;
    int assigned = 0;
    for (int c : rows) {
      if (c < 0) continue;
      ++assigned;
      EXPECT_TRUE(cols.insert(c).second);
    }
    EXPECT_EQ(assigned, std::min(W.rows(), W.cols()));
  }
}

TEST(Lifecycle, ExpireAfterTtl) {
  const auto& proto = SkeletonModel::default_profile();
  const auto& table = ProportionTable::default_table();
  auto kp = KeypointSet::from_positions(forward_kinematics(proto, proto.rest_configuration()));
  std::vector<BodyTrack> tracks;
  tracks.emplace_back(1, proto, table, kp, 7.0, TrackConfig{});
  tracks.emplace_back(2, proto, table, kp, 9.5, TrackConfig{});
  auto gone = expire_tracks(tracks, 10.0, 2.0);
  EXPECT_EQ(gone, std::vector<std::uint64_t>{1});
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].id(), 2u);
}

TEST(Lifecycle, NewTrackStartsAtMeasurement) {
  const auto& proto = SkeletonModel::default_profile();
  const auto& table = ProportionTable::default_table();
  Eigen::VectorXd q = proto.rest_configuration();
  q[0] = 1.5;
  q[1] = -0.7;
  q[5] = 2.0;  // yaw
  auto truth = forward_kinematics(proto, q);
  BodyTrack t(5, proto, table, KeypointSet::from_positions(truth), 1.0, TrackConfig{});
  EXPECT_EQ(t.id(), 5u);
  EXPECT_NEAR(t.q()[5], 2.0, 1e-3);
  auto fk = t.keypoints();
  for (std::size_t i = 0; i < kNumKeypoints; ++i) EXPECT_LT((fk[i] - truth[i]).norm(), 1e-3);
}

TEST(Lifecycle, FittedOnlyWhenIkRan) {
  const auto& proto = SkeletonModel::default_profile();
  const auto& table = ProportionTable::default_table();
  const auto obs = KeypointSet::from_positions(forward_kinematics(proto, proto.rest_configuration()));
  BodyTrack t(1, proto, table, obs, 0.0, TrackConfig{});
  t.update({obs}, 0.1, 1.0 / 30.0, TrackConfig{});
  EXPECT_TRUE(t.fitted());
  t.update({obs}, 0.2, 1.0 / 30.0, TrackConfig{});
  EXPECT_TRUE(t.fitted());
  t.update({}, 0.3, 1.0 / 30.0, TrackConfig{});
  EXPECT_FALSE(t.fitted());
  // every keypoint far off: all rejected by bone length, so no fit
  auto junk = obs;
  for (std::size_t k = 0; k < kNumKeypoints; ++k) junk.set(label_at(k), Vec3::Constant(static_cast<double>(k) * 3.0));
  t.update({junk}, 0.4, 1.0 / 30.0, TrackConfig{});
  EXPECT_FALSE(t.fitted());
}

TEST(Lifecycle, InitialPoseYawFromShoulders) {
  const auto& proto = SkeletonModel::default_profile();
  for (double yaw : {-2.5, -1.0, 0.0, 0.7, 3.0}) {
    Eigen::VectorXd q = proto.rest_configuration();
    q[5] = yaw;
    auto q0 = initial_pose(proto, KeypointSet::from_positions(forward_kinematics(proto, q)));
    EXPECT_NEAR(q0[5], yaw, 1e-12);
    EXPECT_NEAR(q0[2], proto.base_pose()[2], 1e-12);
  }
}
