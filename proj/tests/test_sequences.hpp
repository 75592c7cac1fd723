#pragma once

// Small labeled sequences for metric tests.

#include <random>

#include "posefuse/metrics.hpp"

namespace posefuse::testing {

inline KeypointSet random_body(std::mt19937_64& rng, const Vec3& center) {
  std::normal_distribution<double> n(0.0, 0.3);
  KeypointSet s;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) s.set(label_at(i), center + Vec3(n(rng), n(rng), n(rng)));
  return s;
}

/// Ground truth with up to max_subjects people and a noisy tracker output with
/// missed detections, spurious ids, dropped keypoints and occasional id swaps.
inline std::pair<std::vector<LabeledFrame>, std::vector<LabeledFrame>> toy_sequences(std::mt19937_64& rng,
                                                                                     int max_subjects, int max_frames) {
  std::uniform_int_distribution<int> ns(1, max_subjects), nf(1, max_frames);
  std::uniform_real_distribution<double> u(0.0, 1.0), pos(-2.0, 2.0);
  std::normal_distribution<double> jitter(0.0, 0.25);
  const int subjects = ns(rng), frames = nf(rng);
  std::vector<Vec3> centers;
  for (int s = 0; s < subjects; ++s) centers.emplace_back(pos(rng), pos(rng), 1.0);
  std::vector<LabeledFrame> gt, pred;
  for (int f = 0; f < frames; ++f) {
    LabeledFrame g, p;
    g.t = p.t = f / 30.0;
    for (int s = 0; s < subjects; ++s) {
      centers[static_cast<std::size_t>(s)] += Vec3(0.3 * jitter(rng), 0.3 * jitter(rng), 0.0);
      auto body = random_body(rng, centers[static_cast<std::size_t>(s)]);
      g.skeletons.push_back({static_cast<std::uint64_t>(s), body});
      if (u(rng) < 0.15) continue;  // missed
      KeypointSet est;
      for (std::size_t i = 0; i < kNumKeypoints; ++i)
        if (u(rng) > 0.2) est.set(label_at(i), body.position[i] + Vec3(jitter(rng), jitter(rng), jitter(rng)));
      std::uint64_t id = 100 + static_cast<std::uint64_t>(s);
      if (u(rng) < 0.1) id = 100 + static_cast<std::uint64_t>((s + 1) % subjects);
      if (std::any_of(p.skeletons.begin(), p.skeletons.end(), [&](const auto& k) { return k.id == id; })) id += 50;
      p.skeletons.push_back({id, est});
    }
    if (u(rng) < 0.2) p.skeletons.push_back({999, random_body(rng, Vec3(pos(rng), pos(rng), 1.0))});
    gt.push_back(std::move(g));
    pred.push_back(std::move(p));
  }
  return {pred, gt};
}

/// Two subjects tracked perfectly whose predicted ids swap halfway.
inline std::pair<std::vector<LabeledFrame>, std::vector<LabeledFrame>> id_swap_sequences(int frames = 20) {
  std::mt19937_64 rng(7);
  std::vector<LabeledFrame> gt, pred;
  for (int f = 0; f < frames; ++f) {
    LabeledFrame g, p;
    g.t = p.t = f / 30.0;
    for (std::uint64_t s = 0; s < 2; ++s) {
      auto body = random_body(rng, Vec3(3.0 * static_cast<double>(s), 0.1 * f, 1.0));
      g.skeletons.push_back({s, body});
      const std::uint64_t id = f < frames / 2 ? 10 + s : 11 - s;
      p.skeletons.push_back({id, body});
    }
    gt.push_back(std::move(g));
    pred.push_back(std::move(p));
  }
  return {pred, gt};
}

}  // namespace posefuse::testing
