#pragma once

// Reference HOTA evaluator: exhaustive per-frame matchings and direct set
// counting of TPA/FNA/FPA for every true positive. Frames are paired by index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "posefuse/metrics.hpp"

namespace posefuse::oracle {

struct BruteMetrics {
  double loc_a = 0, det_a = 0, ass_a = 0, hota = 0;
};

inline double brute_similarity(const KeypointSet& a, const KeypointSet& b) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    if (!a.present.test(i) || !b.present.test(i)) continue;
    const Vec3 d = a.position[i] - b.position[i];
    sum += std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
    ++n;
  }
  if (n == 0) return 0.0;
  return std::max(0.0, 1.0 - sum / n);
}

// Best matching as (pr index, gt index) pairs. Enumerates every injective
// assignment of predictions to ground truth slots, a slot index >= n_gt
// meaning unmatched.
inline std::vector<std::pair<int, int>> brute_matching(const std::vector<LabeledSkeleton>& prs,
                                                       const std::vector<LabeledSkeleton>& gts) {
  const int np = static_cast<int>(prs.size()), ng = static_cast<int>(gts.size());
  std::vector<int> slots(static_cast<std::size_t>(ng + np));
  std::iota(slots.begin(), slots.end(), 0);
  double best = -1.0;
  std::vector<std::pair<int, int>> best_pairs;
  do {
    double s = 0.0;
    std::vector<std::pair<int, int>> pairs;
    for (int p = 0; p < np; ++p) {
      const int g = slots[static_cast<std::size_t>(p)];
      if (g < ng) {
        s += brute_similarity(prs[static_cast<std::size_t>(p)].keypoints, gts[static_cast<std::size_t>(g)].keypoints);
        pairs.emplace_back(p, g);
      }
    }
    if (s > best + 1e-12) {
      best = s;
      best_pairs = pairs;
    }
  } while (std::next_permutation(slots.begin(), slots.end()));
  return best_pairs;
}

inline BruteMetrics brute_evaluate(const std::vector<LabeledFrame>& pred, const std::vector<LabeledFrame>& gt,
                                   const std::vector<double>& alphas) {
  struct Tp {
    std::size_t frame;
    std::uint64_t pr, gt;
    double s;
  };
  std::vector<std::vector<std::pair<int, int>>> matchings;
  for (std::size_t f = 0; f < gt.size(); ++f) matchings.push_back(brute_matching(pred[f].skeletons, gt[f].skeletons));

  BruteMetrics out;
  for (double alpha : alphas) {
    std::vector<Tp> tps;
    std::size_t n_pr = 0, n_gt = 0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
      n_pr += pred[f].skeletons.size();
      n_gt += gt[f].skeletons.size();
      for (auto [p, g] : matchings[f]) {
        const double s = brute_similarity(pred[f].skeletons[static_cast<std::size_t>(p)].keypoints,
                                          gt[f].skeletons[static_cast<std::size_t>(g)].keypoints);
        if (s > alpha)
          tps.push_back({f, pred[f].skeletons[static_cast<std::size_t>(p)].id,
                         gt[f].skeletons[static_cast<std::size_t>(g)].id, s});
      }
    }
    const double tp = static_cast<double>(tps.size());
    const double fn = static_cast<double>(n_gt) - tp, fp = static_cast<double>(n_pr) - tp;
    const double det = tp / (tp + fn + fp);
    double loc = 0.0, ass = 0.0;
    for (const auto& c : tps) {
      loc += c.s;
      double tpa = 0, fna = 0, fpa = 0;
      for (const auto& o : tps)
        if (o.pr == c.pr && o.gt == c.gt) ++tpa;
      // gt detections of c.gt that are not a TP with c.pr
      for (std::size_t f = 0; f < gt.size(); ++f)
        for (const auto& g : gt[f].skeletons) {
          if (g.id != c.gt) continue;
          bool hit = false;
          for (const auto& o : tps) hit = hit || (o.frame == f && o.gt == c.gt && o.pr == c.pr);
          if (!hit) ++fna;
        }
      for (std::size_t f = 0; f < pred.size(); ++f)
        for (const auto& p : pred[f].skeletons) {
          if (p.id != c.pr) continue;
          bool hit = false;
          for (const auto& o : tps) hit = hit || (o.frame == f && o.gt == c.gt && o.pr == c.pr);
          if (!hit) ++fpa;
        }
      ass += tpa / (tpa + fna + fpa);
    }
    const double loc_a = tps.empty() ? 0.0 : loc / tp;
    const double ass_a = tps.empty() ? 0.0 : ass / tp;
    const double n = static_cast<double>(alphas.size());
    out.loc_a += loc_a / n;
    out.det_a += det / n;
    out.ass_a += ass_a / n;
    out.hota += std::sqrt(det * ass_a) / n;
  }
  return out;
}

}  // namespace posefuse::oracle
