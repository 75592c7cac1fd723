#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "posefuse/hungarian.hpp"
#include "posefuse/keypoints.hpp"

namespace posefuse {

struct LabeledSkeleton {
  std::uint64_t id = 0;
  KeypointSet keypoints;
};

struct LabeledFrame {
  double t = 0.0;
  std::vector<LabeledSkeleton> skeletons;
};

/// 1 minus the mean keypoint distance (meters) over commonly present labels,
/// floored at 0. No common label gives 0.
inline double similarity(const KeypointSet& pr, const KeypointSet& gt) {
  const auto common = pr.present & gt.present;
  if (common.none()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumKeypoints; ++i)
    if (common.test(i)) sum += (pr.position[i] - gt.position[i]).norm();
  return std::max(0.0, 1.0 - sum / static_cast<double>(common.count()));
}

struct MatchedPair {
  std::size_t pr = 0;
  std::size_t gt = 0;
  double similarity = 0.0;
};

struct FrameMatch {
  std::vector<MatchedPair> tp;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// Matching that maximizes the summed similarity, before any threshold.
inline std::vector<MatchedPair> best_matching(const std::vector<KeypointSet>& prs, const std::vector<KeypointSet>& gts) {
  Eigen::MatrixXd S(static_cast<Eigen::Index>(prs.size()), static_cast<Eigen::Index>(gts.size()));
  for (std::size_t p = 0; p < prs.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g)
      S(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) = similarity(prs[p], gts[g]);
  std::vector<MatchedPair> out;
  const auto rows = hungarian_max(S);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (rows[p] < 0) continue;
    out.push_back({p, static_cast<std::size_t>(rows[p]), S(static_cast<Eigen::Index>(p), rows[p])});
  }
  return out;
}

/// Matched pairs with S > alpha are true positives; everything else counts as
/// a false positive (prediction side) or false negative (ground-truth side).
inline FrameMatch threshold_matching(const std::vector<MatchedPair>& matching, std::size_t n_pr, std::size_t n_gt,
                                     double alpha) {
  FrameMatch out;
  for (const auto& m : matching)
    if (m.similarity > alpha) out.tp.push_back(m);
  out.fp = n_pr - out.tp.size();
  out.fn = n_gt - out.tp.size();
  return out;
}

inline FrameMatch match_frame(const std::vector<KeypointSet>& prs, const std::vector<KeypointSet>& gts, double alpha) {
  return threshold_matching(best_matching(prs, gts), prs.size(), gts.size(), alpha);
}

inline std::vector<double> default_alpha_grid() {
  std::vector<double> a;
  for (int i = 1; i <= 19; ++i) a.push_back(0.05 * i);
  return a;
}

struct AlphaRow {
  double alpha = 0.0;
  double det_a = 0.0;
  double loc_a = 0.0;
  double ass_a = 0.0;
  double hota = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct MetricReport {
  bool defined = false;  // false when the ground truth holds no detection
  double loc_a = std::numeric_limits<double>::quiet_NaN();
  double det_a = std::numeric_limits<double>::quiet_NaN();
  double ass_a = std::numeric_limits<double>::quiet_NaN();
  double hota = std::numeric_limits<double>::quiet_NaN();
  std::vector<AlphaRow> per_alpha;
  std::size_t frames = 0;
  std::size_t unaligned_frames = 0;  // ground-truth frames with no prediction in tolerance
};

struct EvaluateOptions {
  std::vector<double> alphas = default_alpha_grid();
  /// Maximum |t_pred - t_gt| for frame alignment; default is half the median
  /// ground-truth frame spacing.
  std::optional<double> tolerance;
};

namespace detail {

inline double median_spacing(const std::vector<LabeledFrame>& frames) {
  std::vector<double> d;
  for (std::size_t i = 1; i < frames.size(); ++i) d.push_back(frames[i].t - frames[i - 1].t);
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

}  // namespace detail

/// For every ground-truth frame, the index of the nearest prediction frame
/// within tolerance. Both sequences must be sorted by time.
inline std::vector<std::optional<std::size_t>> align_frames(const std::vector<LabeledFrame>& pred,
                                                            const std::vector<LabeledFrame>& gt, double tolerance) {
  std::vector<std::optional<std::size_t>> out(gt.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    while (j + 1 < pred.size() && std::abs(pred[j + 1].t - gt[i].t) <= std::abs(pred[j].t - gt[i].t)) ++j;
    if (j < pred.size() && std::abs(pred[j].t - gt[i].t) <= tolerance) out[i] = j;
  }
  return out;
}

/// LocA, DetA, AssA and HOTA integrated over the alpha grid (mean of the
/// per-alpha values).
inline MetricReport evaluate(const std::vector<LabeledFrame>& pred, const std::vector<LabeledFrame>& gt,
                             const EvaluateOptions& opt = {}) {
  MetricReport rep;
  const double tol = opt.tolerance.value_or(0.5 * detail::median_spacing(gt));
  const auto aligned = align_frames(pred, gt, tol);

  struct Frame {
    std::vector<std::uint64_t> pr_ids, gt_ids;
    std::vector<MatchedPair> matching;
  };
  std::vector<Frame> frames;
  std::size_t gt_dets = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    Frame f;
    std::vector<KeypointSet> prs, gts;
    for (const auto& s : gt[i].skeletons) {
      if (s.keypoints.empty()) continue;  // unannotated subjects are not expected detections
      f.gt_ids.push_back(s.id);
      gts.push_back(s.keypoints);
    }
    if (aligned[i]) {
      for (const auto& s : pred[*aligned[i]].skeletons) {
        f.pr_ids.push_back(s.id);
        prs.push_back(s.keypoints);
      }
    } else {
      ++rep.unaligned_frames;
    }
    gt_dets += gts.size();
    f.matching = best_matching(prs, gts);
    frames.push_back(std::move(f));
  }
  rep.frames = frames.size();
  if (gt_dets == 0) return rep;
  rep.defined = true;
  rep.loc_a = rep.det_a = rep.ass_a = rep.hota = 0.0;

  for (double alpha : opt.alphas) {
    AlphaRow row;
    row.alpha = alpha;
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> tpa;
    std::map<std::uint64_t, std::size_t> pr_count, gt_count;
    double loc = 0.0;
    for (const auto& f : frames) {
      const auto m = threshold_matching(f.matching, f.pr_ids.size(), f.gt_ids.size(), alpha);
      row.tp += m.tp.size();
      row.fp += m.fp;
      row.fn += m.fn;
      for (const auto& c : m.tp) {
        loc += c.similarity;
        ++tpa[{f.pr_ids[c.pr], f.gt_ids[c.gt]}];
      }
      for (auto id : f.pr_ids) ++pr_count[id];
      for (auto id : f.gt_ids) ++gt_count[id];
    }
    row.det_a = static_cast<double>(row.tp) / static_cast<double>(row.tp + row.fn + row.fp);
    if (row.tp > 0) {
      row.loc_a = loc / static_cast<double>(row.tp);
      // Every TP of a given (pr, gt) id pair shares the same association score.
      double ass = 0.0;
      for (const auto& [ids, n] : tpa) {
        const double a = static_cast<double>(n);
        const double fna = static_cast<double>(gt_count[ids.second]) - a;
        const double fpa = static_cast<double>(pr_count[ids.first]) - a;
        ass += a * a / (a + fna + fpa);
      }
      row.ass_a = ass / static_cast<double>(row.tp);
    }
    row.hota = std::sqrt(row.det_a * row.ass_a);
    rep.per_alpha.push_back(row);
  }
  const double n = static_cast<double>(rep.per_alpha.size());
  for (const auto& r : rep.per_alpha) {
    rep.loc_a += r.loc_a / n;
    rep.det_a += r.det_a / n;
    rep.ass_a += r.ass_a / n;
    rep.hota += r.hota / n;
  }
  return rep;
}

inline nlohmann::json to_json(const MetricReport& r) {
  // NaN is not valid JSON; undefined scores become null.
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& a : r.per_alpha)
    rows.push_back({{"alpha", a.alpha}, {"DetA", num(a.det_a)}, {"LocA", num(a.loc_a)}, {"AssA", num(a.ass_a)},
                    {"HOTA", num(a.hota)}, {"TP", a.tp}, {"FP", a.fp}, {"FN", a.fn}});
  return {{"defined", r.defined}, {"HOTA", num(r.hota)}, {"DetA", num(r.det_a)}, {"AssA", num(r.ass_a)},
          {"LocA", num(r.loc_a)}, {"frames", r.frames}, {"unaligned_frames", r.unaligned_frames},
          {"per_alpha", rows}};
}

}  // namespace posefuse
