#include "lac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lac {

namespace {

// AP from a ranked list of hit flags via step interpolation: precision is
// accumulated at every positive rank.
double ranked_ap(const std::vector<bool>& hit, int num_positive) {
  double ap = 0.0;
  int tp = 0;
  for (size_t k = 0; k < hit.size(); ++k) {
    if (!hit[k]) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(k + 1) / num_positive;
  }
  return ap;
}

}  // namespace

AveragePrecisionResult frame_map(const Mat& scores, const Mat& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw Error("frame_map: shape mismatch");
  const int T = static_cast<int>(scores.rows());
  const int C = static_cast<int>(scores.cols());

  AveragePrecisionResult result;
  result.per_class_ap.assign(C, 0.0);
  result.evaluated.assign(C, false);
  double sum = 0.0;
  int evaluated = 0;

  for (int c = 0; c < C; ++c) {
    int positives = 0;
    for (int t = 0; t < T; ++t)
      if (labels(t, c) == 1.0) ++positives;
    if (positives == 0) continue;  // skipped and reported

    std::vector<int> order(T);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores(a, c) != scores(b, c)) return scores(a, c) > scores(b, c);
      return a < b;  // documented tie-break: ascending frame index
    });
    std::vector<bool> hit(T);
    for (int k = 0; k < T; ++k) hit[k] = labels(order[k], c) == 1.0;

    result.per_class_ap[c] = ranked_ap(hit, positives);
    result.evaluated[c] = true;
    sum += result.per_class_ap[c];
    ++evaluated;
  }
  if (evaluated == 0) throw Error("frame_map: no positives");
  result.mean = sum / evaluated;
  return result;
}

std::vector<EventSegment> extract_events(const Mat& scores, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error("extract_events: threshold must lie in (0, 1)");
  std::vector<EventSegment> events;
  const int T = static_cast<int>(scores.rows());
  for (int c = 0; c < scores.cols(); ++c) {
    int start = -1;
    double acc = 0.0;
    for (int t = 0; t <= T; ++t) {
      const bool on = t < T && scores(t, c) >= threshold;
      if (on) {
        if (start < 0) {
          start = t;
          acc = 0.0;
        }
        acc += scores(t, c);
      } else if (start >= 0) {
        events.push_back({c, start, t, acc / (t - start)});
        start = -1;
      }
    }
  }
  return events;
}

std::vector<EventSegment> events_from_labels(const Mat& labels) {
  std::vector<EventSegment> events;
  const int T = static_cast<int>(labels.rows());
  for (int c = 0; c < labels.cols(); ++c) {
    int start = -1;
    for (int t = 0; t <= T; ++t) {
      const bool on = t < T && labels(t, c) == 1.0;
      if (on && start < 0) start = t;
      if (!on && start >= 0) {
        events.push_back({c, start, t, 1.0});
        start = -1;
      }
    }
  }
  return events;
}

double temporal_iou(const EventSegment& a, const EventSegment& b) {
  const int inter = std::max(
      0, std::min(a.end_frame, b.end_frame) - std::max(a.start_frame, b.start_frame));
  const int uni = (a.end_frame - a.start_frame) + (b.end_frame - b.start_frame) - inter;
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

AveragePrecisionResult event_map(const std::vector<EventSegment>& predicted,
                                 const std::vector<EventSegment>& ground_truth,
                                 double iou_threshold, int num_classes) {
  if (ground_truth.empty()) throw Error("event_map: empty ground truth");

  AveragePrecisionResult result;
  result.per_class_ap.assign(num_classes, 0.0);
  result.evaluated.assign(num_classes, false);
  double sum = 0.0;
  int evaluated = 0;

  for (int c = 0; c < num_classes; ++c) {
    std::vector<const EventSegment*> gt;
    for (const auto& g : ground_truth)
      if (g.class_id == c) gt.push_back(&g);
    if (gt.empty()) continue;  // classes without ground truth are skipped

    std::vector<const EventSegment*> preds;
    for (const auto& p : predicted)
      if (p.class_id == c) preds.push_back(&p);
    std::sort(preds.begin(), preds.end(),
              [](const EventSegment* a, const EventSegment* b) {
                if (a->score != b->score) return a->score > b->score;
                if (a->start_frame != b->start_frame)
                  return a->start_frame < b->start_frame;
                return a->end_frame < b->end_frame;
              });

    std::vector<bool> matched(gt.size(), false);
    std::vector<bool> hit(preds.size(), false);
    for (size_t k = 0; k < preds.size(); ++k) {
      int best = -1;
      double best_iou = 0.0;
      for (size_t g = 0; g < gt.size(); ++g) {
        if (matched[g]) continue;
        const double iou = temporal_iou(*preds[k], *gt[g]);
        if (iou >= iou_threshold && iou > best_iou) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) {
        matched[best] = true;
        hit[k] = true;
      }
    }
    result.per_class_ap[c] = ranked_ap(hit, static_cast<int>(gt.size()));
    result.evaluated[c] = true;
    sum += result.per_class_ap[c];
    ++evaluated;
  }
  if (evaluated == 0) throw Error("event_map: no ground truth classes in range");
  result.mean = sum / evaluated;
  return result;
}

double retarget_mse(const SkeletonSequence& predicted,
                    const SkeletonSequence& target) {
  if (predicted.frames.rows() != target.frames.rows() ||
      predicted.frames.cols() != target.frames.cols() ||
      predicted.num_joints != target.num_joints ||
      predicted.channels != target.channels)
    throw Error("retarget_mse: shape mismatch");
  return (predicted.frames - target.frames).squaredNorm() /
         static_cast<double>(predicted.frames.size());
}

}  // namespace lac
