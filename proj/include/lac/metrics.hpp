#pragma once

#include <vector>

#include "lac/skeleton.hpp"

namespace lac {

/// Average-precision result over classes; classes with no positive frames or
/// segments are skipped and reported through `evaluated`.
struct AveragePrecisionResult {
  std::vector<double> per_class_ap;  // 0 for skipped classes
  std::vector<bool> evaluated;
  double mean = 0.0;  // over evaluated classes
};

/// Per-frame mAP: frames ranked per class by descending score (ties broken by
/// ascending frame index), step-interpolated AP.
AveragePrecisionResult frame_map(const Mat& scores, const Mat& labels);

/// A contiguous temporal detection; end_frame is exclusive.
struct EventSegment {
  int class_id = 0;
  int start_frame = 0;
  int end_frame = 0;
  double score = 0.0;
};

/// Maximal runs of frames with score >= threshold become segments; the
/// segment score is the mean frame score over the run.
std::vector<EventSegment> extract_events(const Mat& scores, double threshold);

/// Ground-truth segments from a 0/1 label matrix (runs of ones).
std::vector<EventSegment> events_from_labels(const Mat& labels);

double temporal_iou(const EventSegment& a, const EventSegment& b);

/// Event-based mAP at one IoU threshold: per class, predictions sorted by
/// descending score (ties by ascending start frame); greedy matching against
/// unmatched ground truth, highest IoU first, each matched once.
AveragePrecisionResult event_map(const std::vector<EventSegment>& predicted,
                                 const std::vector<EventSegment>& ground_truth,
                                 double iou_threshold, int num_classes);

/// Mean over (T, V, C) of squared coordinate differences.
double retarget_mse(const SkeletonSequence& predicted,
                    const SkeletonSequence& target);

}  // namespace lac
