#pragma once

// Detection evaluation: greedy prediction/ground-truth matching, error
// profiles, precision/recall/F1, 101-point interpolated AP, mAP over IoU
// ranges and confusion matrices.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctv/geometry.hpp"

namespace ctv {

struct GtMatch {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (pred, gt)
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;
};

/// Predictions are visited by descending confidence (ties by input position);
/// each claims the unclaimed ground truth with the highest IoU >= iou_thresh
/// (ties by lower gt index). With `class_constrained`, only same-class ground
/// truth is eligible.
GtMatch match_to_gt(std::span<const Detection> preds,
                    std::span<const GroundTruthBox> gts, double iou_thresh,
                    bool class_constrained = true);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

struct ErrorProfile {
  std::map<ClassId, Counts> per_class;
  Counts total;

  friend bool operator==(const ErrorProfile&, const ErrorProfile&) = default;
};

/// TP/FP/FN of `source` against ground truth at `iou_thresh`, class-constrained.
ErrorProfile error_profile(std::span<const ImageRecord> images,
                           std::string_view source, double iou_thresh = 0.5);

struct PrfResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_degenerate = false;  // tp + fp == 0
  bool recall_degenerate = false;     // tp + fn == 0
};

PrfResult aggregate_from_counts(const Counts& counts);

struct RankedPrediction {
  double confidence = 0.0;
  bool true_positive = false;
};

/// 101-point interpolated AP over predictions already ranked best-first.
/// Returns nullopt when n_gt == 0 (class excluded from mAP).
std::optional<double> average_precision(
    std::span<const RankedPrediction> ranked, std::size_t n_gt);

/// Per-class ranked TP/FP lists at one IoU threshold. Ranking is confidence
/// descending, ties by image id then prediction position, so the result does
/// not depend on the order of `images`.
struct ClassRanking {
  std::vector<RankedPrediction> ranked;
  std::size_t n_gt = 0;
};
std::map<ClassId, ClassRanking> rank_predictions(
    std::span<const ImageRecord> images, std::string_view source,
    double iou_thresh);

/// Per-class AP at one threshold, classes without ground truth omitted.
std::map<ClassId, double> per_class_ap(std::span<const ImageRecord> images,
                                       std::string_view source,
                                       double iou_thresh);

/// Mean over thresholds of the mean over classes (with ground truth) of AP.
/// Returns 0 when no class has ground truth. Throws ValidationError on an
/// empty threshold set.
double map_range(std::span<const ImageRecord> images, std::string_view source,
                 std::span<const double> iou_set);

/// {0.50, 0.55, ..., 0.95}.
std::vector<double> coco_iou_thresholds();

/// (K+1)x(K+1) matrix indexed [gt][pred] by label-map position, the last
/// row/column being background. Matching is class-relaxed unless
/// `class_constrained` is set.
struct ConfusionMatrix {
  std::vector<ClassId> classes;
  std::vector<std::vector<double>> cells;

  std::size_t background() const noexcept { return classes.size(); }
};

ConfusionMatrix confusion_matrix(std::span<const ImageRecord> images,
                                 std::string_view source,
                                 const LabelMap& labels, double iou_thresh,
                                 bool normalize,
                                 bool class_constrained = false);

struct ClassMetrics {
  std::optional<double> ap50;
  std::optional<double> ap50_95;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Counts counts;
};

struct EvalReport {
  std::string source;
  std::map<ClassId, ClassMetrics> per_class;
  double map50 = 0.0;
  double map50_95 = 0.0;
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  // Mean per-class F1 over classes with ground truth or predictions.
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
  ErrorProfile errors;
};

/// Full metric suite for one prediction source. Throws MissingSourceError if
/// no image carries a detection list for `source`.
EvalReport evaluate(std::span<const ImageRecord> images,
                    std::string_view source, const LabelMap& labels);

}  // namespace ctv
