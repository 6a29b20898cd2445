#pragma once

// Confidence-Temporal Voting: two-detector fusion by IoU pairing,
// confidence^gamma x class-F1 weighting, and solo-retention rules.
//
// Fusion is strictly per frame. Every input detection ends up in exactly one
// DecisionTrace, either attached to an output detection or in the dropped list.

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctv/geometry.hpp"

namespace ctv {

inline constexpr std::string_view kEnsembleSource = "ENSEMBLE";
inline constexpr std::string_view kModelA = "MODEL_A";
inline constexpr std::string_view kModelB = "MODEL_B";

/// Per-model, per-class validation F1 scores. Holds exactly two models; the
/// first model added is "model A" for matching order.
class ClassSkillProfile {
 public:
  ClassSkillProfile() = default;

  /// Throws RangeError if f1 is outside [0,1], ValidationError when a third
  /// model is introduced.
  void set(const std::string& model, ClassId cls, double f1);

  bool has(std::string_view model, ClassId cls) const;

  /// Throws UnknownClassError when the entry is missing.
  double f1(std::string_view model, ClassId cls) const;

  const std::vector<std::string>& models() const noexcept { return models_; }

  /// Every class id that has an entry for at least one model.
  std::vector<ClassId> classes() const;

  /// (model, class) pairs missing for the given classes across both models.
  std::vector<std::pair<std::string, ClassId>> missing(
      std::span<const ClassId> classes) const;

  /// Same models and classes with every F1 replaced by `value`.
  ClassSkillProfile uniform(double value) const;

  friend bool operator==(const ClassSkillProfile&,
                         const ClassSkillProfile&) = default;

 private:
  int model_slot(std::string_view model) const;

  std::vector<std::string> models_;
  // One dense row per model; NaN marks a missing entry.
  std::vector<std::vector<double>> rows_;
};

struct CtvParams {
  double t_iou = 0.4;
  double gamma = 2.0;
  double f1_margin = 0.05;
  double conf_thresh = 0.6;
  double solo_strong = 0.95;
  double near_tie_conf = 0.95;
  std::map<std::string, double> model_conf_floor = {
      {std::string(kModelA), 0.6}, {std::string(kModelB), 0.9}};
  bool fuse_coords = true;
  double nms_iou = 0.5;
  // Rule I switch; disabled only by the NO_HIGH_CONF ablation.
  bool high_conf_override = true;

  friend bool operator==(const CtvParams&, const CtvParams&) = default;
};

/// Field-level range checks. Throws InvalidParamsError listing every issue.
/// Returns human-readable warnings for soft violations (conf_thresh >
/// solo_strong).
std::vector<std::string> validate(const CtvParams& params);

enum class TraceKind {
  kAgreementFused,
  kSoloStrong,
  kSoloAdvantage,
  kSoloNearTie,
  kDroppedUnmatched,
  kDroppedPrefilter,
  kDroppedNms,
};

inline constexpr std::array<TraceKind, 7> kAllTraceKinds = {
    TraceKind::kAgreementFused,   TraceKind::kSoloStrong,
    TraceKind::kSoloAdvantage,    TraceKind::kSoloNearTie,
    TraceKind::kDroppedUnmatched, TraceKind::kDroppedPrefilter,
    TraceKind::kDroppedNms};

std::string_view to_string(TraceKind kind);
TraceKind trace_kind_from_string(std::string_view name);

struct SourceRef {
  std::string model;
  std::size_t index = 0;

  friend bool operator==(const SourceRef&, const SourceRef&) = default;
};

struct DecisionTrace {
  TraceKind kind = TraceKind::kDroppedUnmatched;
  // For kDroppedNms: the rule that produced the suppressed candidate.
  TraceKind candidate_kind = TraceKind::kDroppedUnmatched;
  std::vector<SourceRef> sources;
  // Fusion scores, parallel to `sources`, for agreement candidates.
  std::vector<double> scores;
  // Both fusion scores were zero; the higher-confidence box was kept as is.
  bool zero_weight = false;

  friend bool operator==(const DecisionTrace&, const DecisionTrace&) = default;
};

struct FusedDetection {
  Detection detection;
  DecisionTrace trace;

  friend bool operator==(const FusedDetection&, const FusedDetection&) = default;
};

struct FusionResult {
  // Confidence descending.
  std::vector<FusedDetection> detections;
  // Traces for inputs that produced no output, in input processing order.
  std::vector<DecisionTrace> dropped;

  std::map<TraceKind, std::size_t> count_by_kind() const;

  friend bool operator==(const FusionResult&, const FusionResult&) = default;
};

/// confidence^gamma * class_f1. 0^0 is taken as 1.
double fusion_score(double confidence, double gamma, double class_f1);

/// Agreement fusion of two same-class detections. Throws ZeroWeightError when
/// s_a + s_b == 0 and ValidationError when the classes differ.
FusedDetection fuse_pair(const Detection& det_a, const Detection& det_b,
                         double s_a, double s_b, bool fuse_coords);

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;
};

/// Greedy cross-model pairing by descending IoU over same-class candidates
/// with IoU >= t_iou; ties by lower index_a then lower index_b. Pairs are
/// returned in selection order, unmatched indices ascending.
MatchResult match_detections(std::span<const Detection> dets_a,
                             std::span<const Detection> dets_b, double t_iou);

struct SoloDecision {
  bool keep = false;
  DecisionTrace trace;
};

/// Solo rules for an unmatched detection from `model`, evaluated in order:
/// (I) confidence >= solo_strong, (II) own class F1 strictly above the other
/// model's and confidence >= conf_thresh, (III) |F1 difference| <= f1_margin
/// and confidence >= near_tie_conf. Throws UnknownClassError if the profile
/// lacks the class for either model.
SoloDecision solo_decide(const Detection& det, std::string_view model,
                         std::size_t index, const ClassSkillProfile& profile,
                         const CtvParams& params);

/// Full per-frame fusion over the two models named in `profile`. Missing
/// detection lists are treated as empty. Output detections carry source
/// ENSEMBLE.
FusionResult ctv_fuse(const ImageRecord& frame,
                      const ClassSkillProfile& profile,
                      const CtvParams& params);

}  // namespace ctv
