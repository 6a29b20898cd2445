#include "ctv/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ctv/errors.hpp"

namespace ctv {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

double fuse_coord(double a, double b, double s_a, double s_b) {
  if (a == b) return a;
  const double v = (s_a * a + s_b * b) / (s_a + s_b);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

struct Candidate {
  Detection detection;
  DecisionTrace trace;
};

}  // namespace

// ---------------------------------------------------------------------------
// ClassSkillProfile

int ClassSkillProfile::model_slot(std::string_view model) const {
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (models_[i] == model) return static_cast<int>(i);
  }
  return -1;
}

void ClassSkillProfile::set(const std::string& model, ClassId cls, double f1) {
  if (!in_unit(f1)) {
    throw RangeError("f1 for (" + model + ", " + std::to_string(cls) +
                     ") must be in [0,1], got " + std::to_string(f1));
  }
  if (cls < 0) throw RangeError("class id must be non-negative");
  int slot = model_slot(model);
  if (slot < 0) {
    if (models_.size() == 2) {
      throw ValidationError("skill profile supports exactly two models; '" +
                            model + "' would be a third");
    }
    models_.push_back(model);
    rows_.emplace_back();
    slot = static_cast<int>(models_.size() - 1);
  }
  auto& row = rows_[static_cast<std::size_t>(slot)];
  if (row.size() <= static_cast<std::size_t>(cls)) {
    row.resize(static_cast<std::size_t>(cls) + 1, kMissing);
  }
  row[static_cast<std::size_t>(cls)] = f1;
}

bool ClassSkillProfile::has(std::string_view model, ClassId cls) const {
  const int slot = model_slot(model);
  if (slot < 0 || cls < 0) return false;
  const auto& row = rows_[static_cast<std::size_t>(slot)];
  return static_cast<std::size_t>(cls) < row.size() &&
         !std::isnan(row[static_cast<std::size_t>(cls)]);
}

double ClassSkillProfile::f1(std::string_view model, ClassId cls) const {
  if (!has(model, cls)) {
    throw UnknownClassError("skill profile has no F1 for model '" +
                            std::string(model) + "', class " +
                            std::to_string(cls));
  }
  return rows_[static_cast<std::size_t>(model_slot(model))]
              [static_cast<std::size_t>(cls)];
}

std::vector<ClassId> ClassSkillProfile::classes() const {
  std::vector<ClassId> out;
  std::size_t width = 0;
  for (const auto& row : rows_) width = std::max(width, row.size());
  for (std::size_t c = 0; c < width; ++c) {
    for (const auto& row : rows_) {
      if (c < row.size() && !std::isnan(row[c])) {
        out.push_back(static_cast<ClassId>(c));
        break;
      }
    }
  }
  return out;
}

std::vector<std::pair<std::string, ClassId>> ClassSkillProfile::missing(
    std::span<const ClassId> classes) const {
  std::vector<std::pair<std::string, ClassId>> out;
  std::vector<std::string> names = models_;
  // A profile with fewer than two models is missing whole rows; name them
  // with the default model ids so the error is actionable.
  for (std::string_view fallback : {kModelA, kModelB}) {
    if (names.size() >= 2) break;
    if (std::find(names.begin(), names.end(), fallback) == names.end()) {
      names.emplace_back(fallback);
    }
  }
  for (const auto& m : names) {
    for (ClassId c : classes) {
      if (!has(m, c)) out.emplace_back(m, c);
    }
  }
  return out;
}

ClassSkillProfile ClassSkillProfile::uniform(double value) const {
  ClassSkillProfile out = *this;
  for (auto& row : out.rows_) {
    for (double& v : row) {
      if (!std::isnan(v)) v = value;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Params

std::vector<std::string> validate(const CtvParams& p) {
  std::vector<FieldIssue> issues;
  auto check_unit = [&](const char* name, double v) {
    if (!in_unit(v)) issues.push_back({name, "must be in [0,1]"});
  };
  auto check_open_unit = [&](const char* name, double v) {
    if (!(std::isfinite(v) && v > 0.0 && v <= 1.0)) {
      issues.push_back({name, "must be in (0,1]"});
    }
  };
  check_open_unit("t_iou", p.t_iou);
  if (!(std::isfinite(p.gamma) && p.gamma >= 0.0)) {
    issues.push_back({"gamma", "must be finite and >= 0"});
  }
  // +inf is the ALWAYS_TIE setting.
  if (std::isnan(p.f1_margin) || p.f1_margin < 0.0) {
    issues.push_back({"f1_margin", "must be >= 0"});
  }
  check_unit("conf_thresh", p.conf_thresh);
  check_unit("solo_strong", p.solo_strong);
  check_unit("near_tie_conf", p.near_tie_conf);
  for (const auto& [model, floor] : p.model_conf_floor) {
    if (!in_unit(floor)) {
      issues.push_back({"model_conf_floor." + model, "must be in [0,1]"});
    }
  }
  check_open_unit("nms_iou", p.nms_iou);
  if (!issues.empty()) throw InvalidParamsError(std::move(issues));

  std::vector<std::string> warnings;
  if (p.conf_thresh > p.solo_strong) {
    warnings.push_back("conf_thresh exceeds solo_strong");
  }
  return warnings;
}

// ---------------------------------------------------------------------------
// Traces

std::string_view to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::kAgreementFused:
      return "AGREEMENT_FUSED";
    case TraceKind::kSoloStrong:
      return "SOLO_STRONG";
    case TraceKind::kSoloAdvantage:
      return "SOLO_ADVANTAGE";
    case TraceKind::kSoloNearTie:
      return "SOLO_NEAR_TIE";
    case TraceKind::kDroppedUnmatched:
      return "DROPPED_UNMATCHED";
    case TraceKind::kDroppedPrefilter:
      return "DROPPED_PREFILTER";
    case TraceKind::kDroppedNms:
      return "DROPPED_NMS";
  }
  return "UNKNOWN";
}

TraceKind trace_kind_from_string(std::string_view name) {
  for (TraceKind k : kAllTraceKinds) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown trace kind '" + std::string(name) + "'");
}

std::map<TraceKind, std::size_t> FusionResult::count_by_kind() const {
  std::map<TraceKind, std::size_t> counts;
  for (TraceKind k : kAllTraceKinds) counts[k] = 0;
  for (const auto& d : detections) ++counts[d.trace.kind];
  for (const auto& t : dropped) ++counts[t.kind];
  return counts;
}

// ---------------------------------------------------------------------------
// Operations

double fusion_score(double confidence, double gamma, double class_f1) {
  if (gamma == 0.0) return class_f1;
  return std::pow(confidence, gamma) * class_f1;
}

FusedDetection fuse_pair(const Detection& det_a, const Detection& det_b,
                         double s_a, double s_b, bool fuse_coords) {
  if (det_a.class_id != det_b.class_id) {
    throw ValidationError("fuse_pair requires detections of the same class");
  }
  if (!(s_a + s_b > 0.0)) {
    throw ZeroWeightError("fusion scores sum to zero");
  }

  FusedDetection out;
  Detection& d = out.detection;
  d.class_id = det_a.class_id;
  d.confidence = std::max(det_a.confidence, det_b.confidence);
  d.source = std::string(kEnsembleSource);
  if (fuse_coords) {
    d.box.x1 = fuse_coord(det_a.box.x1, det_b.box.x1, s_a, s_b);
    d.box.y1 = fuse_coord(det_a.box.y1, det_b.box.y1, s_a, s_b);
    d.box.x2 = fuse_coord(det_a.box.x2, det_b.box.x2, s_a, s_b);
    d.box.y2 = fuse_coord(det_a.box.y2, det_b.box.y2, s_a, s_b);
  } else {
    d.box = s_b > s_a ? det_b.box : det_a.box;
  }

  out.trace.kind = TraceKind::kAgreementFused;
  out.trace.candidate_kind = TraceKind::kAgreementFused;
  out.trace.sources = {{det_a.source, 0}, {det_b.source, 0}};
  out.trace.scores = {s_a, s_b};
  return out;
}

MatchResult match_detections(std::span<const Detection> dets_a,
                             std::span<const Detection> dets_b, double t_iou) {
  struct Cand {
    double overlap;
    std::size_t a;
    std::size_t b;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < dets_a.size(); ++i) {
    for (std::size_t j = 0; j < dets_b.size(); ++j) {
      if (dets_a[i].class_id != dets_b[j].class_id) continue;
      const double v = iou(dets_a[i].box, dets_b[j].box);
      if (v >= t_iou) cands.push_back({v, i, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) {
    if (l.overlap != r.overlap) return l.overlap > r.overlap;
    if (l.a != r.a) return l.a < r.a;
    return l.b < r.b;
  });

  std::vector<bool> used_a(dets_a.size(), false);
  std::vector<bool> used_b(dets_b.size(), false);
  MatchResult out;
  for (const Cand& c : cands) {
    if (used_a[c.a] || used_b[c.b]) continue;
    used_a[c.a] = true;
    used_b[c.b] = true;
    out.pairs.emplace_back(c.a, c.b);
  }
  for (std::size_t i = 0; i < dets_a.size(); ++i) {
    if (!used_a[i]) out.unmatched_a.push_back(i);
  }
  for (std::size_t j = 0; j < dets_b.size(); ++j) {
    if (!used_b[j]) out.unmatched_b.push_back(j);
  }
  return out;
}

SoloDecision solo_decide(const Detection& det, std::string_view model,
                         std::size_t index, const ClassSkillProfile& profile,
                         const CtvParams& params) {
  const auto& models = profile.models();
  if (models.size() != 2) {
    throw ValidationError("skill profile must name exactly two models");
  }
  const std::string& other = models[0] == model ? models[1] : models[0];
  const double own_f1 = profile.f1(model, det.class_id);
  const double other_f1 = profile.f1(other, det.class_id);

  SoloDecision out;
  out.trace.sources = {{std::string(model), index}};
  const double p = det.confidence;
  if (params.high_conf_override && p >= params.solo_strong) {
    out.keep = true;
    out.trace.kind = TraceKind::kSoloStrong;
  } else if (own_f1 > other_f1 && p >= params.conf_thresh) {
    out.keep = true;
    out.trace.kind = TraceKind::kSoloAdvantage;
  } else if (std::abs(own_f1 - other_f1) <= params.f1_margin &&
             p >= params.near_tie_conf) {
    out.keep = true;
    out.trace.kind = TraceKind::kSoloNearTie;
  } else {
    out.keep = false;
    out.trace.kind = TraceKind::kDroppedUnmatched;
  }
  out.trace.candidate_kind = out.trace.kind;
  return out;
}

FusionResult ctv_fuse(const ImageRecord& frame,
                      const ClassSkillProfile& profile,
                      const CtvParams& params) {
  const auto& models = profile.models();
  if (models.size() != 2) {
    throw ValidationError("skill profile must name exactly two models");
  }

  FusionResult result;

  // Pre-filter by per-model confidence floor, remembering original indices.
  std::array<std::vector<Detection>, 2> kept;
  std::array<std::vector<std::size_t>, 2> origin;
  for (std::size_t m = 0; m < 2; ++m) {
    const auto dets = frame.detections_for(models[m]);
    auto floor_it = params.model_conf_floor.find(models[m]);
    const double floor =
        floor_it == params.model_conf_floor.end() ? 0.0 : floor_it->second;
    kept[m].reserve(dets.size());
    origin[m].reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].confidence >= floor) {
        kept[m].push_back(dets[i]);
        kept[m].back().source = models[m];
        origin[m].push_back(i);
      } else {
        DecisionTrace t;
        t.kind = TraceKind::kDroppedPrefilter;
        t.candidate_kind = TraceKind::kDroppedPrefilter;
        t.sources = {{models[m], i}};
        result.dropped.push_back(std::move(t));
      }
    }
  }

  const MatchResult match =
      match_detections(kept[0], kept[1], params.t_iou);

  std::vector<Candidate> cands;
  cands.reserve(match.pairs.size() + match.unmatched_a.size() +
                match.unmatched_b.size());

  for (const auto& [ia, ib] : match.pairs) {
    const Detection& a = kept[0][ia];
    const Detection& b = kept[1][ib];
    const double s_a =
        fusion_score(a.confidence, params.gamma, profile.f1(models[0], a.class_id));
    const double s_b =
        fusion_score(b.confidence, params.gamma, profile.f1(models[1], b.class_id));
    Candidate c;
    try {
      FusedDetection f = fuse_pair(a, b, s_a, s_b, params.fuse_coords);
      c.detection = std::move(f.detection);
      c.trace = std::move(f.trace);
    } catch (const ZeroWeightError&) {
      c.detection = b.confidence > a.confidence ? b : a;
      c.detection.source = std::string(kEnsembleSource);
      c.trace.kind = TraceKind::kAgreementFused;
      c.trace.candidate_kind = TraceKind::kAgreementFused;
      c.trace.sources = {{models[0], 0}, {models[1], 0}};
      c.trace.scores = {s_a, s_b};
      c.trace.zero_weight = true;
    }
    c.trace.sources[0].index = origin[0][ia];
    c.trace.sources[1].index = origin[1][ib];
    cands.push_back(std::move(c));
  }

  for (std::size_t m = 0; m < 2; ++m) {
    const auto& unmatched = m == 0 ? match.unmatched_a : match.unmatched_b;
    for (std::size_t idx : unmatched) {
      const Detection& d = kept[m][idx];
      SoloDecision s =
          solo_decide(d, models[m], origin[m][idx], profile, params);
      if (s.keep) {
        Candidate c;
        c.detection = d;
        c.detection.source = std::string(kEnsembleSource);
        c.trace = std::move(s.trace);
        cands.push_back(std::move(c));
      } else {
        result.dropped.push_back(std::move(s.trace));
      }
    }
  }

  std::vector<Detection> boxes;
  boxes.reserve(cands.size());
  for (const auto& c : cands) boxes.push_back(c.detection);
  const std::vector<std::size_t> survivors =
      nms_classwise_indices(boxes, params.nms_iou);

  std::vector<bool> alive(cands.size(), false);
  result.detections.reserve(survivors.size());
  for (std::size_t idx : survivors) {
    alive[idx] = true;
    result.detections.push_back(
        {std::move(cands[idx].detection), std::move(cands[idx].trace)});
  }
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (alive[i]) continue;
    DecisionTrace t = std::move(cands[i].trace);
    t.candidate_kind = t.kind;
    t.kind = TraceKind::kDroppedNms;
    result.dropped.push_back(std::move(t));
  }
  return result;
}

}  // namespace ctv
