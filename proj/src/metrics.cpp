#include "ctv/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "ctv/errors.hpp"

namespace ctv {
namespace {

std::vector<std::size_t> confidence_order(std::span<const Detection> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) {
                     return preds[l].confidence > preds[r].confidence;
                   });
  return order;
}

void require_source(std::span<const ImageRecord> images,
                    std::string_view source) {
  if (images.empty()) return;
  for (const auto& img : images) {
    if (img.detections.contains(std::string(source))) return;
  }
  throw MissingSourceError("no detections for source '" + std::string(source) +
                           "'");
}

double safe_ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

GtMatch match_to_gt(std::span<const Detection> preds,
                    std::span<const GroundTruthBox> gts, double iou_thresh,
                    bool class_constrained) {
  GtMatch out;
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<bool> pred_used(preds.size(), false);
  for (std::size_t p : confidence_order(preds)) {
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      if (class_constrained && gts[g].class_id != preds[p].class_id) continue;
      const double v = iou(preds[p].box, gts[g].box);
      if (v >= iou_thresh && v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      gt_used[best_gt] = true;
      pred_used[p] = true;
      out.matches.emplace_back(p, best_gt);
    }
  }
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (!pred_used[p]) out.unmatched_preds.push_back(p);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gt_used[g]) out.unmatched_gts.push_back(g);
  }
  return out;
}

ErrorProfile error_profile(std::span<const ImageRecord> images,
                           std::string_view source, double iou_thresh) {
  ErrorProfile prof;
  for (const auto& img : images) {
    const auto preds = img.detections_for(source);
    const GtMatch m = match_to_gt(preds, img.ground_truth, iou_thresh, true);
    for (const auto& [p, g] : m.matches) ++prof.per_class[preds[p].class_id].tp;
    for (std::size_t p : m.unmatched_preds) ++prof.per_class[preds[p].class_id].fp;
    for (std::size_t g : m.unmatched_gts) {
      ++prof.per_class[img.ground_truth[g].class_id].fn;
    }
  }
  for (const auto& [_, c] : prof.per_class) prof.total += c;
  return prof;
}

PrfResult aggregate_from_counts(const Counts& c) {
  PrfResult r;
  r.precision_degenerate = c.tp + c.fp == 0;
  r.recall_degenerate = c.tp + c.fn == 0;
  r.precision = safe_ratio(c.tp, c.tp + c.fp);
  r.recall = safe_ratio(c.tp, c.tp + c.fn);
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

std::optional<double> average_precision(
    std::span<const RankedPrediction> ranked, std::size_t n_gt) {
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = ranked.size();
  std::vector<double> recall(n);
  std::vector<double> envelope(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked[i].true_positive) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    envelope[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) {
    envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  }
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += envelope[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

std::map<ClassId, ClassRanking> rank_predictions(
    std::span<const ImageRecord> images, std::string_view source,
    double iou_thresh) {
  struct Entry {
    double confidence;
    const std::string* image;
    std::size_t index;
    bool tp;
  };
  std::map<ClassId, std::vector<Entry>> entries;
  std::map<ClassId, ClassRanking> out;
  for (const auto& img : images) {
    for (const auto& g : img.ground_truth) ++out[g.class_id].n_gt;
    const auto preds = img.detections_for(source);
    const GtMatch m = match_to_gt(preds, img.ground_truth, iou_thresh, true);
    std::vector<bool> tp(preds.size(), false);
    for (const auto& [p, _] : m.matches) tp[p] = true;
    for (std::size_t p = 0; p < preds.size(); ++p) {
      entries[preds[p].class_id].push_back(
          {preds[p].confidence, &img.id, p, tp[p]});
    }
  }
  for (auto& [cls, list] : entries) {
    std::sort(list.begin(), list.end(), [](const Entry& l, const Entry& r) {
      if (l.confidence != r.confidence) return l.confidence > r.confidence;
      if (*l.image != *r.image) return *l.image < *r.image;
      return l.index < r.index;
    });
    auto& ranking = out[cls];
    ranking.ranked.reserve(list.size());
    for (const auto& e : list) ranking.ranked.push_back({e.confidence, e.tp});
  }
  return out;
}

std::map<ClassId, double> per_class_ap(std::span<const ImageRecord> images,
                                       std::string_view source,
                                       double iou_thresh) {
  std::map<ClassId, double> out;
  for (const auto& [cls, r] : rank_predictions(images, source, iou_thresh)) {
    if (auto ap = average_precision(r.ranked, r.n_gt)) out[cls] = *ap;
  }
  return out;
}

double map_range(std::span<const ImageRecord> images, std::string_view source,
                 std::span<const double> iou_set) {
  if (iou_set.empty()) throw ValidationError("empty IoU threshold set");
  double total = 0.0;
  for (double t : iou_set) {
    const auto aps = per_class_ap(images, source, t);
    double mean = 0.0;
    for (const auto& [_, ap] : aps) mean += ap;
    if (!aps.empty()) mean /= static_cast<double>(aps.size());
    total += mean;
  }
  return total / static_cast<double>(iou_set.size());
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back((50 + 5 * i) / 100.0);
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const ImageRecord> images,
                                 std::string_view source,
                                 const LabelMap& labels, double iou_thresh,
                                 bool normalize, bool class_constrained) {
  ConfusionMatrix cm;
  cm.classes = labels.ids();
  const std::size_t k = cm.classes.size();
  cm.cells.assign(k + 1, std::vector<double>(k + 1, 0.0));
  for (const auto& img : images) {
    const auto preds = img.detections_for(source);
    const GtMatch m = match_to_gt(preds, img.ground_truth, iou_thresh, class_constrained);
    for (const auto& [p, g] : m.matches) {
      cm.cells[labels.index_of(img.ground_truth[g].class_id)]
              [labels.index_of(preds[p].class_id)] += 1.0;
    }
    for (std::size_t p : m.unmatched_preds) {
      cm.cells[k][labels.index_of(preds[p].class_id)] += 1.0;
    }
    for (std::size_t g : m.unmatched_gts) {
      cm.cells[labels.index_of(img.ground_truth[g].class_id)][k] += 1.0;
    }
  }
  if (normalize) {
    for (auto& row : cm.cells) {
      const double sum = std::accumulate(row.begin(), row.end(), 0.0);
      if (sum > 0.0) {
        for (double& v : row) v /= sum;
      }
    }
  }
  return cm;
}

EvalReport evaluate(std::span<const ImageRecord> images,
                    std::string_view source, const LabelMap& labels) {
  require_source(images, source);

  EvalReport rep;
  rep.source = std::string(source);
  rep.errors = error_profile(images, source, 0.5);

  std::set<ClassId> classes;
  for (ClassId c : labels.ids()) classes.insert(c);
  for (const auto& [c, _] : rep.errors.per_class) classes.insert(c);

  const auto thresholds = coco_iou_thresholds();
  std::vector<std::map<ClassId, double>> aps_by_threshold;
  aps_by_threshold.reserve(thresholds.size());
  for (double t : thresholds) {
    aps_by_threshold.push_back(per_class_ap(images, source, t));
  }

  double macro_sum = 0.0;
  std::size_t macro_n = 0;
  for (ClassId c : classes) {
    ClassMetrics cmx;
    auto cit = rep.errors.per_class.find(c);
    if (cit != rep.errors.per_class.end()) cmx.counts = cit->second;
    const PrfResult prf = aggregate_from_counts(cmx.counts);
    cmx.precision = prf.precision;
    cmx.recall = prf.recall;
    cmx.f1 = prf.f1;

    auto a50 = aps_by_threshold.front().find(c);
    if (a50 != aps_by_threshold.front().end()) {
      cmx.ap50 = a50->second;
      double s = 0.0;
      for (const auto& m : aps_by_threshold) s += m.at(c);
      cmx.ap50_95 = s / static_cast<double>(aps_by_threshold.size());
    }
    if (cmx.counts.tp + cmx.counts.fp + cmx.counts.fn > 0) {
      macro_sum += cmx.f1;
      ++macro_n;
    }
    rep.per_class.emplace(c, cmx);
  }

  const auto& ap50 = aps_by_threshold.front();
  double s = 0.0;
  for (const auto& [_, v] : ap50) s += v;
  rep.map50 = ap50.empty() ? 0.0 : s / static_cast<double>(ap50.size());
  rep.map50_95 = map_range(images, source, thresholds);

  const PrfResult micro = aggregate_from_counts(rep.errors.total);
  rep.micro_precision = micro.precision;
  rep.micro_recall = micro.recall;
  rep.micro_f1 = micro.f1;
  rep.macro_f1 = macro_n == 0 ? 0.0 : macro_sum / static_cast<double>(macro_n);
  rep.confusion = confusion_matrix(images, source, labels, 0.5, false);
  return rep;
}

}  // namespace ctv
