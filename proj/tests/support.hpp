#pragma once

// Random generators and independent reference implementations used by the
// property tests and the acceptance binary. The oracles deliberately avoid the
// library's own helpers (no ctv::iou, no sorting by the library's keys).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "ctv/engine.hpp"
#include "ctv/geometry.hpp"
#include "ctv/metrics.hpp"

namespace ctvtest {

using ctv::BBox;
using ctv::ClassId;
using ctv::Detection;
using ctv::GroundTruthBox;
using ctv::ImageRecord;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  // Boxes on a coarse grid collide (equal IoUs, identical boxes) often enough
  // to exercise tie-breaks.
  BBox box(double extent = 100.0, bool coarse = false) {
    if (coarse) {
      const int step = 5;
      const int n = static_cast<int>(extent) / step;
      const int x1 = integer(0, n - 2), y1 = integer(0, n - 2);
      const int x2 = integer(x1 + 1, n), y2 = integer(y1 + 1, n);
      return {double(x1 * step), double(y1 * step), double(x2 * step), double(y2 * step)};
    }
    const double x1 = uniform(0.0, extent * 0.8), y1 = uniform(0.0, extent * 0.8);
    return {x1, y1, x1 + uniform(1.0, extent * 0.4), y1 + uniform(1.0, extent * 0.4)};
  }

  double confidence(bool coarse = false) {
    return coarse ? integer(0, 10) / 10.0 : uniform(0.0, 1.0);
  }

  std::vector<Detection> detections(int max_n, int n_classes, const std::string& source,
                                    bool coarse = false) {
    std::vector<Detection> out(static_cast<std::size_t>(integer(0, max_n)));
    for (auto& d : out) {
      d.box = box(100.0, coarse);
      d.class_id = integer(0, n_classes - 1);
      d.confidence = confidence(coarse);
      d.source = source;
    }
    return out;
  }

  std::vector<GroundTruthBox> ground_truth(int max_n, int n_classes, bool coarse = false) {
    std::vector<GroundTruthBox> out(static_cast<std::size_t>(integer(0, max_n)));
    for (auto& g : out) {
      g.box = box(100.0, coarse);
      g.class_id = integer(0, n_classes - 1);
    }
    return out;
  }

  // Frame whose MODEL_B boxes are partly perturbed copies of MODEL_A boxes,
  // so matches actually happen.
  ImageRecord frame(const std::string& id, int max_per_model, int n_classes,
                    bool coarse = false) {
    ImageRecord img;
    img.id = id;
    img.width = 100;
    img.height = 100;
    auto a = detections(max_per_model, n_classes, std::string(ctv::kModelA), coarse);
    auto b = detections(max_per_model, n_classes, std::string(ctv::kModelB), coarse);
    for (std::size_t i = 0; i < b.size() && i < a.size(); ++i) {
      if (coin(0.6)) {
        b[i].class_id = a[i].class_id;
        const double dx = coarse ? 0.0 : uniform(-5.0, 5.0);
        const double dy = coarse ? 0.0 : uniform(-5.0, 5.0);
        b[i].box = {a[i].box.x1 + dx, a[i].box.y1 + dy, a[i].box.x2 + dx, a[i].box.y2 + dy};
      }
    }
    img.detections[std::string(ctv::kModelA)] = std::move(a);
    img.detections[std::string(ctv::kModelB)] = std::move(b);
    img.ground_truth = ground_truth(max_per_model, n_classes, coarse);
    return img;
  }

  ctv::ClassSkillProfile profile(int n_classes, bool coarse = false) {
    ctv::ClassSkillProfile p;
    for (int c = 0; c < n_classes; ++c) {
      p.set(std::string(ctv::kModelA), c, coarse ? integer(0, 4) / 4.0 : uniform(0.0, 1.0));
      p.set(std::string(ctv::kModelB), c, coarse ? integer(0, 4) / 4.0 : uniform(0.0, 1.0));
    }
    return p;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Geometry oracle: intersection and union by explicit case analysis.

inline double oracle_iou(const BBox& a, const BBox& b) {
  const double left = a.x1 > b.x1 ? a.x1 : b.x1;
  const double right = a.x2 < b.x2 ? a.x2 : b.x2;
  const double top = a.y1 > b.y1 ? a.y1 : b.y1;
  const double bottom = a.y2 < b.y2 ? a.y2 : b.y2;
  if (right <= left || bottom <= top) return 0.0;
  if (a == b) return 1.0;
  const double inter = (right - left) * (bottom - top);
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  const double r = inter / uni;
  return r > 1.0 ? 1.0 : r;
}

// ---------------------------------------------------------------------------
// Cross-model matching, literal greedy: repeatedly scan every unused pair and
// take the best by (IoU desc, index_a asc, index_b asc).

struct OracleMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;
};

inline OracleMatch oracle_match(const std::vector<Detection>& a,
                                const std::vector<Detection>& b, double t_iou) {
  std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
  OracleMatch out;
  for (;;) {
    bool found = false;
    std::size_t bi = 0, bj = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (used_a[i]) continue;
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (used_b[j] || a[i].class_id != b[j].class_id) continue;
        const double v = oracle_iou(a[i].box, b[j].box);
        if (v < t_iou) continue;
        // Strict '>' keeps the earliest (i, j) among equal IoUs.
        if (!found || v > best) {
          found = true;
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    if (!found) break;
    used_a[bi] = used_b[bj] = true;
    out.pairs.emplace_back(bi, bj);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!used_a[i]) out.unmatched_a.push_back(i);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (!used_b[j]) out.unmatched_b.push_back(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction/ground-truth matching: visit predictions by repeatedly picking the
// highest remaining confidence (earliest on ties).

struct OracleGtMatch {
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  std::vector<bool> pred_tp;
  std::vector<bool> gt_hit;
};

inline OracleGtMatch oracle_match_gt(const std::vector<Detection>& preds,
                                     const std::vector<GroundTruthBox>& gts, double thr,
                                     bool class_constrained = true) {
  OracleGtMatch out;
  out.pred_tp.assign(preds.size(), false);
  out.gt_hit.assign(gts.size(), false);
  std::vector<bool> visited(preds.size(), false);
  for (std::size_t step = 0; step < preds.size(); ++step) {
    std::size_t p = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (visited[i]) continue;
      if (p == preds.size() || preds[i].confidence > preds[p].confidence) p = i;
    }
    visited[p] = true;
    std::size_t g = gts.size();
    double best = -1.0;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (out.gt_hit[j]) continue;
      if (class_constrained && gts[j].class_id != preds[p].class_id) continue;
      const double v = oracle_iou(preds[p].box, gts[j].box);
      if (v >= thr && v > best) {
        best = v;
        g = j;
      }
    }
    if (g != gts.size()) {
      out.gt_hit[g] = true;
      out.pred_tp[p] = true;
      out.matches.emplace_back(p, g);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// AP: precision at every rank, envelope by brute-force max over the tail,
// sampled at 101 recall levels.

inline std::optional<double> oracle_ap(const std::vector<bool>& ranked_tp, std::size_t n_gt) {
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = ranked_tp.size();
  std::vector<double> prec(n), rec(n);
  double tp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_tp[i]) tp += 1.0;
    prec[i] = tp / static_cast<double>(i + 1);
    rec[i] = tp / static_cast<double>(n_gt);
  }
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double level = k / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rec[i] >= level && prec[i] > best) best = prec[i];
    }
    sum += best;
  }
  return sum / 101.0;
}

struct OracleClassStats {
  std::vector<std::pair<double, bool>> ranked;  // after ranking
  std::size_t n_gt = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Per-class ranking: confidence desc, then image id asc, then position asc.
inline std::map<ClassId, OracleClassStats> oracle_class_stats(
    const std::vector<ImageRecord>& images, const std::string& source, double thr) {
  struct Entry {
    double conf;
    std::string image;
    std::size_t pos;
    bool tp;
    ClassId cls;
  };
  std::vector<Entry> entries;
  std::map<ClassId, OracleClassStats> out;
  for (const auto& img : images) {
    for (const auto& g : img.ground_truth) out[g.class_id].n_gt++;
    auto it = img.detections.find(source);
    const std::vector<Detection> empty;
    const auto& preds = it == img.detections.end() ? empty : it->second;
    const OracleGtMatch m = oracle_match_gt(preds, img.ground_truth, thr);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      entries.push_back({preds[i].confidence, img.id, i, bool(m.pred_tp[i]), preds[i].class_id});
      auto& s = out[preds[i].class_id];
      if (m.pred_tp[i]) {
        s.tp++;
      } else {
        s.fp++;
      }
    }
  }
  for (auto& [c, s] : out) s.fn = s.n_gt - s.tp;
  // Selection sort keeps this independent of std::sort comparators.
  std::vector<bool> taken(entries.size(), false);
  for (std::size_t step = 0; step < entries.size(); ++step) {
    std::size_t best = entries.size();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (taken[i]) continue;
      if (best == entries.size()) {
        best = i;
        continue;
      }
      const Entry& x = entries[i];
      const Entry& y = entries[best];
      const bool better = x.conf != y.conf   ? x.conf > y.conf
                          : x.image != y.image ? x.image < y.image
                                               : x.pos < y.pos;
      if (better) best = i;
    }
    taken[best] = true;
    out[entries[best].cls].ranked.emplace_back(entries[best].conf, entries[best].tp);
  }
  return out;
}

inline double oracle_map(const std::vector<ImageRecord>& images, const std::string& source,
                         const std::vector<double>& thresholds) {
  double total = 0.0;
  for (double thr : thresholds) {
    double sum = 0.0;
    int n = 0;
    for (const auto& [c, s] : oracle_class_stats(images, source, thr)) {
      std::vector<bool> flags;
      for (const auto& r : s.ranked) flags.push_back(r.second);
      if (auto ap = oracle_ap(flags, s.n_gt)) {
        sum += *ap;
        ++n;
      }
    }
    total += n == 0 ? 0.0 : sum / n;
  }
  return total / static_cast<double>(thresholds.size());
}

// ---------------------------------------------------------------------------
// Image oracles.

inline double oracle_srgb_decode(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double oracle_srgb_encode(double v) {
  return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline int oracle_brightness(int v, double factor) {
  double lin = oracle_srgb_decode(v / 255.0) * factor;
  if (lin > 1.0) lin = 1.0;
  const double out = std::round(oracle_srgb_encode(lin) * 255.0);
  return out < 0 ? 0 : (out > 255 ? 255 : static_cast<int>(out));
}

// ---------------------------------------------------------------------------

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag)
      : path(std::filesystem::temp_directory_path() /
             ("ctv_test_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace ctvtest
