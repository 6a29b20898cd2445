#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "ctv/engine.hpp"
#include "ctv/errors.hpp"
#include "support.hpp"

using namespace ctv;

namespace {

const std::string A(kModelA);
const std::string B(kModelB);

Detection det(BBox b, ClassId c, double conf, const std::string& src = A) {
  return {b, c, conf, src};
}

ClassSkillProfile two_model_profile(ClassId cls, double f1_a, double f1_b) {
  ClassSkillProfile p;
  p.set(A, cls, f1_a);
  p.set(B, cls, f1_b);
  return p;
}

ImageRecord frame_of(std::vector<Detection> a, std::vector<Detection> b) {
  ImageRecord img;
  img.id = "f";
  img.width = 1000;
  img.height = 1000;
  img.detections[A] = std::move(a);
  img.detections[B] = std::move(b);
  return img;
}

// (model, index) of every input detection mentioned across all traces.
std::multiset<std::pair<std::string, std::size_t>> traced_inputs(const FusionResult& r) {
  std::multiset<std::pair<std::string, std::size_t>> out;
  for (const auto& d : r.detections) {
    for (const auto& s : d.trace.sources) out.emplace(s.model, s.index);
  }
  for (const auto& t : r.dropped) {
    for (const auto& s : t.sources) out.emplace(s.model, s.index);
  }
  return out;
}

}  // namespace

TEST_CASE("fusion_score examples") {
  CHECK(fusion_score(1.0, 3.7, 1.0) == 1.0);
  CHECK(fusion_score(0.7, 0.0, 0.8) == 0.8);
  CHECK(fusion_score(0.0, 0.0, 0.8) == 0.8);
  CHECK(fusion_score(0.9, 2.0, 0.8) == doctest::Approx(0.648).epsilon(1e-12));
  CHECK(fusion_score(0.0, 2.0, 0.8) == 0.0);
}

TEST_CASE("fuse_pair weighted average, worked example") {
  const Detection a = det({100, 100, 200, 200}, 0, 0.9, A);
  const Detection b = det({110, 105, 195, 205}, 0, 0.8, B);
  const FusedDetection f = fuse_pair(a, b, 0.75, 0.54, true);
  // Independent arithmetic: (0.75*100 + 0.54*110) / 1.29.
  CHECK(f.detection.box.x1 == doctest::Approx((0.75 * 100 + 0.54 * 110) / 1.29));
  CHECK(std::abs(f.detection.box.x1 - 104.2) <= 0.05);
  CHECK(f.detection.box.y1 == doctest::Approx((0.75 * 100 + 0.54 * 105) / 1.29));
  CHECK(f.detection.box.x2 == doctest::Approx((0.75 * 200 + 0.54 * 195) / 1.29));
  CHECK(f.detection.box.y2 == doctest::Approx((0.75 * 200 + 0.54 * 205) / 1.29));
  CHECK(f.detection.confidence == 0.9);
  CHECK(f.detection.class_id == 0);
  CHECK(f.detection.source == kEnsembleSource);
  CHECK(f.trace.kind == TraceKind::kAgreementFused);
  CHECK(f.trace.scores == std::vector<double>{0.75, 0.54});
  REQUIRE(f.trace.sources.size() == 2);
  CHECK(f.trace.sources[0].model == A);
  CHECK(f.trace.sources[1].model == B);
}

TEST_CASE("fuse_pair midpoint, identical boxes, winner-take-all, errors") {
  const Detection a = det({0, 0, 10, 10}, 1, 0.5, A);
  const Detection b = det({2, 4, 12, 14}, 1, 0.6, B);
  const auto mid = fuse_pair(a, b, 0.3, 0.3, true);
  CHECK(mid.detection.box == BBox{1, 2, 11, 12});
  CHECK(mid.detection.confidence == 0.6);

  const Detection a2 = det({3.3, 4.4, 5.5, 6.6}, 1, 0.5, A);
  Detection b2 = a2;
  b2.source = B;
  CHECK(fuse_pair(a2, b2, 0.123, 0.987, true).detection.box == a2.box);

  CHECK(fuse_pair(a, b, 0.4, 0.3, false).detection.box == a.box);
  CHECK(fuse_pair(a, b, 0.3, 0.4, false).detection.box == b.box);
  CHECK(fuse_pair(a, b, 0.3, 0.3, false).detection.box == a.box);

  CHECK_THROWS_AS(fuse_pair(a, b, 0.0, 0.0, true), ZeroWeightError);
  CHECK_THROWS_AS(fuse_pair(a, det({0, 0, 1, 1}, 2, 0.5, B), 1, 1, true), ValidationError);
}

TEST_CASE("match_detections examples") {
  const std::vector<Detection> none;
  const std::vector<Detection> two{det({0, 0, 10, 10}, 0, 0.9), det({50, 50, 60, 60}, 0, 0.9)};
  auto m = match_detections(none, two, 0.4);
  CHECK(m.pairs.empty());
  CHECK(m.unmatched_b == std::vector<std::size_t>{0, 1});

  // IoU 0.6: 10x10 vs shifted 2.5 -> inter 75, union 125.
  const std::vector<Detection> a{det({0, 0, 10, 10}, 0, 0.9)};
  const std::vector<Detection> b{det({2.5, 0, 12.5, 10}, 0, 0.9, B)};
  REQUIRE(iou(a[0].box, b[0].box) == doctest::Approx(0.6));
  m = match_detections(a, b, 0.4);
  REQUIRE(m.pairs.size() == 1);
  CHECK(m.pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});

  // IoU 0.3 < 0.4.
  const std::vector<Detection> c{det({0, 0, 13, 10}, 0, 0.9, B)};
  const std::vector<Detection> d{det({7, 0, 20, 10}, 0, 0.9)};
  REQUIRE(iou(c[0].box, d[0].box) == doctest::Approx(6.0 * 10 / (260 - 60)));
  m = match_detections(d, c, 0.4);
  CHECK(m.pairs.empty());
  CHECK(m.unmatched_a.size() == 1);
  CHECK(m.unmatched_b.size() == 1);

  // Same geometry, different class.
  const std::vector<Detection> e{det({2.5, 0, 12.5, 10}, 1, 0.9, B)};
  CHECK(match_detections(a, e, 0.4).pairs.empty());
}

TEST_CASE("match_detections tie-break by lower index") {
  const BBox box{0, 0, 10, 10};
  const std::vector<Detection> a{det(box, 0, 0.9), det(box, 0, 0.8)};
  const std::vector<Detection> b{det(box, 0, 0.9, B), det(box, 0, 0.7, B)};
  const auto m = match_detections(a, b, 0.4);
  REQUIRE(m.pairs.size() == 2);
  CHECK(m.pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(m.pairs[1] == std::pair<std::size_t, std::size_t>{1, 1});
}

TEST_CASE("solo_decide examples") {
  CtvParams p;
  const auto prof = two_model_profile(0, 0.90, 0.60);

  auto r = solo_decide(det({0, 0, 1, 1}, 0, 0.96), A, 4, two_model_profile(0, 0.1, 0.9), p);
  CHECK(r.keep);
  CHECK(r.trace.kind == TraceKind::kSoloStrong);
  REQUIRE(r.trace.sources.size() == 1);
  CHECK(r.trace.sources[0] == SourceRef{A, 4});

  r = solo_decide(det({0, 0, 1, 1}, 0, 0.70), A, 0, prof, p);
  CHECK(r.keep);
  CHECK(r.trace.kind == TraceKind::kSoloAdvantage);

  // 0.85 vs 0.84 is a strict advantage with conf 0.70 >= 0.6, so rule II keeps it.
  r = solo_decide(det({0, 0, 1, 1}, 0, 0.70), A, 0, two_model_profile(0, 0.85, 0.84), p);
  CHECK(r.keep);
  CHECK(r.trace.kind == TraceKind::kSoloAdvantage);

  // Exact tie: rule II fails, rule III needs conf >= 0.95.
  r = solo_decide(det({0, 0, 1, 1}, 0, 0.70), A, 0, two_model_profile(0, 0.85, 0.85), p);
  CHECK_FALSE(r.keep);
  CHECK(r.trace.kind == TraceKind::kDroppedUnmatched);

  // The weaker side at 0.84 vs 0.85 with conf 0.945: rule I and II fail,
  // near tie within 0.05 but conf below 0.95.
  r = solo_decide(det({0, 0, 1, 1}, 0, 0.945, B), B, 0, two_model_profile(0, 0.85, 0.84), p);
  CHECK_FALSE(r.keep);
  p.near_tie_conf = 0.94;
  r = solo_decide(det({0, 0, 1, 1}, 0, 0.945, B), B, 0, two_model_profile(0, 0.85, 0.84), p);
  CHECK(r.keep);
  CHECK(r.trace.kind == TraceKind::kSoloNearTie);
}

TEST_CASE("solo_decide boundaries and errors") {
  CtvParams p;
  const auto weak = two_model_profile(0, 0.1, 0.9);
  CHECK(solo_decide(det({0, 0, 1, 1}, 0, 0.95), A, 0, weak, p).keep);
  CHECK_FALSE(solo_decide(det({0, 0, 1, 1}, 0, std::nextafter(0.95, 0.0)), A, 0, weak, p).keep);

  p.high_conf_override = false;
  CHECK_FALSE(solo_decide(det({0, 0, 1, 1}, 0, 0.99), A, 0, weak, p).keep);

  ClassSkillProfile partial;
  partial.set(A, 0, 0.5);
  partial.set(B, 1, 0.5);
  CHECK_THROWS_AS(solo_decide(det({0, 0, 1, 1}, 0, 0.99), A, 0, partial, p), UnknownClassError);
}

TEST_CASE("ctv_fuse examples") {
  const CtvParams defaults;
  const auto prof = two_model_profile(0, 0.9, 0.8);
  CHECK(ctv_fuse(frame_of({}, {}), prof, defaults).detections.empty());

  // The worked pair: scores 0.75/0.54 at gamma 1.5 need F1s of
  // 0.75/0.9^1.5 and 0.54/0.8^1.5. The second detector's 0.8 sits below its
  // default floor of 0.9, so the floor is relaxed for this frame.
  CtvParams p;
  p.gamma = 1.5;
  p.model_conf_floor[B] = 0.8;
  const auto worked =
      two_model_profile(0, 0.75 / std::pow(0.9, 1.5), 0.54 / std::pow(0.8, 1.5));
  const auto r = ctv_fuse(frame_of({det({100, 100, 200, 200}, 0, 0.9, A)},
                                   {det({110, 105, 195, 205}, 0, 0.8, B)}),
                          worked, p);
  REQUIRE(r.detections.size() == 1);
  CHECK(r.dropped.empty());
  const auto& f = r.detections[0];
  CHECK(f.detection.box.x1 == doctest::Approx(104.186).epsilon(1e-5));
  CHECK(f.detection.confidence == 0.9);
  CHECK(f.trace.kind == TraceKind::kAgreementFused);
  CHECK(f.trace.scores[0] == doctest::Approx(0.75));
  CHECK(f.trace.scores[1] == doctest::Approx(0.54));

  // Under the default floors the second box is pre-filtered and the first
  // survives alone on its F1 advantage.
  const auto d = ctv_fuse(frame_of({det({100, 100, 200, 200}, 0, 0.9, A)},
                                   {det({110, 105, 195, 205}, 0, 0.8, B)}),
                          worked, defaults);
  REQUIRE(d.detections.size() == 1);
  CHECK(d.detections[0].trace.kind == TraceKind::kSoloAdvantage);
  REQUIRE(d.dropped.size() == 1);
  CHECK(d.dropped[0].kind == TraceKind::kDroppedPrefilter);
  CHECK(d.dropped[0].sources[0] == SourceRef{B, 0});

  // Single strong solo detection kept verbatim.
  const Detection strong = det({10, 20, 30, 40}, 0, 0.99, B);
  const auto s = ctv_fuse(frame_of({}, {strong}), two_model_profile(0, 0.9, 0.1), defaults);
  REQUIRE(s.detections.size() == 1);
  CHECK(s.detections[0].detection.box == strong.box);
  CHECK(s.detections[0].detection.confidence == 0.99);
  CHECK(s.detections[0].detection.source == kEnsembleSource);
  CHECK(s.detections[0].trace.kind == TraceKind::kSoloStrong);
}

TEST_CASE("ctv_fuse NMS traces keep the producing rule") {
  CtvParams p;
  // Two overlapping same-class solo boxes from one model; the weaker is
  // suppressed by the final NMS.
  const auto r = ctv_fuse(frame_of({det({0, 0, 100, 100}, 0, 0.99), det({0, 0, 90, 100}, 0, 0.97)}, {}),
                          two_model_profile(0, 0.5, 0.5), p);
  REQUIRE(r.detections.size() == 1);
  REQUIRE(r.dropped.size() == 1);
  CHECK(r.dropped[0].kind == TraceKind::kDroppedNms);
  CHECK(r.dropped[0].candidate_kind == TraceKind::kSoloStrong);
  CHECK(r.dropped[0].sources[0] == SourceRef{A, 1});
}

TEST_CASE("ctv_fuse zero-weight pair keeps the higher-confidence box") {
  CtvParams p;
  p.model_conf_floor.clear();
  const auto r = ctv_fuse(frame_of({det({0, 0, 10, 10}, 0, 0.7)}, {det({1, 1, 11, 11}, 0, 0.8, B)}),
                          two_model_profile(0, 0.0, 0.0), p);
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].trace.zero_weight);
  CHECK(r.detections[0].trace.kind == TraceKind::kAgreementFused);
  CHECK(r.detections[0].detection.box == BBox{1, 1, 11, 11});
  CHECK(r.detections[0].detection.source == kEnsembleSource);
}

TEST_CASE("ctv_fuse errors") {
  CtvParams p;
  ClassSkillProfile one;
  one.set(A, 0, 0.5);
  CHECK_THROWS_AS(ctv_fuse(frame_of({}, {}), one, p), ValidationError);
  CHECK_THROWS_AS(ctv_fuse(frame_of({det({0, 0, 1, 1}, 5, 0.99)}, {}),
                           two_model_profile(0, 0.5, 0.5), p),
                  UnknownClassError);
}

TEST_CASE("params validation") {
  CtvParams p;
  CHECK(validate(p).empty());
  p.solo_strong = 1.01;
  p.t_iou = 0.0;
  p.model_conf_floor["X"] = -1;
  try {
    validate(p);
    FAIL("expected InvalidParamsError");
  } catch (const InvalidParamsError& e) {
    std::set<std::string> fields;
    for (const auto& i : e.issues()) fields.insert(i.field);
    CHECK(fields == std::set<std::string>{"solo_strong", "t_iou", "model_conf_floor.X"});
  }
  CtvParams q;
  q.f1_margin = std::numeric_limits<double>::infinity();
  CHECK_NOTHROW(validate(q));
  q.conf_thresh = 0.99;
  CHECK(validate(q).size() == 1);
  q.gamma = -1;
  CHECK_THROWS_AS(validate(q), InvalidParamsError);
}

TEST_CASE("skill profile") {
  ClassSkillProfile p;
  p.set(A, 2, 0.5);
  p.set(B, 0, 0.25);
  CHECK(p.models() == std::vector<std::string>{A, B});
  CHECK(p.classes() == std::vector<ClassId>{0, 2});
  CHECK(p.has(A, 2));
  CHECK_FALSE(p.has(A, 0));
  CHECK_THROWS_AS(p.f1(A, 0), UnknownClassError);
  const std::vector<ClassId> cls{0, 2};
  CHECK(p.missing(cls).size() == 2);
  CHECK_THROWS_AS(p.set("C", 0, 0.5), ValidationError);
  CHECK_THROWS_AS(p.set(A, 0, 1.2), RangeError);
  CHECK_THROWS_AS(p.set(A, 0, std::nan("")), RangeError);
  const auto u = p.uniform(1.0);
  CHECK(u.f1(A, 2) == 1.0);
  CHECK(u.f1(B, 0) == 1.0);
  CHECK_FALSE(u.has(A, 0));
}

TEST_CASE("trace kind names round-trip") {
  for (TraceKind k : kAllTraceKinds) CHECK(trace_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(trace_kind_from_string("NOPE"), ValidationError);
}

// ---------------------------------------------------------------------------
// Properties

TEST_CASE("property: matching equals brute-force greedy oracle") {
  ctvtest::Gen g(21);
  for (int trial = 0; trial < 5000; ++trial) {
    const bool coarse = trial % 2 == 0;
    const ImageRecord f = g.frame("x", 6, 3, coarse);
    const auto& a = f.detections.at(A);
    const auto& b = f.detections.at(B);
    const double t = coarse ? g.integer(1, 10) / 10.0 : g.uniform(0.05, 0.9);
    const auto got = match_detections(a, b, t);
    const auto want = ctvtest::oracle_match(a, b, t);
    CHECK(got.pairs == want.pairs);
    CHECK(got.unmatched_a == want.unmatched_a);
    CHECK(got.unmatched_b == want.unmatched_b);
  }
}

TEST_CASE("property: every input traced exactly once, pairs exclusive") {
  ctvtest::Gen g(22);
  for (int trial = 0; trial < 3000; ++trial) {
    const bool coarse = trial % 3 == 0;
    const ImageRecord f = g.frame("x", 8, 3, coarse);
    const auto prof = g.profile(3, coarse);
    CtvParams p;
    p.model_conf_floor[A] = g.uniform(0.0, 0.7);
    p.model_conf_floor[B] = g.uniform(0.0, 0.7);
    p.t_iou = g.uniform(0.1, 0.9);
    const auto r = ctv_fuse(f, prof, p);

    std::multiset<std::pair<std::string, std::size_t>> expected;
    for (std::size_t i = 0; i < f.detections.at(A).size(); ++i) expected.emplace(A, i);
    for (std::size_t i = 0; i < f.detections.at(B).size(); ++i) expected.emplace(B, i);
    CHECK(traced_inputs(r) == expected);

    for (const auto& d : r.detections) {
      CHECK(d.detection.box.valid());
      CHECK(d.detection.confidence >= 0.0);
      CHECK(d.detection.confidence <= 1.0);
      CHECK(d.detection.source == kEnsembleSource);
      if (d.trace.kind == TraceKind::kAgreementFused) {
        REQUIRE(d.trace.sources.size() == 2);
        CHECK(d.trace.sources[0].model != d.trace.sources[1].model);
      } else {
        CHECK(d.trace.sources.size() == 1);
      }
    }
    for (const auto& t : r.dropped) {
      const bool fused_candidate =
          t.kind == TraceKind::kDroppedNms && t.candidate_kind == TraceKind::kAgreementFused;
      CHECK(t.sources.size() == (fused_candidate ? 2u : 1u));
    }
    for (std::size_t i = 1; i < r.detections.size(); ++i) {
      CHECK(r.detections[i - 1].detection.confidence >= r.detections[i].detection.confidence);
    }
  }
}

TEST_CASE("property: fused coordinates lie between their sources") {
  ctvtest::Gen g(23);
  for (int trial = 0; trial < 20000; ++trial) {
    Detection a = det(g.box(), 0, g.uniform(0, 1), A);
    Detection b = det(g.box(), 0, g.uniform(0, 1), B);
    const double sa = g.uniform(0, 1), sb = g.uniform(1e-9, 1);
    const BBox f = fuse_pair(a, b, sa, sb, true).detection.box;
    CHECK(f.x1 >= std::min(a.box.x1, b.box.x1));
    CHECK(f.x1 <= std::max(a.box.x1, b.box.x1));
    CHECK(f.y1 >= std::min(a.box.y1, b.box.y1));
    CHECK(f.y1 <= std::max(a.box.y1, b.box.y1));
    CHECK(f.x2 >= std::min(a.box.x2, b.box.x2));
    CHECK(f.x2 <= std::max(a.box.x2, b.box.x2));
    CHECK(f.y2 >= std::min(a.box.y2, b.box.y2));
    CHECK(f.y2 <= std::max(a.box.y2, b.box.y2));
    CHECK(f.valid());
  }
}

TEST_CASE("property: rule I monotone in confidence") {
  ctvtest::Gen g(24);
  for (int trial = 0; trial < 5000; ++trial) {
    CtvParams p;
    p.solo_strong = g.uniform(0, 1);
    p.conf_thresh = g.uniform(0, 1);
    p.near_tie_conf = g.uniform(0, 1);
    p.f1_margin = g.uniform(0, 0.2);
    const auto prof = g.profile(1);
    const double lo = g.uniform(0, 1);
    const double hi = g.uniform(lo, 1);
    const bool kept_lo = solo_decide(det({0, 0, 1, 1}, 0, lo), A, 0, prof, p).keep;
    const bool kept_hi = solo_decide(det({0, 0, 1, 1}, 0, hi), A, 0, prof, p).keep;
    if (kept_lo) CHECK(kept_hi);
  }
}

TEST_CASE("property: gamma 0 weights are the class F1 alone") {
  ctvtest::Gen g(25);
  for (int trial = 0; trial < 2000; ++trial) {
    CtvParams p;
    p.gamma = 0.0;
    p.model_conf_floor.clear();
    const auto prof = g.profile(1);
    const BBox box_a = g.box();
    const BBox box_b{box_a.x1 + 1, box_a.y1 + 1, box_a.x2 + 1, box_a.y2 + 1};
    auto r1 = ctv_fuse(frame_of({det(box_a, 0, g.uniform(0, 1))}, {det(box_b, 0, g.uniform(0, 1), B)}),
                       prof, p);
    auto r2 = ctv_fuse(frame_of({det(box_a, 0, g.uniform(0, 1))}, {det(box_b, 0, g.uniform(0, 1), B)}),
                       prof, p);
    if (iou(box_a, box_b) < p.t_iou) continue;
    REQUIRE(r1.detections.size() == 1);
    REQUIRE(r2.detections.size() == 1);
    CHECK(r1.detections[0].trace.scores ==
          std::vector<double>{prof.f1(A, 0), prof.f1(B, 0)});
    CHECK(r1.detections[0].detection.box == r2.detections[0].detection.box);
  }
}

TEST_CASE("property: swapping model labels leaves the fused set unchanged") {
  ctvtest::Gen g(26);
  for (int trial = 0; trial < 2000; ++trial) {
    const ImageRecord f = g.frame("x", 6, 3, false);
    const auto prof = g.profile(3);
    CtvParams p;
    p.model_conf_floor[A] = g.uniform(0, 0.5);
    p.model_conf_floor[B] = g.uniform(0, 0.5);

    ImageRecord swapped = f;
    std::swap(swapped.detections[A], swapped.detections[B]);
    ClassSkillProfile sp;
    for (ClassId c : prof.classes()) {
      sp.set(A, c, prof.f1(B, c));
      sp.set(B, c, prof.f1(A, c));
    }
    CtvParams q = p;
    std::swap(q.model_conf_floor[A], q.model_conf_floor[B]);

    auto boxes = [](const FusionResult& r) {
      std::vector<std::tuple<double, ClassId, double, double, double, double>> out;
      for (const auto& d : r.detections) {
        const auto& b = d.detection.box;
        out.emplace_back(d.detection.confidence, d.detection.class_id, b.x1, b.y1, b.x2, b.y2);
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    CHECK(boxes(ctv_fuse(f, prof, p)) == boxes(ctv_fuse(swapped, sp, q)));
  }
}

TEST_CASE("property: fusion deterministic") {
  ctvtest::Gen g(27);
  for (int trial = 0; trial < 500; ++trial) {
    const ImageRecord f = g.frame("x", 10, 4, trial % 2 == 0);
    const auto prof = g.profile(4);
    CtvParams p;
    CHECK(ctv_fuse(f, prof, p) == ctv_fuse(f, prof, p));
  }
}
