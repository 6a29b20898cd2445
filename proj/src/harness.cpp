#include "ctv/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "ctv/errors.hpp"

namespace ctv {
namespace fs = std::filesystem;

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions from workers
// are rethrown on the caller, first index first.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(jobs, n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string opt3(const std::optional<double>& v) { return v ? fmt3(*v) : "-"; }

fs::path absolute_of(const DatasetManifest& m, const std::string& rel) {
  return fs::absolute(m.resolve(rel)).lexically_normal();
}

std::string rebase(const DatasetManifest& m, const std::string& rel,
                   const fs::path& out_dir) {
  if (rel.empty()) return rel;
  const fs::path abs = absolute_of(m, rel);
  const fs::path relative = abs.lexically_relative(fs::absolute(out_dir).lexically_normal());
  return relative.empty() ? abs.string() : relative.string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Fusion and evaluation

std::vector<FusionResult> fuse_dataset(std::span<const ImageRecord> images,
                                       const ClassSkillProfile& profile,
                                       const CtvParams& params, unsigned jobs) {
  validate(params);
  std::vector<FusionResult> out(images.size());
  parallel_for(images.size(), jobs,
               [&](std::size_t i) { out[i] = ctv_fuse(images[i], profile, params); });
  return out;
}

std::vector<ImageRecord> with_ensemble(std::span<const ImageRecord> images,
                                       std::span<const FusionResult> fused) {
  std::vector<ImageRecord> out(images.begin(), images.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& list = out[i].detections[std::string(kEnsembleSource)];
    list.clear();
    if (i < fused.size()) {
      for (const auto& f : fused[i].detections) list.push_back(f.detection);
    }
  }
  return out;
}

EvalReport evaluate_source(std::span<const ImageRecord> images,
                           const LabelMap& labels, std::string_view source,
                           const ClassSkillProfile& profile,
                           const CtvParams& params) {
  if (source == kEnsembleSource) {
    const auto fused = fuse_dataset(images, profile, params);
    const auto merged = with_ensemble(images, fused);
    return evaluate(merged, source, labels);
  }
  return evaluate(images, source, labels);
}

ClassSkillProfile profile_from_dataset(std::span<const ImageRecord> images,
                                       const LabelMap& labels,
                                       std::span<const std::string> models) {
  ClassSkillProfile profile;
  for (const auto& model : models) {
    const ErrorProfile errs = error_profile(images, model, 0.5);
    for (ClassId c : labels.ids()) {
      auto it = errs.per_class.find(c);
      const Counts counts = it == errs.per_class.end() ? Counts{} : it->second;
      profile.set(model, c, aggregate_from_counts(counts).f1);
    }
  }
  return profile;
}

ClassSkillProfile load_profile(const DatasetManifest& manifest,
                               const fs::path& path) {
  fs::path p = path;
  if (p.empty()) {
    p = manifest.base_dir / "profile.csv";
    if (!fs::exists(p)) {
      throw ValidationError("no skill profile given and " + p.string() + " does not exist");
    }
  }
  return parse_skill_profile(read_text_file(p), &manifest.labels, p.string());
}

// ---------------------------------------------------------------------------
// Formatting

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string report_csv(const EvalReport& r, const LabelMap& labels) {
  std::vector<ClassId> classes;
  for (const auto& [c, _] : r.per_class) classes.push_back(c);
  auto class_name = [&](ClassId c) {
    return labels.contains(c) ? labels.name(c) : "class_" + std::to_string(c);
  };

  std::ostringstream out;
  out << "metric";
  for (ClassId c : classes) out << "," << class_name(c);
  out << ",aggregate\n";

  auto row = [&](const char* name, auto&& cell, const std::string& aggregate) {
    out << name;
    for (ClassId c : classes) out << "," << cell(r.per_class.at(c));
    out << "," << aggregate << "\n";
  };
  row("AP50", [](const ClassMetrics& m) { return opt3(m.ap50); }, fmt3(r.map50));
  row("AP50_95", [](const ClassMetrics& m) { return opt3(m.ap50_95); }, fmt3(r.map50_95));
  row("P", [](const ClassMetrics& m) { return fmt3(m.precision); }, fmt3(r.micro_precision));
  row("R", [](const ClassMetrics& m) { return fmt3(m.recall); }, fmt3(r.micro_recall));
  row("F1", [](const ClassMetrics& m) { return fmt3(m.f1); }, fmt3(r.micro_f1));
  row("macro_F1", [](const ClassMetrics&) { return std::string(); }, fmt3(r.macro_f1));
  row("TP", [](const ClassMetrics& m) { return std::to_string(m.counts.tp); },
      std::to_string(r.errors.total.tp));
  row("FP", [](const ClassMetrics& m) { return std::to_string(m.counts.fp); },
      std::to_string(r.errors.total.fp));
  row("FN", [](const ClassMetrics& m) { return std::to_string(m.counts.fn); },
      std::to_string(r.errors.total.fn));
  return out.str();
}

std::string report_table(const EvalReport& r, const LabelMap& labels) {
  std::ostringstream out;
  out << "source: " << r.source << "\n\n";
  out << pad("Metric", 16) << "Value\n";
  out << pad("mAP@0.5", 16) << fmt3(r.map50) << "\n";
  out << pad("mAP@0.5:0.95", 16) << fmt3(r.map50_95) << "\n";
  out << pad("Precision", 16) << fmt3(r.micro_precision) << "\n";
  out << pad("Recall", 16) << fmt3(r.micro_recall) << "\n";
  out << pad("Mean F1-score", 16) << fmt3(r.micro_f1) << "\n";
  out << pad("Macro F1", 16) << fmt3(r.macro_f1) << "\n";
  out << pad("TP/FP/FN", 16) << r.errors.total.tp << "/" << r.errors.total.fp << "/"
      << r.errors.total.fn << "\n\n";

  std::size_t width = 8;
  for (const auto& [c, _] : r.per_class) {
    if (labels.contains(c)) width = std::max(width, labels.name(c).size() + 2);
  }
  out << pad("Class", width) << pad("AP50", 8) << pad("AP50:95", 9) << pad("P", 8)
      << pad("R", 8) << pad("F1", 8) << "TP/FP/FN\n";
  for (const auto& [c, m] : r.per_class) {
    const std::string name =
        labels.contains(c) ? labels.name(c) : "class_" + std::to_string(c);
    out << pad(name, width) << pad(opt3(m.ap50), 8) << pad(opt3(m.ap50_95), 9)
        << pad(fmt3(m.precision), 8) << pad(fmt3(m.recall), 8) << pad(fmt3(m.f1), 8)
        << m.counts.tp << "/" << m.counts.fp << "/" << m.counts.fn << "\n";
  }
  return out.str();
}

std::string comparison_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << pad("Metric", 16);
  for (const auto& r : reports) out << pad(r.source, 12);
  out << "\n";
  auto line = [&](const char* name, double EvalReport::*field) {
    out << pad(name, 16);
    for (const auto& r : reports) out << pad(fmt3(r.*field), 12);
    out << "\n";
  };
  line("mAP@0.5", &EvalReport::map50);
  line("mAP@0.5:0.95", &EvalReport::map50_95);
  line("Precision", &EvalReport::micro_precision);
  line("Recall", &EvalReport::micro_recall);
  line("Mean F1-score", &EvalReport::micro_f1);
  return out.str();
}

std::string trace_lines(std::string_view image_id, const FusionResult& result) {
  std::string out;
  auto emit = [&](const DecisionTrace& t) {
    out += image_id;
    out += ',';
    out += to_string(t.kind);
    out += ',';
    out += to_string(t.candidate_kind);
    out += ',';
    for (std::size_t i = 0; i < t.sources.size(); ++i) {
      if (i) out += ';';
      out += t.sources[i].model + ":" + std::to_string(t.sources[i].index);
    }
    out += ',';
    for (std::size_t i = 0; i < t.scores.size(); ++i) {
      if (i) out += ';';
      out += format_real(t.scores[i]);
    }
    if (t.zero_weight) out += ",zero_weight";
    out += '\n';
  };
  for (const auto& d : result.detections) emit(d.trace);
  for (const auto& t : result.dropped) emit(t);
  return out;
}

std::map<std::string, std::size_t> trace_counts(
    std::span<const FusionResult> results) {
  std::map<std::string, std::size_t> out;
  for (TraceKind k : kAllTraceKinds) out[std::string(to_string(k))] = 0;
  for (const auto& r : results) {
    for (const auto& [k, n] : r.count_by_kind()) out[std::string(to_string(k))] += n;
  }
  return out;
}

std::string trace_summary(const std::map<std::string, std::size_t>& counts) {
  std::string out;
  for (TraceKind k : kAllTraceKinds) {
    const std::string name(to_string(k));
    auto it = counts.find(name);
    out += pad(name, 20) + std::to_string(it == counts.end() ? 0 : it->second) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

SweepAxis parse_sweep_axis(std::string_view text) {
  const std::size_t eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ParseError("sweep axis", 0, 0,
                     "expected 'field=v1,v2,...', got '" + std::string(text) + "'");
  }
  SweepAxis axis;
  axis.field = std::string(text.substr(0, eq));
  std::string_view rest = text.substr(eq + 1);
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    const std::string_view tok = rest.substr(0, comma);
    auto v = parse_real(tok);
    if (!v) {
      throw ParseError("sweep axis", 0, 0,
                       "bad value '" + std::string(tok) + "' for " + axis.field);
    }
    axis.values.push_back(*v);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  if (axis.values.empty()) {
    throw ParseError("sweep axis", 0, 0, "no values given for " + axis.field);
  }
  // Reject unknown field names up front.
  CtvParams probe;
  set_param(probe, axis.field, format_real(axis.values[0]));
  return axis;
}

std::size_t sweep_points(const SweepSpec& spec) {
  if (spec.axes.empty()) return 0;
  if (spec.mode == SweepMode::kOneAtATime) {
    std::size_t n = 0;
    for (const auto& a : spec.axes) n += a.values.size();
    return n;
  }
  std::size_t n = 1;
  for (const auto& a : spec.axes) {
    if (a.values.empty()) return 0;
    if (n > std::numeric_limits<std::size_t>::max() / a.values.size()) {
      return std::numeric_limits<std::size_t>::max();
    }
    n *= a.values.size();
  }
  return n;
}

std::vector<SweepRow> run_sweep(
    const std::map<std::string, std::vector<ImageRecord>>& datasets,
    const LabelMap& labels, const ClassSkillProfile& profile,
    const CtvParams& base, const SweepSpec& spec, unsigned jobs) {
  if (spec.axes.empty()) throw ValidationError("sweep needs at least one axis");
  std::set<std::string> names;
  for (const auto& a : spec.axes) {
    if (a.values.empty()) throw ValidationError("sweep axis '" + a.field + "' is empty");
    if (!names.insert(a.field).second) {
      throw ValidationError("sweep axis '" + a.field + "' given twice");
    }
  }
  if (spec.conditions.empty()) throw ValidationError("sweep needs a condition");
  for (const auto& c : spec.conditions) {
    if (!datasets.contains(c)) throw MissingSourceError("no dataset for condition '" + c + "'");
  }

  const std::size_t points = sweep_points(spec);
  const std::size_t total =
      points > spec.cap ? points : points * spec.conditions.size();
  if (total > spec.cap) {
    throw GridTooLargeError("sweep expands to " + std::to_string(total) +
                            " rows, above the cap of " + std::to_string(spec.cap));
  }

  // Expand parameter points. Each point records settings in axis order.
  std::vector<std::vector<std::pair<std::string, double>>> settings;
  std::vector<std::size_t> axis_of;  // one-at-a-time: which axis varies
  if (spec.mode == SweepMode::kGrid) {
    std::vector<std::size_t> idx(spec.axes.size(), 0);
    for (std::size_t p = 0; p < points; ++p) {
      std::vector<std::pair<std::string, double>> s;
      for (std::size_t a = 0; a < spec.axes.size(); ++a) {
        s.emplace_back(spec.axes[a].field, spec.axes[a].values[idx[a]]);
      }
      settings.push_back(std::move(s));
      for (std::size_t a = spec.axes.size(); a-- > 0;) {
        if (++idx[a] < spec.axes[a].values.size()) break;
        idx[a] = 0;
      }
    }
  } else {
    for (std::size_t a = 0; a < spec.axes.size(); ++a) {
      for (double v : spec.axes[a].values) {
        settings.push_back({{spec.axes[a].field, v}});
        axis_of.push_back(a);
      }
    }
  }

  std::vector<CtvParams> params(settings.size(), base);
  for (std::size_t p = 0; p < settings.size(); ++p) {
    for (const auto& [field, v] : settings[p]) set_param(params[p], field, format_real(v));
    validate(params[p]);
  }

  std::vector<SweepRow> rows(settings.size() * spec.conditions.size());
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    const std::size_t p = i / spec.conditions.size();
    const std::string& cond = spec.conditions[i % spec.conditions.size()];
    const EvalReport rep = evaluate_source(datasets.at(cond), labels, kEnsembleSource,
                                           profile, params[p]);
    rows[i] = {settings[p], cond, rep.map50, rep.map50_95, rep.micro_precision,
               rep.micro_recall};
  });

  // Stable ordering: grid rows by axis values lexicographically; one-at-a-time
  // rows by axis then value. Conditions keep their given order.
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    const std::size_t pl = l / spec.conditions.size();
    const std::size_t pr = r / spec.conditions.size();
    if (spec.mode == SweepMode::kOneAtATime && axis_of[pl] != axis_of[pr]) {
      return axis_of[pl] < axis_of[pr];
    }
    const auto& sl = settings[pl];
    const auto& sr = settings[pr];
    for (std::size_t k = 0; k < sl.size() && k < sr.size(); ++k) {
      if (sl[k].second != sr[k].second) return sl[k].second < sr[k].second;
    }
    return false;
  });
  std::vector<SweepRow> sorted;
  sorted.reserve(rows.size());
  for (std::size_t i : order) sorted.push_back(std::move(rows[i]));
  return sorted;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "settings,condition,mAP50,mAP50_95,P,R\n";
  for (const auto& r : rows) {
    std::string s;
    for (std::size_t i = 0; i < r.settings.size(); ++i) {
      if (i) s += ';';
      s += r.settings[i].first + "=" + format_real(r.settings[i].second);
    }
    out += s + "," + r.condition + "," + fmt3(r.map50) + "," + fmt3(r.map50_95) + "," +
           fmt3(r.precision) + "," + fmt3(r.recall) + "\n";
  }
  return out;
}

std::string sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream out;
  std::size_t width = 12;
  std::vector<std::string> labels;
  for (const auto& r : rows) {
    std::string s;
    for (std::size_t i = 0; i < r.settings.size(); ++i) {
      if (i) s += ", ";
      s += r.settings[i].first + " = " + format_real(r.settings[i].second);
    }
    width = std::max(width, s.size() + 2);
    labels.push_back(std::move(s));
  }
  out << pad("Params", width) << pad("Cond", 6) << pad("mAP@0.5", 10)
      << pad("mAP@.5:.95", 12) << pad("P", 8) << "R\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << pad(labels[i], width) << pad(rows[i].condition, 6) << pad(fmt3(rows[i].map50), 10)
        << pad(fmt3(rows[i].map50_95), 12) << pad(fmt3(rows[i].precision), 8)
        << fmt3(rows[i].recall) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Ablations

std::string_view to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::kFull:
      return "FULL";
    case AblationVariant::kNoHighConf:
      return "NO_HIGH_CONF";
    case AblationVariant::kNoF1Weight:
      return "NO_F1_WEIGHT";
    case AblationVariant::kAlwaysTie:
      return "ALWAYS_TIE";
  }
  return "UNKNOWN";
}

AblationVariant ablation_from_string(std::string_view name) {
  for (AblationVariant v : all_ablation_variants()) {
    if (to_string(v) == name) return v;
  }
  throw ValidationError("unknown ablation variant '" + std::string(name) + "'");
}

std::vector<AblationVariant> all_ablation_variants() {
  return {AblationVariant::kFull, AblationVariant::kNoHighConf,
          AblationVariant::kNoF1Weight, AblationVariant::kAlwaysTie};
}

std::pair<CtvParams, ClassSkillProfile> apply_variant(
    AblationVariant variant, const CtvParams& params,
    const ClassSkillProfile& profile) {
  CtvParams p = params;
  ClassSkillProfile prof = profile;
  switch (variant) {
    case AblationVariant::kFull:
      break;
    case AblationVariant::kNoHighConf:
      p.high_conf_override = false;
      break;
    case AblationVariant::kNoF1Weight:
      prof = profile.uniform(1.0);
      break;
    case AblationVariant::kAlwaysTie:
      p.f1_margin = std::numeric_limits<double>::infinity();
      break;
  }
  return {std::move(p), std::move(prof)};
}

std::vector<AblationRow> run_ablation(std::span<const ImageRecord> images,
                                      const LabelMap& labels,
                                      const ClassSkillProfile& profile,
                                      const CtvParams& params,
                                      std::span<const AblationVariant> variants) {
  std::set<AblationVariant> seen;
  std::vector<AblationRow> rows;
  for (AblationVariant v : variants) {
    if (!seen.insert(v).second) {
      throw ValidationError("ablation variant " + std::string(to_string(v)) +
                            " listed twice");
    }
    const auto [p, prof] = apply_variant(v, params, profile);
    const EvalReport rep = evaluate_source(images, labels, kEnsembleSource, prof, p);
    rows.push_back({std::string(to_string(v)), rep.map50, rep.map50_95,
                    rep.micro_precision, rep.micro_recall, rep.micro_f1});
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "variant,mAP50,mAP50_95,P,R,F1\n";
  for (const auto& r : rows) {
    out += r.variant + "," + fmt3(r.map50) + "," + fmt3(r.map50_95) + "," +
           fmt3(r.precision) + "," + fmt3(r.recall) + "," + fmt3(r.f1) + "\n";
  }
  return out;
}

std::string ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << pad("Config", 16) << pad("mAP@0.5", 10) << pad("mAP@.5:.95", 12) << pad("P", 8)
      << pad("R", 8) << "F1\n";
  for (const auto& r : rows) {
    out << pad(r.variant, 16) << pad(fmt3(r.map50), 10) << pad(fmt3(r.map50_95), 12)
        << pad(fmt3(r.precision), 8) << pad(fmt3(r.recall), 8) << fmt3(r.f1) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Perturbation

DatasetManifest perturb_dataset(const DatasetManifest& manifest,
                                std::span<const std::string> conditions,
                                const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Diagnostics diag;
  const Dataset base = load_dataset(manifest, "N", diag);

  DatasetManifest out = manifest;
  out.base_dir = out_dir;
  for (auto& img : out.images) img.path = rebase(manifest, img.path, out_dir);
  out.ground_truth = rebase(manifest, manifest.ground_truth, out_dir);
  for (auto& [_, f] : out.detections) f = rebase(manifest, f, out_dir);
  for (auto& [_, c] : out.conditions) {
    c.ground_truth = rebase(manifest, c.ground_truth, out_dir);
    c.images = rebase(manifest, c.images, out_dir);
    for (auto& [__, f] : c.detections) f = rebase(manifest, f, out_dir);
  }

  for (const auto& name : conditions) {
    const Condition cond = condition_by_name(name);
    if (cond.is_identity) continue;
    const fs::path cond_dir = out_dir / name;
    fs::create_directories(cond_dir / "images");

    std::vector<GroundTruthRecord> gts;
    bool any_image = false;
    for (std::size_t i = 0; i < base.images.size(); ++i) {
      const ImageRecord& rec = base.images[i];
      std::vector<GroundTruthBox> boxes;
      const fs::path& src = base.image_paths[i];
      if (!src.empty()) {
        const Image img = read_image(src);
        if (img.width != rec.width || img.height != rec.height) {
          throw IoError(src.string() + ": size " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + " does not match manifest");
        }
        auto [pimg, pboxes] = apply(cond.spec, img, rec.ground_truth);
        write_image(cond_dir / "images" / src.filename(), pimg);
        boxes = std::move(pboxes);
        any_image = true;
      } else if (cond.spec.kind == PerturbKind::kFlipH) {
        for (const auto& g : rec.ground_truth) {
          boxes.push_back({flip_box_h(g.box, rec.width), g.class_id});
        }
      } else {
        boxes = rec.ground_truth;
      }
      for (const auto& b : boxes) gts.push_back({rec.id, b, 0});
    }
    write_text_file(cond_dir / "ground_truth.csv", serialize_ground_truth(gts));

    ConditionRefs& refs = out.conditions[name];
    refs.ground_truth = name + "/ground_truth.csv";
    refs.images = any_image ? name + "/images" : std::string();
  }
  write_text_file(out_dir / "manifest.txt", serialize_manifest(out));
  return out;
}

Image render_scene(const ImageRecord& record, const LabelMap& labels) {
  Image img(record.width, record.height, 48);
  for (const auto& g : record.ground_truth) {
    const std::size_t k = labels.contains(g.class_id) ? labels.index_of(g.class_id)
                                                      : static_cast<std::size_t>(g.class_id);
    const std::uint8_t r = static_cast<std::uint8_t>(80 + (k * 53) % 176);
    const std::uint8_t gr = static_cast<std::uint8_t>(80 + (k * 97) % 176);
    const std::uint8_t b = static_cast<std::uint8_t>(80 + (k * 29) % 176);
    const int x0 = std::clamp(static_cast<int>(std::floor(g.box.x1)), 0, record.width);
    const int x1 = std::clamp(static_cast<int>(std::ceil(g.box.x2)), 0, record.width);
    const int y0 = std::clamp(static_cast<int>(std::floor(g.box.y1)), 0, record.height);
    const int y1 = std::clamp(static_cast<int>(std::ceil(g.box.y2)), 0, record.height);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        img.at(x, y, 0) = r;
        img.at(x, y, 1) = gr;
        img.at(x, y, 2) = b;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Runs

std::string replay_run(const RunRecord& record) {
  const DatasetManifest manifest = load_manifest(record.manifest);
  Diagnostics diag;
  const Dataset ds = load_dataset(manifest, record.condition, diag);
  const EvalReport rep =
      evaluate_source(ds.images, ds.labels, record.source, record.profile, record.params);
  return report_csv(rep, ds.labels);
}

}  // namespace ctv
