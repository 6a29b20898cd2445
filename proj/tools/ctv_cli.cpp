// ctv: command-line front end for fusion, evaluation, sweeps, ablations,
// perturbation, synthetic data and the tuning service.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ctv/engine.hpp"
#include "ctv/errors.hpp"
#include "ctv/harness.hpp"
#include "ctv/ingest.hpp"
#include "ctv/metrics.hpp"
#include "ctv/perturb.hpp"
#include "ctv/service.hpp"
#include "ctv/synth.hpp"

namespace fs = std::filesystem;
using namespace ctv;

namespace {

// Flags shared by commands that fuse: config file, then per-field overrides
// applied in command-line order.
struct ParamFlags {
  std::string config;
  std::vector<std::pair<std::string, std::string>> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value file of CtvParams fields");
    for (const char* field : {"t_iou", "gamma", "f1_margin", "conf_thresh", "solo_strong",
                              "near_tie_conf", "nms_iou", "fuse_coords",
                              "high_conf_override"}) {
      const std::string name = field;
      app->add_option_function<std::string>(
          "--" + name, [this, name](const std::string& v) { overrides.emplace_back(name, v); },
          "override " + name);
    }
    app->add_option_function<std::vector<std::string>>(
        "--model_conf_floor",
        [this](const std::vector<std::string>& items) {
          for (const auto& item : items) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) {
              throw ParseError("--model_conf_floor", 0, 0,
                               "expected MODEL=value, got '" + item + "'");
            }
            overrides.emplace_back("model_conf_floor." + item.substr(0, eq),
                                   item.substr(eq + 1));
          }
        },
        "per-model pre-filter floor, MODEL=value");
  }

  CtvParams resolve() const {
    CtvParams p;
    if (!config.empty()) {
      p = params_from_key_values(parse_key_values(read_text_file(config), config), p,
                                 config);
    }
    for (const auto& [k, v] : overrides) {
      try {
        set_param(p, k, v);
      } catch (const ParseError& e) {
        std::string msg = e.what();
        const std::string prefix = "<input>:0: ";
        if (msg.starts_with(prefix)) msg.erase(0, prefix.size());
        throw ParseError("--" + k, 0, 0, msg);
      }
    }
    for (const auto& w : validate(p)) std::cerr << "warning: " << w << "\n";
    return p;
  }
};

struct Common {
  std::string manifest;
  std::string profile;
  std::string format = "table";
  unsigned jobs = 1;

  void attach(CLI::App* app, bool with_profile = true) {
    app->add_option("-m,--manifest", manifest, "dataset manifest")
        ->required();
    if (with_profile) {
      app->add_option("--profile", profile,
                      "skill profile CSV (default: profile.csv beside the manifest)");
    }
    app->add_option("--format", format, "output format")
        ->check(CLI::IsMember({"csv", "table"}));
    app->add_option("-j,--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  }
};

void print_warnings(const Diagnostics& diag) {
  for (const auto& w : diag.warnings) std::cerr << "warning: " << w << "\n";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string tok = text.substr(start, comma - start);
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
  }
}

// ---------------------------------------------------------------------------

struct FuseCmd {
  Common common;
  ParamFlags params;
  std::string condition = "N";
  std::string out_dir;

  void attach(CLI::App* app) {
    common.attach(app);
    params.attach(app);
    app->add_option("--condition", condition, "dataset condition");
    app->add_option("-o,--out", out_dir,
                    "directory for fused.csv and traces.csv (default: fused CSV on stdout)");
  }

  int run() const {
    const CtvParams p = params.resolve();
    const DatasetManifest m = load_manifest(common.manifest);
    Diagnostics diag;
    const Dataset ds = load_dataset(m, condition, diag);
    print_warnings(diag);
    const ClassSkillProfile profile = load_profile(m, common.profile);
    const auto results = fuse_dataset(ds.images, profile, p, common.jobs);

    std::vector<DetectionRecord> fused;
    std::string traces = "image_id,kind,candidate_kind,sources,scores\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
      for (const auto& f : results[i].detections) {
        fused.push_back({ds.images[i].id, f.detection, 0});
      }
      traces += trace_lines(ds.images[i].id, results[i]);
    }
    const auto counts = trace_counts(results);
    if (out_dir.empty()) {
      std::cout << serialize_detections(fused);
      std::cerr << trace_summary(counts);
      return 0;
    }
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "fused.csv", serialize_detections(fused));
    write_text_file(fs::path(out_dir) / "traces.csv", traces);
    if (common.format == "csv") {
      std::cout << "kind,count\n";
      for (const auto& [k, n] : counts) std::cout << k << "," << n << "\n";
    } else {
      std::cout << trace_summary(counts);
    }
    return 0;
  }
};

struct EvalCmd {
  Common common;
  ParamFlags params;
  std::string condition = "N";
  std::string source = std::string(kEnsembleSource);
  std::string out;
  std::string store;
  std::string replay;
  std::string confusion;

  void attach(CLI::App* app) {
    app->add_option("-m,--manifest", common.manifest, "dataset manifest");
    app->add_option("--profile", common.profile, "skill profile CSV");
    app->add_option("--format", common.format)->check(CLI::IsMember({"csv", "table"}));
    app->add_option("-j,--jobs", common.jobs)->check(CLI::PositiveNumber);
    params.attach(app);
    app->add_option("--condition", condition, "dataset condition");
    app->add_option("-s,--source", source,
                    "MODEL_A, MODEL_B, ENSEMBLE, or 'all' for a comparison table");
    app->add_option("-o,--out", out, "write the report here instead of stdout");
    app->add_option("--store", store, "run store directory; the run is recorded there");
    app->add_option("--replay", replay, "recompute a stored run (needs --store)");
    app->add_option("--confusion", confusion, "write the normalized confusion matrix CSV");
  }

  int run() const {
    if (!replay.empty()) {
      if (store.empty()) throw ValidationError("--replay needs --store");
      const RunRecord rec = RunStore(store).load(replay);
      const std::string now = replay_run(rec);
      emit(now, out);
      if (now != rec.report_csv) {
        std::cerr << "replay differs from stored report\n";
        return 1;
      }
      return 0;
    }
    if (common.manifest.empty()) throw ValidationError("--manifest is required");

    const CtvParams p = params.resolve();
    const DatasetManifest m = load_manifest(common.manifest);
    Diagnostics diag;
    const Dataset ds = load_dataset(m, condition, diag);
    print_warnings(diag);
    // A profile is only needed when fusing.
    ClassSkillProfile profile;
    if (source == kEnsembleSource || source == "all") profile = load_profile(m, common.profile);

    if (source == "all") {
      std::vector<EvalReport> reports;
      for (const auto& model : profile.models()) {
        reports.push_back(evaluate_source(ds.images, ds.labels, model, profile, p));
      }
      reports.push_back(evaluate_source(ds.images, ds.labels, kEnsembleSource, profile, p));
      if (common.format == "csv") {
        std::string text = "source,mAP50,mAP50_95,P,R,F1\n";
        for (const auto& r : reports) {
          text += r.source + "," + fmt3(r.map50) + "," + fmt3(r.map50_95) + "," +
                  fmt3(r.micro_precision) + "," + fmt3(r.micro_recall) + "," +
                  fmt3(r.micro_f1) + "\n";
        }
        emit(text, out);
      } else {
        emit(comparison_table(reports), out);
      }
      return 0;
    }

    const EvalReport rep = evaluate_source(ds.images, ds.labels, source, profile, p);
    const std::string csv = report_csv(rep, ds.labels);
    emit(common.format == "csv" ? csv : report_table(rep, ds.labels), out);

    if (!confusion.empty()) {
      const auto images = source == kEnsembleSource
                              ? with_ensemble(ds.images, fuse_dataset(ds.images, profile, p))
                              : ds.images;
      const ConfusionMatrix cm = confusion_matrix(images, source, ds.labels, 0.5, true);
      std::string text = "gt\\pred";
      for (ClassId c : cm.classes) text += "," + ds.labels.name(c);
      text += ",background\n";
      for (std::size_t r = 0; r < cm.cells.size(); ++r) {
        text += r < cm.classes.size() ? ds.labels.name(cm.classes[r]) : "background";
        for (double v : cm.cells[r]) text += "," + fmt3(v);
        text += "\n";
      }
      write_text_file(confusion, text);
    }

    if (!store.empty()) {
      RunRecord rec;
      rec.manifest = fs::absolute(common.manifest).string();
      rec.condition = condition;
      rec.source = source;
      rec.params = p;
      rec.profile = profile;
      rec.report_csv = csv;
      if (source == kEnsembleSource) {
        rec.trace_counts = trace_counts(fuse_dataset(ds.images, profile, p, common.jobs));
      }
      std::cerr << "stored run " << RunStore(store).commit(std::move(rec)) << "\n";
    }
    return 0;
  }
};

struct SweepCmd {
  Common common;
  ParamFlags params;
  std::vector<std::string> axes;
  std::string mode = "grid";
  std::string conditions = "N";
  std::size_t cap = 10000;
  std::string out;

  void attach(CLI::App* app) {
    common.attach(app);
    params.attach(app);
    app->add_option("-a,--axis", axes, "field=v1,v2,... (repeatable)")->required();
    app->add_option("--mode", mode, "grid: cartesian product; single: one axis at a time")
        ->check(CLI::IsMember({"grid", "single"}));
    app->add_option("--conditions", conditions, "comma-separated condition names");
    app->add_option("--cap", cap, "maximum number of rows");
    app->add_option("-o,--out", out, "write the report here instead of stdout");
  }

  int run() const {
    const CtvParams p = params.resolve();
    SweepSpec spec;
    for (const auto& a : axes) spec.axes.push_back(parse_sweep_axis(a));
    spec.mode = mode == "grid" ? SweepMode::kGrid : SweepMode::kOneAtATime;
    spec.conditions = split_list(conditions);
    spec.cap = cap;

    const DatasetManifest m = load_manifest(common.manifest);
    const ClassSkillProfile profile = load_profile(m, common.profile);
    // Size check before loading every condition.
    const std::size_t points = sweep_points(spec);
    if (points > cap || points * spec.conditions.size() > cap) {
      throw GridTooLargeError("sweep expands past the cap of " + std::to_string(cap) + " rows");
    }
    std::map<std::string, std::vector<ImageRecord>> datasets;
    Diagnostics diag;
    for (const auto& c : spec.conditions) datasets[c] = load_dataset(m, c, diag).images;
    print_warnings(diag);
    const auto rows = run_sweep(datasets, m.labels, profile, p, spec, common.jobs);
    emit(common.format == "csv" ? sweep_csv(rows) : sweep_table(rows), out);
    return 0;
  }
};

struct AblateCmd {
  Common common;
  ParamFlags params;
  std::string variants = "FULL,NO_HIGH_CONF,NO_F1_WEIGHT,ALWAYS_TIE";
  std::string condition = "N";
  std::string out;

  void attach(CLI::App* app) {
    common.attach(app);
    params.attach(app);
    app->add_option("--variants", variants, "comma-separated ablation variants");
    app->add_option("--condition", condition, "dataset condition");
    app->add_option("-o,--out", out, "write the report here instead of stdout");
  }

  int run() const {
    const CtvParams p = params.resolve();
    std::vector<AblationVariant> vs;
    for (const auto& name : split_list(variants)) vs.push_back(ablation_from_string(name));
    const DatasetManifest m = load_manifest(common.manifest);
    Diagnostics diag;
    const Dataset ds = load_dataset(m, condition, diag);
    print_warnings(diag);
    const ClassSkillProfile profile = load_profile(m, common.profile);
    const auto rows = run_ablation(ds.images, ds.labels, profile, p, vs);
    emit(common.format == "csv" ? ablation_csv(rows) : ablation_table(rows), out);
    return 0;
  }
};

struct PerturbCmd {
  std::string manifest;
  std::string conditions = "F,SUp,BUp,BDn";
  std::string out_dir;

  void attach(CLI::App* app) {
    app->add_option("-m,--manifest", manifest, "dataset manifest")
        ->required();
    app->add_option("--conditions", conditions, "comma-separated: N, F, SUp, BUp, BDn");
    app->add_option("-o,--out", out_dir, "output directory")->required();
  }

  int run() const {
    const DatasetManifest m = load_manifest(manifest);
    const auto names = split_list(conditions);
    for (const auto& n : names) condition_by_name(n);  // reject unknown names early
    const DatasetManifest out = perturb_dataset(m, names, out_dir);
    std::cout << "wrote " << (fs::path(out_dir) / "manifest.txt").string() << " with "
              << out.condition_names().size() << " conditions\n";
    return 0;
  }
};

struct SimulateCmd {
  std::string preset = "motherboard";
  int images = 45;
  double scale = 0.1;
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string render = "none";
  std::string conditions;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "scenario preset")
        ->check(CLI::IsMember({"motherboard", "noiseless", "rule_two", "rule_one"}));
    app->add_option("-n,--images", images, "number of images")->check(CLI::PositiveNumber);
    app->add_option("--scale", scale,
                    "fraction of the reference per-class instance counts (motherboard presets)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("-o,--out", out_dir, "output directory")->required();
    app->add_option("--render", render, "write flat-colour images")
        ->check(CLI::IsMember({"none", "png", "ppm"}));
    app->add_option("--conditions", conditions,
                    "perturbed conditions to add, with freshly simulated detections");
  }

  int run() const {
    SyntheticSet set;
    if (preset == "motherboard") {
      set = motherboard_preset(images, scale, seed);
    } else if (preset == "noiseless") {
      set = noiseless_preset(images, scale, seed);
    } else if (preset == "rule_two") {
      set = rule_two_dependent_set(images, seed);
    } else {
      set = rule_one_dependent_set(images, seed);
    }

    const fs::path dir(out_dir);
    std::vector<std::string> paths;
    if (render != "none") {
      fs::create_directories(dir / "images");
      for (const auto& img : set.images) {
        const std::string rel = "images/" + img.id + "." + render;
        write_image(dir / rel, render_scene(img, set.labels));
        paths.push_back(rel);
      }
    }
    write_dataset(dir, set.labels, set.images, paths);
    write_text_file(dir / "profile.csv", serialize_skill_profile(set.profile));

    const auto names = split_list(conditions);
    if (!names.empty()) {
      DatasetManifest m = perturb_dataset(load_manifest(dir / "manifest.txt"), names, dir);
      // Detections for each condition: re-run the detector models on the
      // transformed ground truth with condition-specific seeds.
      Diagnostics diag;
      for (const auto& name : names) {
        if (condition_by_name(name).is_identity) continue;
        Dataset ds = load_dataset(m, name, diag);
        for (auto& img : ds.images) img.detections.clear();
        for (DetectorNoiseSpec spec : set.detectors) {
          spec.seed = derive_seed(spec.seed, "condition/" + name);
          simulate_detector(ds.images, spec);
        }
        auto& refs = m.conditions[name];
        for (const auto& spec : set.detectors) {
          std::vector<DetectionRecord> recs;
          for (const auto& img : ds.images) {
            auto it = img.detections.find(spec.model_id);
            if (it == img.detections.end()) continue;
            for (const auto& d : it->second) recs.push_back({img.id, d, 0});
          }
          const std::string rel = name + "/" + spec.model_id + ".csv";
          write_text_file(dir / rel, serialize_detections(recs));
          refs.detections[spec.model_id] = rel;
        }
      }
      write_text_file(dir / "manifest.txt", serialize_manifest(m));
    }
    std::cout << "wrote " << set.images.size() << " images to " << dir.string() << "\n";
    return 0;
  }
};

struct ServeCmd {
  std::string manifest;
  std::string profile;
  ParamFlags params;
  ServeOptions options;

  void attach(CLI::App* app) {
    app->add_option("-m,--manifest", manifest, "dataset manifest to load at start");
    app->add_option("--profile", profile, "skill profile CSV");
    params.attach(app);
    app->add_option("--host", options.host, "bind address");
    app->add_option("-p,--port", options.port, "port");
    app->add_option("--cors-origin", options.cors_origin, "Access-Control-Allow-Origin");
    app->add_option("--budget-ms", options.budget_ms, "log requests slower than this");
  }

  int run() const {
    const CtvParams p = params.resolve();
    TunerService service(p);
    if (!manifest.empty()) service.publish(load_service_data(manifest, profile, p));
    std::cerr << "listening on " << options.host << ":" << options.port << "\n";
    if (!serve(service, options)) throw IoError("cannot bind " + options.host + ":" +
                                                std::to_string(options.port));
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-detector ensemble fusion and evaluation toolkit"};
  app.require_subcommand(1);

  FuseCmd fuse;
  EvalCmd eval;
  SweepCmd sweep;
  AblateCmd ablate;
  PerturbCmd perturb;
  SimulateCmd simulate;
  ServeCmd serve_cmd;
  auto* fuse_app = app.add_subcommand("fuse", "fuse both detectors over a dataset");
  auto* eval_app = app.add_subcommand("eval", "evaluate a detection source");
  auto* sweep_app = app.add_subcommand("sweep", "parameter sensitivity sweep");
  auto* ablate_app = app.add_subcommand("ablate", "compare ablation variants");
  auto* perturb_app = app.add_subcommand("perturb", "write perturbed dataset conditions");
  auto* simulate_app = app.add_subcommand("simulate", "generate a synthetic dataset");
  auto* serve_app = app.add_subcommand("serve", "run the HTTP tuning service");
  fuse.attach(fuse_app);
  eval.attach(eval_app);
  sweep.attach(sweep_app);
  ablate.attach(ablate_app);
  perturb.attach(perturb_app);
  simulate.attach(simulate_app);
  serve_cmd.attach(serve_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorFamily::kParse);
  } catch (const ctv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.family());
  }

  try {
    if (*fuse_app) return fuse.run();
    if (*eval_app) return eval.run();
    if (*sweep_app) return sweep.run();
    if (*ablate_app) return ablate.run();
    if (*perturb_app) return perturb.run();
    if (*simulate_app) return simulate.run();
    if (*serve_app) return serve_cmd.run();
  } catch (const ctv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.family());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorFamily::kIo);
  }
  return 1;
}
