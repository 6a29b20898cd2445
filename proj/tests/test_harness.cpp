#include <doctest.h>

#include "ctv/errors.hpp"
#include "ctv/harness.hpp"
#include "ctv/synth.hpp"
#include "support.hpp"

using namespace ctv;
namespace fs = std::filesystem;

namespace {

// The appendix pair on one frame.
ImageRecord pair_frame() {
  ImageRecord f;
  f.id = "f0";
  f.width = f.height = 640;
  f.detections["MODEL_A"] = {{{100, 100, 200, 200}, 0, 0.9, "MODEL_A"}};
  f.detections["MODEL_B"] = {{{110, 105, 195, 205}, 0, 0.8, "MODEL_B"}};
  f.ground_truth = {{{100, 100, 200, 200}, 0}};
  return f;
}

ClassSkillProfile ones(std::initializer_list<ClassId> classes) {
  ClassSkillProfile p;
  for (ClassId c : classes) {
    p.set("MODEL_A", c, 1.0);
    p.set("MODEL_B", c, 1.0);
  }
  return p;
}

CtvParams relaxed_b() {
  CtvParams p;
  p.model_conf_floor["MODEL_B"] = 0.8;
  return p;
}

}  // namespace

TEST_CASE("fuse_dataset matches per-frame fusion and is thread-count independent") {
  const auto set = motherboard_preset(30, 0.05, 3);
  const CtvParams params;
  const auto serial = fuse_dataset(set.images, set.profile, params, 1);
  REQUIRE(serial.size() == set.images.size());
  for (std::size_t i = 0; i < serial.size(); ++i)
    CHECK(serial[i] == ctv_fuse(set.images[i], set.profile, params));
  CHECK(fuse_dataset(set.images, set.profile, params, 4) == serial);
  CHECK(fuse_dataset(set.images, set.profile, params, 64) == serial);
  CHECK(fuse_dataset({}, set.profile, params, 4).empty());

  CtvParams bad;
  bad.t_iou = 2.0;
  CHECK_THROWS_AS(fuse_dataset(set.images, set.profile, bad), InvalidParamsError);

  const auto ens = with_ensemble(set.images, serial);
  for (std::size_t i = 0; i < ens.size(); ++i)
    CHECK(ens[i].detections.at("ENSEMBLE").size() == serial[i].detections.size());
}

TEST_CASE("evaluate_source") {
  const auto set = noiseless_preset(10, 0.02, 5);
  const auto a = evaluate_source(set.images, set.labels, "MODEL_A", set.profile, {});
  CHECK(a.source == "MODEL_A");
  CHECK(a.micro_recall == 1.0);
  const auto e = evaluate_source(set.images, set.labels, "ENSEMBLE", set.profile, {});
  CHECK(e.map50 == 1.0);
  CHECK_THROWS_AS(evaluate_source(set.images, set.labels, "MODEL_Z", set.profile, {}),
                  MissingSourceError);

  const auto prof = profile_from_dataset(set.images, set.labels,
                                         std::vector<std::string>{"MODEL_A", "MODEL_B"});
  for (ClassId c : set.labels.ids()) CHECK(prof.f1("MODEL_A", c) == 1.0);
}

TEST_CASE("report formatting") {
  CHECK(fmt3(0.9635) == "0.964");
  CHECK(fmt3(1.0) == "1.000");
  const auto f = pair_frame();
  std::vector<ImageRecord> imgs{f};
  LabelMap labels;
  labels.add(0, "Screws");
  labels.add(1, "CPU_fan");
  const auto rep = evaluate_source(imgs, labels, "MODEL_A", ones({0, 1}), {});
  const std::string csv = report_csv(rep, labels);
  CHECK(csv.starts_with("metric,Screws,CPU_fan,aggregate\nAP50,1.000,-,1.000\n"));
  CHECK(csv.find("\nTP,1,0,1\n") != std::string::npos);
  CHECK(csv.find("\nmacro_F1,,,1.000\n") != std::string::npos);
  CHECK(report_table(rep, labels).find("Screws") != std::string::npos);

  std::vector<EvalReport> reps{rep, rep};
  const std::string cmp = comparison_table(reps);
  CHECK(cmp.find("mAP@0.5") != std::string::npos);
  CHECK(cmp.find("Mean F1-score") != std::string::npos);
}

TEST_CASE("trace lines and counts") {
  const auto f = pair_frame();
  const auto r = ctv_fuse(f, ones({0}), relaxed_b());
  REQUIRE(r.detections.size() == 1);
  const std::string line = trace_lines(f.id, r);
  CHECK(line.starts_with("f0,AGREEMENT_FUSED,"));
  CHECK(line.find("MODEL_A:0;MODEL_B:0") != std::string::npos);
  std::vector<FusionResult> rs{r, r};
  const auto counts = trace_counts(rs);
  CHECK(counts.size() == kAllTraceKinds.size());
  CHECK(counts.at("AGREEMENT_FUSED") == 2);
  CHECK(counts.at("DROPPED_NMS") == 0);
  CHECK(trace_summary(counts).find("AGREEMENT_FUSED") != std::string::npos);
}

TEST_CASE("sweep axis parsing and point counts") {
  const auto ax = parse_sweep_axis("gamma=0,1, 2,3");
  CHECK(ax.field == "gamma");
  CHECK(ax.values == std::vector<double>{0, 1, 2, 3});
  CHECK_THROWS_AS(parse_sweep_axis("gamma"), ParseError);
  CHECK_THROWS_AS(parse_sweep_axis("gamma="), ParseError);
  CHECK_THROWS_AS(parse_sweep_axis("gamma=1,x"), ParseError);
  CHECK_THROWS_AS(parse_sweep_axis("colour=1"), ParseError);

  SweepSpec s;
  s.axes = {{"t_iou", {0.3, 0.5, 0.7}}, {"gamma", {0, 1, 2, 3}}, {"solo_strong", {0.9, 0.95, 0.98}}};
  CHECK(sweep_points(s) == 36);
  s.mode = SweepMode::kOneAtATime;
  CHECK(sweep_points(s) == 10);
}

TEST_CASE("sweep rows") {
  const auto set = motherboard_preset(12, 0.05, 8);
  std::map<std::string, std::vector<ImageRecord>> data{{"N", set.images}};
  const CtvParams base;

  SweepSpec single;
  single.axes = {{"gamma", {2.0}}};
  const auto one = run_sweep(data, set.labels, set.profile, base, single);
  REQUIRE(one.size() == 1);
  const auto rep = evaluate_source(set.images, set.labels, "ENSEMBLE", set.profile, base);
  CHECK(one[0].map50 == rep.map50);
  CHECK(one[0].map50_95 == rep.map50_95);
  CHECK(one[0].precision == rep.micro_precision);
  CHECK(one[0].recall == rep.micro_recall);

  SweepSpec table;
  table.mode = SweepMode::kOneAtATime;
  table.axes = {{"t_iou", {0.7, 0.3, 0.5}}, {"gamma", {0, 1, 2, 3}}, {"solo_strong", {0.9, 0.95, 0.98}}};
  const auto rows = run_sweep(data, set.labels, set.profile, base, table, 3);
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].settings == std::vector<std::pair<std::string, double>>{{"t_iou", 0.3}});
  CHECK(rows[2].settings[0].second == 0.7);
  CHECK(rows[3].settings[0].first == "gamma");
  CHECK(rows[9].settings[0].first == "solo_strong");
  for (const auto& r : rows) {
    for (double v : {r.map50, r.map50_95, r.precision, r.recall}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(run_sweep(data, set.labels, set.profile, base, table, 1) == rows);
  const std::string csv = sweep_csv(rows);
  CHECK(csv.starts_with("settings,condition,mAP50,mAP50_95,P,R\nt_iou=0.3,N,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);

  SweepSpec grid;
  grid.axes = {{"gamma", {2, 1}}, {"t_iou", {0.5, 0.4}}};
  grid.conditions = {"N", "N2"};
  data["N2"] = set.images;
  const auto g = run_sweep(data, set.labels, set.profile, base, grid);
  REQUIRE(g.size() == 8);
  CHECK(g[0].settings == std::vector<std::pair<std::string, double>>{{"gamma", 1}, {"t_iou", 0.4}});
  CHECK(g[0].condition == "N");
  CHECK(g[1].condition == "N2");
  CHECK(g[7].settings[1].second == 0.5);

  SweepSpec bad = grid;
  bad.cap = 7;
  CHECK_THROWS_AS(run_sweep(data, set.labels, set.profile, base, bad), GridTooLargeError);
  bad = grid;
  bad.axes.push_back({"gamma", {3}});
  CHECK_THROWS_AS(run_sweep(data, set.labels, set.profile, base, bad), ValidationError);
  bad = grid;
  bad.axes[0].values.clear();
  CHECK_THROWS_AS(run_sweep(data, set.labels, set.profile, base, bad), ValidationError);
  bad = grid;
  bad.conditions = {"F"};
  CHECK_THROWS_AS(run_sweep(data, set.labels, set.profile, base, bad), MissingSourceError);
  bad = grid;
  bad.axes = {{"t_iou", {1.5}}};
  CHECK_THROWS_AS(run_sweep(data, set.labels, set.profile, base, bad), InvalidParamsError);
  CHECK_THROWS_AS(run_sweep(data, set.labels, set.profile, base, SweepSpec{}), ValidationError);
}

TEST_CASE("gamma shifts the fused box toward the more confident model") {
  std::vector<ImageRecord> imgs{pair_frame()};
  double prev = 1e9;
  for (double gamma : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0}) {
    CtvParams p = relaxed_b();
    p.gamma = gamma;
    const auto r = fuse_dataset(imgs, ones({0}), p);
    REQUIRE(r[0].detections.size() == 1);
    const double x1 = r[0].detections[0].detection.box.x1;
    CHECK(x1 < prev);
    CHECK(x1 > 100.0);
    prev = x1;
  }
  // Equal weights at gamma 0: plain midpoint.
  CtvParams p = relaxed_b();
  p.gamma = 0;
  CHECK(fuse_dataset(imgs, ones({0}), p)[0].detections[0].detection.box.x1 == doctest::Approx(105.0));
}

TEST_CASE("ablation variants") {
  CHECK(to_string(AblationVariant::kNoF1Weight) == "NO_F1_WEIGHT");
  for (auto v : all_ablation_variants()) CHECK(ablation_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(ablation_from_string("NONE"), ValidationError);

  const auto prof = reference_motherboard_profile();
  const CtvParams params;
  auto [p0, f0] = apply_variant(AblationVariant::kFull, params, prof);
  CHECK(p0 == params);
  CHECK(f0 == prof);
  auto [p1, f1] = apply_variant(AblationVariant::kNoHighConf, params, prof);
  CHECK_FALSE(p1.high_conf_override);
  auto [p2, f2] = apply_variant(AblationVariant::kNoF1Weight, params, prof);
  CHECK(f2.f1("MODEL_B", 2) == 1.0);
  auto [p3, f3] = apply_variant(AblationVariant::kAlwaysTie, params, prof);
  CHECK(std::isinf(p3.f1_margin));
}

TEST_CASE("ablations on constructed scenarios") {
  const std::vector<AblationVariant> vs{AblationVariant::kFull, AblationVariant::kNoHighConf,
                                        AblationVariant::kNoF1Weight};
  const auto two = rule_two_dependent_set(40, 2);
  const auto r2 = run_ablation(two.images, two.labels, two.profile, {}, vs);
  REQUIRE(r2.size() == 3);
  const auto base = evaluate_source(two.images, two.labels, "ENSEMBLE", two.profile, {});
  CHECK(r2[0].variant == "FULL");
  CHECK(r2[0].map50 == base.map50);
  CHECK(r2[0].recall == base.micro_recall);
  CHECK(r2[0].recall - r2[2].recall >= 0.05);

  const auto one = rule_one_dependent_set(40, 2);
  const auto r1 = run_ablation(one.images, one.labels, one.profile, {}, vs);
  CHECK(r1[0].map50 >= r1[1].map50);
  CHECK((r1[1].precision < r1[0].precision || r1[1].map50 < r1[0].map50));

  const std::vector<AblationVariant> dup{AblationVariant::kFull, AblationVariant::kFull};
  CHECK_THROWS_AS(run_ablation(one.images, one.labels, one.profile, {}, dup), ValidationError);
  CHECK(ablation_csv(r1).starts_with("variant,mAP50,mAP50_95,P,R,F1\nFULL,"));
}

TEST_CASE("perturbed datasets") {
  ctvtest::TempDir dir("perturb_ds");
  const auto set = noiseless_preset(4, 0.004, 6);
  std::vector<ImageRecord> small = set.images;
  for (auto& img : small) img.width = img.height = 640;
  std::vector<std::string> paths;
  fs::create_directories(dir.path / "src/images");
  for (const auto& img : small) {
    paths.push_back("images/" + img.id + ".png");
    write_image(dir.path / "src" / paths.back(), render_scene(img, set.labels));
  }
  write_dataset(dir.path / "src", set.labels, small, paths);
  const auto m = load_manifest(dir.path / "src/manifest.txt");

  const auto names = standard_condition_names();
  const auto out = perturb_dataset(m, names, dir.path / "out");
  CHECK(out.condition_names() == std::vector<std::string>{"N", "BDn", "BUp", "F", "SUp"});
  const auto reloaded = load_manifest(dir.path / "out/manifest.txt");
  Diagnostics diag;
  const auto flipped = load_dataset(reloaded, "F", diag);
  const auto base = load_dataset(reloaded, "N", diag);
  for (std::size_t i = 0; i < base.images.size(); ++i) {
    REQUIRE(flipped.images[i].ground_truth.size() == base.images[i].ground_truth.size());
    for (std::size_t k = 0; k < base.images[i].ground_truth.size(); ++k)
      CHECK(flipped.images[i].ground_truth[k].box ==
            flip_box_h(base.images[i].ground_truth[k].box, 640));
    const Image orig = read_image(base.image_paths[i]);
    const Image f = read_image(flipped.image_paths[i]);
    CHECK(flip_h(f, {}).first == orig);
    CHECK_FALSE(read_image(dir.path / "out/BUp/images" / base.image_paths[i].filename()) == orig);
  }
  // Without pixels the flip still moves ground truth.
  write_dataset(dir.path / "nopix", set.labels, small);
  const auto np = perturb_dataset(load_manifest(dir.path / "nopix/manifest.txt"),
                                  std::vector<std::string>{"F", "BUp"}, dir.path / "nopix_out");
  CHECK(np.conditions.at("F").images.empty());
  const auto npf = load_dataset(load_manifest(dir.path / "nopix_out/manifest.txt"), "F", diag);
  CHECK(npf.images[0].ground_truth[0].box == flip_box_h(small[0].ground_truth[0].box, 640));

  const std::vector<std::string> bad{"X"};
  CHECK_THROWS_AS(perturb_dataset(m, bad, dir.path / "bad"), ValidationError);
}

TEST_CASE("flip twice through stored datasets is byte identical") {
  ctvtest::TempDir dir("flip2");
  const auto set = noiseless_preset(3, 0.003, 9);
  std::vector<std::string> paths;
  fs::create_directories(dir.path / "a/images");
  for (const auto& img : set.images) {
    paths.push_back("images/" + img.id + ".png");
    write_image(dir.path / "a" / paths.back(), render_scene(img, set.labels));
  }
  write_dataset(dir.path / "a", set.labels, set.images, paths);
  perturb_dataset(load_manifest(dir.path / "a/manifest.txt"), std::vector<std::string>{"F"},
                  dir.path / "b");
  // Use the flipped images as a new base set and flip again.
  std::vector<std::string> flipped_paths;
  for (const auto& p : paths) flipped_paths.push_back("F/images/" + fs::path(p).filename().string());
  Diagnostics diag;
  const auto fl = load_dataset(load_manifest(dir.path / "b/manifest.txt"), "F", diag);
  write_dataset(dir.path / "b", set.labels, fl.images, flipped_paths);
  perturb_dataset(load_manifest(dir.path / "b/manifest.txt"), std::vector<std::string>{"F"},
                  dir.path / "c");
  for (const auto& p : paths) {
    const auto name = fs::path(p).filename();
    CHECK(read_image(dir.path / "c/F/images" / name) == read_image(dir.path / "a" / p));
  }
  const auto back = load_dataset(load_manifest(dir.path / "c/manifest.txt"), "F", diag);
  for (std::size_t i = 0; i < back.images.size(); ++i) {
    REQUIRE(back.images[i].ground_truth.size() == set.images[i].ground_truth.size());
    for (std::size_t k = 0; k < back.images[i].ground_truth.size(); ++k) {
      const BBox& x = back.images[i].ground_truth[k].box;
      const BBox& y = set.images[i].ground_truth[k].box;
      CHECK(x.x1 == doctest::Approx(y.x1).epsilon(1e-12));
      CHECK(x.x2 == doctest::Approx(y.x2).epsilon(1e-12));
      CHECK(x.y1 == y.y1);
    }
  }
}

TEST_CASE("load_profile and replay") {
  ctvtest::TempDir dir("replay");
  const auto set = motherboard_preset(8, 0.02, 10);
  write_dataset(dir.path, set.labels, set.images);
  const auto m = load_manifest(dir.path / "manifest.txt");
  CHECK_THROWS_AS(load_profile(m), ValidationError);
  write_text_file(dir.path / "profile.csv", serialize_skill_profile(set.profile));
  CHECK(load_profile(m) == set.profile);
  write_text_file(dir.path / "other.csv", serialize_skill_profile(set.profile.uniform(0.5)));
  CHECK(load_profile(m, dir.path / "other.csv") == set.profile.uniform(0.5));

  Diagnostics diag;
  const auto ds = load_dataset(m, "N", diag);
  RunRecord r;
  r.manifest = (dir.path / "manifest.txt").string();
  r.params = CtvParams{};
  r.profile = set.profile;
  r.report_csv = report_csv(evaluate_source(ds.images, ds.labels, "ENSEMBLE", set.profile, r.params),
                            ds.labels);
  RunStore store(dir.path / "runs");
  const auto id = store.commit(r);
  CHECK(replay_run(store.load(id)) == r.report_csv);

  // Any change to the stored params changes the replayed report.
  RunRecord changed = store.load(id);
  changed.params.t_iou = 0.95;
  changed.params.gamma = 0.0;
  CHECK(replay_run(changed) != r.report_csv);
}
