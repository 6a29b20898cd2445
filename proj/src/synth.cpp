#include "ctv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "ctv/errors.hpp"
#include "ctv/metrics.hpp"

namespace ctv {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%04d", i);
  return buf;
}

BBox random_box(std::mt19937_64& rng, int width, int height, double min_side,
                double max_side) {
  std::uniform_real_distribution<double> side(min_side, max_side);
  const double w = std::min(side(rng), static_cast<double>(width));
  const double h = std::min(side(rng), static_cast<double>(height));
  std::uniform_real_distribution<double> ox(0.0, width - w);
  std::uniform_real_distribution<double> oy(0.0, height - h);
  const double x1 = ox(rng);
  const double y1 = oy(rng);
  return {x1, y1, x1 + w, y1 + h};
}

double truncated_normal(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  for (;;) {
    const double v = n(rng);
    if (std::abs(v) <= 2.0 * sigma) return v;
  }
}

BBox jitter_box(std::mt19937_64& rng, const BBox& box, double sigma, int width,
                int height) {
  if (sigma <= 0.0) return box;
  for (int attempt = 0; attempt < 32; ++attempt) {
    BBox b{box.x1 + truncated_normal(rng, sigma), box.y1 + truncated_normal(rng, sigma),
           box.x2 + truncated_normal(rng, sigma), box.y2 + truncated_normal(rng, sigma)};
    b.x1 = std::max(b.x1, 0.0);
    b.y1 = std::max(b.y1, 0.0);
    b.x2 = std::min(b.x2, static_cast<double>(width));
    b.y2 = std::min(b.y2, static_cast<double>(height));
    if (b.valid()) return b;
  }
  return box;
}

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ValidationError(std::string(what) + " must be in [0,1]");
  }
}

ClassNoise noise(double recall, double lo, double hi) {
  ClassNoise n;
  n.recall_prob = recall;
  n.conf_lo = lo;
  n.conf_hi = hi;
  return n;
}

// Per-class F1 of `source` against ground truth at IoU 0.5.
void fill_profile(ClassSkillProfile& profile, const LabelMap& labels,
                  const std::vector<ImageRecord>& images,
                  const std::string& source) {
  const ErrorProfile errs = error_profile(images, source, 0.5);
  for (ClassId c : labels.ids()) {
    auto it = errs.per_class.find(c);
    const Counts counts = it == errs.per_class.end() ? Counts{} : it->second;
    profile.set(source, c, aggregate_from_counts(counts).f1);
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& key) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::map<ClassId, int> motherboard_class_counts(double scale) {
  static const int kCounts[] = {806, 685, 326, 313, 196, 159, 99, 95, 63, 60, 58};
  std::map<ClassId, int> out;
  for (int i = 0; i < 11; ++i) {
    out[i] = static_cast<int>(std::round(kCounts[i] * scale));
  }
  return out;
}

std::vector<ImageRecord> generate_scenario(const ScenarioSpec& spec) {
  if (spec.n_images < 0) throw ValidationError("n_images must be >= 0");
  if (spec.n_images == 0) return {};
  if (spec.width <= 0 || spec.height <= 0) {
    throw ValidationError("image size must be positive");
  }
  if (!(spec.min_box > 0.0 && spec.min_box <= spec.max_box)) {
    throw ValidationError("box size range must satisfy 0 < min_box <= max_box");
  }
  for (const auto& [cls, n] : spec.class_counts) {
    if (n < 0) throw ValidationError("class counts must be >= 0");
  }

  // Deal instances to images: shuffled class list, round-robin.
  std::vector<ClassId> pool;
  for (const auto& [cls, n] : spec.class_counts) pool.insert(pool.end(), n, cls);
  std::mt19937_64 deal(derive_seed(spec.seed, "deal"));
  std::shuffle(pool.begin(), pool.end(), deal);

  std::vector<ImageRecord> images(static_cast<std::size_t>(spec.n_images));
  std::vector<std::vector<ClassId>> per_image(images.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    per_image[i % images.size()].push_back(pool[i]);
  }

  for (std::size_t i = 0; i < images.size(); ++i) {
    ImageRecord& img = images[i];
    img.id = image_name(static_cast<int>(i));
    img.width = spec.width;
    img.height = spec.height;
    std::mt19937_64 rng(derive_seed(spec.seed, img.id));
    for (ClassId cls : per_image[i]) {
      bool placed = false;
      for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
        const BBox b = random_box(rng, spec.width, spec.height, spec.min_box,
                                  spec.max_box);
        const bool clear = std::none_of(
            img.ground_truth.begin(), img.ground_truth.end(),
            [&](const GroundTruthBox& g) { return iou(g.box, b) >= spec.max_pair_iou; });
        if (clear) {
          img.ground_truth.push_back({b, cls});
          placed = true;
        }
      }
      if (!placed) {
        throw PackingInfeasibleError("could not place box " +
                                     std::to_string(img.ground_truth.size() + 1) +
                                     " in " + img.id + " after " +
                                     std::to_string(spec.max_attempts) + " attempts");
      }
    }
  }
  return images;
}

const ClassNoise& DetectorNoiseSpec::noise_for(ClassId cls) const {
  auto it = per_class.find(cls);
  return it == per_class.end() ? default_class : it->second;
}

void validate(const DetectorNoiseSpec& spec) {
  auto check_class = [](const ClassNoise& n) {
    check_unit(n.recall_prob, "recall_prob");
    check_unit(n.label_confusion_prob, "label_confusion_prob");
    check_unit(n.conf_lo, "conf_lo");
    check_unit(n.conf_hi, "conf_hi");
    if (n.conf_lo > n.conf_hi) throw ValidationError("conf range is inverted");
  };
  check_class(spec.default_class);
  for (const auto& [_, n] : spec.per_class) check_class(n);
  check_unit(spec.fp_conf_lo, "fp_conf_lo");
  check_unit(spec.fp_conf_hi, "fp_conf_hi");
  if (spec.fp_conf_lo > spec.fp_conf_hi) {
    throw ValidationError("fp conf range is inverted");
  }
  if (!(spec.jitter_sigma >= 0.0)) throw ValidationError("jitter_sigma must be >= 0");
  if (!(spec.fp_rate >= 0.0)) throw ValidationError("fp_rate must be >= 0");
  if (!(spec.fp_min_box > 0.0 && spec.fp_min_box <= spec.fp_max_box)) {
    throw ValidationError("fp box size range is invalid");
  }
}

void simulate_detector(std::vector<ImageRecord>& images,
                       const DetectorNoiseSpec& spec) {
  validate(spec);
  std::vector<ClassId> fp_classes = spec.fp_classes;
  if (fp_classes.empty()) {
    for (const auto& img : images) {
      for (const auto& g : img.ground_truth) fp_classes.push_back(g.class_id);
    }
    std::sort(fp_classes.begin(), fp_classes.end());
    fp_classes.erase(std::unique(fp_classes.begin(), fp_classes.end()),
                     fp_classes.end());
  }

  for (auto& img : images) {
    std::mt19937_64 rng(derive_seed(spec.seed, spec.model_id + "/" + img.id));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Detection> dets;
    for (const auto& g : img.ground_truth) {
      const ClassNoise& n = spec.noise_for(g.class_id);
      // Draw every variate unconditionally so streams stay aligned across
      // parameter changes.
      const double detect_u = unit(rng);
      const double conf_u = unit(rng);
      const double confuse_u = unit(rng);
      const BBox box = jitter_box(rng, g.box, spec.jitter_sigma, img.width, img.height);
      if (detect_u >= n.recall_prob) continue;
      Detection d;
      d.box = box;
      d.class_id = confuse_u < n.label_confusion_prob ? n.confusion_target : g.class_id;
      d.confidence = n.conf_lo + (n.conf_hi - n.conf_lo) * conf_u;
      d.source = spec.model_id;
      dets.push_back(std::move(d));
    }
    if (spec.fp_rate > 0.0 && !fp_classes.empty()) {
      std::poisson_distribution<int> count(spec.fp_rate);
      const int n_fp = count(rng);
      std::uniform_int_distribution<std::size_t> pick(0, fp_classes.size() - 1);
      for (int k = 0; k < n_fp; ++k) {
        Detection d;
        d.box = random_box(rng, img.width, img.height, spec.fp_min_box, spec.fp_max_box);
        d.class_id = fp_classes[pick(rng)];
        d.confidence = spec.fp_conf_lo + (spec.fp_conf_hi - spec.fp_conf_lo) * unit(rng);
        d.source = spec.model_id;
        dets.push_back(std::move(d));
      }
    }
    img.detections[spec.model_id] = std::move(dets);
  }
}

DetectorNoiseSpec noiseless_detector(std::string model_id, std::uint64_t seed) {
  DetectorNoiseSpec s;
  s.model_id = std::move(model_id);
  s.default_class = noise(1.0, 0.9, 1.0);
  s.seed = seed;
  return s;
}

DetectorNoiseSpec yolo_like_detector(std::uint64_t seed) {
  DetectorNoiseSpec s;
  s.model_id = std::string(kModelA);
  s.default_class = noise(0.95, 0.80, 0.99);
  s.jitter_sigma = 1.5;
  s.fp_rate = 0.3;
  s.fp_conf_lo = 0.3;
  s.fp_conf_hi = 0.9;
  s.seed = seed;
  return s;
}

DetectorNoiseSpec frcnn_like_detector(std::uint64_t seed) {
  DetectorNoiseSpec s;
  s.model_id = std::string(kModelB);
  s.default_class = noise(0.72, 0.90, 1.0);
  s.jitter_sigma = 2.5;
  s.fp_rate = 0.3;
  s.fp_conf_lo = 0.5;
  s.fp_conf_hi = 0.95;
  s.seed = seed;
  return s;
}

SyntheticSet motherboard_preset(int n_images, double scale, std::uint64_t seed) {
  SyntheticSet out;
  out.labels = motherboard_label_map();

  ScenarioSpec spec;
  spec.n_images = n_images;
  spec.class_counts = motherboard_class_counts(scale);
  spec.seed = seed;
  out.images = generate_scenario(spec);
  out.detectors = {yolo_like_detector(derive_seed(seed, "A")),
                   frcnn_like_detector(derive_seed(seed, "B"))};
  for (const auto& d : out.detectors) simulate_detector(out.images, d);

  // Skill profile measured on a disjoint validation draw.
  ScenarioSpec val = spec;
  val.seed = derive_seed(seed, "validation");
  auto val_images = generate_scenario(val);
  simulate_detector(val_images, yolo_like_detector(derive_seed(val.seed, "A")));
  simulate_detector(val_images, frcnn_like_detector(derive_seed(val.seed, "B")));
  fill_profile(out.profile, out.labels, val_images, std::string(kModelA));
  fill_profile(out.profile, out.labels, val_images, std::string(kModelB));
  return out;
}

SyntheticSet noiseless_preset(int n_images, double scale, std::uint64_t seed) {
  SyntheticSet out;
  out.labels = motherboard_label_map();
  ScenarioSpec spec;
  spec.n_images = n_images;
  spec.class_counts = motherboard_class_counts(scale);
  spec.seed = seed;
  out.images = generate_scenario(spec);
  out.detectors = {noiseless_detector(std::string(kModelA), derive_seed(seed, "A")),
                   noiseless_detector(std::string(kModelB), derive_seed(seed, "B"))};
  for (const auto& d : out.detectors) simulate_detector(out.images, d);
  for (ClassId c : out.labels.ids()) {
    out.profile.set(std::string(kModelA), c, 1.0);
    out.profile.set(std::string(kModelB), c, 1.0);
  }
  return out;
}

namespace {

// Two shared classes both models detect, two classes only MODEL_B finds.
SyntheticSet solo_dependent_set(int n_images, std::uint64_t seed,
                                const ClassNoise& b_rare, double a_rare_f1,
                                double b_rare_f1) {
  SyntheticSet out;
  out.labels.add(0, "Screws");
  out.labels.add(1, "CPU_fan");
  out.labels.add(2, "CPU_FAN_NO_Screws");
  out.labels.add(3, "No_Screws");

  ScenarioSpec spec;
  spec.n_images = n_images;
  spec.class_counts = {{0, 4 * n_images}, {1, 2 * n_images}, {2, n_images},
                       {3, n_images}};
  spec.seed = seed;
  out.images = generate_scenario(spec);

  DetectorNoiseSpec a = yolo_like_detector(derive_seed(seed, "A"));
  a.per_class[2] = noise(0.0, 0.8, 0.99);
  a.per_class[3] = noise(0.0, 0.8, 0.99);
  a.fp_classes = {0, 1};
  DetectorNoiseSpec b = frcnn_like_detector(derive_seed(seed, "B"));
  b.per_class[2] = b_rare;
  b.per_class[3] = b_rare;
  b.fp_classes = {0, 1};
  simulate_detector(out.images, a);
  simulate_detector(out.images, b);
  out.detectors = {a, b};

  for (ClassId c : {0, 1}) {
    out.profile.set(std::string(kModelA), c, 0.95);
    out.profile.set(std::string(kModelB), c, 0.80);
  }
  for (ClassId c : {2, 3}) {
    out.profile.set(std::string(kModelA), c, a_rare_f1);
    out.profile.set(std::string(kModelB), c, b_rare_f1);
  }
  return out;
}

}  // namespace

SyntheticSet rule_two_dependent_set(int n_images, std::uint64_t seed) {
  return solo_dependent_set(n_images, seed, noise(1.0, 0.90, 0.94), 0.40, 0.85);
}

SyntheticSet rule_one_dependent_set(int n_images, std::uint64_t seed) {
  return solo_dependent_set(n_images, seed, noise(1.0, 0.96, 1.0), 0.90, 0.50);
}

}  // namespace ctv
