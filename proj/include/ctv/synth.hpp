#pragma once

// Synthetic ground truth and noisy two-detector outputs with controllable
// per-class skill. All generation is deterministic under the given seeds;
// each image draws from its own stream derived from (seed, image id).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctv/engine.hpp"
#include "ctv/geometry.hpp"

namespace ctv {

struct ScenarioSpec {
  int n_images = 0;
  int width = 640;
  int height = 640;
  // Total instances per class across the whole scenario.
  std::map<ClassId, int> class_counts;
  double min_box = 16.0;
  double max_box = 64.0;
  // Pairwise IoU between ground-truth boxes in one image stays below this.
  double max_pair_iou = 0.05;
  int max_attempts = 2000;
  std::uint64_t seed = 1;
};

/// Table-1 class proportions scaled by `scale` (rounded half away from zero).
std::map<ClassId, int> motherboard_class_counts(double scale);

/// Ground truth only; images carry no detection lists. Throws
/// PackingInfeasibleError if a box cannot be placed within max_attempts, and
/// ValidationError for inconsistent specs.
std::vector<ImageRecord> generate_scenario(const ScenarioSpec& spec);

struct ClassNoise {
  double recall_prob = 1.0;
  double conf_lo = 0.9;
  double conf_hi = 1.0;
  double label_confusion_prob = 0.0;
  ClassId confusion_target = 0;
};

struct DetectorNoiseSpec {
  std::string model_id = std::string(kModelA);
  ClassNoise default_class;
  std::map<ClassId, ClassNoise> per_class;
  double jitter_sigma = 0.0;      // pixels, truncated at 2 sigma
  double fp_rate = 0.0;           // expected spurious boxes per image
  double fp_conf_lo = 0.3;
  double fp_conf_hi = 0.9;
  std::vector<ClassId> fp_classes;  // empty: classes seen in ground truth
  double fp_min_box = 16.0;
  double fp_max_box = 64.0;
  std::uint64_t seed = 1;

  const ClassNoise& noise_for(ClassId cls) const;
};

/// Throws ValidationError when probabilities or ranges are out of order.
void validate(const DetectorNoiseSpec& spec);

/// Adds (or replaces) the detection list of `spec.model_id` on every image.
void simulate_detector(std::vector<ImageRecord>& images,
                       const DetectorNoiseSpec& spec);

// Named presets.
DetectorNoiseSpec noiseless_detector(std::string model_id, std::uint64_t seed);
/// High recall (0.95), confidences 0.80-0.99, light jitter.
DetectorNoiseSpec yolo_like_detector(std::uint64_t seed);
/// Recall 0.72, confidences skewed high (0.90-1.00), heavier jitter.
DetectorNoiseSpec frcnn_like_detector(std::uint64_t seed);

/// A ready-to-fuse synthetic dataset.
struct SyntheticSet {
  LabelMap labels;
  std::vector<ImageRecord> images;
  ClassSkillProfile profile;
  // Noise models used for `images`, in simulation order.
  std::vector<DetectorNoiseSpec> detectors;
};

/// Motherboard scenario seen by two perfect detectors; profile is all ones.
SyntheticSet noiseless_preset(int n_images, double scale, std::uint64_t seed);

/// Motherboard classes at `scale` of Table-1 counts with both presets and a
/// profile measured on a separately seeded validation scenario.
SyntheticSet motherboard_preset(int n_images, double scale, std::uint64_t seed);

/// Scenario in which some classes are only ever found by MODEL_B at
/// confidences in [0.90, 0.94], and MODEL_B holds the higher class F1 there.
/// Those detections survive only through the model-advantage solo rule.
SyntheticSet rule_two_dependent_set(int n_images, std::uint64_t seed);

/// Scenario in which some classes are only ever found by MODEL_B at
/// confidences >= 0.96 while MODEL_A holds a clearly higher class F1. Those
/// detections survive only through the high-confidence override.
SyntheticSet rule_one_dependent_set(int n_images, std::uint64_t seed);

/// Per-image stream seed; stable across platforms.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& key);

}  // namespace ctv
