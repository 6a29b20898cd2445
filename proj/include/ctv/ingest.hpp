#pragma once

// Line-oriented text formats for datasets, detections, skill profiles,
// parameters and stored runs. Every parser either returns a value or throws a
// ctv::Error carrying the offending line.
//
//   detections     image_id,class_id,confidence,x1,y1,x2,y2
//   ground truth   image_id,class_id,x1,y1,x2,y2
//   skill profile  model_id,class_id,f1
//   key-value      key = value          (manifests, configs, run records)
//
// Blank lines and lines starting with '#' are ignored everywhere.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctv/engine.hpp"
#include "ctv/geometry.hpp"

namespace ctv {

struct Diagnostics {
  std::vector<std::string> warnings;
  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

/// Shortest decimal text that parses back to exactly `v`.
std::string format_real(double v);

/// Strict decimal parse of the whole of `text` (surrounding blanks allowed).
std::optional<double> parse_real(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

struct DetectionRecord {
  std::string image_id;
  Detection detection;
  std::size_t line = 0;
  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

struct GroundTruthRecord {
  std::string image_id;
  GroundTruthBox box;
  std::size_t line = 0;
  friend bool operator==(const GroundTruthRecord&, const GroundTruthRecord&) = default;
};

/// `source_name` labels errors; `model` is written into Detection::source.
std::vector<DetectionRecord> parse_canonical_detections(
    std::string_view text, std::string_view source_name = {},
    std::string_view model = {});
std::string serialize_detections(std::span<const DetectionRecord> records);

std::vector<GroundTruthRecord> parse_canonical_ground_truth(
    std::string_view text, std::string_view source_name = {});
std::string serialize_ground_truth(std::span<const GroundTruthRecord> records);

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// One YOLO/darknet label line set ("class cx cy w h [conf]", normalized),
/// converted to absolute corner boxes for an image of `size`. Corners within
/// 0.001 outside [0,1] are clamped with a warning; further out is a RangeError.
std::vector<Detection> parse_yolo_lines(std::string_view text, ImageSize size,
                                        const LabelMap& labels,
                                        std::string_view model,
                                        std::string_view source_name,
                                        Diagnostics& diag);

/// Reads every `<image_id>.txt` in `dir`. Throws MissingImageSizeError for a
/// file whose image id has no entry in `sizes`.
std::map<std::string, std::vector<Detection>> parse_yolo_txt(
    const std::filesystem::path& dir, const LabelMap& labels,
    const std::map<std::string, ImageSize>& sizes, std::string_view model,
    Diagnostics& diag);

/// Throws IncompleteProfileError when any (model, class) pair is missing for
/// the classes of `labels` (or, without labels, for classes seen in the file),
/// RangeError for f1 outside [0,1].
ClassSkillProfile parse_skill_profile(std::string_view text,
                                      const LabelMap* labels = nullptr,
                                      std::string_view source_name = {});
std::string serialize_skill_profile(const ClassSkillProfile& profile);

/// Per-class validation F1 of the two base detectors on the motherboard
/// classes, as published for the reference study.
ClassSkillProfile reference_motherboard_profile();

// ---------------------------------------------------------------------------
// Key-value files

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<KvEntry> parse_key_values(std::string_view text,
                                      std::string_view source_name = {});
std::string serialize_key_values(std::span<const KvEntry> entries);

/// Applies recognised CtvParams keys onto `base`; unknown keys are a
/// ParseError. Keys: t_iou, gamma, f1_margin, conf_thresh, solo_strong,
/// near_tie_conf, fuse_coords, nms_iou, high_conf_override,
/// model_conf_floor.<model>.
CtvParams params_from_key_values(std::span<const KvEntry> entries,
                                 CtvParams base = {},
                                 std::string_view source_name = {});
/// Sets one named field from text. Throws ParseError for unknown fields or
/// malformed values.
void set_param(CtvParams& params, std::string_view key, std::string_view value);
std::vector<KvEntry> params_to_key_values(const CtvParams& params);

// ---------------------------------------------------------------------------
// Dataset manifests

struct ImageEntry {
  std::string id;
  int width = 0;
  int height = 0;
  std::string path;  // relative to the manifest directory; empty if none
};

struct ConditionRefs {
  std::string ground_truth;
  std::map<std::string, std::string> detections;
  std::string images;  // directory holding perturbed copies, same file names
};

/// Manifest keys:
///   label = <id> <name>
///   image = <id> <width> <height> [<path>]
///   ground_truth = <file>
///   detections.<model> = <file>
///   condition.<name>.ground_truth = <file>
///   condition.<name>.detections.<model> = <file>
///   condition.<name>.images = <dir>
struct DatasetManifest {
  std::filesystem::path base_dir;
  LabelMap labels;
  std::vector<ImageEntry> images;
  std::string ground_truth;
  std::map<std::string, std::string> detections;
  std::map<std::string, ConditionRefs> conditions;

  std::vector<std::string> condition_names() const;  // "N" first
  std::filesystem::path resolve(const std::string& relative) const;
};

DatasetManifest parse_manifest(std::string_view text,
                               const std::filesystem::path& base_dir,
                               std::string_view source_name = {});
std::string serialize_manifest(const DatasetManifest& manifest);

/// Parses and checks that every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Dataset {
  LabelMap labels;
  std::vector<ImageRecord> images;
  std::vector<std::filesystem::path> image_paths;  // parallel; may be empty
  std::string condition = "N";
};

/// Loads ground truth and detections for `condition` ("N" is the base set),
/// clamping boxes to image bounds. Throws MissingSourceError for an unknown
/// condition.
Dataset load_dataset(const DatasetManifest& manifest,
                     const std::string& condition, Diagnostics& diag);

/// Writes ground truth, per-model detections and a manifest under `dir`.
/// Image files are not written; `image_paths` entries are recorded as given.
DatasetManifest write_dataset(const std::filesystem::path& dir,
                              const LabelMap& labels,
                              std::span<const ImageRecord> images,
                              std::span<const std::string> image_paths = {});

std::string read_text_file(const std::filesystem::path& path);
/// Write to a sibling temp file and rename into place.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// ---------------------------------------------------------------------------
// Run store

struct RunRecord {
  std::string run_id;
  std::string timestamp;
  std::string manifest;   // path of the dataset manifest
  std::string condition = "N";
  std::string source = std::string(kEnsembleSource);
  CtvParams params;
  ClassSkillProfile profile;
  std::string report_csv;
  std::map<std::string, std::size_t> trace_counts;
};

/// Append-only directory of runs: <root>/<run_id>/{record.kv, params.cfg,
/// profile.csv, report.csv} plus <root>/index listing run ids in commit order.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  /// Assigns run_id (and timestamp when empty) and commits atomically.
  std::string commit(RunRecord record);
  RunRecord load(const std::string& run_id) const;
  std::vector<std::string> list() const;

  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
};

}  // namespace ctv
