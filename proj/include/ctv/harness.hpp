#pragma once

// Orchestration shared by the CLI and the tuning service: dataset-level
// fusion, evaluation reports, parameter sweeps, ablations, perturbation of
// stored datasets and run replay.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctv/engine.hpp"
#include "ctv/ingest.hpp"
#include "ctv/metrics.hpp"
#include "ctv/perturb.hpp"

namespace ctv {

/// Fuses every image; results are in image order. `jobs` > 1 spreads images
/// over worker threads without changing the result.
std::vector<FusionResult> fuse_dataset(std::span<const ImageRecord> images,
                                       const ClassSkillProfile& profile,
                                       const CtvParams& params,
                                       unsigned jobs = 1);

/// Copy of `images` with an ENSEMBLE detection list on every image.
std::vector<ImageRecord> with_ensemble(std::span<const ImageRecord> images,
                                       std::span<const FusionResult> fused);

/// Evaluates `source`. For ENSEMBLE the images are fused first with
/// `profile` and `params`.
EvalReport evaluate_source(std::span<const ImageRecord> images,
                           const LabelMap& labels, std::string_view source,
                           const ClassSkillProfile& profile,
                           const CtvParams& params);

/// Per-class F1 of each named model against ground truth at IoU 0.5.
ClassSkillProfile profile_from_dataset(std::span<const ImageRecord> images,
                                       const LabelMap& labels,
                                       std::span<const std::string> models);

/// Skill profile for a dataset: `path` when given, else profile.csv next to
/// the manifest. Throws ValidationError when neither exists.
ClassSkillProfile load_profile(const DatasetManifest& manifest,
                               const std::filesystem::path& path = {});

// Report formatting, fixed three decimals.
std::string fmt3(double v);
std::string report_csv(const EvalReport& report, const LabelMap& labels);
std::string report_table(const EvalReport& report, const LabelMap& labels);
/// Aggregate comparison, one column per report.
std::string comparison_table(std::span<const EvalReport> reports);

/// One line per trace: image_id,kind,candidate_kind,model:index[;...],scores
std::string trace_lines(std::string_view image_id, const FusionResult& result);
std::map<std::string, std::size_t> trace_counts(
    std::span<const FusionResult> results);
std::string trace_summary(const std::map<std::string, std::size_t>& counts);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepAxis {
  std::string field;
  std::vector<double> values;
};

enum class SweepMode {
  kGrid,        // cartesian product of all axes
  kOneAtATime,  // each axis varied alone around the base params
};

struct SweepSpec {
  std::vector<SweepAxis> axes;
  SweepMode mode = SweepMode::kGrid;
  std::vector<std::string> conditions = {"N"};
  std::size_t cap = 10000;
};

/// "field=v1,v2,..." for one axis.
SweepAxis parse_sweep_axis(std::string_view text);

struct SweepRow {
  std::vector<std::pair<std::string, double>> settings;
  std::string condition;
  double map50 = 0.0;
  double map50_95 = 0.0;
  double precision = 0.0;
  double recall = 0.0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

/// Number of parameter points the spec expands to (before conditions).
std::size_t sweep_points(const SweepSpec& spec);

/// Throws GridTooLargeError when points x conditions exceeds the cap and
/// ValidationError for empty axes. `datasets` maps condition -> images.
/// Rows are sorted by axis values in axis order, then condition order.
std::vector<SweepRow> run_sweep(
    const std::map<std::string, std::vector<ImageRecord>>& datasets,
    const LabelMap& labels, const ClassSkillProfile& profile,
    const CtvParams& base, const SweepSpec& spec, unsigned jobs = 1);

std::string sweep_csv(std::span<const SweepRow> rows);
std::string sweep_table(std::span<const SweepRow> rows);

// ---------------------------------------------------------------------------
// Ablations

enum class AblationVariant { kFull, kNoHighConf, kNoF1Weight, kAlwaysTie };

std::string_view to_string(AblationVariant v);
AblationVariant ablation_from_string(std::string_view name);
std::vector<AblationVariant> all_ablation_variants();

/// NO_HIGH_CONF disables solo rule I; NO_F1_WEIGHT sets every profile F1 to 1;
/// ALWAYS_TIE sets f1_margin to +inf (rule III floor still applies).
std::pair<CtvParams, ClassSkillProfile> apply_variant(
    AblationVariant variant, const CtvParams& params,
    const ClassSkillProfile& profile);

struct AblationRow {
  std::string variant;
  double map50 = 0.0;
  double map50_95 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

/// Throws ValidationError on duplicate variants.
std::vector<AblationRow> run_ablation(std::span<const ImageRecord> images,
                                      const LabelMap& labels,
                                      const ClassSkillProfile& profile,
                                      const CtvParams& params,
                                      std::span<const AblationVariant> variants);

std::string ablation_csv(std::span<const AblationRow> rows);
std::string ablation_table(std::span<const AblationRow> rows);

// ---------------------------------------------------------------------------
// Perturbed datasets

/// Writes perturbed images and transformed ground truth for each named
/// condition under `out_dir/<condition>/`, and returns `manifest` extended
/// with the condition entries (also written to out_dir/manifest.txt with
/// paths rebased onto out_dir). Detection files for the new conditions are
/// not produced. "N" is skipped.
DatasetManifest perturb_dataset(const DatasetManifest& manifest,
                                std::span<const std::string> conditions,
                                const std::filesystem::path& out_dir);

/// Simple flat-colour rendering of ground-truth boxes, so image-based
/// commands have pixels to work on for synthetic datasets.
Image render_scene(const ImageRecord& record, const LabelMap& labels);

// ---------------------------------------------------------------------------
// Runs

/// Loads the manifest and profile/params snapshot of a stored run, recomputes
/// the report and returns it as CSV.
std::string replay_run(const RunRecord& record);

}  // namespace ctv
