#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctv {

/// Axis-aligned box in corner format, pixel units, origin top-left.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }

  /// Finite coordinates and strictly positive extent on both axes.
  bool valid() const noexcept;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws RangeError when `box` violates the BBox invariants.
void require_valid(const BBox& box);

using ClassId = int;

/// Bidirectional class id <-> display name table.
class LabelMap {
 public:
  LabelMap() = default;

  /// Throws ValidationError on duplicate id or name.
  void add(ClassId id, std::string name);

  bool contains(ClassId id) const { return names_.contains(id); }
  std::optional<ClassId> find(std::string_view name) const;
  const std::string& name(ClassId id) const;

  std::size_t size() const noexcept { return names_.size(); }
  bool empty() const noexcept { return names_.empty(); }

  /// Ids in ascending order.
  std::vector<ClassId> ids() const;

  /// Position of `id` in ids(); used to index dense per-class arrays.
  std::size_t index_of(ClassId id) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::map<ClassId, std::string> names_;
  std::map<std::string, ClassId, std::less<>> ids_;
};

/// The eleven motherboard defect classes, ids in descending instance count.
LabelMap motherboard_label_map();

struct Detection {
  BBox box;
  ClassId class_id = 0;
  double confidence = 0.0;
  std::string source;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruthBox {
  BBox box;
  ClassId class_id = 0;

  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct ImageRecord {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<GroundTruthBox> ground_truth;
  std::map<std::string, std::vector<Detection>> detections;

  /// Detections for `source`, or an empty span if the source is absent.
  std::span<const Detection> detections_for(std::string_view source) const;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Intersection over union; exactly 0 when the boxes do not overlap.
double iou(const BBox& a, const BBox& b) noexcept;

/// Class-wise greedy NMS. Returns indices into `dets` of the survivors, ordered
/// by confidence descending, ties by class id then input position. A box is
/// suppressed when its IoU with an already kept box of the same class is at
/// least `iou_thresh`.
std::vector<std::size_t> nms_classwise_indices(std::span<const Detection> dets,
                                               double iou_thresh);

std::vector<Detection> nms_classwise(std::span<const Detection> dets,
                                     double iou_thresh);

}  // namespace ctv
