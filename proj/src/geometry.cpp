#include "ctv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctv/errors.hpp"

namespace ctv {

bool BBox::valid() const noexcept {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

void require_valid(const BBox& box) {
  if (!box.valid()) {
    throw RangeError("invalid box (" + std::to_string(box.x1) + "," +
                     std::to_string(box.y1) + "," + std::to_string(box.x2) +
                     "," + std::to_string(box.y2) + ")");
  }
}

void LabelMap::add(ClassId id, std::string name) {
  if (id < 0) throw ValidationError("class id must be non-negative");
  if (names_.contains(id)) {
    throw ValidationError("duplicate class id " + std::to_string(id));
  }
  if (ids_.contains(name)) {
    throw ValidationError("duplicate class name '" + name + "'");
  }
  ids_.emplace(name, id);
  names_.emplace(id, std::move(name));
}

std::optional<ClassId> LabelMap::find(std::string_view name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& LabelMap::name(ClassId id) const {
  auto it = names_.find(id);
  if (it == names_.end()) {
    throw UnknownClassError("class id " + std::to_string(id) +
                            " not in label map");
  }
  return it->second;
}

std::vector<ClassId> LabelMap::ids() const {
  std::vector<ClassId> out;
  out.reserve(names_.size());
  for (const auto& [id, _] : names_) out.push_back(id);
  return out;
}

std::size_t LabelMap::index_of(ClassId id) const {
  auto it = names_.find(id);
  if (it == names_.end()) {
    throw UnknownClassError("class id " + std::to_string(id) +
                            " not in label map");
  }
  return static_cast<std::size_t>(std::distance(names_.begin(), it));
}

LabelMap motherboard_label_map() {
  LabelMap m;
  const char* names[] = {"Screws",
                         "CPU_FAN_Screws",
                         "CPU_FAN_NO_Screws",
                         "CPU_fan",
                         "No_Screws",
                         "CPU_fan_port",
                         "CPU_FAN_Screw_loose",
                         "Scratch",
                         "Incorrect_Screws",
                         "CPU_fan_port_detached",
                         "Loose_Screws"};
  for (int i = 0; i < 11; ++i) m.add(i, names[i]);
  return m;
}

std::span<const Detection> ImageRecord::detections_for(
    std::string_view source) const {
  auto it = detections.find(std::string(source));
  if (it == detections.end()) return {};
  return it->second;
}

double iou(const BBox& a, const BBox& b) noexcept {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  // Guard the identity case against rounding in area() - inter.
  if (a == b) return 1.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> nms_classwise_indices(std::span<const Detection> dets,
                                               double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) {
                     if (dets[l].confidence != dets[r].confidence) {
                       return dets[l].confidence > dets[r].confidence;
                     }
                     return dets[l].class_id < dets[r].class_id;
                   });

  std::vector<std::size_t> kept;
  kept.reserve(dets.size());
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (dets[k].class_id == d.class_id &&
          iou(dets[k].box, d.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<Detection> nms_classwise(std::span<const Detection> dets,
                                     double iou_thresh) {
  std::vector<Detection> out;
  for (std::size_t idx : nms_classwise_indices(dets, iou_thresh)) {
    out.push_back(dets[idx]);
  }
  return out;
}

}  // namespace ctv
