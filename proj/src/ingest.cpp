#include "ctv/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "ctv/errors.hpp"

namespace ctv {
namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto blank = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && blank(s.front())) s.remove_prefix(1);
  while (!s.empty() && blank(s.back())) s.remove_suffix(1);
  return s;
}

// Calls fn(line_number, trimmed_line) for every non-blank, non-comment line.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    fn(line_no, line);
  }
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string name_or_input(std::string_view s) {
  return s.empty() ? std::string("<input>") : std::string(s);
}

struct FieldReader {
  std::string_view source;
  std::size_t line;

  double real(std::string_view field, std::size_t column, const char* what) const {
    auto v = parse_real(field);
    if (!v || !std::isfinite(*v)) {
      throw ParseError(std::string(source), line, column,
                       std::string("expected a finite number for ") + what +
                           ", got '" + std::string(field) + "'");
    }
    return *v;
  }

  long long integer(std::string_view field, std::size_t column, const char* what) const {
    auto v = parse_integer(field);
    if (!v) {
      throw ParseError(std::string(source), line, column,
                       std::string("expected an integer for ") + what + ", got '" +
                           std::string(field) + "'");
    }
    return *v;
  }

  ClassId class_id(std::string_view field, std::size_t column) const {
    const long long v = integer(field, column, "class_id");
    if (v < 0 || v > 1'000'000) {
      throw RangeError(std::string(source), line,
                       "class id " + std::to_string(v) + " out of range");
    }
    return static_cast<ClassId>(v);
  }

  std::string image_id(std::string_view field) const {
    if (field.empty()) {
      throw ParseError(std::string(source), line, 1, "empty image id");
    }
    return std::string(field);
  }

  BBox box(std::span<const std::string_view> f, std::size_t first_column) const {
    BBox b{real(f[0], first_column, "x1"), real(f[1], first_column + 1, "y1"),
           real(f[2], first_column + 2, "x2"), real(f[3], first_column + 3, "y2")};
    if (!b.valid()) {
      throw RangeError(std::string(source), line,
                       "inverted or empty box (x1 < x2 and y1 < y2 required)");
    }
    return b;
  }

  void unit(double v, const char* what) const {
    if (v < 0.0 || v > 1.0) {
      throw RangeError(std::string(source), line,
                       std::string(what) + " " + format_real(v) +
                           " outside [0,1]");
    }
  }
};

bool parse_bool(std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    out = false;
    return true;
  }
  return false;
}

void clamp_box(BBox& b, const ImageRecord& img, const std::string& where,
               Diagnostics& diag) {
  const double w = img.width;
  const double h = img.height;
  const double overflow =
      std::max({0.0, -b.x1, -b.y1, b.x2 - w, b.y2 - h});
  if (overflow <= 0.0) return;
  b.x1 = std::clamp(b.x1, 0.0, w);
  b.x2 = std::clamp(b.x2, 0.0, w);
  b.y1 = std::clamp(b.y1, 0.0, h);
  b.y2 = std::clamp(b.y2, 0.0, h);
  if (!b.valid()) {
    throw RangeError(where + ": box lies outside image " + img.id);
  }
  if (overflow > 0.5) {
    diag.warn(where + ": box clamped to bounds of " + img.id + " (overflow " +
              format_real(overflow) + " px)");
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Numbers

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_real(std::string_view text) {
  text = trim(text);
  if (text.size() > 1 && text[0] == '+' && text[1] != '-') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return v;
}

std::optional<long long> parse_integer(std::string_view text) {
  text = trim(text);
  if (text.size() > 1 && text[0] == '+' && text[1] != '-') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  long long v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Canonical detections / ground truth

std::vector<DetectionRecord> parse_canonical_detections(
    std::string_view text, std::string_view source_name, std::string_view model) {
  std::vector<DetectionRecord> out;
  const std::string src = name_or_input(source_name);
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto f = split(line, ',');
    FieldReader r{src, line_no};
    if (f.size() != 7) {
      throw ParseError(src, line_no, 0,
                       "expected 7 fields (image_id,class_id,confidence,x1,y1,x2,y2), got " +
                           std::to_string(f.size()));
    }
    DetectionRecord rec;
    rec.line = line_no;
    rec.image_id = r.image_id(f[0]);
    rec.detection.class_id = r.class_id(f[1], 2);
    rec.detection.confidence = r.real(f[2], 3, "confidence");
    r.unit(rec.detection.confidence, "confidence");
    rec.detection.box = r.box(std::span(f).subspan(3, 4), 4);
    rec.detection.source = std::string(model);
    out.push_back(std::move(rec));
  });
  return out;
}

std::string serialize_detections(std::span<const DetectionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    const Detection& d = r.detection;
    out += r.image_id;
    out += ',';
    out += std::to_string(d.class_id);
    for (double v : {d.confidence, d.box.x1, d.box.y1, d.box.x2, d.box.y2}) {
      out += ',';
      out += format_real(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<GroundTruthRecord> parse_canonical_ground_truth(
    std::string_view text, std::string_view source_name) {
  std::vector<GroundTruthRecord> out;
  const std::string src = name_or_input(source_name);
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto f = split(line, ',');
    FieldReader r{src, line_no};
    if (f.size() != 6) {
      throw ParseError(src, line_no, 0,
                       "expected 6 fields (image_id,class_id,x1,y1,x2,y2), got " +
                           std::to_string(f.size()));
    }
    GroundTruthRecord rec;
    rec.line = line_no;
    rec.image_id = r.image_id(f[0]);
    rec.box.class_id = r.class_id(f[1], 2);
    rec.box.box = r.box(std::span(f).subspan(2, 4), 3);
    out.push_back(std::move(rec));
  });
  return out;
}

std::string serialize_ground_truth(std::span<const GroundTruthRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += r.image_id;
    out += ',';
    out += std::to_string(r.box.class_id);
    for (double v : {r.box.box.x1, r.box.box.y1, r.box.box.x2, r.box.box.y2}) {
      out += ',';
      out += format_real(v);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// YOLO labels

std::vector<Detection> parse_yolo_lines(std::string_view text, ImageSize size,
                                        const LabelMap& labels,
                                        std::string_view model,
                                        std::string_view source_name,
                                        Diagnostics& diag) {
  constexpr double kTolerance = 0.001;
  std::vector<Detection> out;
  const std::string src = name_or_input(source_name);
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto f = split_ws(line);
    FieldReader r{src, line_no};
    if (f.size() != 5 && f.size() != 6) {
      throw ParseError(src, line_no, 0,
                       "expected 'class cx cy w h [conf]', got " +
                           std::to_string(f.size()) + " fields");
    }
    Detection d;
    d.class_id = r.class_id(f[0], 1);
    if (!labels.empty() && !labels.contains(d.class_id)) {
      throw UnknownClassError(src + ":" + std::to_string(line_no) + ": class id " +
                              std::to_string(d.class_id) + " not in label map");
    }
    const double cx = r.real(f[1], 2, "cx");
    const double cy = r.real(f[2], 3, "cy");
    const double w = r.real(f[3], 4, "w");
    const double h = r.real(f[4], 5, "h");
    d.confidence = f.size() == 6 ? r.real(f[5], 6, "confidence") : 1.0;
    r.unit(d.confidence, "confidence");
    if (!(w > 0.0 && h > 0.0)) {
      throw RangeError(src, line_no, "box width and height must be positive");
    }
    double corners[4] = {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
    bool clamped = false;
    for (double& c : corners) {
      if (c < -kTolerance || c > 1.0 + kTolerance) {
        throw RangeError(src, line_no,
                         "normalized coordinate " + format_real(c) +
                             " outside [0,1] beyond tolerance");
      }
      if (c < 0.0 || c > 1.0) {
        c = std::clamp(c, 0.0, 1.0);
        clamped = true;
      }
    }
    if (clamped) {
      diag.warn(src + ":" + std::to_string(line_no) +
                ": normalized coordinates clamped to [0,1]");
    }
    d.box = {corners[0] * size.width, corners[1] * size.height,
             corners[2] * size.width, corners[3] * size.height};
    if (!d.box.valid()) {
      throw RangeError(src, line_no, "box collapses after conversion");
    }
    d.source = std::string(model);
    out.push_back(std::move(d));
  });
  return out;
}

std::map<std::string, std::vector<Detection>> parse_yolo_txt(
    const fs::path& dir, const LabelMap& labels,
    const std::map<std::string, ImageSize>& sizes, std::string_view model,
    Diagnostics& diag) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::vector<Detection>> out;
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    auto it = sizes.find(id);
    if (it == sizes.end()) {
      throw MissingImageSizeError(file.string() + ": no image size known for '" +
                                  id + "'");
    }
    out[id] = parse_yolo_lines(read_text_file(file), it->second, labels, model,
                               file.string(), diag);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Skill profiles

ClassSkillProfile parse_skill_profile(std::string_view text,
                                      const LabelMap* labels,
                                      std::string_view source_name) {
  ClassSkillProfile profile;
  std::set<ClassId> seen;
  std::set<std::pair<std::string, ClassId>> entries;
  const std::string src = name_or_input(source_name);
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto f = split(line, ',');
    FieldReader r{src, line_no};
    if (f.size() != 3) {
      throw ParseError(src, line_no, 0,
                       "expected 3 fields (model_id,class_id,f1), got " +
                           std::to_string(f.size()));
    }
    if (f[0].empty()) throw ParseError(src, line_no, 1, "empty model id");
    const std::string model(f[0]);
    const ClassId cls = r.class_id(f[1], 2);
    const double f1 = r.real(f[2], 3, "f1");
    r.unit(f1, "f1");
    if (!entries.emplace(model, cls).second) {
      throw ParseError(src, line_no, 0,
                       "duplicate entry for (" + model + ", " + std::to_string(cls) + ")");
    }
    try {
      profile.set(model, cls, f1);
    } catch (const ValidationError& e) {
      throw ParseError(src, line_no, 1, e.what());
    }
    seen.insert(cls);
  });

  std::vector<ClassId> classes;
  if (labels != nullptr) {
    classes = labels->ids();
    for (ClassId c : seen) {
      if (!labels->contains(c)) {
        throw UnknownClassError(src + ": class id " + std::to_string(c) +
                                " not in label map");
      }
    }
  } else {
    classes.assign(seen.begin(), seen.end());
  }
  auto missing = profile.missing(classes);
  if (!missing.empty()) {
    std::string msg = src + ": incomplete skill profile, missing";
    for (const auto& [m, c] : missing) {
      msg += " (" + m + ", " + std::to_string(c) + ")";
    }
    throw IncompleteProfileError(msg, std::move(missing));
  }
  return profile;
}

std::string serialize_skill_profile(const ClassSkillProfile& profile) {
  std::string out;
  for (const auto& m : profile.models()) {
    for (ClassId c : profile.classes()) {
      if (!profile.has(m, c)) continue;
      out += m + "," + std::to_string(c) + "," + format_real(profile.f1(m, c)) + "\n";
    }
  }
  return out;
}

ClassSkillProfile reference_motherboard_profile() {
  // Ids follow motherboard_label_map().
  static const double kModelAF1[] = {0.987, 1.000, 0.907, 0.987, 0.926, 0.974,
                                     0.933, 0.900, 0.857, 0.667, 1.000};
  static const double kModelBF1[] = {0.895, 0.959, 0.000, 1.000, 0.851, 0.789,
                                     0.615, 0.900, 0.667, 0.462, 0.800};
  ClassSkillProfile p;
  for (int c = 0; c < 11; ++c) p.set(std::string(kModelA), c, kModelAF1[c]);
  for (int c = 0; c < 11; ++c) p.set(std::string(kModelB), c, kModelBF1[c]);
  return p;
}

// ---------------------------------------------------------------------------
// Key-value

std::vector<KvEntry> parse_key_values(std::string_view text,
                                      std::string_view source_name) {
  std::vector<KvEntry> out;
  const std::string src = name_or_input(source_name);
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(src, line_no, 0, "expected 'key = value'");
    }
    KvEntry e;
    e.key = std::string(trim(line.substr(0, eq)));
    e.value = std::string(trim(line.substr(eq + 1)));
    e.line = line_no;
    if (e.key.empty()) throw ParseError(src, line_no, 0, "empty key");
    out.push_back(std::move(e));
  });
  return out;
}

std::string serialize_key_values(std::span<const KvEntry> entries) {
  std::string out;
  for (const auto& e : entries) out += e.key + " = " + e.value + "\n";
  return out;
}

void set_param(CtvParams& p, std::string_view key, std::string_view value) {
  auto real = [&]() {
    auto v = parse_real(value);
    if (!v) {
      throw ParseError("", 0, 0,
                       "parameter " + std::string(key) + ": expected a number, got '" +
                           std::string(value) + "'");
    }
    return *v;
  };
  auto boolean = [&]() {
    bool b = false;
    if (!parse_bool(value, b)) {
      throw ParseError("", 0, 0,
                       "parameter " + std::string(key) + ": expected true/false, got '" +
                           std::string(value) + "'");
    }
    return b;
  };
  if (key == "t_iou") {
    p.t_iou = real();
  } else if (key == "gamma") {
    p.gamma = real();
  } else if (key == "f1_margin") {
    p.f1_margin = real();
  } else if (key == "conf_thresh") {
    p.conf_thresh = real();
  } else if (key == "solo_strong") {
    p.solo_strong = real();
  } else if (key == "near_tie_conf") {
    p.near_tie_conf = real();
  } else if (key == "nms_iou") {
    p.nms_iou = real();
  } else if (key == "fuse_coords") {
    p.fuse_coords = boolean();
  } else if (key == "high_conf_override") {
    p.high_conf_override = boolean();
  } else if (key.starts_with("model_conf_floor.") &&
             key.size() > std::string_view("model_conf_floor.").size()) {
    p.model_conf_floor[std::string(key.substr(17))] = real();
  } else {
    throw ParseError("", 0, 0, "unknown parameter '" + std::string(key) + "'");
  }
}

CtvParams params_from_key_values(std::span<const KvEntry> entries, CtvParams base,
                                 std::string_view source_name) {
  for (const auto& e : entries) {
    try {
      set_param(base, e.key, e.value);
    } catch (const ParseError& err) {
      std::string msg = err.what();
      const std::string prefix = "<input>:0: ";
      if (msg.starts_with(prefix)) msg = msg.substr(prefix.size());
      throw ParseError(name_or_input(source_name), e.line, 0, msg);
    }
  }
  return base;
}

std::vector<KvEntry> params_to_key_values(const CtvParams& p) {
  std::vector<KvEntry> out = {
      {"t_iou", format_real(p.t_iou), 0},
      {"gamma", format_real(p.gamma), 0},
      {"f1_margin", format_real(p.f1_margin), 0},
      {"conf_thresh", format_real(p.conf_thresh), 0},
      {"solo_strong", format_real(p.solo_strong), 0},
      {"near_tie_conf", format_real(p.near_tie_conf), 0},
      {"fuse_coords", p.fuse_coords ? "true" : "false", 0},
      {"nms_iou", format_real(p.nms_iou), 0},
      {"high_conf_override", p.high_conf_override ? "true" : "false", 0},
  };
  for (const auto& [model, floor] : p.model_conf_floor) {
    out.push_back({"model_conf_floor." + model, format_real(floor), 0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<std::string> DatasetManifest::condition_names() const {
  std::vector<std::string> out = {"N"};
  for (const auto& [name, _] : conditions) {
    if (name != "N") out.push_back(name);
  }
  return out;
}

fs::path DatasetManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir,
                               std::string_view source_name) {
  DatasetManifest m;
  m.base_dir = base_dir;
  const std::string src = name_or_input(source_name);
  std::set<std::string> image_ids;
  for (const auto& e : parse_key_values(text, src)) {
    auto fail = [&](const std::string& msg) -> void {
      throw ParseError(src, e.line, 0, msg);
    };
    if (e.key == "label") {
      const auto f = split_ws(e.value);
      if (f.size() != 2) fail("expected 'label = <id> <name>'");
      FieldReader r{src, e.line};
      const ClassId id = r.class_id(f[0], 1);
      try {
        m.labels.add(id, std::string(f[1]));
      } catch (const ValidationError& err) {
        fail(err.what());
      }
    } else if (e.key == "image") {
      const auto f = split_ws(e.value);
      if (f.size() != 3 && f.size() != 4) {
        fail("expected 'image = <id> <width> <height> [<path>]'");
      }
      FieldReader r{src, e.line};
      ImageEntry img;
      img.id = std::string(f[0]);
      const long long w = r.integer(f[1], 2, "width");
      const long long h = r.integer(f[2], 3, "height");
      if (w <= 0 || h <= 0 || w > 1'000'000 || h > 1'000'000) {
        throw RangeError(src, e.line, "image dimensions must be positive");
      }
      img.width = static_cast<int>(w);
      img.height = static_cast<int>(h);
      if (f.size() == 4) img.path = std::string(f[3]);
      if (!image_ids.insert(img.id).second) fail("duplicate image id '" + img.id + "'");
      m.images.push_back(std::move(img));
    } else if (e.key == "ground_truth") {
      m.ground_truth = e.value;
    } else if (e.key.starts_with("detections.") && e.key.size() > 11) {
      m.detections[e.key.substr(11)] = e.value;
    } else if (e.key.starts_with("condition.")) {
      const std::string rest = e.key.substr(10);
      const std::size_t dot = rest.find('.');
      if (dot == std::string::npos || dot == 0) fail("malformed condition key");
      const std::string name = rest.substr(0, dot);
      const std::string field = rest.substr(dot + 1);
      if (name == "N") fail("condition N is the base dataset");
      ConditionRefs& c = m.conditions[name];
      if (field == "ground_truth") {
        c.ground_truth = e.value;
      } else if (field == "images") {
        c.images = e.value;
      } else if (field.starts_with("detections.") && field.size() > 11) {
        c.detections[field.substr(11)] = e.value;
      } else {
        fail("unknown condition field '" + field + "'");
      }
    } else {
      fail("unknown manifest key '" + e.key + "'");
    }
  }
  return m;
}

std::string serialize_manifest(const DatasetManifest& m) {
  std::vector<KvEntry> kv;
  for (ClassId id : m.labels.ids()) {
    kv.push_back({"label", std::to_string(id) + " " + m.labels.name(id), 0});
  }
  for (const auto& img : m.images) {
    std::string v = img.id + " " + std::to_string(img.width) + " " +
                    std::to_string(img.height);
    if (!img.path.empty()) v += " " + img.path;
    kv.push_back({"image", v, 0});
  }
  if (!m.ground_truth.empty()) kv.push_back({"ground_truth", m.ground_truth, 0});
  for (const auto& [model, file] : m.detections) {
    kv.push_back({"detections." + model, file, 0});
  }
  for (const auto& [name, c] : m.conditions) {
    const std::string prefix = "condition." + name + ".";
    if (!c.ground_truth.empty()) kv.push_back({prefix + "ground_truth", c.ground_truth, 0});
    if (!c.images.empty()) kv.push_back({prefix + "images", c.images, 0});
    for (const auto& [model, file] : c.detections) {
      kv.push_back({prefix + "detections." + model, file, 0});
    }
  }
  return "# ctv dataset manifest\n" + serialize_key_values(kv);
}

DatasetManifest load_manifest(const fs::path& path) {
  DatasetManifest m = parse_manifest(read_text_file(path), path.parent_path(),
                                     path.string());
  auto require = [&](const std::string& rel, bool dir) {
    if (rel.empty()) return;
    const fs::path p = m.resolve(rel);
    const bool ok = dir ? fs::is_directory(p) : fs::is_regular_file(p);
    if (!ok) {
      throw IoError(path.string() + ": referenced " + (dir ? "directory" : "file") +
                    " not found: " + p.string());
    }
  };
  require(m.ground_truth, false);
  for (const auto& [_, f] : m.detections) require(f, false);
  for (const auto& img : m.images) require(img.path, false);
  for (const auto& [_, c] : m.conditions) {
    require(c.ground_truth, false);
    require(c.images, true);
    for (const auto& [__, f] : c.detections) require(f, false);
  }
  return m;
}

Dataset load_dataset(const DatasetManifest& m, const std::string& condition,
                     Diagnostics& diag) {
  const ConditionRefs* refs = nullptr;
  if (condition != "N") {
    auto it = m.conditions.find(condition);
    if (it == m.conditions.end()) {
      throw MissingSourceError("unknown condition '" + condition + "'");
    }
    refs = &it->second;
  }

  Dataset ds;
  ds.labels = m.labels;
  ds.condition = condition;
  std::map<std::string, std::size_t> index;
  for (const auto& e : m.images) {
    ImageRecord img;
    img.id = e.id;
    img.width = e.width;
    img.height = e.height;
    index[e.id] = ds.images.size();
    ds.images.push_back(std::move(img));
    fs::path p;
    if (!e.path.empty()) {
      p = m.resolve(e.path);
      if (refs != nullptr && !refs->images.empty()) {
        p = m.resolve(refs->images) / fs::path(e.path).filename();
      }
    }
    ds.image_paths.push_back(p);
  }

  auto lookup = [&](const std::string& id, const std::string& file,
                    std::size_t line) -> ImageRecord& {
    auto it = index.find(id);
    if (it == index.end()) {
      throw ValidationError(file + ":" + std::to_string(line) + ": image id '" + id +
                            "' not in manifest");
    }
    return ds.images[it->second];
  };
  auto check_class = [&](ClassId c, const std::string& file, std::size_t line) {
    if (!m.labels.empty() && !m.labels.contains(c)) {
      throw UnknownClassError(file + ":" + std::to_string(line) + ": class id " +
                              std::to_string(c) + " not in label map");
    }
  };

  std::string gt_file = m.ground_truth;
  if (refs != nullptr && !refs->ground_truth.empty()) gt_file = refs->ground_truth;
  if (!gt_file.empty()) {
    const fs::path p = m.resolve(gt_file);
    for (auto& rec : parse_canonical_ground_truth(read_text_file(p), p.string())) {
      check_class(rec.box.class_id, p.string(), rec.line);
      ImageRecord& img = lookup(rec.image_id, p.string(), rec.line);
      clamp_box(rec.box.box, img, p.string() + ":" + std::to_string(rec.line), diag);
      img.ground_truth.push_back(rec.box);
    }
  }

  const auto& det_files = refs != nullptr ? refs->detections : m.detections;
  for (const auto& [model, file] : det_files) {
    for (auto& img : ds.images) img.detections[model];
    const fs::path p = m.resolve(file);
    for (auto& rec : parse_canonical_detections(read_text_file(p), p.string(), model)) {
      check_class(rec.detection.class_id, p.string(), rec.line);
      ImageRecord& img = lookup(rec.image_id, p.string(), rec.line);
      clamp_box(rec.detection.box, img, p.string() + ":" + std::to_string(rec.line),
                diag);
      img.detections[model].push_back(std::move(rec.detection));
    }
  }
  return ds;
}

DatasetManifest write_dataset(const fs::path& dir, const LabelMap& labels,
                              std::span<const ImageRecord> images,
                              std::span<const std::string> image_paths) {
  fs::create_directories(dir / "detections");
  DatasetManifest m;
  m.base_dir = dir;
  m.labels = labels;
  std::vector<GroundTruthRecord> gts;
  std::map<std::string, std::vector<DetectionRecord>> dets;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageRecord& img = images[i];
    ImageEntry e{img.id, img.width, img.height, {}};
    if (i < image_paths.size()) e.path = image_paths[i];
    m.images.push_back(e);
    for (const auto& g : img.ground_truth) gts.push_back({img.id, g, 0});
    for (const auto& [model, list] : img.detections) {
      auto& out = dets[model];
      for (const auto& d : list) out.push_back({img.id, d, 0});
    }
  }
  write_text_file(dir / "ground_truth.csv", serialize_ground_truth(gts));
  m.ground_truth = "ground_truth.csv";
  for (const auto& [model, recs] : dets) {
    const std::string rel = "detections/" + model + ".csv";
    write_text_file(dir / rel, serialize_detections(recs));
    m.detections[model] = rel;
  }
  write_text_file(dir / "manifest.txt", serialize_manifest(m));
  return m;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Run store

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

std::string RunStore::commit(RunRecord record) {
  fs::create_directories(root_);
  if (record.timestamp.empty()) record.timestamp = utc_timestamp();

  const std::string params_text = serialize_key_values(params_to_key_values(record.params));
  const std::string profile_text = serialize_skill_profile(record.profile);
  std::uint64_t h = fnv1a(params_text);
  h = fnv1a(profile_text, h);
  h = fnv1a(record.report_csv, h);
  h = fnv1a(record.timestamp, h);

  std::string stamp;
  for (char c : record.timestamp) {
    if (std::isalnum(static_cast<unsigned char>(c))) stamp.push_back(c);
  }
  std::string id = stamp + "-" + hex64(h).substr(0, 8);
  for (int n = 1; fs::exists(root_ / id); ++n) {
    id = stamp + "-" + hex64(h).substr(0, 8) + "-" + std::to_string(n);
  }
  record.run_id = id;

  const fs::path tmp = root_ / (".tmp-" + id);
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  std::vector<KvEntry> kv = {{"run_id", record.run_id, 0},
                             {"timestamp", record.timestamp, 0},
                             {"manifest", record.manifest, 0},
                             {"condition", record.condition, 0},
                             {"source", record.source, 0}};
  for (const auto& [kind, n] : record.trace_counts) {
    kv.push_back({"trace." + kind, std::to_string(n), 0});
  }
  write_text_file(tmp / "record.kv", serialize_key_values(kv));
  write_text_file(tmp / "params.cfg", params_text);
  write_text_file(tmp / "profile.csv", profile_text);
  write_text_file(tmp / "report.csv", record.report_csv);

  std::error_code ec;
  fs::rename(tmp, root_ / id, ec);
  if (ec) throw IoError("cannot commit run " + id + ": " + ec.message());

  std::ofstream index(root_ / "index", std::ios::app);
  if (!index) throw IoError("cannot append to " + (root_ / "index").string());
  index << id << "\n";
  return id;
}

RunRecord RunStore::load(const std::string& run_id) const {
  const fs::path dir = root_ / run_id;
  if (run_id.empty() || run_id.find('/') != std::string::npos || !fs::is_directory(dir)) {
    throw IoError("unknown run '" + run_id + "'");
  }
  RunRecord r;
  const fs::path record_path = dir / "record.kv";
  for (const auto& e : parse_key_values(read_text_file(record_path), record_path.string())) {
    if (e.key == "run_id") {
      r.run_id = e.value;
    } else if (e.key == "timestamp") {
      r.timestamp = e.value;
    } else if (e.key == "manifest") {
      r.manifest = e.value;
    } else if (e.key == "condition") {
      r.condition = e.value;
    } else if (e.key == "source") {
      r.source = e.value;
    } else if (e.key.starts_with("trace.")) {
      auto n = parse_integer(e.value);
      if (!n || *n < 0) throw ParseError(record_path.string(), e.line, 0, "bad count");
      r.trace_counts[e.key.substr(6)] = static_cast<std::size_t>(*n);
    } else {
      throw ParseError(record_path.string(), e.line, 0, "unknown key '" + e.key + "'");
    }
  }
  const fs::path params_path = dir / "params.cfg";
  CtvParams base;
  base.model_conf_floor.clear();
  r.params = params_from_key_values(
      parse_key_values(read_text_file(params_path), params_path.string()), base,
      params_path.string());
  const fs::path profile_path = dir / "profile.csv";
  r.profile = parse_skill_profile(read_text_file(profile_path), nullptr,
                                  profile_path.string());
  r.report_csv = read_text_file(dir / "report.csv");
  return r;
}

std::vector<std::string> RunStore::list() const {
  std::vector<std::string> out;
  const fs::path index = root_ / "index";
  if (!fs::exists(index)) return out;
  std::istringstream in(read_text_file(index));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace ctv
