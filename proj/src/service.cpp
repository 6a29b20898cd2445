#include "ctv/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <set>

#include "ctv/errors.hpp"
#include "ctv/harness.hpp"
#include "ctv/metrics.hpp"
#include "ctv/perturb.hpp"

namespace ctv {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Response json_response(int status, const json& body) {
  return {status, body.dump(), "application/json"};
}

Response error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}, {"status", status}});
}

int status_for(const Error& e) {
  if (dynamic_cast<const InvalidParamsError*>(&e)) return 422;
  if (dynamic_cast<const MissingSourceError*>(&e)) return 404;
  switch (e.family()) {
    case ErrorFamily::kParse:
      return 400;
    case ErrorFamily::kValidation:
      return 422;
    case ErrorFamily::kGrid:
      return 413;
    case ErrorFamily::kIo:
      return 404;
  }
  return 500;
}

Response from_error(const Error& e) {
  if (auto* inv = dynamic_cast<const InvalidParamsError*>(&e)) {
    json fields = json::array();
    for (const auto& i : inv->issues()) {
      fields.push_back({{"field", i.field}, {"message", i.message}});
    }
    return json_response(422, {{"error", "invalid parameters"}, {"status", 422},
                               {"fields", fields}});
  }
  return error_response(status_for(e), e.what());
}

// Runs a handler, turning library errors into status codes.
template <typename Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    return error_response(400, std::string("bad request body: ") + e.what());
  } catch (const Error& e) {
    return from_error(e);
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

json parse_body(std::string_view body) {
  if (body.find_first_not_of(" \t\r\n") == std::string_view::npos) return json::object();
  json j = json::parse(body);
  if (!j.is_object()) throw ParseError("request", 0, 0, "body must be a JSON object");
  return j;
}

json real_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

std::string strip_input_prefix(std::string msg) {
  const std::string prefix = "<input>:0: ";
  if (msg.starts_with(prefix)) msg.erase(0, prefix.size());
  return msg;
}

std::string json_scalar_text(const json& v) {
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return format_real(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  throw ParseError("", 0, 0, "expected a number, boolean or string");
}

// Applies a JSON object of overrides; every bad field is reported at once.
CtvParams apply_overrides(const CtvParams& base, const json& overrides) {
  CtvParams p = base;
  if (overrides.is_null()) {
    validate(p);
    return p;
  }
  if (!overrides.is_object()) {
    throw InvalidParamsError(std::vector<FieldIssue>{{"params", "must be an object"}});
  }
  std::vector<FieldIssue> issues;
  auto set_one = [&](const std::string& key, const json& v) {
    try {
      set_param(p, key, json_scalar_text(v));
    } catch (const ParseError& e) {
      issues.push_back({key, strip_input_prefix(e.what())});
    }
  };
  for (const auto& [key, v] : overrides.items()) {
    if (key == "model_conf_floor" && v.is_object()) {
      for (const auto& [model, f] : v.items()) set_one("model_conf_floor." + model, f);
    } else {
      set_one(key, v);
    }
  }
  try {
    validate(p);
  } catch (const InvalidParamsError& e) {
    for (const auto& i : e.issues()) issues.push_back(i);
  }
  if (!issues.empty()) throw InvalidParamsError(std::move(issues));
  return p;
}

json params_json(const CtvParams& p) {
  json floors = json::object();
  for (const auto& [m, v] : p.model_conf_floor) floors[m] = real_json(v);
  return {{"t_iou", real_json(p.t_iou)},
          {"gamma", real_json(p.gamma)},
          {"f1_margin", real_json(p.f1_margin)},
          {"conf_thresh", real_json(p.conf_thresh)},
          {"solo_strong", real_json(p.solo_strong)},
          {"near_tie_conf", real_json(p.near_tie_conf)},
          {"nms_iou", real_json(p.nms_iou)},
          {"fuse_coords", p.fuse_coords},
          {"high_conf_override", p.high_conf_override},
          {"model_conf_floor", floors}};
}

std::string class_name(const LabelMap& labels, ClassId c) {
  return labels.contains(c) ? labels.name(c) : std::string();
}

json box_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

json detection_json(const Detection& d, const LabelMap& labels) {
  return {{"class_id", d.class_id},
          {"class_name", class_name(labels, d.class_id)},
          {"confidence", d.confidence},
          {"box", box_json(d.box)},
          {"source", d.source}};
}

json trace_json(const DecisionTrace& t) {
  json sources = json::array();
  for (const auto& s : t.sources) sources.push_back({{"model", s.model}, {"index", s.index}});
  json out = {{"kind", to_string(t.kind)}, {"sources", sources}, {"scores", t.scores},
              {"zero_weight", t.zero_weight}};
  if (t.kind == TraceKind::kDroppedNms) out["candidate_kind"] = to_string(t.candidate_kind);
  return out;
}

struct Located {
  const Dataset* dataset = nullptr;
  std::size_t index = 0;
};

// 404s for unknown condition or image id are raised as MissingSourceError.
Located locate(const ServiceData& data, std::string_view id, std::string_view condition) {
  const std::string cond = condition.empty() ? "N" : std::string(condition);
  auto it = data.conditions.find(cond);
  if (it == data.conditions.end()) {
    throw MissingSourceError("unknown condition '" + cond + "'");
  }
  const auto& images = it->second.images;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].id == id) return {&it->second, i};
  }
  throw MissingSourceError("unknown image id '" + std::string(id) + "'");
}

Response no_manifest() { return error_response(409, "no manifest loaded"); }

json counts_json(const Counts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}}; }

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::shared_ptr<const ServiceData> load_service_data(const fs::path& manifest_path,
                                                     const fs::path& profile_path,
                                                     const CtvParams& base_params) {
  validate(base_params);
  auto data = std::make_shared<ServiceData>();
  data->manifest_path = manifest_path;
  data->profile_path = profile_path;
  data->manifest = load_manifest(manifest_path);
  data->profile = load_profile(data->manifest, profile_path);
  data->base_params = base_params;
  Diagnostics diag;
  for (const auto& name : data->manifest.condition_names()) {
    data->conditions.emplace(name, load_dataset(data->manifest, name, diag));
  }
  data->warnings = std::move(diag.warnings);
  return data;
}

TunerService::TunerService(CtvParams base_params) : base_params_(std::move(base_params)) {
  validate(base_params_);
  session_.params = base_params_;
}

void TunerService::publish(std::shared_ptr<const ServiceData> data) {
  std::size_t n = 0;
  if (data) n = data->conditions.at("N").images.size();
  {
    std::lock_guard lock(data_mu_);
    data_ = std::move(data);
  }
  std::lock_guard lock(session_mu_);
  if (session_.cursor >= n) session_.cursor = n == 0 ? 0 : n - 1;
}

std::shared_ptr<const ServiceData> TunerService::snapshot() const {
  std::lock_guard lock(data_mu_);
  return data_;
}

SessionState TunerService::session() const {
  std::lock_guard lock(session_mu_);
  return session_;
}

Response TunerService::list_images(std::size_t page, std::size_t page_size) const {
  const auto data = snapshot();
  if (!data) return no_manifest();
  if (page == 0) return error_response(400, "page is 1-based");
  if (page_size == 0 || page_size > 1000) {
    return error_response(400, "page_size must be in [1, 1000]");
  }
  const auto& entries = data->manifest.images;
  const std::size_t total = entries.size();
  const std::size_t pages = (total + page_size - 1) / page_size;

  std::vector<std::string> all_conditions = data->manifest.condition_names();
  json images = json::array();
  const std::size_t begin = std::min(total, (page - 1) * page_size);
  const std::size_t end = std::min(total, begin + page_size);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& e = entries[i];
    images.push_back({{"id", e.id},
                      {"width", e.width},
                      {"height", e.height},
                      {"has_pixels", !e.path.empty()},
                      {"conditions", all_conditions}});
  }
  return json_response(200, {{"total", total},
                             {"page", page},
                             {"page_size", page_size},
                             {"pages", pages},
                             {"conditions", all_conditions},
                             {"images", images}});
}

Response TunerService::image_detections(std::string_view id, std::string_view source,
                                        std::string_view condition) const {
  return guarded([&] {
    const auto data = snapshot();
    if (!data) return no_manifest();
    if (source.empty()) return error_response(400, "missing 'source' query parameter");
    const Located loc = locate(*data, id, condition);
    const ImageRecord& img = loc.dataset->images[loc.index];
    const LabelMap& labels = data->manifest.labels;

    json dets = json::array();
    if (source == "GT") {
      for (const auto& g : img.ground_truth) {
        dets.push_back({{"class_id", g.class_id},
                        {"class_name", class_name(labels, g.class_id)},
                        {"box", box_json(g.box)}});
      }
    } else if (source == kEnsembleSource) {
      const FusionResult r = ctv_fuse(img, data->profile, data->base_params);
      for (const auto& f : r.detections) dets.push_back(detection_json(f.detection, labels));
    } else {
      const auto& models = data->profile.models();
      const bool known = img.detections.contains(std::string(source)) ||
                         std::find(models.begin(), models.end(), source) != models.end();
      if (!known) return error_response(404, "unknown source '" + std::string(source) + "'");
      auto it = img.detections.find(std::string(source));
      if (it != img.detections.end()) {
        for (const auto& d : it->second) dets.push_back(detection_json(d, labels));
      }
    }
    return json_response(200, {{"image_id", img.id},
                               {"condition", loc.dataset->condition},
                               {"source", source},
                               {"width", img.width},
                               {"height", img.height},
                               {"detections", dets}});
  });
}

Response TunerService::image_pixels(std::string_view id, std::string_view condition) const {
  return guarded([&] {
    const auto data = snapshot();
    if (!data) return no_manifest();
    const Located loc = locate(*data, id, condition);
    const ImageRecord& img = loc.dataset->images[loc.index];
    const fs::path& path = loc.dataset->image_paths[loc.index];
    const Image pixels = !path.empty() && fs::exists(path)
                             ? read_image(path)
                             : render_scene(img, data->manifest.labels);
    const auto png = encode_png(pixels);
    return Response{200, std::string(png.begin(), png.end()), "image/png"};
  });
}

Response TunerService::fuse(std::string_view body) const {
  return guarded([&] {
    const auto data = snapshot();
    if (!data) return no_manifest();
    const json req = parse_body(body);
    if (!req.contains("image_id") || !req["image_id"].is_string()) {
      return error_response(400, "'image_id' (string) is required");
    }
    const CtvParams params =
        apply_overrides(data->base_params, req.value("params", json(nullptr)));
    const Located loc = locate(*data, req["image_id"].get<std::string>(),
                               req.value("condition", std::string("N")));
    const ImageRecord& img = loc.dataset->images[loc.index];
    const FusionResult r = ctv_fuse(img, data->profile, params);

    json dets = json::array();
    for (const auto& f : r.detections) {
      json d = detection_json(f.detection, data->manifest.labels);
      d["trace"] = trace_json(f.trace);
      dets.push_back(std::move(d));
    }
    json dropped = json::array();
    for (const auto& t : r.dropped) dropped.push_back(trace_json(t));
    json counts = json::object();
    for (TraceKind k : kAllTraceKinds) counts[std::string(to_string(k))] = 0;
    for (const auto& [k, n] : r.count_by_kind()) counts[std::string(to_string(k))] = n;
    return json_response(200, {{"image_id", img.id},
                               {"condition", loc.dataset->condition},
                               {"params", params_json(params)},
                               {"warnings", validate(params)},
                               {"detections", dets},
                               {"dropped", dropped},
                               {"trace_counts", counts}});
  });
}

Response TunerService::evaluate(std::string_view body) const {
  return guarded([&] {
    const auto data = snapshot();
    if (!data) return no_manifest();
    const json req = parse_body(body);
    const CtvParams params =
        apply_overrides(data->base_params, req.value("params", json(nullptr)));
    const std::string cond = req.value("condition", std::string("N"));
    const std::string source = req.value("source", std::string(kEnsembleSource));
    auto it = data->conditions.find(cond);
    if (it == data->conditions.end()) {
      return error_response(404, "unknown condition '" + cond + "'");
    }
    const LabelMap& labels = data->manifest.labels;
    const EvalReport rep =
        evaluate_source(it->second.images, labels, source, data->profile, params);

    json per_class = json::array();
    for (const auto& [c, m] : rep.per_class) {
      per_class.push_back({{"class_id", c},
                           {"class_name", class_name(labels, c)},
                           {"ap50", optional_json(m.ap50)},
                           {"ap50_95", optional_json(m.ap50_95)},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1},
                           {"counts", counts_json(m.counts)}});
    }
    json confusion = {{"classes", rep.confusion.classes}, {"cells", rep.confusion.cells}};
    return json_response(200, {{"source", rep.source},
                               {"condition", cond},
                               {"params", params_json(params)},
                               {"map50", rep.map50},
                               {"map50_95", rep.map50_95},
                               {"precision", rep.micro_precision},
                               {"recall", rep.micro_recall},
                               {"f1", rep.micro_f1},
                               {"macro_f1", rep.macro_f1},
                               {"counts", counts_json(rep.errors.total)},
                               {"per_class", per_class},
                               {"confusion", confusion},
                               {"report_csv", report_csv(rep, labels)}});
  });
}

Response TunerService::params_defaults() const {
  const auto data = snapshot();
  return json_response(200, {{"defaults", params_json(CtvParams{})},
                             {"base", params_json(data ? data->base_params : base_params_)}});
}

Response TunerService::profile() const {
  const auto data = snapshot();
  if (!data) return no_manifest();
  json entries = json::array();
  for (const auto& m : data->profile.models()) {
    for (ClassId c : data->profile.classes()) {
      if (!data->profile.has(m, c)) continue;
      entries.push_back({{"model", m},
                         {"class_id", c},
                         {"class_name", class_name(data->manifest.labels, c)},
                         {"f1", data->profile.f1(m, c)}});
    }
  }
  return json_response(200, {{"models", data->profile.models()}, {"entries", entries}});
}

Response TunerService::get_session() const {
  const auto data = snapshot();
  const SessionState s = session();
  json out = {{"cursor", s.cursor}, {"stride", s.stride}, {"params", params_json(s.params)}};
  if (data) {
    const auto& images = data->manifest.images;
    out["total"] = images.size();
    out["image_id"] = images.empty() ? json(nullptr) : json(images[s.cursor].id);
  } else {
    out["total"] = 0;
    out["image_id"] = nullptr;
  }
  return json_response(200, out);
}

Response TunerService::update_session(std::string_view body) {
  bool at_end = false;
  Response r = guarded([&] {
    const auto data = snapshot();
    const std::size_t n = data ? data->manifest.images.size() : 0;
    const json req = parse_body(body);
    std::lock_guard lock(session_mu_);
    SessionState next = session_;
    if (req.contains("stride")) {
      const json& v = req["stride"];
      if (!v.is_number_integer() || v.get<long long>() < 1) {
        throw InvalidParamsError(std::vector<FieldIssue>{{"stride", "must be an integer >= 1"}});
      }
      next.stride = v.get<std::size_t>();
    }
    if (req.contains("cursor")) {
      const json& v = req["cursor"];
      if (!v.is_number_integer() || v.get<long long>() < 0 ||
          (v.get<std::size_t>() >= n && !(n == 0 && v.get<long long>() == 0))) {
        throw InvalidParamsError(std::vector<FieldIssue>{{"cursor", "must be within [0, " + std::to_string(n) + ")"}});
      }
      next.cursor = v.get<std::size_t>();
    }
    if (req.contains("params")) next.params = apply_overrides(next.params, req["params"]);
    const std::string action = req.value("action", std::string());
    if (action == "next") {
      if (next.cursor + next.stride < n) {
        next.cursor += next.stride;
      } else {
        at_end = true;
      }
    } else if (action == "prev") {
      next.cursor = next.cursor >= next.stride ? next.cursor - next.stride : 0;
    } else if (action == "reset" || action == "stop") {
      next.cursor = 0;
    } else if (!action.empty()) {
      return error_response(400, "unknown action '" + action + "'");
    }
    session_ = next;
    return Response{};
  });
  if (r.status != 200) return r;
  Response s = get_session();
  json out = json::parse(s.body);
  out["at_end"] = at_end;
  return json_response(200, out);
}

Response TunerService::reload(std::string_view body) {
  return guarded([&] {
    const json req = parse_body(body);
    const auto current = snapshot();
    fs::path manifest = current ? current->manifest_path : fs::path();
    fs::path profile = current ? current->profile_path : fs::path();
    if (req.contains("manifest")) {
      manifest = req["manifest"].get<std::string>();
      if (!req.contains("profile")) profile.clear();
    }
    if (req.contains("profile")) profile = req["profile"].get<std::string>();
    if (manifest.empty()) return error_response(400, "no manifest path to load");
    // Build the new snapshot completely before swapping it in.
    auto data = load_service_data(manifest, profile, base_params_);
    const std::size_t n = data->manifest.images.size();
    const std::size_t warnings = data->warnings.size();
    publish(std::move(data));
    return json_response(200, {{"manifest", manifest.string()},
                               {"images", n},
                               {"warnings", warnings}});
  });
}

// ---------------------------------------------------------------------------

void install_routes(httplib::Server& server, TunerService& service,
                    const ServeOptions& options) {
  server.set_default_headers({
      {"Access-Control-Allow-Origin", options.cors_origin},
      {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
      {"Access-Control-Allow-Headers", "Content-Type"},
  });
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });

  const double budget = options.budget_ms;
  auto wrap = [budget](auto handler) {
    return [handler, budget](const httplib::Request& req, httplib::Response& res) {
      const auto t0 = std::chrono::steady_clock::now();
      const Response r = handler(req);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      res.status = r.status;
      res.set_content(r.body, r.content_type);
      res.set_header("X-Elapsed-Ms", format_real(std::round(ms * 1000.0) / 1000.0));
      if (ms > budget && req.path != "/api/evaluate") {
        std::cerr << "slow request: " << req.method << " " << req.path << " " << ms
                  << " ms (budget " << budget << " ms)\n";
      }
    };
  };
  auto size_param = [](const httplib::Request& req, const char* key, std::size_t fallback) {
    if (!req.has_param(key)) return std::optional<std::size_t>(fallback);
    auto v = parse_integer(req.get_param_value(key));
    if (!v || *v < 0) return std::optional<std::size_t>();
    return std::optional<std::size_t>(static_cast<std::size_t>(*v));
  };

  server.Get("/api/images", wrap([&service, size_param](const httplib::Request& req) {
               auto page = size_param(req, "page", 1);
               auto size = size_param(req, "page_size", 50);
               if (!page || !size) return error_response(400, "page and page_size must be integers");
               return service.list_images(*page, *size);
             }));
  server.Get(R"(/api/images/([^/]+)/detections)",
             wrap([&service](const httplib::Request& req) {
               return service.image_detections(req.matches[1].str(),
                                               req.get_param_value("source"),
                                               req.get_param_value("condition"));
             }));
  server.Get(R"(/api/images/([^/]+)/pixels)", wrap([&service](const httplib::Request& req) {
               return service.image_pixels(req.matches[1].str(),
                                           req.get_param_value("condition"));
             }));
  server.Post("/api/fuse",
              wrap([&service](const httplib::Request& req) { return service.fuse(req.body); }));
  server.Post("/api/evaluate", wrap([&service](const httplib::Request& req) {
                return service.evaluate(req.body);
              }));
  server.Get("/api/params/defaults",
             wrap([&service](const httplib::Request&) { return service.params_defaults(); }));
  server.Get("/api/profile",
             wrap([&service](const httplib::Request&) { return service.profile(); }));
  server.Get("/api/session",
             wrap([&service](const httplib::Request&) { return service.get_session(); }));
  server.Post("/api/session", wrap([&service](const httplib::Request& req) {
                return service.update_session(req.body);
              }));
  server.Post("/api/reload", wrap([&service](const httplib::Request& req) {
                return service.reload(req.body);
              }));
}

bool serve(TunerService& service, const ServeOptions& options) {
  httplib::Server server;
  install_routes(server, service, options);
  return server.listen(options.host, options.port);
}

}  // namespace ctv
