#pragma once

// HTTP facade for live parameter tuning. Handlers are plain methods returning
// a Response so they can be exercised without a socket; serve() binds them to
// an httplib server. Wire schema: docs/api.md.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "ctv/engine.hpp"
#include "ctv/ingest.hpp"

namespace httplib {
class Server;
}

namespace ctv {

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Everything a request may read. Immutable once published; reload swaps the
/// whole snapshot.
struct ServiceData {
  std::filesystem::path manifest_path;
  std::filesystem::path profile_path;
  DatasetManifest manifest;
  std::map<std::string, Dataset> conditions;  // by condition name
  ClassSkillProfile profile;
  CtvParams base_params;
  std::vector<std::string> warnings;
};

/// Loads the manifest and every condition it declares.
std::shared_ptr<const ServiceData> load_service_data(
    const std::filesystem::path& manifest_path,
    const std::filesystem::path& profile_path, const CtvParams& base_params);

/// Navigation only; never feeds into fusion or evaluation results.
struct SessionState {
  std::size_t cursor = 0;
  std::size_t stride = 1;
  CtvParams params;
};

class TunerService {
 public:
  explicit TunerService(CtvParams base_params = {});

  void publish(std::shared_ptr<const ServiceData> data);
  std::shared_ptr<const ServiceData> snapshot() const;
  SessionState session() const;

  Response list_images(std::size_t page, std::size_t page_size) const;
  Response image_detections(std::string_view id, std::string_view source,
                            std::string_view condition) const;
  Response image_pixels(std::string_view id, std::string_view condition) const;
  Response fuse(std::string_view body) const;
  Response evaluate(std::string_view body) const;
  Response params_defaults() const;
  Response profile() const;
  Response get_session() const;
  Response update_session(std::string_view body);
  Response reload(std::string_view body);

 private:
  CtvParams base_params_;
  mutable std::mutex data_mu_;
  std::shared_ptr<const ServiceData> data_;
  mutable std::mutex session_mu_;
  SessionState session_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
  double budget_ms = 200.0;  // slow requests are logged to stderr
};

/// Registers every route on `server`.
void install_routes(httplib::Server& server, TunerService& service,
                    const ServeOptions& options);

/// Blocks until the server stops. Returns false if the port could not be bound.
bool serve(TunerService& service, const ServeOptions& options);

}  // namespace ctv
