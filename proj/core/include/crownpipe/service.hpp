#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "crownpipe/image.hpp"
#include "crownpipe/labeling.hpp"
#include "crownpipe/project.hpp"

namespace crownpipe::service {

struct Request {
  std::string method;  // "GET", "POST", "OPTIONS"
  std::string path;
  std::string body;
  std::string origin;  // value of the Origin header, if any
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

struct Options {
  std::string host = "127.0.0.1";
  int port = 8964;
  std::filesystem::path webui_dir;  // served at "/" when it exists
  std::filesystem::path export_dir; // default <project>/export
  std::int64_t export_min_pixels = 25;
  Rgb fill = {0, 0, 0};
};

// Port from an explicit flag, else CROWNPIPE_PORT, else the default.
int resolve_port(std::optional<int> flag);

bool is_local_origin(const std::string& origin);

// HTTP labeling API over one project. Requests may arrive concurrently:
// readers share a lock, mutations go through a single writer at a time and
// are journaled to the project's label file before they are acknowledged.
class Service {
 public:
  Service(project::Project project, Options options);
  ~Service();

  // Transport-independent dispatch; `serve` wraps it in an HTTP server.
  Response handle(const Request& request);

  // Blocks until stop() is called. Throws IoError if the port is busy.
  void serve();
  void stop();
  // Port actually bound (useful with port 0), or 0 before serve() binds.
  int bound_port() const noexcept { return bound_port_.load(); }

 private:
  Response get_project();
  Response get_classes();
  Response get_ortho_png();
  Response get_segments_png();
  Response get_segment(const std::string& id_text);
  Response get_labels();
  Response post_label(const std::string& body);
  Response post_nn_run();
  Response post_merge(const std::string& body);
  Response post_export(const std::string& body);

  const labeling::FeatureTable& features_locked();

  project::Project project_;
  Options options_;
  mutable std::shared_mutex state_mutex_;  // guards project_ and caches
  std::mutex writer_mutex_;                // serializes mutations
  std::optional<labeling::FeatureTable> features_;
  std::vector<std::uint8_t> ortho_png_;
  std::vector<std::uint8_t> segments_png_;
  std::mutex cache_mutex_;

  struct ServerHandle;
  std::unique_ptr<ServerHandle> server_;
  std::atomic<int> bound_port_{0};
};

// Segment ids packed into 24-bit RGB (id = R*65536 + G*256 + B).
RgbImage encode_segment_ids(const segmentation::SegmentMap& map);
std::vector<segmentation::SegmentId> decode_segment_ids(const RgbImage& image);

}  // namespace crownpipe::service
