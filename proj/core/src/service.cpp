#include "crownpipe/service.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <set>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "crownpipe/dataset.hpp"
#include "crownpipe/error.hpp"

namespace crownpipe::service {

namespace fs = std::filesystem;
using nlohmann::json;
using segmentation::SegmentId;

struct Service::ServerHandle {
  httplib::Server server;
};

int resolve_port(std::optional<int> flag) {
  auto check = [](long p) {
    if (p < 0 || p > 65535) throw PreconditionError("port out of range: " + std::to_string(p));
    return static_cast<int>(p);
  };
  if (flag) return check(*flag);
  if (const char* env = std::getenv("CROWNPIPE_PORT"); env && *env) {
    long p = 0;
    const auto* end = env + std::strlen(env);
    const auto [ptr, ec] = std::from_chars(env, end, p);
    if (ec != std::errc{} || ptr != end) throw PreconditionError("CROWNPIPE_PORT is not a number");
    return check(p);
  }
  return 8964;
}

bool is_local_origin(const std::string& origin) {
  static const std::regex re(R"(^https?://(localhost|127\.0\.0\.1|\[::1\])(:\d{1,5})?$)");
  return std::regex_match(origin, re);
}

RgbImage encode_segment_ids(const segmentation::SegmentMap& map) {
  RgbImage img(map.width(), map.height());
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) {
      const auto id = static_cast<std::uint32_t>(map.at(x, y));
      img.set(x, y, {static_cast<std::uint8_t>(id >> 16), static_cast<std::uint8_t>(id >> 8),
                     static_cast<std::uint8_t>(id)});
    }
  return img;
}

std::vector<SegmentId> decode_segment_ids(const RgbImage& image) {
  std::vector<SegmentId> ids;
  ids.reserve(static_cast<std::size_t>(image.width()) * image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const auto c = image.at(x, y);
      ids.push_back(static_cast<SegmentId>(c[0] * 65536 + c[1] * 256 + c[2]));
    }
  return ids;
}

namespace {

Response json_response(const json& j, int status = 200) {
  return {status, "application/json", j.dump(), {}};
}

Response error_response(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  extra["status"] = status;
  return json_response(extra, status);
}

Response png_response(const std::vector<std::uint8_t>& bytes) {
  return {200, "image/png", std::string(bytes.begin(), bytes.end()), {}};
}

json record_json(SegmentId id, const labeling::LabelRecord& r) {
  return {{"segment", id},
          {"class", r.tree_class},
          {"provenance", std::string(labeling::to_string(r.provenance))},
          {"timestamp", r.timestamp}};
}

json grid_json(const raster::Grid& g) {
  return {{"width", g.width},
          {"height", g.height},
          {"origin_x", g.origin_x},
          {"origin_y", g.origin_y},
          {"pixel_size", g.pixel_size}};
}

std::optional<SegmentId> parse_id(const std::string& text) {
  SegmentId id = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return id;
}

std::optional<json> parse_body(const std::string& body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace

Service::Service(project::Project project, Options options)
    : project_(std::move(project)), options_(std::move(options)) {
  if (options_.export_dir.empty()) options_.export_dir = project_.dir() / "export";
}

Service::~Service() = default;

Response Service::handle(const Request& req) {
  Response res;
  try {
    static const std::regex segment_re(R"(^/api/segments/([^/]+)$)");
    std::smatch m;
    if (req.method == "OPTIONS") {
      res = {204, "text/plain", "", {}};
    } else if (req.method == "GET") {
      if (req.path == "/api/project") res = get_project();
      else if (req.path == "/api/classes") res = get_classes();
      else if (req.path == "/api/ortho.png") res = get_ortho_png();
      else if (req.path == "/api/segments.png") res = get_segments_png();
      else if (req.path == "/api/labels") res = get_labels();
      else if (std::regex_match(req.path, m, segment_re)) res = get_segment(m[1].str());
      else res = error_response(404, "no such endpoint: GET " + req.path);
    } else if (req.method == "POST") {
      if (req.path == "/api/labels") res = post_label(req.body);
      else if (req.path == "/api/nn/run") res = post_nn_run();
      else if (req.path == "/api/segments/merge") res = post_merge(req.body);
      else if (req.path == "/api/export") res = post_export(req.body);
      else res = error_response(404, "no such endpoint: POST " + req.path);
    } else {
      res = error_response(405, "method not allowed: " + req.method);
    }
  } catch (const UnknownSegmentError& e) {
    res = error_response(404, e.what(), {{"segment", e.id()}});
  } catch (const PreconditionError& e) {
    res = error_response(400, e.what());
  } catch (const std::exception& e) {
    res = error_response(500, e.what());
  }
  if (!req.origin.empty() && is_local_origin(req.origin)) {
    res.headers["Access-Control-Allow-Origin"] = req.origin;
    res.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
    res.headers["Access-Control-Allow-Headers"] = "Content-Type";
    res.headers["Vary"] = "Origin";
  }
  return res;
}

Response Service::get_project() {
  std::shared_lock lock(state_mutex_);
  const auto& map = project_.segments();
  std::size_t sample = 0, predicted = 0, corrected = 0;
  for (const auto& [id, r] : project_.labels().records()) {
    switch (r.provenance) {
      case labeling::Provenance::Sample: ++sample; break;
      case labeling::Provenance::Predicted: ++predicted; break;
      case labeling::Provenance::Corrected: ++corrected; break;
    }
  }
  json j;
  j["grid"] = grid_json(map.grid());
  j["segments"] = map.segment_count();
  j["labels"] = {{"sample", sample}, {"predicted", predicted}, {"corrected", corrected}};
  j["unlabeled"] = map.segment_count() - project_.labels().size();
  j["revision"] = project_.labels().revision();
  j["layers"] = json::array();
  for (const auto& layer : project_.stack().layers())
    j["layers"].push_back({{"name", layer.name}, {"weight", layer.weight}});
  j["classes"] = json::parse(labeling::legend_json());
  return json_response(j);
}

Response Service::get_classes() { return {200, "application/json", labeling::legend_json(), {}}; }

Response Service::get_ortho_png() {
  std::shared_lock lock(state_mutex_);
  std::lock_guard cache(cache_mutex_);
  if (ortho_png_.empty()) ortho_png_ = encode_png_rgb(project_.ortho().image);
  return png_response(ortho_png_);
}

Response Service::get_segments_png() {
  std::shared_lock lock(state_mutex_);
  std::lock_guard cache(cache_mutex_);
  if (segments_png_.empty()) segments_png_ = encode_png_rgb(encode_segment_ids(project_.segments()));
  return png_response(segments_png_);
}

Response Service::get_segment(const std::string& id_text) {
  const auto id = parse_id(id_text);
  if (!id) return error_response(400, "segment id must be an integer: " + id_text);
  std::shared_lock lock(state_mutex_);
  const auto& map = project_.segments();
  if (!map.contains(*id)) throw UnknownSegmentError(*id);
  const auto& s = map.stats(*id);
  json mean = json::object(), sd = json::object();
  for (int l = 0; l < raster::kLayerCount; ++l) {
    const std::string name(raster::kLayerNames[static_cast<std::size_t>(l)]);
    mean[name] = s.mean(l);
    sd[name] = s.stddev(l);
  }
  json neighbors = json::array();
  for (const auto& [nb, edges] : map.neighbors(*id)) neighbors.push_back(nb);
  json j = {{"id", *id},
            {"n", s.n},
            {"perimeter", s.perimeter},
            {"bbox", {{"x", s.bbox.x}, {"y", s.bbox.y}, {"w", s.bbox.w}, {"h", s.bbox.h}}},
            {"mean", mean},
            {"stddev", sd},
            {"neighbors", neighbors}};
  const auto* rec = project_.labels().find(*id);
  j["label"] = rec ? record_json(*id, *rec) : json(nullptr);
  return json_response(j);
}

Response Service::get_labels() {
  std::shared_lock lock(state_mutex_);
  json arr = json::array();
  for (const auto& [id, r] : project_.labels().records()) arr.push_back(record_json(id, r));
  return json_response({{"revision", project_.labels().revision()}, {"labels", arr}});
}

Response Service::post_label(const std::string& body) {
  const auto j = parse_body(body);
  if (!j || !j->contains("segment") || !j->contains("class") ||
      !(*j)["segment"].is_number_integer() || !(*j)["class"].is_number_integer())
    return error_response(400, R"(expected {"segment":int,"class":int})");
  const auto id = (*j)["segment"].get<SegmentId>();
  const auto cls = (*j)["class"].get<int>();
  if (!labeling::is_valid_class(cls))
    return error_response(400, "class must be in 1..7, got " + std::to_string(cls));

  std::lock_guard writer(writer_mutex_);
  std::unique_lock lock(state_mutex_);
  if (!project_.segments().contains(id)) throw UnknownSegmentError(id);
  auto store = project_.labels();
  const auto* prev = store.find(id);
  const bool was_predicted = prev && prev->provenance == labeling::Provenance::Predicted;
  const bool was_corrected = prev && prev->provenance == labeling::Provenance::Corrected;
  if (was_predicted || was_corrected) {
    labeling::apply_correction(store, project_.segments(), id, cls);
  } else {
    store.set_sample(id, cls);
  }
  store.append(project_.labels_path(), id);
  project_.labels() = std::move(store);
  return json_response(record_json(id, *project_.labels().find(id)));
}

const labeling::FeatureTable& Service::features_locked() {
  std::lock_guard cache(cache_mutex_);
  if (!features_) features_ = labeling::segment_features(project_.stack(), project_.segments());
  return *features_;
}

Response Service::post_nn_run() {
  std::lock_guard writer(writer_mutex_);
  // No other writer can run now, so the snapshot stays current while the
  // classification proceeds without blocking readers.
  labeling::LabelStore snapshot;
  const labeling::FeatureTable* features = nullptr;
  {
    std::shared_lock lock(state_mutex_);
    snapshot = project_.labels();
    features = &features_locked();
  }
  if (snapshot.sample_ids().empty())
    return error_response(409, "no human-labeled samples yet; label some segments first");
  const auto predictions = labeling::nn_classify(*features, snapshot);

  std::map<int, std::size_t> counts;
  for (const auto& tc : labeling::tree_classes()) counts[tc.id] = 0;
  for (const auto& [id, cls] : predictions) ++counts[cls];

  std::size_t changed = 0;
  {
    std::unique_lock lock(state_mutex_);
    auto next = project_.labels();
    changed = labeling::apply_predictions(next, predictions);
    next.save(project_.labels_path());
    project_.labels() = std::move(next);
  }
  json c = json::object();
  for (const auto& [cls, n] : counts) c[std::to_string(cls)] = n;
  return json_response({{"predicted", predictions.size()}, {"changed", changed}, {"counts", c}});
}

Response Service::post_merge(const std::string& body) {
  const auto j = parse_body(body);
  if (!j || !j->contains("ids") || !(*j)["ids"].is_array())
    return error_response(400, R"(expected {"ids":[int,...]})");
  std::set<SegmentId> ids;
  for (const auto& v : (*j)["ids"]) {
    if (!v.is_number_integer()) return error_response(400, "ids must be integers");
    ids.insert(v.get<SegmentId>());
  }
  if (ids.size() < 2) return error_response(400, "merge needs at least two distinct ids");

  std::lock_guard writer(writer_mutex_);
  std::unique_lock lock(state_mutex_);
  for (const auto id : ids)
    if (!project_.segments().contains(id)) throw UnknownSegmentError(id);
  auto merged = segmentation::manual_merge(project_.segments(), ids);
  const SegmentId survivor = *ids.begin();

  auto labels = project_.labels();
  json removed = json::array();
  for (const auto id : ids) {
    if (id == survivor) continue;
    labels.erase(id);
    removed.push_back(id);
  }
  project_.replace_segments(std::move(merged));
  labels.save(project_.labels_path());
  project_.labels() = std::move(labels);
  {
    std::lock_guard cache(cache_mutex_);
    features_.reset();
    segments_png_.clear();
  }
  const auto* rec = project_.labels().find(survivor);
  return json_response({{"id", survivor},
                        {"removed", removed},
                        {"n", project_.segments().stats(survivor).n},
                        {"label", rec ? record_json(survivor, *rec) : json(nullptr)}});
}

Response Service::post_export(const std::string& body) {
  std::int64_t min_pixels = options_.export_min_pixels;
  if (!body.empty()) {
    const auto j = parse_body(body);
    if (!j) return error_response(400, "export body must be a JSON object");
    if (j->contains("min_pixels")) {
      if (!(*j)["min_pixels"].is_number_integer())
        return error_response(400, "min_pixels must be an integer");
      min_pixels = (*j)["min_pixels"].get<std::int64_t>();
    }
  }

  std::lock_guard writer(writer_mutex_);
  std::shared_lock lock(state_mutex_);
  labeling::GroundTruth gt;
  try {
    gt = labeling::export_ground_truth(project_.segments(), project_.labels());
  } catch (const UnlabeledSegmentsError& e) {
    json ids = json::array();
    for (const auto id : e.ids()) ids.push_back(id);
    return error_response(409, e.what(), {{"unlabeled", ids}});
  }
  const auto& dir = options_.export_dir;
  fs::create_directories(dir);
  const auto raster_path = dir / "ground_truth.asc";
  const auto legend_path = dir / "legend.json";
  labeling::write_ground_truth(gt, raster_path, legend_path);

  auto crops = dataset::extract_all(project_.ortho().image, project_.segments(), project_.labels(),
                                    options_.fill);
  auto filtered = dataset::filter_crops(std::move(crops), min_pixels, {});
  const auto crops_dir = dir / "crops";
  if (fs::exists(crops_dir)) fs::remove_all(crops_dir);
  dataset::write_manifest(filtered.crops, crops_dir);

  json counts = json::object();
  for (const auto& [cls, cc] : filtered.report.per_class)
    counts[std::to_string(cls)] = {{"extracted", cc.before}, {"kept", cc.after}};
  return json_response({{"ground_truth", raster_path.string()},
                        {"legend", legend_path.string()},
                        {"manifest", (crops_dir / dataset::kManifestName).string()},
                        {"counts", counts},
                        {"warnings", filtered.report.warnings}});
}

void Service::serve() {
  server_ = std::make_unique<ServerHandle>();
  auto& svr = server_->server;
  auto forward = [this](const httplib::Request& hreq, httplib::Response& hres) {
    Request req{hreq.method, hreq.path, hreq.body, hreq.get_header_value("Origin")};
    const auto res = handle(req);
    hres.status = res.status;
    for (const auto& [k, v] : res.headers) hres.set_header(k, v);
    hres.set_content(res.body, res.content_type);
  };
  svr.Get(R"(/api/.*)", forward);
  svr.Post(R"(/api/.*)", forward);
  svr.Options(R"(/api/.*)", forward);
  if (!options_.webui_dir.empty() && fs::is_directory(options_.webui_dir))
    svr.set_mount_point("/", options_.webui_dir.string());

  int port = options_.port;
  if (port == 0) {
    port = svr.bind_to_any_port(options_.host);
    if (port < 0) throw IoError("cannot bind " + options_.host);
  } else if (!svr.bind_to_port(options_.host, port)) {
    throw IoError("cannot bind " + options_.host + ":" + std::to_string(port) +
                  " (port busy?)");
  }
  bound_port_ = port;
  svr.listen_after_bind();
  bound_port_ = 0;
}

void Service::stop() {
  if (server_) server_->server.stop();
}

}  // namespace crownpipe::service
