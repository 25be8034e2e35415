#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "crownpipe/project.hpp"
#include "crownpipe/service.hpp"
#include "crownpipe/synthetic.hpp"
#include "test_support.hpp"

using namespace crownpipe;
using namespace crownpipe::service;
using nlohmann::json;
using crownpipe::testing::TempDir;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    scene_dir_ = new TempDir;
    synthetic::SceneSpec spec;
    spec.size = 128;
    spec.seed = 3;
    paths_ = synthetic::write_scene(synthetic::generate_scene(spec), scene_dir_->path());
  }
  static void TearDownTestSuite() {
    delete scene_dir_;
    scene_dir_ = nullptr;
  }

  void SetUp() override {
    project::create_project(dir_.path(), paths_.ortho, paths_.dem, {},
                            raster::kDefaultLayerWeights, segmentation::MergeParams{});
    service_ = std::make_unique<Service>(project::Project::load(dir_.path()), Options{});
  }

  Response get(const std::string& path) { return service_->handle({"GET", path, "", ""}); }
  Response post(const std::string& path, const json& body) {
    return service_->handle({"POST", path, body.dump(), ""});
  }
  json get_json(const std::string& path) {
    const auto r = get(path);
    EXPECT_EQ(r.status, 200) << path << ": " << r.body;
    return json::parse(r.body);
  }
  std::vector<int> segment_ids() {
    std::vector<int> ids;
    const auto n = get_json("/api/project")["segments"].get<int>();
    for (int i = 1; i <= n; ++i) ids.push_back(i);
    return ids;
  }
  void restart() {
    service_.reset();
    service_ = std::make_unique<Service>(project::Project::load(dir_.path()), Options{});
  }

  static TempDir* scene_dir_;
  static synthetic::ScenePaths paths_;
  TempDir dir_;
  std::unique_ptr<Service> service_;
};

TempDir* ServiceTest::scene_dir_ = nullptr;
synthetic::ScenePaths ServiceTest::paths_;

}  // namespace

TEST_F(ServiceTest, ProjectSummary) {
  const auto j = get_json("/api/project");
  EXPECT_EQ(j["grid"]["width"], 128);
  EXPECT_EQ(j["grid"]["pixel_size"], 0.05);
  EXPECT_GT(j["segments"].get<int>(), 1);
  EXPECT_EQ(j["unlabeled"], j["segments"]);
  EXPECT_EQ(j["layers"].size(), 5u);
  EXPECT_EQ(j["layers"][4]["weight"], 3.0);
  EXPECT_EQ(get_json("/api/classes").size(), 7u);
}

TEST_F(ServiceTest, PngEndpointsDecode) {
  const auto ortho = get("/api/ortho.png");
  EXPECT_EQ(ortho.content_type, "image/png");
  const std::vector<std::uint8_t> ob(ortho.body.begin(), ortho.body.end());
  EXPECT_EQ(decode_png_rgb(ob), read_png_rgb(paths_.ortho));

  const auto seg = get("/api/segments.png");
  const std::vector<std::uint8_t> sb(seg.body.begin(), seg.body.end());
  const auto ids = decode_segment_ids(decode_png_rgb(sb));
  const auto map = project::Project::load(dir_.path()).segments();
  EXPECT_TRUE(std::equal(ids.begin(), ids.end(), map.labels().begin(), map.labels().end()));
}

TEST_F(ServiceTest, SegmentIdCodecCoversLargeIds) {
  std::vector<segmentation::SegmentId> ids = {0, 1, 255, 256, 65535, 65536, 16777215};
  RgbImage img(7, 1);
  for (int i = 0; i < 7; ++i) {
    const auto v = static_cast<std::uint32_t>(ids[i]);
    img.set(i, 0, {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
                   static_cast<std::uint8_t>(v)});
  }
  EXPECT_EQ(decode_segment_ids(img), ids);
}

TEST_F(ServiceTest, SegmentDetailsAndErrors) {
  const auto j = get_json("/api/segments/1");
  EXPECT_EQ(j["id"], 1);
  EXPECT_EQ(j["mean"].size(), 5u);
  EXPECT_TRUE(j["label"].is_null());
  const auto missing = get("/api/segments/99999");
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(json::parse(missing.body)["segment"], 99999);
  EXPECT_EQ(get("/api/segments/abc").status, 400);
  EXPECT_EQ(get("/api/nothing").status, 404);
  EXPECT_EQ(service_->handle({"DELETE", "/api/labels", "", ""}).status, 405);
}

TEST_F(ServiceTest, LabelPostValidation) {
  EXPECT_EQ(service_->handle({"POST", "/api/labels", "not json", ""}).status, 400);
  EXPECT_EQ(post("/api/labels", {{"segment", 1}}).status, 400);
  EXPECT_EQ(post("/api/labels", {{"segment", 1}, {"class", 8}}).status, 400);
  EXPECT_EQ(post("/api/labels", {{"segment", "1"}, {"class", 2}}).status, 400);
  const auto unknown = post("/api/labels", {{"segment", 123456}, {"class", 2}});
  EXPECT_EQ(unknown.status, 404);
  EXPECT_EQ(json::parse(unknown.body)["segment"], 123456);
  EXPECT_TRUE(get_json("/api/labels")["labels"].empty());
}

TEST_F(ServiceTest, NnRunNeedsSamplesAndNeverTouchesHumanRecords) {
  EXPECT_EQ(post("/api/nn/run", json::object()).status, 409);
  const auto ids = segment_ids();
  ASSERT_GE(ids.size(), 4u);
  auto r = post("/api/labels", {{"segment", ids[0]}, {"class", 7}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["provenance"], "sample");
  ASSERT_EQ(post("/api/labels", {{"segment", ids[1]}, {"class", 4}}).status, 200);

  const auto run = json::parse(post("/api/nn/run", json::object()).body);
  EXPECT_EQ(run["predicted"], ids.size() - 2);
  EXPECT_EQ(run["changed"], ids.size() - 2);

  // Correcting a prediction makes it a human record.
  const auto corr = json::parse(post("/api/labels", {{"segment", ids[2]}, {"class", 1}}).body);
  EXPECT_EQ(corr["provenance"], "corrected");
  post("/api/nn/run", json::object());
  const auto labels = get_json("/api/labels")["labels"];
  EXPECT_EQ(labels.size(), ids.size());
  for (const auto& l : labels) {
    if (l["segment"] == ids[0]) { EXPECT_EQ(l["class"], 7); }
    if (l["segment"] == ids[1]) { EXPECT_EQ(l["class"], 4); }
    if (l["segment"] == ids[2]) {
      EXPECT_EQ(l["class"], 1);
      EXPECT_EQ(l["provenance"], "corrected");
    }
  }
  EXPECT_EQ(get_json("/api/project")["unlabeled"], 0);
}

TEST_F(ServiceTest, LabelsSurviveRestart) {
  const auto ids = segment_ids();
  post("/api/labels", {{"segment", ids[0]}, {"class", 2}});
  post("/api/labels", {{"segment", ids[1]}, {"class", 7}});
  post("/api/nn/run", json::object());
  post("/api/labels", {{"segment", ids[3]}, {"class", 6}});
  const auto before = get_json("/api/labels")["labels"];
  restart();
  const auto after = get_json("/api/labels")["labels"];
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i]["segment"], after[i]["segment"]);
    EXPECT_EQ(before[i]["class"], after[i]["class"]);
    EXPECT_EQ(before[i]["provenance"], after[i]["provenance"]);
  }
}

TEST_F(ServiceTest, MergeKeepsLowestIdAndDropsOtherLabels) {
  const auto seg = get_json("/api/segments/2");
  const int nb = seg["neighbors"][0].get<int>();
  const int lo = std::min(2, nb), hi = std::max(2, nb);
  post("/api/labels", {{"segment", lo}, {"class", 3}});
  post("/api/labels", {{"segment", hi}, {"class", 5}});
  const int n_lo = get_json("/api/segments/" + std::to_string(lo))["n"];
  const int n_hi = get_json("/api/segments/" + std::to_string(hi))["n"];
  const auto segments_before = get_json("/api/project")["segments"].get<int>();

  const auto r = post("/api/segments/merge", {{"ids", {hi, lo}}});
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["id"], lo);
  EXPECT_EQ(j["n"], n_lo + n_hi);
  EXPECT_EQ(j["label"]["class"], 3);
  EXPECT_EQ(get_json("/api/project")["segments"], segments_before - 1);
  EXPECT_EQ(get("/api/segments/" + std::to_string(hi)).status, 404);

  // The rewritten segment raster is what a restart sees.
  restart();
  EXPECT_EQ(get_json("/api/segments/" + std::to_string(lo))["n"], n_lo + n_hi);
  EXPECT_EQ(post("/api/segments/merge", {{"ids", {lo}}}).status, 400);
  EXPECT_EQ(post("/api/segments/merge", {{"ids", {lo, 999999}}}).status, 404);
}

TEST_F(ServiceTest, ExportNeedsEveryLabelThenWritesArtifacts) {
  const auto ids = segment_ids();
  post("/api/labels", {{"segment", ids[0]}, {"class", 7}});
  const auto refused = post("/api/export", json::object());
  EXPECT_EQ(refused.status, 409);
  EXPECT_EQ(json::parse(refused.body)["unlabeled"].size(), ids.size() - 1);

  post("/api/labels", {{"segment", ids[1]}, {"class", 2}});
  post("/api/nn/run", json::object());
  const auto ok = post("/api/export", {{"min_pixels", 0}});
  ASSERT_EQ(ok.status, 200) << ok.body;
  const auto j = json::parse(ok.body);
  EXPECT_TRUE(std::filesystem::exists(j["ground_truth"].get<std::string>()));
  EXPECT_TRUE(std::filesystem::exists(j["legend"].get<std::string>()));
  EXPECT_TRUE(std::filesystem::exists(j["manifest"].get<std::string>()));

  // The exported raster equals the library export of the persisted labels.
  const auto project = project::Project::load(dir_.path());
  const auto want = labeling::export_ground_truth(project.segments(), project.labels());
  EXPECT_EQ(labeling::read_ground_truth(j["ground_truth"].get<std::string>()), want);
  EXPECT_EQ(post("/api/export", {{"min_pixels", "x"}}).status, 400);
}

TEST_F(ServiceTest, CorsOnlyForLocalOrigins) {
  auto r = service_->handle({"GET", "/api/classes", "", "http://localhost:5173"});
  EXPECT_EQ(r.headers["Access-Control-Allow-Origin"], "http://localhost:5173");
  r = service_->handle({"OPTIONS", "/api/labels", "", "http://127.0.0.1:3000"});
  EXPECT_EQ(r.status, 204);
  EXPECT_EQ(r.headers.count("Access-Control-Allow-Origin"), 1u);
  r = service_->handle({"GET", "/api/classes", "", "https://example.com"});
  EXPECT_EQ(r.headers.count("Access-Control-Allow-Origin"), 0u);
  EXPECT_TRUE(is_local_origin("http://[::1]:8080"));
  EXPECT_FALSE(is_local_origin("http://localhost.evil.com"));
}

TEST(ServicePort, FlagThenEnvironmentThenDefault) {
  ::unsetenv("CROWNPIPE_PORT");
  EXPECT_EQ(resolve_port(std::nullopt), 8964);
  ::setenv("CROWNPIPE_PORT", "9100", 1);
  EXPECT_EQ(resolve_port(std::nullopt), 9100);
  EXPECT_EQ(resolve_port(7000), 7000);
  ::unsetenv("CROWNPIPE_PORT");
}

TEST_F(ServiceTest, ServesOverHttp) {
  Options opts;
  opts.port = 0;
  Service live(project::Project::load(dir_.path()), opts);
  std::thread server([&] { live.serve(); });
  for (int i = 0; i < 500 && live.bound_port() == 0; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  ASSERT_NE(live.bound_port(), 0);

  httplib::Client client("127.0.0.1", live.bound_port());
  auto res = client.Get("/api/project");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["grid"]["width"], 128);

  res = client.Post("/api/labels", R"({"segment":1,"class":4})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  res = client.Get("/api/segments/424242");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  httplib::Headers headers = {{"Origin", "http://localhost:8000"}};
  res = client.Get("/api/classes", headers);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:8000");

  live.stop();
  server.join();
  EXPECT_EQ(labeling::LabelStore::load(dir_ / project::kLabelsFile).find(1)->tree_class, 4);
}
