#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crownpipe/pipeline.hpp"
#include "crownpipe/project.hpp"
#include "crownpipe/synthetic.hpp"
#include "test_support.hpp"

using namespace crownpipe;
using nlohmann::json;
using crownpipe::testing::make_stack;
using crownpipe::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args, const TempDir& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CROWNPIPE_CLI_PATH + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Small, fast run of every stage.
config::PipelineConfig tiny_config(const std::filesystem::path& out) {
  auto cfg = config::parse_config(R"({
    "schema_version": 1,
    "synthetic": {"size": 160, "seed": 11},
    "extract": {"min_pixels": 25, "min_purity": 0.8},
    "augment": {"copies": 2},
    "model": {"input_side": 16, "channels": [4], "hidden_width": 8},
    "train": {"epochs": 3, "batch_size": 16}
  })",
                                  out);
  cfg.output_dir = out;
  return cfg;
}

}  // namespace

TEST(AutoLabel, MajorityWithLowestClassOnTiesAndPurity) {
  const auto stack = make_stack(6, 1, [](int, int, int) { return 1.0; });
  const auto map = segmentation::SegmentMap::from_labels(stack, {1, 1, 1, 2, 2, 3});
  raster::IntRaster truth{map.grid(), {4, 4, 2, 6, 2, 0}};
  const auto labels = pipeline::auto_label(map, truth, 0.6);
  EXPECT_EQ(labels.store.find(1)->tree_class, 4);
  EXPECT_EQ(labels.store.find(2)->tree_class, 2);  // 6 vs 2 tie
  EXPECT_EQ(labels.store.find(3)->tree_class, 7);  // 0 counts as others
  EXPECT_EQ(labels.impure, (std::set<segmentation::SegmentId>{2}));
  for (const auto& [id, r] : labels.store.records())
    EXPECT_EQ(r.provenance, labeling::Provenance::Sample);
  EXPECT_TRUE(pipeline::auto_label(map, truth).impure.empty());
}

TEST(Pipeline, EndToEndIsReproducible) {
  TempDir dir;
  const auto out = dir / "run";
  const auto cfg = tiny_config(out);
  const auto first = pipeline::run(cfg);
  for (const char* f : {"report.json", "report.txt", "summary.json", "config.json", "model.bin",
                        "history.csv"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  EXPECT_TRUE(std::filesystem::exists(out / "crops" / "manifest.csv"));
  EXPECT_TRUE(std::filesystem::exists(out / "segments" / "project.json"));
  const auto report = json::parse(slurp(first.report_json));
  EXPECT_EQ(report["species"]["classes"].size(), 7u);
  EXPECT_DOUBLE_EQ(report["species"]["overall_accuracy"].get<double>(), first.overall_accuracy);

  const auto summary = slurp(out / "summary.json");
  const auto model = slurp(out / "model.bin");
  const auto second = pipeline::run(cfg);
  EXPECT_EQ(slurp(out / "summary.json"), summary);
  EXPECT_EQ(slurp(out / "model.bin"), model);
  EXPECT_EQ(second.overall_accuracy, first.overall_accuracy);

  // The saved config records the effective inputs and rejects and reproduces the run.
  const auto saved = config::load_config(out / "config.json");
  EXPECT_EQ(saved.ortho, out / "scene" / "ortho.png");
  EXPECT_EQ(saved.merge, cfg.merge);
  EXPECT_EQ(saved.train.epochs, cfg.train.epochs);
  EXPECT_TRUE(std::includes(saved.reject.begin(), saved.reject.end(), cfg.reject.begin(),
                            cfg.reject.end()));
  const auto third = pipeline::run(saved);
  EXPECT_EQ(slurp(out / "summary.json"), summary);
  EXPECT_EQ(slurp(out / "model.bin"), model);
  EXPECT_EQ(third.overall_accuracy, first.overall_accuracy);
}

TEST(Pipeline, SplitStageRefusesAugmentedManifests) {
  TempDir dir;
  const auto cfg = tiny_config(dir / "run");
  pipeline::run(cfg);
  EXPECT_THROW(pipeline::split_stage(dir / "run" / "crops", cfg.split), std::exception);
  // Augmenting again regenerates the same rows.
  const auto rows = dataset::read_manifest(dir / "run" / "crops" / "manifest.csv");
  EXPECT_EQ(pipeline::augment_stage(dir / "run" / "crops", cfg.augment), rows.size());
  EXPECT_EQ(dataset::read_manifest(dir / "run" / "crops" / "manifest.csv"), rows);
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir;
  auto r = cli("segment --bogus-flag 1", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"error\""), std::string::npos);
  EXPECT_NE(r.err.find("--scale"), std::string::npos);  // subcommand help follows
  EXPECT_EQ(cli("", dir).code, 2);
  EXPECT_EQ(cli("slope --dem only.asc", dir).code, 2);
  EXPECT_EQ(cli("train --manifest m.csv --epochs notanumber", dir).code, 2);
  EXPECT_EQ(cli("--help", dir).code, 0);
}

TEST(Cli, RuntimeErrorsExitOneWithJson) {
  TempDir dir;
  const auto r = cli("slope --dem \"" + (dir / "missing.asc").string() + "\" --out \"" +
                         (dir / "s.asc").string() + "\"",
                     dir);
  EXPECT_EQ(r.code, 1);
  const auto j = json::parse(r.err);
  EXPECT_EQ(j["error"]["type"], "io");
}

TEST(Cli, StageByStageChain) {
  TempDir dir;
  const auto d = [&](const std::string& name) { return "\"" + (dir / name).string() + "\""; };
  ASSERT_EQ(cli("synth --out " + d("scene") + " --size 160 --seed 4", dir).code, 0);
  ASSERT_EQ(cli("slope --dem " + d("scene/dem.asc") + " --out " + d("slope.asc"), dir).code, 0);
  auto r = cli("segment --ortho " + d("scene/ortho.png") + " --dem " + d("scene/dem.asc") +
                   " --out " + d("proj"),
               dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(json::parse(r.out)["segments"].get<int>(), 1);
  r = cli("label --project " + d("proj") + " --truth " + d("scene/truth.asc") +
              " --min-purity 0.8",
          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::string reject;
  for (const auto& id : json::parse(r.out)["impure"])
    reject += (reject.empty() ? "" : ",") + std::to_string(id.get<int>());
  r = cli("extract --project " + d("proj") + " --out " + d("crops") +
              (reject.empty() ? "" : " --reject " + reject),
          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(cli("split --crops " + d("crops") + " --seed 3", dir).code, 0);
  ASSERT_EQ(cli("augment --crops " + d("crops") + " --copies 2", dir).code, 0);
  r = cli("train --manifest " + d("crops/manifest.csv") +
              " --epochs 2 --input-side 16 --model-out " + d("m.bin") + " --history " +
              d("h.csv"),
          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("eval --model " + d("m.bin") + " --manifest " + d("crops/manifest.csv") + " --json " +
              d("report.json"),
          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Confusion matrix"), std::string::npos);
  EXPECT_TRUE(json::parse(slurp(dir / "report.json")).contains("types"));
}

TEST(Cli, FlagsOverrideConfig) {
  TempDir dir;
  std::ofstream(dir / "c.json") << R"({"schema_version": 1, "segmentation": {"scale": 5}})";
  ASSERT_EQ(cli("synth --out \"" + (dir / "s").string() + "\" --size 64", dir).code, 0);
  const std::string base = "segment --ortho \"" + (dir / "s/ortho.png").string() +
                           "\" --dem \"" + (dir / "s/dem.asc").string() + "\" --config \"" +
                           (dir / "c.json").string() + "\"";
  const auto small = cli(base + " --out \"" + (dir / "p1").string() + "\"", dir);
  ASSERT_EQ(small.code, 0) << small.err;
  const auto big = cli(base + " --scale 400 --out \"" + (dir / "p2").string() + "\"", dir);
  ASSERT_EQ(big.code, 0) << big.err;
  EXPECT_GT(json::parse(small.out)["segments"].get<int>(),
            json::parse(big.out)["segments"].get<int>());
  EXPECT_EQ(project::read_project_file(dir / "p2").params.scale, 400.0);
  EXPECT_EQ(project::read_project_file(dir / "p1").params.scale, 5.0);
}
