#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "crownpipe/classifier.hpp"
#include "crownpipe/dataset.hpp"
#include "crownpipe/segmentation.hpp"
#include "crownpipe/synthetic.hpp"

namespace crownpipe::config {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kDefaultPort = 8964;

// Every tunable of every stage. CLI flags bind to these fields, so a config
// file supplies defaults and flags override them.
struct PipelineConfig {
  std::filesystem::path output_dir = "crownpipe-run";

  // Inputs. When `synthetic` is set and no ortho is given, a scene is
  // generated into <output_dir>/scene and its truth raster auto-labels.
  std::filesystem::path ortho;
  std::filesystem::path dem;
  std::filesystem::path slope;   // empty: derived from the DEM
  std::filesystem::path truth;   // per-pixel class raster for auto-labeling
  std::filesystem::path labels;  // existing label store (alternative to truth)
  // Truth-labeled segments whose majority class covers less than this share
  // of their pixels are rejected at extraction.
  double min_purity = 0.0;
  std::optional<synthetic::SceneSpec> synthetic;

  segmentation::MergeParams merge;
  std::array<double, 5> weights{1.0, 1.0, 1.0, 2.0, 3.0};

  std::int64_t min_pixels = 25;
  std::set<segmentation::SegmentId> reject;
  Rgb fill = dataset::kDefaultFill;

  dataset::SplitSpec split;
  dataset::AugmentSpec augment;
  classifier::ModelConfig model;
  classifier::TrainConfig train;
  std::string eval_split = "test";

  int port = kDefaultPort;
};

// Unknown keys and a missing or different schema_version are errors.
// Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
std::string to_json(const PipelineConfig& cfg);

// Seeds every randomized stage from one value.
void set_seed(PipelineConfig& cfg, std::uint64_t seed);

}  // namespace crownpipe::config
