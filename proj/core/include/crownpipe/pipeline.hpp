#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "crownpipe/config.hpp"
#include "crownpipe/dataset.hpp"
#include "crownpipe/evaluation.hpp"
#include "crownpipe/labeling.hpp"

// Stage functions shared by the CLI subcommands and the one-shot pipeline.
// Each reads its inputs from disk and writes its outputs to disk.
namespace crownpipe::pipeline {

struct AutoLabels {
  labeling::LabelStore store;
  // Segments whose majority class covers less than the requested share of
  // their pixels. Candidates for the manual reject list.
  std::set<segmentation::SegmentId> impure;
};

// Majority truth class per segment, written as human samples. Truth class 0
// (or any value outside 1..7) counts as "others".
AutoLabels auto_label(const segmentation::SegmentMap& map, const raster::IntRaster& truth,
                      double min_purity = 0.0);

// Extract + filter into `out_dir` (split unassigned, originals only).
dataset::FilterReport extract_stage(const std::filesystem::path& project_dir,
                                    const std::filesystem::path& out_dir,
                                    std::int64_t min_pixels,
                                    const std::set<segmentation::SegmentId>& reject, Rgb fill);

// Tags the originals listed in `<crops_dir>/manifest.csv` and rewrites it.
std::vector<std::string> split_stage(const std::filesystem::path& crops_dir,
                                     const dataset::SplitSpec& spec);

// Regenerates augmented copies for the split crops in `crops_dir`. Returns
// the number of manifest rows.
std::size_t augment_stage(const std::filesystem::path& crops_dir, const dataset::AugmentSpec& spec);

// Padded training examples for one split of a manifest.
std::vector<classifier::LabeledImage> load_split(const std::vector<dataset::Crop>& crops,
                                                 dataset::Split which, int side, Rgb fill);

classifier::TrainedModel train_stage(const std::filesystem::path& manifest,
                                     const classifier::ModelConfig& model_cfg,
                                     const classifier::TrainConfig& train_cfg, Rgb fill,
                                     const std::filesystem::path& model_out,
                                     const std::filesystem::path& history_out);

// Scores the originals of one split. Augmented rows are ignored.
evaluation::Report eval_stage(const std::filesystem::path& model_path,
                              const std::filesystem::path& manifest, dataset::Split which,
                              Rgb fill);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunSummary {
  std::filesystem::path report_json;
  std::filesystem::path report_text;
  std::filesystem::path model;
  double overall_accuracy = 0.0;
  std::vector<StageTiming> timings;
};

using Logger = std::function<void(const std::string&)>;

// Runs every stage from a config: (synthetic scene) -> segment -> labels ->
// extract -> split -> augment -> train -> eval. Writes report.json,
// report.txt and summary.json into the output directory.
RunSummary run(const config::PipelineConfig& cfg, const Logger& log = {});

}  // namespace crownpipe::pipeline
