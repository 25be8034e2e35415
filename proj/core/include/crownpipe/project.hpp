#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "crownpipe/labeling.hpp"
#include "crownpipe/raster.hpp"
#include "crownpipe/segmentation.hpp"

namespace crownpipe::project {

inline constexpr int kProjectSchemaVersion = 1;
inline constexpr const char* kProjectFile = "project.json";
inline constexpr const char* kSegmentsRaster = "segments.asc";
inline constexpr const char* kSegmentsCsv = "segments.csv";
inline constexpr const char* kLabelsFile = "labels.jsonl";

// On-disk description of a segmentation run. Paths are stored relative to
// the project directory when possible.
struct ProjectFile {
  std::filesystem::path ortho;
  std::filesystem::path dem;
  std::filesystem::path slope;
  std::array<double, raster::kLayerCount> weights{1.0, 1.0, 1.0, 2.0, 3.0};
  segmentation::MergeParams params;
};

void write_project_file(const std::filesystem::path& dir, const ProjectFile& pf);
ProjectFile read_project_file(const std::filesystem::path& dir);

struct Inputs {
  raster::Orthomosaic ortho;
  raster::Band dem;    // on the ortho grid
  raster::Band slope;  // on the ortho grid
};

// Loads the ortho and brings DEM and slope onto its grid (bilinear). When
// `slope_path` is empty the slope is derived from the DEM on the DEM's own
// grid before resampling.
Inputs load_inputs(const std::filesystem::path& ortho_path, const std::filesystem::path& dem_path,
                   const std::filesystem::path& slope_path);

raster::LayerStack stack_inputs(const Inputs& in, std::span<const double> weights);

// A loaded project: stack, segment map and label store, all on one grid.
class Project {
 public:
  static Project load(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const ProjectFile& file() const noexcept { return file_; }
  const raster::Orthomosaic& ortho() const noexcept { return inputs_.ortho; }
  const raster::LayerStack& stack() const noexcept { return stack_; }
  const segmentation::SegmentMap& segments() const noexcept { return segments_; }
  const labeling::LabelStore& labels() const noexcept { return labels_; }
  labeling::LabelStore& labels() noexcept { return labels_; }

  std::filesystem::path labels_path() const { return dir_ / kLabelsFile; }

  // Replaces the segment map and rewrites segments.asc / segments.csv.
  void replace_segments(segmentation::SegmentMap map);
  void save_labels() const;

 private:
  Project(std::filesystem::path dir, ProjectFile file, Inputs inputs, raster::LayerStack stack);

  std::filesystem::path dir_;
  ProjectFile file_;
  Inputs inputs_;
  raster::LayerStack stack_;
  segmentation::SegmentMap segments_;
  labeling::LabelStore labels_;
};

// Segments the inputs and writes a fresh project directory (no labels yet).
// Returns the segment map.
segmentation::SegmentMap create_project(const std::filesystem::path& dir,
                                        const std::filesystem::path& ortho_path,
                                        const std::filesystem::path& dem_path,
                                        const std::filesystem::path& slope_path,
                                        std::span<const double> weights,
                                        const segmentation::MergeParams& params);

}  // namespace crownpipe::project
