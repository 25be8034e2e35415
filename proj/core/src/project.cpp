#include "crownpipe/project.hpp"

#include <fstream>

#include <json.hpp>

#include "crownpipe/error.hpp"
#include "crownpipe/terrain.hpp"

namespace crownpipe::project {

namespace fs = std::filesystem;

namespace {

std::string relative_to(const fs::path& p, const fs::path& dir) {
  if (p.empty()) return {};
  std::error_code ec;
  auto rel = fs::relative(fs::absolute(p), fs::absolute(dir), ec);
  if (ec || rel.empty()) return fs::absolute(p).lexically_normal().generic_string();
  return rel.generic_string();
}

fs::path resolve(const std::string& p, const fs::path& dir) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : (dir / path).lexically_normal();
}

}  // namespace

void write_project_file(const fs::path& dir, const ProjectFile& pf) {
  nlohmann::json j;
  j["schema_version"] = kProjectSchemaVersion;
  j["ortho"] = relative_to(pf.ortho, dir);
  j["dem"] = relative_to(pf.dem, dir);
  j["slope"] = relative_to(pf.slope, dir);
  j["weights"] = pf.weights;
  j["scale"] = pf.params.scale;
  j["shape"] = pf.params.shape_weight;
  j["compactness"] = pf.params.compactness_weight;
  j["segments"] = kSegmentsRaster;
  j["labels"] = kLabelsFile;
  std::ofstream out(dir / kProjectFile, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kProjectFile).string());
  out << j.dump(2) << '\n';
}

ProjectFile read_project_file(const fs::path& dir) {
  const auto path = dir / kProjectFile;
  std::ifstream in(path);
  if (!in) throw IoError("not a project directory (missing " + path.string() + ")");
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("schema_version").get<int>() != kProjectSchemaVersion)
      throw IoError(path.string() + ": unsupported schema_version");
    ProjectFile pf;
    pf.ortho = resolve(j.at("ortho").get<std::string>(), dir);
    pf.dem = resolve(j.at("dem").get<std::string>(), dir);
    pf.slope = resolve(j.value("slope", std::string{}), dir);
    pf.weights = j.at("weights").get<std::array<double, raster::kLayerCount>>();
    pf.params.scale = j.at("scale").get<double>();
    pf.params.shape_weight = j.at("shape").get<double>();
    pf.params.compactness_weight = j.at("compactness").get<double>();
    return pf;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Inputs load_inputs(const fs::path& ortho_path, const fs::path& dem_path, const fs::path& slope_path) {
  Inputs in;
  in.ortho = raster::load_rgb(ortho_path);
  const auto dem = raster::load_dem(dem_path);
  raster::Band slope_band =
      slope_path.empty() ? terrain::slope(dem).band() : raster::load_dem(slope_path);
  in.dem = raster::resample(dem, in.ortho.grid, raster::ResampleMethod::Bilinear);
  in.slope = raster::resample(slope_band, in.ortho.grid, raster::ResampleMethod::Bilinear);
  return in;
}

raster::LayerStack stack_inputs(const Inputs& in, std::span<const double> weights) {
  return raster::build_stack(in.ortho.red, in.ortho.green, in.ortho.blue, in.dem, in.slope,
                             weights);
}

Project::Project(fs::path dir, ProjectFile file, Inputs inputs, raster::LayerStack stack)
    : dir_(std::move(dir)),
      file_(std::move(file)),
      inputs_(std::move(inputs)),
      stack_(std::move(stack)) {}

Project Project::load(const fs::path& dir) {
  auto pf = read_project_file(dir);
  auto inputs = load_inputs(pf.ortho, pf.dem, pf.slope);
  auto stack = stack_inputs(inputs, pf.weights);
  Project p(dir, std::move(pf), std::move(inputs), std::move(stack));
  p.segments_ = segmentation::import_segments(p.stack_, dir / kSegmentsRaster);
  if (fs::exists(p.labels_path())) {
    p.labels_ = labeling::LabelStore::load(p.labels_path());
    for (const auto& [id, rec] : p.labels_.records())
      if (!p.segments_.contains(id))
        throw IoError(p.labels_path().string() + ": label for unknown segment " +
                      std::to_string(id));
  }
  return p;
}

void Project::replace_segments(segmentation::SegmentMap map) {
  segments_ = std::move(map);
  segmentation::export_segments(segments_, dir_ / kSegmentsRaster, dir_ / kSegmentsCsv);
}

void Project::save_labels() const { labels_.save(labels_path()); }

segmentation::SegmentMap create_project(const fs::path& dir, const fs::path& ortho_path,
                                        const fs::path& dem_path, const fs::path& slope_path,
                                        std::span<const double> weights,
                                        const segmentation::MergeParams& params) {
  if (weights.size() != raster::kLayerCount)
    throw PreconditionError("expected 5 layer weights");
  params.validate();
  fs::create_directories(dir);

  ProjectFile pf;
  pf.ortho = ortho_path;
  pf.dem = dem_path;
  pf.slope = slope_path;
  std::copy(weights.begin(), weights.end(), pf.weights.begin());
  pf.params = params;
  if (pf.slope.empty()) {
    pf.slope = dir / "slope.asc";
    raster::write_ascii_grid(pf.slope, terrain::slope(raster::load_dem(dem_path)).band());
  }

  const auto inputs = load_inputs(pf.ortho, pf.dem, pf.slope);
  const auto stack = stack_inputs(inputs, pf.weights);
  auto map = segmentation::segment(stack, params);
  segmentation::export_segments(map, dir / kSegmentsRaster, dir / kSegmentsCsv);
  write_project_file(dir, pf);
  // Labels refer to the previous segmentation's ids.
  fs::remove(dir / kLabelsFile);
  return map;
}

}  // namespace crownpipe::project
