#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "crownpipe/image.hpp"
#include "crownpipe/raster.hpp"

namespace crownpipe::synthetic {

struct SceneSpec {
  int size = 512;               // orthomosaic side, pixels
  double pixel_size = 0.05;     // ortho resolution, m
  double dem_pixel_size = 0.09; // DEM resolution, m
  double origin_x = 1000.0;
  double origin_y = 2000.0;
  int min_radius = 10;          // crown radius range, pixels
  int max_radius = 17;
  int spacing = 42;             // crown placement lattice, pixels
  std::uint64_t seed = 42;
};

// Class ids given to the four artificial species; the ground is "others".
inline constexpr int kSpeciesClasses[4] = {1, 2, 4, 6};

struct Crown {
  int cx, cy, radius, tree_class;
};

struct Scene {
  raster::Grid ortho_grid;
  RgbImage ortho;
  raster::Band dem;              // on its own, coarser grid
  raster::IntRaster truth;       // class id per ortho pixel (7 = ground)
  std::vector<Crown> crowns;
};

// Crowns of four species that differ in colour, texture and height, on a
// gently sloping textured ground. Deterministic under `seed`.
Scene generate_scene(const SceneSpec& spec = {});

struct ScenePaths {
  std::filesystem::path ortho;
  std::filesystem::path dem;
  std::filesystem::path truth;
};

// Writes ortho.png (+ sidecar), dem.asc and truth.asc into `dir`.
ScenePaths write_scene(const Scene& scene, const std::filesystem::path& dir);

}  // namespace crownpipe::synthetic
