#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crownpipe/image.hpp"

namespace crownpipe::raster {

// Square-pixel georeferenced grid. The origin is the upper-left corner of the
// upper-left pixel; rows grow southwards.
struct Grid {
  int width = 0;
  int height = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;

  void validate() const;
  std::size_t cell_count() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  double center_x(int col) const noexcept { return origin_x + (col + 0.5) * pixel_size; }
  double center_y(int row) const noexcept { return origin_y - (row + 0.5) * pixel_size; }
  double min_x() const noexcept { return origin_x; }
  double max_x() const noexcept { return origin_x + width * pixel_size; }
  double max_y() const noexcept { return origin_y; }
  double min_y() const noexcept { return origin_y - height * pixel_size; }

  bool operator==(const Grid&) const = default;
};

class Band {
 public:
  Band() = default;
  explicit Band(Grid grid, double fill = 0.0);
  Band(Grid grid, std::vector<double> values, std::vector<std::uint8_t> nodata = {});

  const Grid& grid() const noexcept { return grid_; }
  int width() const noexcept { return grid_.width; }
  int height() const noexcept { return grid_.height; }

  double at(int col, int row) const { return values_[index(col, row)]; }
  double& at(int col, int row) { return values_[index(col, row)]; }
  bool is_nodata(int col, int row) const { return nodata_[index(col, row)] != 0; }
  void set_nodata(int col, int row, bool flag = true) { nodata_[index(col, row)] = flag ? 1 : 0; }
  bool has_nodata() const noexcept;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const std::uint8_t> nodata_mask() const noexcept { return nodata_; }

  std::size_t index(int col, int row) const noexcept {
    return static_cast<std::size_t>(row) * grid_.width + col;
  }

  // Value equality: masked cells compare by mask only.
  bool operator==(const Band& other) const;

 private:
  Grid grid_;
  std::vector<double> values_;
  std::vector<std::uint8_t> nodata_;
};

struct Orthomosaic {
  Grid grid;
  RgbImage image;
  Band red;
  Band green;
  Band blue;
};

// Reads `<path>` (8-bit RGB PNG) and its `<path>.grid.json` sidecar.
Orthomosaic load_rgb(const std::filesystem::path& path);
void write_grid_sidecar(const std::filesystem::path& image_path, const Grid& grid);
Grid read_grid_sidecar(const std::filesystem::path& image_path);
std::filesystem::path sidecar_path(const std::filesystem::path& image_path);

// ESRI ASCII grid. Round-trips doubles bit-exactly.
Band load_dem(const std::filesystem::path& path);
void write_ascii_grid(const std::filesystem::path& path, const Band& band,
                      double nodata_value = -9999.0);

struct IntRaster {
  Grid grid;
  std::vector<std::int32_t> values;
  bool operator==(const IntRaster&) const = default;
};
IntRaster read_int_ascii_grid(const std::filesystem::path& path);
void write_int_ascii_grid(const std::filesystem::path& path, const IntRaster& raster);

enum class ResampleMethod { Nearest, Bilinear };

// Samples `band` at the pixel centres of `target`. Cells whose sample point lies
// outside the source extent, or that draw on a masked source cell, become nodata.
Band resample(const Band& band, const Grid& target, ResampleMethod method);

inline constexpr std::array<std::string_view, 5> kLayerNames = {"R", "G", "B", "DEM", "SLOPE"};
inline constexpr std::array<double, 5> kDefaultLayerWeights = {1.0, 1.0, 1.0, 2.0, 3.0};
inline constexpr int kLayerCount = 5;
// Normalized layer values are multiples of 1/kQuantum.
inline constexpr double kQuantum = 256.0;

struct Layer {
  std::string name;
  Band band;
  double weight = 1.0;
};

class LayerStack {
 public:
  LayerStack(Grid grid, std::vector<Layer> layers);

  const Grid& grid() const noexcept { return grid_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }
  std::array<double, kLayerCount> weights() const;

  // A pixel is foreground when no layer masks it.
  bool is_foreground(int col, int row) const { return foreground_[index(col, row)] != 0; }
  std::span<const std::uint8_t> foreground_mask() const noexcept { return foreground_; }
  std::size_t foreground_count() const noexcept;

  std::size_t index(int col, int row) const noexcept {
    return static_cast<std::size_t>(row) * grid_.width + col;
  }

 private:
  Grid grid_;
  std::vector<Layer> layers_;
  std::vector<std::uint8_t> foreground_;
};

// Min-max rescales each layer to [0, 255] (quantized to 1/256) and attaches
// weights. Constant layers map to 0.
LayerStack build_stack(const Band& r, const Band& g, const Band& b, const Band& dem,
                       const Band& slope,
                       std::span<const double> weights = kDefaultLayerWeights);

// Per-layer min-max rescale used by build_stack, exposed for tests.
Band normalize_layer(const Band& band);

}  // namespace crownpipe::raster
