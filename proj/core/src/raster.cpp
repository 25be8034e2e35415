#include "crownpipe/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "crownpipe/error.hpp"

namespace crownpipe::raster {

void Grid::validate() const {
  if (width <= 0 || height <= 0)
    throw PreconditionError("grid dimensions must be positive, got " + std::to_string(width) +
                            "x" + std::to_string(height));
  if (!(pixel_size > 0.0) || !std::isfinite(pixel_size))
    throw PreconditionError("pixel_size must be positive");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
    throw PreconditionError("grid origin must be finite");
}

Band::Band(Grid grid, double fill)
    : grid_(grid), values_(grid.cell_count(), fill), nodata_(grid.cell_count(), 0) {
  grid_.validate();
}

Band::Band(Grid grid, std::vector<double> values, std::vector<std::uint8_t> nodata)
    : grid_(grid), values_(std::move(values)), nodata_(std::move(nodata)) {
  grid_.validate();
  if (values_.size() != grid_.cell_count())
    throw PreconditionError("band values do not match grid dimensions");
  if (nodata_.empty()) nodata_.assign(grid_.cell_count(), 0);
  if (nodata_.size() != grid_.cell_count())
    throw PreconditionError("nodata mask does not match grid dimensions");
}

bool Band::has_nodata() const noexcept {
  return std::any_of(nodata_.begin(), nodata_.end(), [](auto m) { return m != 0; });
}

bool Band::operator==(const Band& other) const {
  if (!(grid_ == other.grid_) || nodata_ != other.nodata_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (nodata_[i]) continue;
    if (values_[i] != other.values_[i]) return false;
  }
  return true;
}

std::filesystem::path sidecar_path(const std::filesystem::path& image_path) {
  auto p = image_path;
  p += ".grid.json";
  return p;
}

Grid read_grid_sidecar(const std::filesystem::path& image_path) {
  const auto path = sidecar_path(image_path);
  std::ifstream in(path);
  if (!in) throw IoError("missing grid sidecar " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Grid g;
    g.origin_x = j.at("origin_x").get<double>();
    g.origin_y = j.at("origin_y").get<double>();
    g.pixel_size = j.at("pixel_size").get<double>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed grid sidecar " + path.string() + ": " + e.what());
  }
}

void write_grid_sidecar(const std::filesystem::path& image_path, const Grid& grid) {
  const auto path = sidecar_path(image_path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  nlohmann::json j = {{"origin_x", grid.origin_x},
                      {"origin_y", grid.origin_y},
                      {"pixel_size", grid.pixel_size}};
  out << j.dump() << '\n';
}

Orthomosaic load_rgb(const std::filesystem::path& path) {
  Grid grid = read_grid_sidecar(path);
  RgbImage image = read_png_rgb(path);
  grid.width = image.width();
  grid.height = image.height();
  grid.validate();

  Orthomosaic ortho{grid, std::move(image), Band(grid), Band(grid), Band(grid)};
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const auto px = ortho.image.at(x, y);
      ortho.red.at(x, y) = px[0];
      ortho.green.at(x, y) = px[1];
      ortho.blue.at(x, y) = px[2];
    }
  }
  return ortho;
}

namespace {

bool extents_overlap(const Grid& a, const Grid& b) {
  return a.min_x() < b.max_x() && b.min_x() < a.max_x() && a.min_y() < b.max_y() &&
         b.min_y() < a.max_y();
}

// Fractional source pixel coordinate; values within 1e-9 of an integer snap to
// it so grid-coincident samples are exact.
double snapped(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Band resample(const Band& band, const Grid& target, ResampleMethod method) {
  target.validate();
  const Grid& src = band.grid();
  if (!extents_overlap(src, target))
    throw PreconditionError("resample: source and target extents are disjoint");

  Band out(target);
  const double eps = 1e-9 * src.pixel_size;
  for (int row = 0; row < target.height; ++row) {
    const double wy = target.center_y(row);
    for (int col = 0; col < target.width; ++col) {
      const double wx = target.center_x(col);
      if (wx < src.min_x() - eps || wx > src.max_x() + eps || wy < src.min_y() - eps ||
          wy > src.max_y() + eps) {
        out.set_nodata(col, row);
        continue;
      }
      const double sx = std::clamp(snapped((wx - src.origin_x) / src.pixel_size - 0.5), 0.0,
                                   static_cast<double>(src.width - 1));
      const double sy = std::clamp(snapped((src.origin_y - wy) / src.pixel_size - 0.5), 0.0,
                                   static_cast<double>(src.height - 1));

      if (method == ResampleMethod::Nearest) {
        const int ix = static_cast<int>(std::floor(sx + 0.5));
        const int iy = static_cast<int>(std::floor(sy + 0.5));
        const int cx = std::min(ix, src.width - 1);
        const int cy = std::min(iy, src.height - 1);
        if (band.is_nodata(cx, cy)) {
          out.set_nodata(col, row);
        } else {
          out.at(col, row) = band.at(cx, cy);
        }
        continue;
      }

      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      // Cells with zero weight are never read, so grid-coincident samples
      // ignore masked neighbours.
      const int x1 = fx > 0.0 ? std::min(x0 + 1, src.width - 1) : x0;
      const int y1 = fy > 0.0 ? std::min(y0 + 1, src.height - 1) : y0;
      const bool masked = band.is_nodata(x0, y0) || band.is_nodata(x1, y0) ||
                          band.is_nodata(x0, y1) || band.is_nodata(x1, y1);
      if (masked) {
        out.set_nodata(col, row);
        continue;
      }
      // Lerp form: exact for constant neighbourhoods and never leaves
      // [min, max] of the four cells.
      const double top = std::lerp(band.at(x0, y0), band.at(x1, y0), fx);
      const double bottom = std::lerp(band.at(x0, y1), band.at(x1, y1), fx);
      out.at(col, row) = std::lerp(top, bottom, fy);
    }
  }
  return out;
}

Band normalize_layer(const Band& band) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const auto values = band.values();
  const auto mask = band.nodata_mask();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) continue;
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  Band out(band.grid(), std::vector<double>(values.size(), 0.0),
           std::vector<std::uint8_t>(mask.begin(), mask.end()));
  if (!(hi > lo)) return out;
  auto dst = out.values();
  const double span = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) continue;
    dst[i] = std::round((values[i] - lo) / span * 255.0 * kQuantum) / kQuantum;
  }
  return out;
}

LayerStack::LayerStack(Grid grid, std::vector<Layer> layers)
    : grid_(grid), layers_(std::move(layers)) {
  grid_.validate();
  if (layers_.size() != kLayerCount)
    throw PreconditionError("layer stack needs exactly 5 layers (R, G, B, DEM, SLOPE)");
  bool any_positive = false;
  for (const auto& layer : layers_) {
    if (!(layer.band.grid() == grid_))
      throw PreconditionError("layer " + layer.name + " is not on the stack grid");
    if (!(layer.weight >= 0.0) || !std::isfinite(layer.weight))
      throw PreconditionError("layer " + layer.name + " has a negative weight");
    any_positive = any_positive || layer.weight > 0.0;
  }
  if (!any_positive) throw PreconditionError("at least one layer weight must be positive");

  foreground_.assign(grid_.cell_count(), 1);
  for (const auto& layer : layers_) {
    const auto mask = layer.band.nodata_mask();
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) foreground_[i] = 0;
  }
}

std::array<double, kLayerCount> LayerStack::weights() const {
  std::array<double, kLayerCount> w{};
  for (int i = 0; i < kLayerCount; ++i) w[i] = layers_[i].weight;
  return w;
}

std::size_t LayerStack::foreground_count() const noexcept {
  return static_cast<std::size_t>(std::count(foreground_.begin(), foreground_.end(), 1));
}

LayerStack build_stack(const Band& r, const Band& g, const Band& b, const Band& dem,
                       const Band& slope, std::span<const double> weights) {
  if (weights.size() != kLayerCount)
    throw PreconditionError("expected 5 layer weights, got " + std::to_string(weights.size()));
  const Grid grid = r.grid();
  const Band* inputs[kLayerCount] = {&r, &g, &b, &dem, &slope};
  std::vector<Layer> layers;
  layers.reserve(kLayerCount);
  for (int i = 0; i < kLayerCount; ++i) {
    if (!(inputs[i]->grid() == grid))
      throw PreconditionError("grid mismatch for layer " + std::string(kLayerNames[i]) +
                              "; resample onto the RGB grid first");
    if (weights[i] < 0.0)
      throw PreconditionError("negative weight for layer " + std::string(kLayerNames[i]));
    layers.push_back({std::string(kLayerNames[i]), normalize_layer(*inputs[i]), weights[i]});
  }
  return LayerStack(grid, std::move(layers));
}

}  // namespace crownpipe::raster
