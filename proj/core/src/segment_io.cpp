#include <array>
#include <charconv>
#include <cmath>
#include <fstream>

#include "crownpipe/error.hpp"
#include "crownpipe/segmentation.hpp"

namespace crownpipe::segmentation {

namespace {

std::string fmt(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

bool nearly(double a, double b, double scale) { return std::abs(a - b) <= 1e-9 * scale; }

}  // namespace

void export_segments(const SegmentMap& map, const std::filesystem::path& raster_path,
                     const std::filesystem::path& csv_path) {
  raster::IntRaster label_raster{map.grid(),
                                 std::vector<std::int32_t>(map.labels().begin(), map.labels().end())};
  raster::write_int_ascii_grid(raster_path, label_raster);

  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << "id,n,perimeter,bbox_x,bbox_y,bbox_w,bbox_h";
  for (const auto name : raster::kLayerNames) out << ",mu_" << name;
  for (const auto name : raster::kLayerNames) out << ",sigma_" << name;
  out << '\n';
  for (const auto& [id, s] : map.all_stats()) {
    out << id << ',' << s.n << ',' << s.perimeter << ',' << s.bbox.x << ',' << s.bbox.y << ','
        << s.bbox.w << ',' << s.bbox.h;
    for (int k = 0; k < kLayerCount; ++k) out << ',' << fmt(s.mean(k));
    for (int k = 0; k < kLayerCount; ++k) out << ',' << fmt(s.stddev(k));
    out << '\n';
  }
  if (!out) throw IoError("short write to " + csv_path.string());
}

SegmentMap import_segments(const raster::LayerStack& stack,
                           const std::filesystem::path& raster_path) {
  auto label_raster = raster::read_int_ascii_grid(raster_path);
  const auto& g = stack.grid();
  const auto& r = label_raster.grid;
  if (r.width != g.width || r.height != g.height || !nearly(r.pixel_size, g.pixel_size, g.pixel_size) ||
      !nearly(r.origin_x, g.origin_x, std::max(1.0, std::abs(g.origin_x))) ||
      !nearly(r.origin_y, g.origin_y, std::max(1.0, std::abs(g.origin_y))))
    throw PreconditionError(raster_path.string() + " is not on the layer stack grid");
  return SegmentMap::from_labels(stack, std::move(label_raster.values));
}

}  // namespace crownpipe::segmentation
