#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "crownpipe/raster.hpp"

namespace crownpipe::segmentation {

using SegmentId = std::int32_t;
inline constexpr SegmentId kBackground = 0;
using raster::kLayerCount;

struct MergeParams {
  double scale = 200.0;
  double shape_weight = 0.2;
  double compactness_weight = 0.5;

  void validate() const;
  bool operator==(const MergeParams&) const = default;
};

struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int perimeter() const noexcept { return 2 * (w + h); }
  BBox united(const BBox& o) const noexcept;
  bool contains(int px, int py) const noexcept {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  bool operator==(const BBox&) const = default;
};

// Region statistics. Layer sums are kept in fixed point (units of
// 1/raster::kQuantum) so incremental merges match recomputation exactly.
struct SegmentStats {
  SegmentId id = kBackground;
  std::int64_t n = 0;
  std::array<std::int64_t, kLayerCount> sum{};
  std::array<std::int64_t, kLayerCount> sum_sq{};
  std::int64_t perimeter = 0;
  BBox bbox;

  double mean(int layer) const;
  // Population standard deviation.
  double stddev(int layer) const;

  // Union of two adjacent regions sharing `shared_edges` pixel edges.
  static SegmentStats merged(const SegmentStats& a, const SegmentStats& b,
                             std::int64_t shared_edges);

  bool operator==(const SegmentStats&) const = default;
};

// Fixed-point representation of a normalized layer value.
std::int64_t quantize(double value);

// Fusion cost of merging `a` and `b` into `merged`: weighted color
// heterogeneity increase blended with the compactness/smoothness shape
// increase. Throws PreconditionError if `merged` is not the union of two
// adjacent regions.
double merge_cost(const SegmentStats& a, const SegmentStats& b, const SegmentStats& merged,
                  const MergeParams& params, std::span<const double> weights);

class SegmentMap {
 public:
  using Adjacency = std::map<SegmentId, std::int64_t>;  // neighbour -> shared edges

  SegmentMap() = default;

  // Builds stats and adjacency from a per-pixel id raster over `stack`.
  // Pixels with id 0 must be exactly the stack's background. Every segment
  // must be 4-connected.
  static SegmentMap from_labels(const raster::LayerStack& stack, std::vector<SegmentId> labels);

  const raster::Grid& grid() const noexcept { return grid_; }
  int width() const noexcept { return grid_.width; }
  int height() const noexcept { return grid_.height; }
  SegmentId at(int col, int row) const {
    return labels_[static_cast<std::size_t>(row) * grid_.width + col];
  }
  std::span<const SegmentId> labels() const noexcept { return labels_; }

  std::size_t segment_count() const noexcept { return stats_.size(); }
  bool contains(SegmentId id) const { return stats_.count(id) != 0; }
  const SegmentStats& stats(SegmentId id) const;
  const std::map<SegmentId, SegmentStats>& all_stats() const noexcept { return stats_; }
  const Adjacency& neighbors(SegmentId id) const;
  std::vector<SegmentId> ids() const;
  // Pixel indices belonging to `id`, in row-major order.
  std::vector<std::size_t> pixels(SegmentId id) const;

  bool operator==(const SegmentMap&) const = default;

 private:
  friend SegmentMap segment(const raster::LayerStack&, const MergeParams&);
  friend SegmentMap manual_merge(const SegmentMap&, const std::set<SegmentId>&);

  raster::Grid grid_;
  std::vector<SegmentId> labels_;
  std::map<SegmentId, SegmentStats> stats_;
  std::map<SegmentId, Adjacency> adjacency_;
};

// Bottom-up region merging from single pixels. Each sweep visits live
// segments in row-major seed order; a segment merges with its lowest-cost
// neighbour when that choice is mutual and the cost is below scale^2. A
// segment takes part in at most one merge per sweep. Sweeps repeat until
// nothing merges. Final ids are 1..K in first-pixel scan order.
SegmentMap segment(const raster::LayerStack& stack, const MergeParams& params);

// Merges a connected set of segments into the one with the lowest id.
SegmentMap manual_merge(const SegmentMap& map, const std::set<SegmentId>& ids);

// Label raster (ESRI ASCII, int32) plus CSV of per-segment records.
void export_segments(const SegmentMap& map, const std::filesystem::path& raster_path,
                     const std::filesystem::path& csv_path);
SegmentMap import_segments(const raster::LayerStack& stack,
                           const std::filesystem::path& raster_path);

}  // namespace crownpipe::segmentation
