#include "crownpipe/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>

#include "crownpipe/error.hpp"

namespace crownpipe::segmentation {

void MergeParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw PreconditionError("scale must be positive");
  if (!(shape_weight >= 0.0 && shape_weight < 1.0))
    throw PreconditionError("shape weight must lie in [0, 1)");
  if (!(compactness_weight >= 0.0 && compactness_weight <= 1.0))
    throw PreconditionError("compactness weight must lie in [0, 1]");
}

BBox BBox::united(const BBox& o) const noexcept {
  const int x0 = std::min(x, o.x);
  const int y0 = std::min(y, o.y);
  const int x1 = std::max(x + w, o.x + o.w);
  const int y1 = std::max(y + h, o.y + o.h);
  return {x0, y0, x1 - x0, y1 - y0};
}

std::int64_t quantize(double value) { return std::llround(value * raster::kQuantum); }

double SegmentStats::mean(int layer) const {
  return static_cast<double>(sum[layer]) / static_cast<double>(n) / raster::kQuantum;
}

namespace {
// n * sum_sq overflows 64 bits on large segments.
__extension__ using int128 = __int128;
}  // namespace

double SegmentStats::stddev(int layer) const {
  const int128 num = static_cast<int128>(n) * sum_sq[layer] -
                     static_cast<int128>(sum[layer]) * sum[layer];
  if (num <= 0) return 0.0;
  const double var = static_cast<double>(num) / (static_cast<double>(n) * static_cast<double>(n));
  return std::sqrt(var) / raster::kQuantum;
}

SegmentStats SegmentStats::merged(const SegmentStats& a, const SegmentStats& b,
                                  std::int64_t shared_edges) {
  SegmentStats m;
  m.id = std::min(a.id, b.id);
  m.n = a.n + b.n;
  for (int k = 0; k < kLayerCount; ++k) {
    m.sum[k] = a.sum[k] + b.sum[k];
    m.sum_sq[k] = a.sum_sq[k] + b.sum_sq[k];
  }
  m.perimeter = a.perimeter + b.perimeter - 2 * shared_edges;
  m.bbox = a.bbox.united(b.bbox);
  return m;
}

namespace {

double compactness(const SegmentStats& s) {
  return static_cast<double>(s.perimeter) / std::sqrt(static_cast<double>(s.n));
}

double smoothness(const SegmentStats& s) {
  return static_cast<double>(s.perimeter) / static_cast<double>(s.bbox.perimeter());
}

// Cost without consistency checks; the engine only calls it on unions it built.
double fusion_cost(const SegmentStats& a, const SegmentStats& b, const SegmentStats& m,
                   const MergeParams& p, std::span<const double> weights) {
  const double na = static_cast<double>(a.n);
  const double nb = static_cast<double>(b.n);
  const double nm = static_cast<double>(m.n);
  double color = 0.0;
  for (int k = 0; k < kLayerCount; ++k) {
    if (weights[k] == 0.0) continue;
    color += weights[k] * (nm * m.stddev(k) - (na * a.stddev(k) + nb * b.stddev(k)));
  }
  const double d_cmpct = nm * compactness(m) - (na * compactness(a) + nb * compactness(b));
  const double d_smooth = nm * smoothness(m) - (na * smoothness(a) + nb * smoothness(b));
  const double shape =
      p.compactness_weight * d_cmpct + (1.0 - p.compactness_weight) * d_smooth;
  return (1.0 - p.shape_weight) * color + p.shape_weight * shape;
}

}  // namespace

double merge_cost(const SegmentStats& a, const SegmentStats& b, const SegmentStats& merged,
                  const MergeParams& params, std::span<const double> weights) {
  if (weights.size() != kLayerCount) throw PreconditionError("merge_cost needs 5 layer weights");
  if (a.n < 1 || b.n < 1) throw PreconditionError("merge_cost: empty segment");
  const std::int64_t edge_excess = a.perimeter + b.perimeter - merged.perimeter;
  if (edge_excess == 0) throw PreconditionError("merge_cost: segments are not adjacent");
  bool consistent = merged.n == a.n + b.n && edge_excess > 0 && edge_excess % 2 == 0 &&
                    merged.bbox == a.bbox.united(b.bbox);
  for (int k = 0; k < kLayerCount && consistent; ++k)
    consistent = merged.sum[k] == a.sum[k] + b.sum[k] &&
                 merged.sum_sq[k] == a.sum_sq[k] + b.sum_sq[k];
  if (!consistent) throw PreconditionError("merge_cost: merged stats are not the union of a and b");
  return fusion_cost(a, b, merged, params, weights);
}

const SegmentStats& SegmentMap::stats(SegmentId id) const {
  auto it = stats_.find(id);
  if (it == stats_.end()) throw UnknownSegmentError(id);
  return it->second;
}

const SegmentMap::Adjacency& SegmentMap::neighbors(SegmentId id) const {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end()) throw UnknownSegmentError(id);
  return it->second;
}

std::vector<SegmentId> SegmentMap::ids() const {
  std::vector<SegmentId> out;
  out.reserve(stats_.size());
  for (const auto& [id, _] : stats_) out.push_back(id);
  return out;
}

std::vector<std::size_t> SegmentMap::pixels(SegmentId id) const {
  if (!contains(id)) throw UnknownSegmentError(id);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == id) out.push_back(i);
  return out;
}

SegmentMap SegmentMap::from_labels(const raster::LayerStack& stack,
                                   std::vector<SegmentId> labels) {
  const auto& grid = stack.grid();
  if (labels.size() != grid.cell_count())
    throw PreconditionError("label raster does not match stack grid");
  const int w = grid.width;
  const int h = grid.height;

  SegmentMap map;
  map.grid_ = grid;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = stack.index(x, y);
      const SegmentId id = labels[i];
      if (id < 0) throw PreconditionError("negative segment id in label raster");
      if ((id == kBackground) != !stack.is_foreground(x, y))
        throw PreconditionError("segment id 0 must mark exactly the nodata pixels (pixel " +
                                std::to_string(x) + "," + std::to_string(y) + ")");
      if (id == kBackground) continue;

      auto [it, fresh] = map.stats_.try_emplace(id);
      auto& s = it->second;
      if (fresh) {
        s.id = id;
        s.bbox = {x, y, 1, 1};
        map.adjacency_[id];
      } else {
        s.bbox = s.bbox.united({x, y, 1, 1});
      }
      ++s.n;
      for (int k = 0; k < kLayerCount; ++k) {
        const auto q = quantize(stack.layer(k).band.values()[i]);
        s.sum[k] += q;
        s.sum_sq[k] += q * q;
      }
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int d = 0; d < 4; ++d) {
        if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) {
          ++s.perimeter;
          continue;
        }
        const SegmentId other = labels[stack.index(nx[d], ny[d])];
        if (other == id) continue;
        ++s.perimeter;
        if (other != kBackground) ++map.adjacency_[id][other];
      }
    }
  }

  // Connectivity: flood fill from each segment's first pixel must reach n pixels.
  std::vector<std::uint8_t> seen(labels.size(), 0);
  std::vector<std::size_t> stack_px;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    const SegmentId id = labels[start];
    if (id == kBackground || seen[start]) continue;
    std::int64_t reached = 0;
    stack_px.assign(1, start);
    seen[start] = 1;
    while (!stack_px.empty()) {
      const std::size_t p = stack_px.back();
      stack_px.pop_back();
      ++reached;
      const int x = static_cast<int>(p % w);
      const int y = static_cast<int>(p / w);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int d = 0; d < 4; ++d) {
        if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
        const std::size_t q = static_cast<std::size_t>(ny[d]) * w + nx[d];
        if (!seen[q] && labels[q] == id) {
          seen[q] = 1;
          stack_px.push_back(q);
        }
      }
    }
    if (reached != map.stats_.at(id).n)
      throw PreconditionError("segment " + std::to_string(id) + " is not 4-connected");
  }

  map.labels_ = std::move(labels);
  return map;
}

namespace {

using Edge = std::pair<std::int32_t, std::int64_t>;  // neighbour seed, shared edges

class MergeEngine {
 public:
  MergeEngine(const raster::LayerStack& stack, const MergeParams& params)
      : stack_(stack), params_(params), weights_(stack.weights()) {
    const auto& grid = stack.grid();
    w_ = grid.width;
    h_ = grid.height;
    const std::size_t n = grid.cell_count();
    stats_.resize(n);
    adj_.resize(n);
    parent_.resize(n);
    alive_.assign(n, 0);
    stamp_.assign(n, 0);
    std::iota(parent_.begin(), parent_.end(), 0);

    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const std::size_t i = stack.index(x, y);
        if (!stack.is_foreground(x, y)) continue;
        auto& s = stats_[i];
        s.id = static_cast<SegmentId>(i);
        s.n = 1;
        for (int k = 0; k < kLayerCount; ++k) {
          const auto q = quantize(stack.layer(k).band.values()[i]);
          s.sum[k] = q;
          s.sum_sq[k] = q * q;
        }
        s.perimeter = 4;
        s.bbox = {x, y, 1, 1};
        alive_[i] = 1;
        // Neighbour lists are kept sorted by seed index.
        if (y > 0 && stack.is_foreground(x, y - 1)) adj_[i].push_back({stack.index(x, y - 1), 1});
        if (x > 0 && stack.is_foreground(x - 1, y)) adj_[i].push_back({stack.index(x - 1, y), 1});
        if (x + 1 < w_ && stack.is_foreground(x + 1, y))
          adj_[i].push_back({stack.index(x + 1, y), 1});
        if (y + 1 < h_ && stack.is_foreground(x, y + 1))
          adj_[i].push_back({stack.index(x, y + 1), 1});
      }
    }
  }

  void run() {
    const double threshold = params_.scale * params_.scale;
    std::vector<std::int32_t> order;
    std::uint32_t sweep = 0;
    for (bool changed = true; changed;) {
      changed = false;
      ++sweep;
      order.clear();
      for (std::size_t i = 0; i < alive_.size(); ++i)
        if (alive_[i]) order.push_back(static_cast<std::int32_t>(i));

      for (const auto a : order) {
        if (!alive_[a] || stamp_[a] == sweep) continue;
        const auto [b, cost] = best_neighbor(a);
        if (b < 0 || stamp_[b] == sweep || !(cost < threshold)) continue;
        if (best_neighbor(b).first != a) continue;
        const auto keep = merge(a, b);
        stamp_[keep] = sweep;
        changed = true;
      }
    }
  }

  void finish(std::vector<SegmentId>& labels, std::map<SegmentId, SegmentStats>& stats,
                    std::map<SegmentId, SegmentMap::Adjacency>& adjacency) {
    const std::size_t n = alive_.size();
    std::vector<SegmentId> relabel(n, kBackground);
    SegmentId next = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (alive_[i]) relabel[i] = next++;

    labels.assign(n, kBackground);
    for (std::size_t i = 0; i < n; ++i) {
      if (!stack_.foreground_mask()[i]) continue;
      labels[i] = relabel[find(static_cast<std::int32_t>(i))];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive_[i]) continue;
      const SegmentId id = relabel[i];
      auto s = stats_[i];
      s.id = id;
      stats.emplace(id, s);
      auto& nb = adjacency[id];
      for (const auto& [other, edges] : adj_[i]) nb.emplace(relabel[other], edges);
    }
  }

 private:
  std::int32_t find(std::int32_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }

  std::pair<std::int32_t, double> best_neighbor(std::int32_t a) const {
    std::int32_t best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const auto& [b, shared] : adj_[a]) {
      const auto m = SegmentStats::merged(stats_[a], stats_[b], shared);
      const double c = fusion_cost(stats_[a], stats_[b], m, params_, weights_);
      // Lists are sorted by seed, so strict < keeps the lower id on ties.
      if (c < best_cost) {
        best_cost = c;
        best = b;
      }
    }
    return {best, best_cost};
  }

  static std::int64_t shared_edges(const std::vector<Edge>& list, std::int32_t other) {
    auto it = std::lower_bound(list.begin(), list.end(), other,
                               [](const Edge& e, std::int32_t v) { return e.first < v; });
    return (it != list.end() && it->first == other) ? it->second : 0;
  }

  static void erase(std::vector<Edge>& list, std::int32_t other) {
    auto it = std::lower_bound(list.begin(), list.end(), other,
                               [](const Edge& e, std::int32_t v) { return e.first < v; });
    if (it != list.end() && it->first == other) list.erase(it);
  }

  static void add(std::vector<Edge>& list, std::int32_t other, std::int64_t edges) {
    auto it = std::lower_bound(list.begin(), list.end(), other,
                               [](const Edge& e, std::int32_t v) { return e.first < v; });
    if (it != list.end() && it->first == other) {
      it->second += edges;
    } else {
      list.insert(it, {other, edges});
    }
  }

  // Merges the larger seed into the smaller one; returns the survivor.
  std::int32_t merge(std::int32_t a, std::int32_t b) {
    if (b < a) std::swap(a, b);
    const std::int64_t shared = shared_edges(adj_[a], b);
    stats_[a] = SegmentStats::merged(stats_[a], stats_[b], shared);
    stats_[a].id = a;

    std::vector<Edge> combined;
    combined.reserve(adj_[a].size() + adj_[b].size());
    auto ia = adj_[a].begin();
    auto ib = adj_[b].begin();
    while (ia != adj_[a].end() || ib != adj_[b].end()) {
      if (ib == adj_[b].end() || (ia != adj_[a].end() && ia->first < ib->first)) {
        if (ia->first != b) combined.push_back(*ia);
        ++ia;
      } else if (ia == adj_[a].end() || ib->first < ia->first) {
        if (ib->first != a) combined.push_back(*ib);
        ++ib;
      } else {
        combined.push_back({ia->first, ia->second + ib->second});
        ++ia;
        ++ib;
      }
    }
    for (const auto& [other, edges] : adj_[b]) {
      if (other == a) continue;
      erase(adj_[other], b);
      add(adj_[other], a, edges);
    }
    adj_[a] = std::move(combined);
    adj_[b].clear();
    adj_[b].shrink_to_fit();
    alive_[b] = 0;
    parent_[b] = a;
    return a;
  }

  const raster::LayerStack& stack_;
  MergeParams params_;
  std::array<double, kLayerCount> weights_;
  int w_ = 0;
  int h_ = 0;
  std::vector<SegmentStats> stats_;
  std::vector<std::vector<Edge>> adj_;
  std::vector<std::int32_t> parent_;
  std::vector<std::uint8_t> alive_;
  std::vector<std::uint32_t> stamp_;
};

}  // namespace

SegmentMap segment(const raster::LayerStack& stack, const MergeParams& params) {
  params.validate();
  if (stack.foreground_count() == 0) throw PreconditionError("segment: empty foreground");
  MergeEngine engine(stack, params);
  engine.run();
  SegmentMap map;
  map.grid_ = stack.grid();
  engine.finish(map.labels_, map.stats_, map.adjacency_);
  return map;
}

SegmentMap manual_merge(const SegmentMap& map, const std::set<SegmentId>& ids) {
  if (ids.empty()) throw PreconditionError("manual_merge: no segment ids given");
  for (const auto id : ids)
    if (!map.contains(id)) throw UnknownSegmentError(id);
  if (ids.size() == 1) return map;

  // Breadth-first over the adjacency restricted to `ids`.
  const SegmentId target = *ids.begin();
  std::vector<SegmentId> order{target};
  std::set<SegmentId> reached{target};
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (const auto& [nb, _] : map.adjacency_.at(order[head])) {
      if (ids.count(nb) && reached.insert(nb).second) order.push_back(nb);
    }
  }
  if (reached.size() != ids.size())
    throw PreconditionError("manual_merge: segments do not form a connected group");

  SegmentMap out = map;
  SegmentStats acc = map.stats_.at(target);
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& next = map.stats_.at(order[k]);
    std::int64_t shared = 0;
    for (const auto& [nb, edges] : map.adjacency_.at(order[k]))
      if (reached.count(nb) && std::find(order.begin(), order.begin() + k, nb) != order.begin() + k)
        shared += edges;
    acc = SegmentStats::merged(acc, next, shared);
  }
  acc.id = target;

  SegmentMap::Adjacency merged_adj;
  for (const auto id : order) {
    for (const auto& [nb, edges] : map.adjacency_.at(id)) {
      if (ids.count(nb)) continue;
      merged_adj[nb] += edges;
    }
  }
  for (const auto id : order) {
    if (id == target) continue;
    out.stats_.erase(id);
    out.adjacency_.erase(id);
  }
  for (auto& [nb, edges] : merged_adj) {
    auto& list = out.adjacency_.at(nb);
    for (const auto id : order) list.erase(id);
    list[target] = edges;
  }
  out.stats_[target] = acc;
  out.adjacency_[target] = std::move(merged_adj);
  for (auto& label : out.labels_)
    if (label != kBackground && label != target && ids.count(label)) label = target;
  return out;
}

}  // namespace crownpipe::segmentation
