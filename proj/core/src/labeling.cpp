#include "crownpipe/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "crownpipe/error.hpp"

namespace crownpipe::labeling {

namespace {

constexpr std::array<TreeClass, kClassCount> kClasses = {{
    {1, "deciduous broad-leaved tree", "#E6A020"},
    {2, "deciduous coniferous tree", "#C0502A"},
    {3, "evergreen broad-leaved tree", "#2E8B57"},
    {4, "Chamaecyparis obtuse", "#1F4E79"},
    {5, "Pinus", "#7B3FA0"},
    {6, "Pinus strobus", "#36B3C9"},
    {7, "others", "#9A9A9A"},
}};

}  // namespace

const std::array<TreeClass, kClassCount>& tree_classes() { return kClasses; }

bool is_valid_class(ClassId id) noexcept { return id >= 1 && id <= kClassCount; }

const TreeClass& tree_class(ClassId id) {
  if (!is_valid_class(id)) throw PreconditionError("tree class must be 1..7, got " + std::to_string(id));
  return kClasses[static_cast<std::size_t>(id - 1)];
}

std::string legend_json() {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : kClasses)
    arr.push_back({{"id", c.id}, {"name", std::string(c.name)}, {"color", std::string(c.color)}});
  return arr.dump();
}

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::Sample: return "sample";
    case Provenance::Predicted: return "predicted";
    case Provenance::Corrected: return "corrected";
  }
  return "sample";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "sample") return Provenance::Sample;
  if (text == "predicted") return Provenance::Predicted;
  if (text == "corrected") return Provenance::Corrected;
  throw IoError("unknown provenance '" + std::string(text) + "'");
}

const LabelRecord* LabelStore::find(SegmentId id) const {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

void LabelStore::put(SegmentId id, ClassId cls, Provenance p) {
  tree_class(cls);
  if (id <= 0) throw PreconditionError("label store: invalid segment id " + std::to_string(id));
  records_[id] = {cls, p, ++revision_};
}

void LabelStore::set_sample(SegmentId id, ClassId cls) { put(id, cls, Provenance::Sample); }

void LabelStore::set_corrected(SegmentId id, ClassId cls) {
  auto it = records_.find(id);
  if (it != records_.end() && it->second.provenance == Provenance::Corrected &&
      it->second.tree_class == cls)
    return;
  put(id, cls, Provenance::Corrected);
}

bool LabelStore::set_predicted(SegmentId id, ClassId cls) {
  auto it = records_.find(id);
  if (it != records_.end()) {
    if (it->second.is_human()) return false;
    if (it->second.tree_class == cls) return false;
  }
  put(id, cls, Provenance::Predicted);
  return true;
}

void LabelStore::erase(SegmentId id) {
  if (records_.erase(id)) ++revision_;
}

std::vector<SegmentId> LabelStore::sample_ids() const {
  std::vector<SegmentId> out;
  for (const auto& [id, r] : records_)
    if (r.is_human()) out.push_back(id);
  return out;
}

namespace {

std::string record_line(SegmentId id, const LabelRecord& r) {
  nlohmann::json j = {{"segment", id}, {"class", r.tree_class}, {"provenance", to_string(r.provenance)}};
  return j.dump();
}

}  // namespace

void LabelStore::save(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& [id, r] : records_) out << record_line(id, r) << '\n';
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void LabelStore::append(const std::filesystem::path& path, SegmentId id) const {
  const auto* r = find(id);
  if (!r) throw UnknownSegmentError(id);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << record_line(id, *r) << '\n';
  out.flush();
  if (!out) throw IoError("short write to " + path.string());
}

LabelStore LabelStore::load(const std::filesystem::path& path) {
  LabelStore store;
  if (!std::filesystem::exists(path)) return store;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      store.put(j.at("segment").get<SegmentId>(), j.at("class").get<ClassId>(),
                parse_provenance(j.at("provenance").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return store;
}

bool LabelStore::operator==(const LabelStore& other) const {
  if (records_.size() != other.records_.size()) return false;
  return std::equal(records_.begin(), records_.end(), other.records_.begin(),
                    [](const auto& a, const auto& b) {
                      return a.first == b.first && a.second.tree_class == b.second.tree_class &&
                             a.second.provenance == b.second.provenance;
                    });
}

FeatureVector raw_features(const segmentation::SegmentStats& stats) {
  FeatureVector f{};
  for (int k = 0; k < raster::kLayerCount; ++k) {
    f[k] = stats.mean(k);
    f[raster::kLayerCount + k] = stats.stddev(k);
  }
  return f;
}

FeatureTable segment_features(const raster::LayerStack& stack,
                              const segmentation::SegmentMap& map) {
  if (!(stack.grid() == map.grid())) throw PreconditionError("segment map is not built over this stack");
  if (map.segment_count() == 0) throw PreconditionError("segment_features: empty segment map");

  FeatureTable table;
  for (const auto& [id, s] : map.all_stats()) table.features.emplace(id, raw_features(s));

  const double count = static_cast<double>(table.features.size());
  for (int d = 0; d < kFeatureCount; ++d) {
    double sum = 0.0;
    for (const auto& [_, f] : table.features) sum += f[d];
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& [_, f] : table.features) ss += (f[d] - mean) * (f[d] - mean);
    const double sd = std::sqrt(ss / count);
    table.mean[d] = mean;
    table.stddev[d] = sd;
    for (auto& [_, f] : table.features) f[d] = sd > 0.0 ? (f[d] - mean) / sd : 0.0;
  }
  return table;
}

std::map<SegmentId, ClassId> nn_classify(const FeatureTable& features, const LabelStore& store) {
  struct Sample {
    SegmentId id;
    ClassId cls;
    const FeatureVector* f;
  };
  std::vector<Sample> samples;
  for (const auto& [id, r] : store.records()) {
    if (!r.is_human()) continue;
    auto it = features.features.find(id);
    if (it == features.features.end()) continue;
    samples.push_back({id, r.tree_class, &it->second});
  }
  if (samples.empty()) throw PreconditionError("nn_classify: no training samples");

  std::map<SegmentId, ClassId> out;
  for (const auto& [id, f] : features.features) {
    const auto* rec = store.find(id);
    if (rec && rec->is_human()) continue;
    double best = std::numeric_limits<double>::infinity();
    const Sample* winner = nullptr;
    // Samples are in ascending id order; strict < keeps the lower id on ties.
    for (const auto& s : samples) {
      double d2 = 0.0;
      for (int k = 0; k < kFeatureCount; ++k) {
        const double diff = f[k] - (*s.f)[k];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        winner = &s;
      }
    }
    out.emplace(id, winner->cls);
  }
  return out;
}

std::size_t apply_predictions(LabelStore& store, const std::map<SegmentId, ClassId>& predictions) {
  std::size_t changed = 0;
  for (const auto& [id, cls] : predictions)
    if (store.set_predicted(id, cls)) ++changed;
  return changed;
}

void apply_correction(LabelStore& store, const segmentation::SegmentMap& map, SegmentId id,
                      ClassId cls) {
  if (!map.contains(id)) throw UnknownSegmentError(id);
  store.set_corrected(id, cls);
}

GroundTruth export_ground_truth(const segmentation::SegmentMap& map, const LabelStore& store) {
  std::vector<long long> missing;
  std::map<SegmentId, ClassId> lookup;
  for (const auto id : map.ids()) {
    const auto* r = store.find(id);
    if (!r) {
      missing.push_back(id);
    } else {
      lookup.emplace(id, r->tree_class);
    }
  }
  if (!missing.empty()) throw UnlabeledSegmentsError(std::move(missing));

  GroundTruth gt{map.grid(), std::vector<ClassId>(map.labels().size(), 0)};
  const auto labels = map.labels();
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != segmentation::kBackground) gt.classes[i] = lookup.at(labels[i]);
  return gt;
}

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& raster_path,
                        const std::filesystem::path& legend_path) {
  raster::write_int_ascii_grid(raster_path,
                               {gt.grid, std::vector<std::int32_t>(gt.classes.begin(), gt.classes.end())});
  std::ofstream out(legend_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + legend_path.string());
  out << legend_json() << '\n';
}

GroundTruth read_ground_truth(const std::filesystem::path& raster_path) {
  auto r = raster::read_int_ascii_grid(raster_path);
  for (const auto v : r.values)
    if (v != 0 && !is_valid_class(v))
      throw IoError(raster_path.string() + ": invalid class id " + std::to_string(v));
  return {r.grid, std::vector<ClassId>(r.values.begin(), r.values.end())};
}

}  // namespace crownpipe::labeling
