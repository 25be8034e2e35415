#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crownpipe/raster.hpp"
#include "crownpipe/segmentation.hpp"

namespace crownpipe::labeling {

using segmentation::SegmentId;
using ClassId = int;

struct TreeClass {
  ClassId id;
  std::string_view name;
  std::string_view color;  // "#RRGGBB"
};

inline constexpr int kClassCount = 7;
inline constexpr ClassId kOthers = 7;

const std::array<TreeClass, kClassCount>& tree_classes();
const TreeClass& tree_class(ClassId id);
bool is_valid_class(ClassId id) noexcept;
// `[{"id":1,"name":"...","color":"#RRGGBB"},...]`
std::string legend_json();

enum class Provenance { Sample, Predicted, Corrected };
std::string_view to_string(Provenance p) noexcept;
Provenance parse_provenance(std::string_view text);

struct LabelRecord {
  ClassId tree_class = 0;
  Provenance provenance = Provenance::Sample;
  // Logical clock: revision of the store when the record was last written.
  std::uint64_t timestamp = 0;

  bool is_human() const noexcept { return provenance != Provenance::Predicted; }
  bool operator==(const LabelRecord&) const = default;
};

class LabelStore {
 public:
  const LabelRecord* find(SegmentId id) const;
  const std::map<SegmentId, LabelRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  std::uint64_t revision() const noexcept { return revision_; }

  // Human-chosen training sample.
  void set_sample(SegmentId id, ClassId cls);
  // Human correction; the segment becomes a sample for later runs.
  void set_corrected(SegmentId id, ClassId cls);
  // Writes a prediction unless the segment holds a human record. Returns
  // whether the store changed.
  bool set_predicted(SegmentId id, ClassId cls);
  void erase(SegmentId id);

  // Segments carrying sample or corrected records.
  std::vector<SegmentId> sample_ids() const;

  // JSON lines `{"segment":int,"class":int,"provenance":str}`. Loading replays
  // lines in order, later lines overriding earlier ones.
  void save(const std::filesystem::path& path) const;
  static LabelStore load(const std::filesystem::path& path);
  // Appends the current record for `id` to a journal file.
  void append(const std::filesystem::path& path, SegmentId id) const;

  bool operator==(const LabelStore& other) const;

 private:
  void put(SegmentId id, ClassId cls, Provenance p);

  std::map<SegmentId, LabelRecord> records_;
  std::uint64_t revision_ = 0;
};

inline constexpr int kFeatureCount = 2 * raster::kLayerCount;
using FeatureVector = std::array<double, kFeatureCount>;

struct FeatureTable {
  std::map<SegmentId, FeatureVector> features;  // standardized
  FeatureVector mean{};                         // per-dimension raw mean
  FeatureVector stddev{};                       // per-dimension raw population std
};

// Raw features per segment: layer means then layer standard deviations.
FeatureVector raw_features(const segmentation::SegmentStats& stats);

// Standardizes every dimension to zero mean, unit variance over all segments;
// zero-variance dimensions become 0.
FeatureTable segment_features(const raster::LayerStack& stack,
                              const segmentation::SegmentMap& map);

// 1-NN in feature space. Returns a class for every segment without a human
// record; ties go to the lower sample segment id.
std::map<SegmentId, ClassId> nn_classify(const FeatureTable& features, const LabelStore& store);

// Writes predictions into the store; human records are left untouched.
std::size_t apply_predictions(LabelStore& store, const std::map<SegmentId, ClassId>& predictions);

// Sets (cls, corrected). Throws UnknownSegmentError if `id` is not in `map`.
void apply_correction(LabelStore& store, const segmentation::SegmentMap& map, SegmentId id,
                      ClassId cls);

struct GroundTruth {
  raster::Grid grid;
  std::vector<ClassId> classes;  // per pixel; 0 for background
  bool operator==(const GroundTruth&) const = default;
};

// Throws UnlabeledSegmentsError listing any foreground segment without a label.
GroundTruth export_ground_truth(const segmentation::SegmentMap& map, const LabelStore& store);
void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& raster_path,
                        const std::filesystem::path& legend_path);
GroundTruth read_ground_truth(const std::filesystem::path& raster_path);

}  // namespace crownpipe::labeling
