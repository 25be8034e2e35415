#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crownpipe/image.hpp"
#include "crownpipe/labeling.hpp"
#include "crownpipe/segmentation.hpp"

namespace crownpipe::dataset {

using labeling::ClassId;
using segmentation::SegmentId;

enum class Split { Unassigned, Train, Val, Test };
std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view text);

struct Crop {
  RgbImage image;
  ClassId tree_class = 0;
  SegmentId source_segment = 0;
  std::int64_t pixel_count = 0;  // member pixels of the source segment
  Split split = Split::Unassigned;
  int lineage = 0;  // 0 = original, k > 0 = k-th augmented copy

  bool is_original() const noexcept { return lineage == 0; }
  std::string lineage_string() const;
};

inline constexpr Rgb kDefaultFill = {0, 0, 0};

// Bounding-box chip of segment `id`; pixels outside the segment get `fill`.
// Throws if the segment has no label in `store`.
Crop extract_crop(const RgbImage& ortho, const segmentation::SegmentMap& map,
                  const labeling::LabelStore& store, SegmentId id, Rgb fill = kDefaultFill);

// Chips for every labeled segment, in id order.
std::vector<Crop> extract_all(const RgbImage& ortho, const segmentation::SegmentMap& map,
                              const labeling::LabelStore& store, Rgb fill = kDefaultFill);

struct ClassCount {
  std::size_t before = 0;
  std::size_t after = 0;
};

struct FilterReport {
  std::map<ClassId, ClassCount> per_class;
  std::vector<std::string> warnings;
};

struct FilterResult {
  std::vector<Crop> crops;
  FilterReport report;
};

FilterResult filter_crops(std::vector<Crop> crops, std::int64_t min_pixels,
                          const std::set<SegmentId>& manual_reject);

// Centres `image` on a side x side canvas. Oversized inputs are first shrunk
// bilinearly preserving aspect, unless `downscale_allowed` is false, which
// makes them an error.
RgbImage pad_to_square(const RgbImage& image, int side = 256, Rgb fill = kDefaultFill,
                       bool downscale_allowed = true);

struct SplitSpec {
  double train = 0.50;
  double val = 0.25;
  double test = 0.25;
  std::uint64_t seed = 42;
  void validate() const;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// test = val = floor(n * fraction); classes smaller than 4 all go to train.
SplitCounts split_counts(std::size_t n, const SplitSpec& spec = {});

struct SplitResult {
  std::vector<Crop> crops;
  std::vector<std::string> warnings;
};

// Tags every crop. Shuffling is per class, seeded by (seed, class), over
// crops ordered by source segment, so input order does not matter.
SplitResult split(std::vector<Crop> crops, const SplitSpec& spec = {});

struct AugmentSpec {
  int copies = 20;
  double rotation_deg = 180.0;  // symmetric range
  double shift_fraction = 0.10;
  double shear_deg = 10.0;
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double flip_probability = 0.5;
  std::uint64_t seed = 42;
  Rgb fill = kDefaultFill;
  void validate() const;
};

struct AffineParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double shear_deg = 0.0;
  double zoom = 1.0;
  bool flip_h = false;
  bool flip_v = false;
};

// Draws one transform from the stream (seed, source segment, copy index).
AffineParams sample_affine(const AugmentSpec& spec, int width, int height, SegmentId source,
                           int copy_index);

// rotation * shear * zoom about the image centre, then shift, then flips;
// inverse-mapped with bilinear sampling, out-of-bounds pixels = fill.
RgbImage apply_affine(const RgbImage& image, const AffineParams& params, Rgb fill = kDefaultFill);

bool is_augmentable(const Crop& crop) noexcept;

// Original followed by `spec.copies` transformed copies; test crops and the
// "others" class come back unchanged as a single element.
std::vector<Crop> augment(const Crop& crop, const AugmentSpec& spec);
std::vector<Crop> augment_all(const std::vector<Crop>& crops, const AugmentSpec& spec);

struct ManifestRow {
  std::string path;  // relative to the manifest directory
  ClassId tree_class = 0;
  Split split = Split::Unassigned;
  std::string lineage;
  SegmentId source_segment = 0;
  bool operator==(const ManifestRow&) const = default;
};

inline constexpr const char* kManifestName = "manifest.csv";

// Writes `<out>/<class>/seg<id>_<lineage>.png` images and `<out>/manifest.csv`.
std::vector<ManifestRow> write_manifest(const std::vector<Crop>& crops,
                                        const std::filesystem::path& out_dir);
void write_manifest_csv(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Reloads crops listed in a manifest; lineage and split come from the rows.
std::vector<Crop> load_crops(const std::filesystem::path& manifest_path);

}  // namespace crownpipe::dataset
