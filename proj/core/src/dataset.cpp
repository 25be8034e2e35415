#include "crownpipe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "crownpipe/error.hpp"
#include "crownpipe/random.hpp"

namespace crownpipe::dataset {

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Unassigned: return "unassigned";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  if (text == "unassigned") return Split::Unassigned;
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw IoError("unknown split '" + std::string(text) + "'");
}

std::string Crop::lineage_string() const {
  return lineage == 0 ? std::string("original") : "augmented(" + std::to_string(lineage) + ")";
}

namespace {

int parse_lineage(const std::string& text) {
  if (text == "original") return 0;
  if (text.rfind("augmented(", 0) == 0 && text.back() == ')') {
    try {
      const int k = std::stoi(text.substr(10, text.size() - 11));
      if (k > 0) return k;
    } catch (const std::exception&) {
    }
  }
  throw IoError("unknown lineage '" + text + "'");
}

}  // namespace

Crop extract_crop(const RgbImage& ortho, const segmentation::SegmentMap& map,
                  const labeling::LabelStore& store, SegmentId id, Rgb fill) {
  const auto& stats = map.stats(id);
  const auto* record = store.find(id);
  if (!record) throw PreconditionError("extract_crop: segment " + std::to_string(id) + " is unlabeled");
  if (ortho.width() != map.width() || ortho.height() != map.height())
    throw PreconditionError("extract_crop: orthomosaic is not on the segment grid");

  const auto& box = stats.bbox;
  Crop crop;
  crop.image = RgbImage(box.w, box.h, fill);
  crop.tree_class = record->tree_class;
  crop.source_segment = id;
  crop.pixel_count = stats.n;
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x)
      if (map.at(box.x + x, box.y + y) == id) crop.image.set(x, y, ortho.at(box.x + x, box.y + y));
  return crop;
}

std::vector<Crop> extract_all(const RgbImage& ortho, const segmentation::SegmentMap& map,
                              const labeling::LabelStore& store, Rgb fill) {
  std::vector<Crop> crops;
  for (const auto id : map.ids())
    if (store.find(id)) crops.push_back(extract_crop(ortho, map, store, id, fill));
  return crops;
}

FilterResult filter_crops(std::vector<Crop> crops, std::int64_t min_pixels,
                          const std::set<SegmentId>& manual_reject) {
  FilterResult result;
  for (auto& crop : crops) {
    auto& count = result.report.per_class[crop.tree_class];
    ++count.before;
    if (crop.pixel_count < min_pixels || manual_reject.count(crop.source_segment)) continue;
    ++count.after;
    result.crops.push_back(std::move(crop));
  }
  if (result.crops.empty() && !crops.empty())
    result.report.warnings.push_back("filter_crops: every crop was removed");
  return result;
}

namespace {

Rgb bilinear(const RgbImage& img, double x, double y) {
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, img.width() - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    const double v = (1 - fx) * (1 - fy) * img.channel(x0, y0, c) +
                     fx * (1 - fy) * img.channel(x1, y0, c) +
                     (1 - fx) * fy * img.channel(x0, y1, c) + fx * fy * img.channel(x1, y1, c);
    out[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

RgbImage shrink(const RgbImage& image, int w, int h) {
  RgbImage out(w, h);
  const double sx = static_cast<double>(image.width()) / w;
  const double sy = static_cast<double>(image.height()) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.set(x, y, bilinear(image, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5));
  return out;
}

}  // namespace

RgbImage pad_to_square(const RgbImage& image, int side, Rgb fill, bool downscale_allowed) {
  if (side <= 0) throw PreconditionError("pad_to_square: side must be positive");
  if (image.empty()) throw PreconditionError("pad_to_square: empty image");
  const RgbImage* src = &image;
  RgbImage shrunk;
  if (image.width() > side || image.height() > side) {
    if (!downscale_allowed)
      throw PreconditionError("pad_to_square: image larger than " + std::to_string(side) +
                              " and downscaling disabled");
    const double scale = static_cast<double>(side) / std::max(image.width(), image.height());
    const int w = std::clamp(static_cast<int>(std::lround(image.width() * scale)), 1, side);
    const int h = std::clamp(static_cast<int>(std::lround(image.height() * scale)), 1, side);
    shrunk = shrink(image, w, h);
    src = &shrunk;
  }
  RgbImage out(side, side, fill);
  const int ox = (side - src->width()) / 2;
  const int oy = (side - src->height()) / 2;
  for (int y = 0; y < src->height(); ++y)
    for (int x = 0; x < src->width(); ++x) out.set(ox + x, oy + y, src->at(x, y));
  return out;
}

void SplitSpec::validate() const {
  if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
    throw PreconditionError("split fractions must be nonnegative and sum to 1");
}

SplitCounts split_counts(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  if (n < 4) return {n, 0, 0};
  SplitCounts c;
  c.test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test + 1e-9));
  c.val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val + 1e-9));
  c.train = n - c.test - c.val;
  return c;
}

SplitResult split(std::vector<Crop> crops, const SplitSpec& spec) {
  spec.validate();
  std::map<ClassId, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < crops.size(); ++i) by_class[crops[i].tree_class].push_back(i);

  SplitResult result;
  for (auto& [cls, idx] : by_class) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(crops[a].source_segment, crops[a].lineage) <
             std::tie(crops[b].source_segment, crops[b].lineage);
    });
    Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(cls)}));
    rng.shuffle(idx.begin(), idx.end());
    const auto counts = split_counts(idx.size(), spec);
    if (idx.size() < 4)
      result.warnings.push_back("class " + std::to_string(cls) + " has only " +
                                std::to_string(idx.size()) + " crop(s); all assigned to train");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Split s = Split::Train;
      if (k < counts.test) {
        s = Split::Test;
      } else if (k < counts.test + counts.val) {
        s = Split::Val;
      }
      crops[idx[k]].split = s;
    }
  }
  result.crops = std::move(crops);
  return result;
}

void AugmentSpec::validate() const {
  if (copies < 0) throw PreconditionError("augment: copies must be >= 0");
  if (rotation_deg < 0 || shift_fraction < 0 || shear_deg < 0)
    throw PreconditionError("augment: ranges must be nonnegative");
  if (!(zoom_min > 0 && zoom_min <= zoom_max)) throw PreconditionError("augment: bad zoom range");
  if (flip_probability < 0 || flip_probability > 1)
    throw PreconditionError("augment: flip probability must lie in [0, 1]");
}

AffineParams sample_affine(const AugmentSpec& spec, int width, int height, SegmentId source,
                           int copy_index) {
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(source),
                       static_cast<std::uint64_t>(copy_index)}));
  AffineParams p;
  p.rotation_deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
  p.shift_x = rng.uniform(-spec.shift_fraction, spec.shift_fraction) * width;
  p.shift_y = rng.uniform(-spec.shift_fraction, spec.shift_fraction) * height;
  p.shear_deg = rng.uniform(-spec.shear_deg, spec.shear_deg);
  p.zoom = rng.uniform(spec.zoom_min, spec.zoom_max);
  p.flip_h = rng.bernoulli(spec.flip_probability);
  p.flip_v = rng.bernoulli(spec.flip_probability);
  return p;
}

RgbImage apply_affine(const RgbImage& image, const AffineParams& p, Rgb fill) {
  const int w = image.width();
  const int h = image.height();
  RgbImage out(w, h, fill);
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(th);
  const double st = std::sin(th);
  const double k = std::tan(p.shear_deg * std::numbers::pi / 180.0);
  const double iz = 1.0 / p.zoom;
  // Inverse of R * Sh * Z: (1/z) * Sh^-1 * R^-1.
  const double r00 = ct, r01 = st, r10 = -st, r11 = ct;  // R^-1
  const double m00 = iz * (r00 - k * r10);
  const double m01 = iz * (r01 - k * r11);
  const double m10 = iz * r10;
  const double m11 = iz * r11;
  const double eps = 1e-9;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double qx = p.flip_h ? (w - 1 - x) : x;
      const double qy = p.flip_v ? (h - 1 - y) : y;
      const double dx = qx - cx - p.shift_x;
      const double dy = qy - cy - p.shift_y;
      const double sx = m00 * dx + m01 * dy + cx;
      const double sy = m10 * dx + m11 * dy + cy;
      if (sx < -eps || sy < -eps || sx > w - 1 + eps || sy > h - 1 + eps) continue;
      out.set(x, y, bilinear(image, sx, sy));
    }
  }
  return out;
}

bool is_augmentable(const Crop& crop) noexcept {
  return crop.tree_class != labeling::kOthers &&
         (crop.split == Split::Train || crop.split == Split::Val);
}

std::vector<Crop> augment(const Crop& crop, const AugmentSpec& spec) {
  spec.validate();
  std::vector<Crop> out{crop};
  if (!is_augmentable(crop)) return out;
  out.reserve(static_cast<std::size_t>(spec.copies) + 1);
  for (int k = 1; k <= spec.copies; ++k) {
    const auto params =
        sample_affine(spec, crop.image.width(), crop.image.height(), crop.source_segment, k);
    Crop copy = crop;
    copy.image = apply_affine(crop.image, params, spec.fill);
    copy.lineage = k;
    out.push_back(std::move(copy));
  }
  return out;
}

std::vector<Crop> augment_all(const std::vector<Crop>& crops, const AugmentSpec& spec) {
  std::vector<Crop> out;
  for (const auto& crop : crops) {
    if (!crop.is_original()) continue;
    auto batch = augment(crop, spec);
    std::move(batch.begin(), batch.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

std::string image_name(const Crop& crop) {
  std::string name = "seg" + std::to_string(crop.source_segment) + "_";
  name += crop.lineage == 0 ? std::string("original") : "aug" + std::to_string(crop.lineage);
  return name + ".png";
}

}  // namespace

void write_manifest_csv(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "path,class,split,lineage,source_segment\n";
  for (const auto& r : rows)
    out << r.path << ',' << r.tree_class << ',' << to_string(r.split) << ',' << r.lineage << ','
        << r.source_segment << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<ManifestRow> write_manifest(const std::vector<Crop>& crops,
                                        const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestRow> rows;
  rows.reserve(crops.size());
  for (const auto& crop : crops) {
    const auto dir = out_dir / std::to_string(crop.tree_class);
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const std::string rel = std::to_string(crop.tree_class) + "/" + image_name(crop);
    write_png_rgb(out_dir / rel, crop.image);
    rows.push_back({rel, crop.tree_class, crop.split, crop.lineage_string(), crop.source_segment});
  }
  write_manifest_csv(rows, out_dir / kManifestName);
  return rows;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("path,class,split,lineage,source_segment", 0) != 0)
    throw IoError(path.string() + ": missing manifest header");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      ManifestRow row;
      row.path = fields[0];
      row.tree_class = std::stoi(fields[1]);
      row.split = parse_split(fields[2]);
      row.lineage = fields[3];
      parse_lineage(row.lineage);
      row.source_segment = std::stoi(fields[4]);
      rows.push_back(std::move(row));
    } catch (const std::logic_error& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<Crop> load_crops(const std::filesystem::path& manifest_path) {
  const auto rows = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<Crop> crops;
  crops.reserve(rows.size());
  for (const auto& row : rows) {
    Crop crop;
    crop.image = read_png_rgb(base / row.path);
    crop.tree_class = row.tree_class;
    crop.source_segment = row.source_segment;
    crop.split = row.split;
    crop.lineage = parse_lineage(row.lineage);
    crops.push_back(std::move(crop));
  }
  return crops;
}

}  // namespace crownpipe::dataset
