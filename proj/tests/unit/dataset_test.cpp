#include <gtest/gtest.h>

#include <map>

#include "crownpipe/dataset.hpp"
#include "crownpipe/error.hpp"
#include "test_support.hpp"

using namespace crownpipe;
using namespace crownpipe::dataset;
using segmentation::SegmentMap;
using crownpipe::testing::make_stack;
using crownpipe::testing::TempDir;

namespace {

const std::array<std::size_t, 7> kArranged = {195, 53, 100, 348, 206, 39, 1223};
const std::array<std::size_t, 7> kTest = {48, 13, 25, 87, 51, 9, 305};
const std::array<std::size_t, 7> kTrainVal = {147, 40, 75, 261, 155, 30, 918};
const std::array<std::size_t, 7> kIncreased = {3087, 840, 1575, 5481, 3255, 630, 918};

RgbImage noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

std::vector<Crop> crops_per_class(const std::array<std::size_t, 7>& counts, int side = 2) {
  std::vector<Crop> out;
  SegmentId next = 1;
  for (int c = 0; c < 7; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Crop crop;
      crop.image = noise_image(side, side, static_cast<std::uint64_t>(next));
      crop.tree_class = c + 1;
      crop.source_segment = next++;
      crop.pixel_count = side * side;
      out.push_back(std::move(crop));
    }
  return out;
}

std::map<std::pair<ClassId, Split>, std::size_t> tally(const std::vector<Crop>& crops) {
  std::map<std::pair<ClassId, Split>, std::size_t> t;
  for (const auto& c : crops) ++t[{c.tree_class, c.split}];
  return t;
}

// 5x4 ortho with distinct pixels and a segment map over it.
struct Scene {
  RgbImage ortho;
  SegmentMap map;
};

Scene small_scene(std::vector<SegmentId> labels) {
  Scene s;
  s.ortho = RgbImage(5, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      s.ortho.set(x, y, {static_cast<std::uint8_t>(10 + x), static_cast<std::uint8_t>(100 + y),
                         static_cast<std::uint8_t>(x * y + 1)});
  const auto stack = make_stack(5, 4, [](int, int, int) { return 1.0; });
  s.map = SegmentMap::from_labels(stack, std::move(labels));
  return s;
}

}  // namespace

TEST(ExtractCrop, RectangleEqualsSubImage) {
  // Segment 2 is the 2x2 block at (3, 1).
  const auto s = small_scene({1, 1, 1, 1, 1,  //
                              1, 1, 1, 2, 2,  //
                              1, 1, 1, 2, 2,  //
                              1, 1, 1, 1, 1});
  labeling::LabelStore store;
  store.set_sample(2, 3);
  const auto crop = extract_crop(s.ortho, s.map, store, 2, {9, 9, 9});
  ASSERT_EQ(crop.image.width(), 2);
  ASSERT_EQ(crop.image.height(), 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) EXPECT_EQ(crop.image.at(x, y), s.ortho.at(3 + x, 1 + y));
  EXPECT_EQ(crop.tree_class, 3);
  EXPECT_EQ(crop.pixel_count, 4);
  EXPECT_TRUE(crop.is_original());
}

TEST(ExtractCrop, LShapeFillsExactlyTheNonMembers) {
  const auto s = small_scene({1, 1, 2, 2, 2,  //
                              1, 1, 2, 1, 1,  //
                              1, 1, 2, 1, 1,  //
                              1, 1, 1, 1, 1});
  labeling::LabelStore store;
  store.set_sample(1, 1);
  store.set_sample(2, 5);
  const Rgb fill = {1, 2, 3};
  const auto crop = extract_crop(s.ortho, s.map, store, 2, fill);
  ASSERT_EQ(crop.image.width(), 3);
  ASSERT_EQ(crop.image.height(), 3);
  int filled = 0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      const bool member = s.map.at(2 + x, y) == 2;
      EXPECT_EQ(crop.image.at(x, y), member ? s.ortho.at(2 + x, y) : fill);
      filled += !member;
    }
  EXPECT_EQ(filled, 4);
}

TEST(ExtractCrop, SinglePixelAndUnlabeled) {
  const auto s = small_scene({1, 1, 1, 1, 1,  //
                              1, 2, 1, 1, 1,  //
                              1, 1, 1, 1, 1,  //
                              1, 1, 1, 1, 1});
  labeling::LabelStore store;
  store.set_sample(2, 7);
  const auto crop = extract_crop(s.ortho, s.map, store, 2);
  EXPECT_EQ(crop.image.width(), 1);
  EXPECT_EQ(crop.image.height(), 1);
  EXPECT_EQ(crop.image.at(0, 0), s.ortho.at(1, 1));
  EXPECT_THROW(extract_crop(s.ortho, s.map, store, 1), PreconditionError);
  EXPECT_THROW(extract_crop(s.ortho, s.map, store, 3), UnknownSegmentError);
  EXPECT_EQ(extract_all(s.ortho, s.map, store).size(), 1u);
}

TEST(FilterCrops, IdentityRejectAndSizeRules) {
  auto crops = crops_per_class({3, 2, 0, 0, 0, 0, 4});
  crops[0].pixel_count = 10;
  auto same = filter_crops(crops, 0, {});
  EXPECT_EQ(same.crops.size(), crops.size());
  EXPECT_EQ(same.report.per_class.at(7).before, 4u);
  EXPECT_EQ(same.report.per_class.at(7).after, 4u);

  // Every crop has 4 pixels except crops[0]; the threshold is inclusive.
  const auto some = filter_crops(crops, 4, {crops[8].source_segment});
  EXPECT_EQ(some.crops.size(), crops.size() - 1);
  EXPECT_EQ(some.report.per_class.at(7).after, 3u);
  const auto big = filter_crops(crops, 5, {});
  ASSERT_EQ(big.crops.size(), 1u);
  EXPECT_EQ(big.crops[0].source_segment, crops[0].source_segment);
  EXPECT_EQ(big.report.per_class.at(1).before, 3u);
  EXPECT_EQ(big.report.per_class.at(1).after, 1u);

  std::set<SegmentId> all;
  for (const auto& c : crops) all.insert(c.source_segment);
  const auto none = filter_crops(crops, 0, all);
  EXPECT_TRUE(none.crops.empty());
  EXPECT_FALSE(none.report.warnings.empty());

  const auto small = filter_crops(crops, 5, {});
  EXPECT_EQ(small.crops.size(), crops.size() - 8);  // every 2x2 crop is below 5 pixels
}

TEST(PadToSquare, IdentityAndCentredOffsets) {
  const auto full = noise_image(256, 256, 1);
  EXPECT_EQ(pad_to_square(full), full);

  const Rgb fill = {7, 8, 9};
  const auto img = noise_image(100, 60, 2);
  const auto out = pad_to_square(img, 256, fill);
  ASSERT_EQ(out.width(), 256);
  ASSERT_EQ(out.height(), 256);
  std::size_t fill_count = 0;
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) {
      const bool inside = x >= 78 && x < 178 && y >= 98 && y < 158;
      if (inside) {
        EXPECT_EQ(out.at(x, y), img.at(x - 78, y - 98));
      } else {
        EXPECT_EQ(out.at(x, y), fill);
        ++fill_count;
      }
    }
  EXPECT_EQ(fill_count, 256u * 256u - 6000u);
}

TEST(PadToSquare, OversizedInputs) {
  const auto big = noise_image(300, 150, 3);
  const auto out = pad_to_square(big, 100);
  EXPECT_EQ(out.width(), 100);
  EXPECT_EQ(out.height(), 100);
  EXPECT_THROW(pad_to_square(big, 100, kDefaultFill, false), PreconditionError);
}

TEST(SplitCounts, FloorQuarterLaw) {
  for (int c = 0; c < 7; ++c) {
    const auto s = split_counts(kArranged[c]);
    EXPECT_EQ(s.test, kTest[c]);
    EXPECT_EQ(s.train + s.val, kTrainVal[c]);
    EXPECT_EQ(s.val, kArranged[c] / 4);
  }
  const auto four = split_counts(4);
  EXPECT_EQ(four.train, 2u);
  EXPECT_EQ(four.val, 1u);
  EXPECT_EQ(four.test, 1u);
  const auto three = split_counts(3);
  EXPECT_EQ(three.train, 3u);
  EXPECT_EQ(three.val + three.test, 0u);
}

TEST(Split, TagsReproduceReferenceCountsAndPartition) {
  const auto result = split(crops_per_class(kArranged, 1));
  const auto t = tally(result.crops);
  for (int c = 0; c < 7; ++c) {
    const ClassId cls = c + 1;
    EXPECT_EQ(t.at({cls, Split::Test}), kTest[c]);
    EXPECT_EQ(t.at({cls, Split::Train}) + t.at({cls, Split::Val}), kTrainVal[c]);
    EXPECT_FALSE(t.count({cls, Split::Unassigned}));
  }
  std::set<SegmentId> seen;
  for (const auto& c : result.crops) EXPECT_TRUE(seen.insert(c.source_segment).second);
  EXPECT_EQ(seen.size(), 2164u);
}

TEST(Split, OrderIndependentAndSeeded) {
  auto crops = crops_per_class({12, 9, 5, 0, 0, 0, 20});
  auto a = split(crops, SplitSpec{});
  std::reverse(crops.begin(), crops.end());
  auto b = split(crops, SplitSpec{});
  std::map<SegmentId, Split> ta, tb;
  for (const auto& c : a.crops) ta[c.source_segment] = c.split;
  for (const auto& c : b.crops) tb[c.source_segment] = c.split;
  EXPECT_EQ(ta, tb);
  SplitSpec other;
  other.seed = 7;
  std::map<SegmentId, Split> tc;
  for (const auto& c : split(crops, other).crops) tc[c.source_segment] = c.split;
  EXPECT_NE(ta, tc);
}

TEST(Split, SmallClassWarns) {
  const auto r = split(crops_per_class({3, 4, 0, 0, 0, 0, 0}));
  EXPECT_EQ(r.warnings.size(), 1u);
  for (const auto& c : r.crops)
    if (c.tree_class == 1) { EXPECT_EQ(c.split, Split::Train); }
}

TEST(Augment, CountLawMatchesIncreasedColumn) {
  auto crops = crops_per_class(kTrainVal, 2);
  for (std::size_t i = 0; i < crops.size(); ++i)
    crops[i].split = i % 3 == 0 ? Split::Val : Split::Train;
  const auto out = augment_all(crops, AugmentSpec{});
  std::array<std::size_t, 7> per_class{};
  for (const auto& c : out) ++per_class[static_cast<std::size_t>(c.tree_class - 1)];
  EXPECT_EQ(per_class, kIncreased);
}

TEST(Augment, CopiesInheritSplitAndTestIsUntouched) {
  auto crops = crops_per_class({2, 0, 0, 0, 0, 0, 1}, 6);
  crops[0].split = Split::Val;
  crops[1].split = Split::Test;
  crops[2].split = Split::Train;
  const auto val = augment(crops[0], AugmentSpec{});
  ASSERT_EQ(val.size(), 21u);
  EXPECT_TRUE(val[0].is_original());
  for (int k = 1; k < 21; ++k) {
    EXPECT_EQ(val[k].lineage, k);
    EXPECT_EQ(val[k].split, Split::Val);
    EXPECT_EQ(val[k].source_segment, crops[0].source_segment);
  }
  EXPECT_EQ(augment(crops[1], AugmentSpec{}).size(), 1u);
  EXPECT_EQ(augment(crops[2], AugmentSpec{}).size(), 1u);  // others
}

TEST(Augment, IdentityTransformIsPixelExact) {
  const auto img = noise_image(17, 11, 5);
  EXPECT_EQ(apply_affine(img, AffineParams{}), img);
  // Identity parameters through the sampler as well.
  AugmentSpec spec;
  spec.rotation_deg = 0;
  spec.shift_fraction = 0;
  spec.shear_deg = 0;
  spec.zoom_min = spec.zoom_max = 1.0;
  spec.flip_probability = 0;
  Crop crop;
  crop.image = img;
  crop.tree_class = 2;
  crop.source_segment = 4;
  crop.split = Split::Train;
  for (const auto& c : augment(crop, spec)) EXPECT_EQ(c.image, img);
}

TEST(Augment, FlipsMirrorExactly) {
  const auto img = noise_image(6, 4, 9);
  AffineParams h;
  h.flip_h = true;
  AffineParams v;
  v.flip_v = true;
  const auto fh = apply_affine(img, h);
  const auto fv = apply_affine(img, v);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      EXPECT_EQ(fh.at(x, y), img.at(5 - x, y));
      EXPECT_EQ(fv.at(x, y), img.at(x, 3 - y));
    }
}

TEST(Augment, SamplesStayInRangeAndAreReproducible) {
  const AugmentSpec spec;
  for (int k = 1; k <= 200; ++k) {
    const auto p = sample_affine(spec, 40, 20, 3, k);
    EXPECT_LE(std::abs(p.rotation_deg), 180.0);
    EXPECT_LE(std::abs(p.shift_x), 4.0);
    EXPECT_LE(std::abs(p.shift_y), 2.0);
    EXPECT_LE(std::abs(p.shear_deg), 10.0);
    EXPECT_GE(p.zoom, 0.9);
    EXPECT_LE(p.zoom, 1.1);
    const auto q = sample_affine(spec, 40, 20, 3, k);
    EXPECT_EQ(p.rotation_deg, q.rotation_deg);
    EXPECT_EQ(p.flip_h, q.flip_h);
  }
  Crop crop;
  crop.image = noise_image(9, 9, 1);
  crop.tree_class = 1;
  crop.source_segment = 12;
  crop.split = Split::Train;
  const auto a = augment(crop, spec);
  const auto b = augment(crop, spec);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image, b[i].image);
}

TEST(Manifest, RoundTripPreservesTags) {
  TempDir dir;
  auto crops = split(crops_per_class({5, 4, 0, 0, 0, 0, 6}, 3)).crops;
  crops = augment_all(crops, AugmentSpec{.copies = 2});
  const auto rows = write_manifest(crops, dir.path());
  EXPECT_EQ(rows.size(), crops.size());
  EXPECT_EQ(read_manifest(dir / kManifestName), rows);
  const auto back = load_crops(dir / kManifestName);
  ASSERT_EQ(back.size(), crops.size());
  std::map<std::pair<SegmentId, int>, const Crop*> by_key;
  for (const auto& c : crops) by_key[{c.source_segment, c.lineage}] = &c;
  for (const auto& c : back) {
    const auto* orig = by_key.at({c.source_segment, c.lineage});
    EXPECT_EQ(c.split, orig->split);
    EXPECT_EQ(c.tree_class, orig->tree_class);
    EXPECT_EQ(c.image, orig->image);
  }
  for (const auto& r : rows)
    EXPECT_EQ(r.path.rfind(std::to_string(r.tree_class) + "/", 0), 0u) << r.path;
}
