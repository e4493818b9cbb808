#include "wmcir/view_forge.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

using namespace wmcir;

namespace {

Image gradient_image(int h, int w) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<float>(x) / static_cast<float>(w);
      img.at(y, x, 1) = static_cast<float>(y) / static_cast<float>(h);
      img.at(y, x, 2) = static_cast<float>((x * 7 + y * 3) % 11) / 11.0f;
    }
  return img;
}

}  // namespace

TEST_SUITE("view_forge") {

TEST_CASE("crop extent follows the area law") {
  // 100x100, s = 0.25, r = 1 -> 50x50; r = 2 -> sqrt(5000)=70.7 x sqrt(1250)=35.4
  auto e = crop_extent(100, 100, 0.25, 1.0);
  CHECK(e.width == 50);
  CHECK(e.height == 50);
  e = crop_extent(100, 100, 0.25, 2.0);
  CHECK(e.width == 71);
  CHECK(e.height == 35);
  // tiny crops are raised to the minimum side
  e = crop_extent(40, 40, 0.01, 1.0);
  CHECK(e.width == kMinCropSide);
  CHECK(e.height == kMinCropSide);
  CHECK_THROWS_AS(crop_extent(40, 40, 1e-6, 1.0), std::domain_error);
}

TEST_CASE("sampled crops are contained and respect the configured ranges") {
  CropRanges ranges;
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const int W = 32 + static_cast<int>(rng.uniform_int(0, 96));
    const int H = 32 + static_cast<int>(rng.uniform_int(0, 96));
    const CropSpec c = sample_crop_spec(W, H, ranges, rng);
    REQUIRE(c.x >= 0);
    REQUIRE(c.y >= 0);
    REQUIRE(c.x + c.width <= W);
    REQUIRE(c.y + c.height <= H);
    CHECK(c.scale >= ranges.scale_min);
    CHECK(c.scale <= ranges.scale_max);
    const double area = static_cast<double>(W) * H;
    const double wt = std::sqrt(c.scale * c.aspect * area), ht = std::sqrt(c.scale * area / c.aspect);
    if (wt >= kMinCropSide) CHECK(std::abs(c.width - wt) <= 0.5 + 1e-9);
    if (ht >= kMinCropSide) CHECK(std::abs(c.height - ht) <= 0.5 + 1e-9);
  }
}

TEST_CASE("degenerate ranges and small images are rejected") {
  Rng rng(1);
  CropRanges bad;
  bad.scale_min = 0.5;
  bad.scale_max = 0.2;
  CHECK_THROWS_AS(sample_crop_spec(64, 64, bad, rng), std::invalid_argument);
  bad = CropRanges{};
  bad.aspect_min = 0.0;
  CHECK_THROWS_AS(sample_crop_spec(64, 64, bad, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_crop_spec(31, 64, CropRanges{}, rng), std::invalid_argument);
}

TEST_CASE("wide aspect on a narrow image falls back to a fitting crop") {
  CropRanges ranges;
  ranges.scale_min = ranges.scale_max = 0.9;
  ranges.aspect_min = ranges.aspect_max = 4.0;
  Rng rng(3);
  const CropSpec c = sample_crop_spec(32, 128, ranges, rng);
  CHECK(c.width <= 32);
  CHECK(c.height <= 128);
  CHECK(c.aspect < 4.0);
}

TEST_CASE("triplet source is the pixel-exact crop of the target") {
  RawPair p{"p0", gradient_image(48, 64), "a small red circle on a green field"};
  Rng rng(5);
  ViewConfig cfg;
  for (int i = 0; i < 50; ++i) {
    const ViewTriplet t = make_triplet(p, cfg, rng);
    CHECK(t.target_image == p.image);
    CHECK(t.action_text == p.caption);
    REQUIRE(t.source_image.width == t.crop_spec.width);
    REQUIRE(t.source_image.height == t.crop_spec.height);
    bool same = true;
    for (int y = 0; y < t.source_image.height; ++y)
      for (int x = 0; x < t.source_image.width; ++x)
        for (int c = 0; c < 3; ++c)
          same = same && t.source_image.at(y, x, c) == p.image.at(y + t.crop_spec.y, x + t.crop_spec.x, c);
    CHECK(same);
  }
  cfg.source = SourceMode::identity;
  CHECK(make_triplet(p, cfg, rng).source_image == p.image);
}

TEST_CASE("random mask source keeps size and blanks whole cells") {
  RawPair p{"p0", gradient_image(64, 64), "caption"};
  ViewConfig cfg;
  cfg.source = SourceMode::random_mask;
  Rng rng(9);
  const ViewTriplet t = make_triplet(p, cfg, rng);
  CHECK(t.source_image.width == 64);
  CHECK(t.source_image.height == 64);
  int blank = 0, kept = 0;
  for (int cy = 0; cy < 8; ++cy)
    for (int cx = 0; cx < 8; ++cx) {
      bool all_gray = true, all_same = true;
      for (int y = cy * 8; y < cy * 8 + 8; ++y)
        for (int x = cx * 8; x < cx * 8 + 8; ++x)
          for (int c = 0; c < 3; ++c) {
            all_gray = all_gray && t.source_image.at(y, x, c) == 0.5f;
            all_same = all_same && t.source_image.at(y, x, c) == p.image.at(y, x, c);
          }
      CHECK((all_gray || all_same));
      blank += all_gray && !all_same;
      kept += all_same;
    }
  // s in [0.2, 0.25] of 64 cells visible
  CHECK(kept >= 13);
  CHECK(kept <= 16);
  CHECK(blank + kept == 64);
}

TEST_CASE("invalid pairs are rejected") {
  Rng rng(0);
  CHECK_THROWS_AS(make_triplet(RawPair{"x", Image(16, 64), "c"}, ViewConfig{}, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_triplet(RawPair{"x", Image(64, 64), ""}, ViewConfig{}, rng), std::invalid_argument);
}

TEST_CASE("mask blocks are rectangles inside the grid") {
  Rng rng(21);
  for (int grid : {2, 4, 8, 16}) {
    for (int i = 0; i < 200; ++i) {
      const MaskBlock b = sample_mask_block(grid, CropRanges{}, false, rng);
      REQUIRE(b.size() == static_cast<std::size_t>(b.rows * b.cols));
      CHECK(b.top + b.rows <= grid);
      CHECK(b.left + b.cols <= grid);
      CHECK(b.size() < static_cast<std::size_t>(grid * grid));
      std::set<int> expect;
      for (int r = b.top; r < b.top + b.rows; ++r)
        for (int c = b.left; c < b.left + b.cols; ++c) expect.insert(r * grid + c);
      CHECK(std::set<int>(b.indices.begin(), b.indices.end()) == expect);
      CHECK(std::is_sorted(b.indices.begin(), b.indices.end()));
    }
  }
  const MaskBlock full = sample_mask_block(4, CropRanges{}, true, rng);
  CHECK(full.size() == 16);
  CHECK_THROWS_AS(make_mask_block(4, 3, 0, 2, 1), std::invalid_argument);
}

TEST_CASE("synthetic corpus is seeded and round-trips through a manifest") {
  const auto a = synth_dataset(12, 4);
  const auto b = synth_dataset(12, 4);
  REQUIRE(a.size() == 12);
  std::set<std::string> ids, captions;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].caption == b[i].caption);
    validate(a[i]);
    ids.insert(a[i].id);
    captions.insert(a[i].caption);
  }
  CHECK(ids.size() == 12);
  CHECK(captions.size() == 12);

  const auto dir = std::filesystem::temp_directory_path() / "wmcir_test_manifest";
  std::filesystem::remove_all(dir);
  const auto manifest = write_dataset(a, dir);
  const auto back = load_dataset(manifest);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(back[i].id == a[i].id);
    CHECK(back[i].caption == a[i].caption);
    CHECK(back[i].image.width == a[i].image.width);
    // 8-bit quantization
    double err = 0.0;
    for (std::size_t k = 0; k < a[i].image.data.size(); ++k)
      err = std::max(err, static_cast<double>(std::abs(back[i].image.data[k] - a[i].image.data[k])));
    CHECK(err <= 0.5 / 255.0 + 1e-6);
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
