#pragma once

// Source/target world-view generation.
//
// A training triplet pairs a random crop of an image (the source view) with
// the full image (the target view) and its caption (the action). Crop extent
// follows W_c = sqrt(s*r*W*H), H_c = sqrt(s*W*H/r) for a crop scale s and
// aspect ratio r drawn from configured ranges. Mask blocks over the patch
// grid reuse the same (s, r) law.

#include "wmcir/image.hpp"
#include "wmcir/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wmcir {

struct RawPair {
  std::string id;
  Image image;
  std::string caption;
};

/// Throws std::invalid_argument unless H, W >= 32 and the caption is non-empty.
void validate(const RawPair& pair);

struct CropRanges {
  double scale_min = 0.2;
  double scale_max = 0.25;
  double aspect_min = 0.75;
  double aspect_max = 1.5;

  void validate() const;
};

struct CropSpec {
  int x = 0;
  int y = 0;
  double scale = 1.0;
  double aspect = 1.0;
  int width = 0;
  int height = 0;

  bool operator==(const CropSpec&) const = default;
};

inline constexpr int kMinCropSide = 8;
inline constexpr int kMaxCropRedraws = 10;

struct CropExtent {
  int width;
  int height;
};

/// Closed-form crop extent with round-half-up. A side rounding to zero is a
/// rejection error; positive sides below kMinCropSide are raised to it.
CropExtent crop_extent(int image_w, int image_h, double scale, double aspect);

/// Draws (s, r) and a uniformly placed offset. Out-of-bounds draws are
/// retried kMaxCropRedraws times, after which r is clamped toward 1.
CropSpec sample_crop_spec(int image_w, int image_h, const CropRanges& ranges, Rng& rng);

enum class SourceMode {
  crop,         // random crop (default)
  identity,     // the whole image; "no crop" ablation
  random_mask,  // full-size image with random cells blanked
};

struct ViewConfig {
  CropRanges ranges;
  SourceMode source = SourceMode::crop;
  int mask_cell = 8;  // cell size in px for SourceMode::random_mask
};

struct ViewTriplet {
  std::string id;
  Image source_image;
  Image target_image;
  std::string action_text;
  CropSpec crop_spec;
};

ViewTriplet make_triplet(const RawPair& pair, const ViewConfig& cfg, Rng& rng);

struct MaskBlock {
  int grid = 0;
  int top = 0;
  int left = 0;
  int rows = 0;
  int cols = 0;
  double block_scale = 1.0;
  double block_aspect = 1.0;
  /// Flat row-major grid indices (r * grid + c), ordered row by row.
  std::vector<int> indices;

  std::size_t size() const { return indices.size(); }
};

MaskBlock make_mask_block(int grid, int top, int left, int rows, int cols);
/// All grid positions; used for the entire-image ablation and at inference.
MaskBlock full_mask_block(int grid);
MaskBlock sample_mask_block(int grid, const CropRanges& ranges, bool entire_image, Rng& rng);

// ------------------------------------------------------------ synthetic data

inline constexpr int kSynthImageSize = 64;

/// Procedural shapes on plain backgrounds with templated captions
/// ("a small red circle on a green field").
std::vector<RawPair> synth_dataset(int n, std::uint64_t seed, int image_size = kSynthImageSize);

/// Closed vocabulary of the synthetic captions.
const std::vector<std::string>& synth_vocabulary();

// ---------------------------------------------------------------- manifests

struct ManifestEntry {
  std::string id;
  std::string image;  // path relative to the manifest directory
  std::string caption;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// Writes images/<id>.ppm and manifest.jsonl under dir.
std::filesystem::path write_dataset(const std::vector<RawPair>& pairs, const std::filesystem::path& dir);
std::vector<RawPair> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace wmcir
