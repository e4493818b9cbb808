#pragma once

#include <filesystem>
#include <vector>

namespace wmcir {

/// Interleaved RGB raster, row-major, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // height * width * 3

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

/// Pixel-exact subrectangle; throws if the rectangle leaves the image.
Image crop(const Image& img, int x, int y, int w, int h);

/// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Binary PPM (P6, 8-bit). Values are quantized to k/255.
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace wmcir
