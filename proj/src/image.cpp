#include "wmcir/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace wmcir {

Image::Image(int h, int w, float fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw std::invalid_argument("Image: negative dimensions");
  data.assign(static_cast<std::size_t>(h) * w * 3, fill);
}

Image crop(const Image& img, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > img.width || y + h > img.height)
    throw std::out_of_range("crop rectangle (" + std::to_string(x) + "," + std::to_string(y) + "," +
                            std::to_string(w) + "x" + std::to_string(h) + ") outside " +
                            std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
  Image out(h, w);
  for (int r = 0; r < h; ++r) {
    const auto* src = &img.data[(static_cast<std::size_t>(y + r) * img.width + x) * 3];
    std::copy(src, src + static_cast<std::size_t>(w) * 3, &out.data[static_cast<std::size_t>(r) * w * 3]);
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0 || img.height <= 0 || img.width <= 0)
    throw std::invalid_argument("resize_bilinear: empty image or target");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
        const double bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
        out.at(r, c, ch) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(is, rest);
  }
  return {};
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image: " + path.string());
  if (header_token(is) != "P6") throw std::runtime_error("not a binary PPM (P6): " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(header_token(is));
    h = std::stoi(header_token(is));
    maxval = std::stoi(header_token(is));
  } catch (const std::exception&) {
    throw std::runtime_error("malformed PPM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported PPM geometry: " + path.string());
  is.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("truncated PPM data: " + path.string());
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

}  // namespace wmcir
