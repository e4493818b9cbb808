#include "wmcir/view_forge.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace wmcir {

namespace {

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

double draw_aspect(const CropRanges& r, Rng& rng) {
  // Log-uniform so that r and 1/r are equally likely around the range center.
  if (r.aspect_min == r.aspect_max) return r.aspect_min;
  return std::exp(rng.uniform(std::log(r.aspect_min), std::log(r.aspect_max)));
}

double draw_scale(const CropRanges& r, Rng& rng) {
  if (r.scale_min == r.scale_max) return r.scale_min;
  return rng.uniform(r.scale_min, r.scale_max);
}

}  // namespace

void validate(const RawPair& pair) {
  if (pair.image.height < 32 || pair.image.width < 32)
    throw std::invalid_argument("pair '" + pair.id + "': image must be at least 32x32, got " +
                                std::to_string(pair.image.width) + "x" + std::to_string(pair.image.height));
  if (pair.caption.empty()) throw std::invalid_argument("pair '" + pair.id + "': empty caption");
}

void CropRanges::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0))
    throw std::invalid_argument("crop scale range must satisfy 0 < min <= max <= 1");
  if (!(aspect_min > 0.0 && aspect_min <= aspect_max))
    throw std::invalid_argument("crop aspect range must satisfy 0 < min <= max");
}

CropExtent crop_extent(int image_w, int image_h, double scale, double aspect) {
  const double area = static_cast<double>(image_w) * image_h;
  int w = round_half_up(std::sqrt(scale * aspect * area));
  int h = round_half_up(std::sqrt(scale * area / aspect));
  if (w <= 0) throw std::domain_error("degenerate crop: width rounds to 0");
  if (h <= 0) throw std::domain_error("degenerate crop: height rounds to 0");
  w = std::max(w, std::min(kMinCropSide, image_w));
  h = std::max(h, std::min(kMinCropSide, image_h));
  return {w, h};
}

CropSpec sample_crop_spec(int image_w, int image_h, const CropRanges& ranges, Rng& rng) {
  if (image_w < 32 || image_h < 32) throw std::invalid_argument("sample_crop_spec: image must be at least 32x32");
  ranges.validate();
  double s = 0.0, r = 0.0;
  CropExtent ext{0, 0};
  bool fits = false;
  for (int attempt = 0; attempt <= kMaxCropRedraws && !fits; ++attempt) {
    s = draw_scale(ranges, rng);
    r = draw_aspect(ranges, rng);
    ext = crop_extent(image_w, image_h, s, r);
    fits = ext.width <= image_w && ext.height <= image_h;
  }
  if (!fits) {
    // Keep the area target and pull the aspect ratio toward 1 until it fits.
    const double lo = s * image_w / image_h;
    const double hi = image_w / (s * image_h);
    r = std::clamp(r, lo, hi);
    ext = crop_extent(image_w, image_h, s, r);
    ext.width = std::min(ext.width, image_w);
    ext.height = std::min(ext.height, image_h);
  }
  CropSpec spec;
  spec.scale = s;
  spec.aspect = r;
  spec.width = ext.width;
  spec.height = ext.height;
  spec.x = static_cast<int>(rng.uniform_int(0, image_w - ext.width));
  spec.y = static_cast<int>(rng.uniform_int(0, image_h - ext.height));
  return spec;
}

ViewTriplet make_triplet(const RawPair& pair, const ViewConfig& cfg, Rng& rng) {
  validate(pair);
  const int W = pair.image.width, H = pair.image.height;
  ViewTriplet t;
  t.id = pair.id;
  t.target_image = pair.image;
  t.action_text = pair.caption;
  switch (cfg.source) {
    case SourceMode::crop:
      t.crop_spec = sample_crop_spec(W, H, cfg.ranges, rng);
      t.source_image = crop(pair.image, t.crop_spec.x, t.crop_spec.y, t.crop_spec.width, t.crop_spec.height);
      break;
    case SourceMode::identity:
      t.crop_spec = CropSpec{0, 0, 1.0, static_cast<double>(W) / H, W, H};
      t.source_image = pair.image;
      break;
    case SourceMode::random_mask: {
      cfg.ranges.validate();
      const double s = draw_scale(cfg.ranges, rng);
      const int cell = std::max(1, cfg.mask_cell);
      const int gx = (W + cell - 1) / cell, gy = (H + cell - 1) / cell;
      const int cells = gx * gy;
      const int keep = std::clamp(round_half_up(s * cells), 1, cells);
      std::vector<int> order(static_cast<std::size_t>(cells));
      std::iota(order.begin(), order.end(), 0);
      for (int i = 0; i < keep; ++i) {
        const auto j = rng.uniform_int(i, cells - 1);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
      std::vector<char> visible(static_cast<std::size_t>(cells), 0);
      for (int i = 0; i < keep; ++i) visible[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
      t.source_image = pair.image;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (!visible[static_cast<std::size_t>((y / cell) * gx + x / cell)])
            for (int c = 0; c < 3; ++c) t.source_image.at(y, x, c) = 0.5f;
      t.crop_spec = CropSpec{0, 0, s, static_cast<double>(W) / H, W, H};
      break;
    }
  }
  return t;
}

MaskBlock make_mask_block(int grid, int top, int left, int rows, int cols) {
  if (grid < 1 || rows < 1 || cols < 1 || top < 0 || left < 0 || top + rows > grid || left + cols > grid)
    throw std::invalid_argument("mask block outside the patch grid");
  MaskBlock b;
  b.grid = grid;
  b.top = top;
  b.left = left;
  b.rows = rows;
  b.cols = cols;
  b.indices.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = top; r < top + rows; ++r)
    for (int c = left; c < left + cols; ++c) b.indices.push_back(r * grid + c);
  return b;
}

MaskBlock full_mask_block(int grid) { return make_mask_block(grid, 0, 0, grid, grid); }

MaskBlock sample_mask_block(int grid, const CropRanges& ranges, bool entire_image, Rng& rng) {
  if (grid < 2) throw std::invalid_argument("sample_mask_block: grid side must be >= 2");
  if (entire_image) return full_mask_block(grid);
  ranges.validate();
  const double s = draw_scale(ranges, rng);
  const double r = draw_aspect(ranges, rng);
  const double cells = static_cast<double>(grid) * grid;
  int bw = std::clamp(round_half_up(std::sqrt(s * r * cells)), 1, grid);
  int bh = std::clamp(round_half_up(std::sqrt(s * cells / r)), 1, grid);
  if (bw == grid && bh == grid) bh -= 1;  // strict subset unless predicting the whole image
  const int top = static_cast<int>(rng.uniform_int(0, grid - bh));
  const int left = static_cast<int>(rng.uniform_int(0, grid - bw));
  MaskBlock b = make_mask_block(grid, top, left, bh, bw);
  b.block_scale = s;
  b.block_aspect = r;
  return b;
}

// ------------------------------------------------------------ synthetic data

namespace {

struct Color {
  const char* name;
  unsigned char r, g, b;
};

constexpr std::array<Color, 8> kColors{{{"red", 220, 40, 40},
                                        {"green", 40, 170, 60},
                                        {"blue", 40, 80, 220},
                                        {"yellow", 235, 210, 40},
                                        {"purple", 140, 60, 180},
                                        {"orange", 240, 140, 30},
                                        {"white", 240, 240, 240},
                                        {"black", 20, 20, 20}}};
constexpr std::array<const char*, 6> kShapes{"circle", "square", "triangle", "diamond", "cross", "ring"};
constexpr std::array<const char*, 2> kSizes{"small", "large"};

bool inside_shape(int shape, double dx, double dy, double radius) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0: return dx * dx + dy * dy <= radius * radius;
    case 1: return ax <= radius && ay <= radius;
    case 2: {  // upward triangle inscribed in the bounding square
      if (dy < -radius || dy > radius) return false;
      const double half_width = radius * (dy + radius) / (2.0 * radius);
      return ax <= half_width;
    }
    case 3: return ax + ay <= radius;
    case 4: return (ax <= radius * 0.35 && ay <= radius) || (ay <= radius * 0.35 && ax <= radius);
    case 5: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= radius * radius && d2 >= 0.3 * radius * radius;
    }
    default: return false;
  }
}

}  // namespace

const std::vector<std::string>& synth_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v{"a", "on", "field"};
    for (const auto* s : kSizes) v.emplace_back(s);
    for (const auto& c : kColors) v.emplace_back(c.name);
    for (const auto* s : kShapes) v.emplace_back(s);
    return v;
  }();
  return vocab;
}

std::vector<RawPair> synth_dataset(int n, std::uint64_t seed, int image_size) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (image_size < 32) throw std::invalid_argument("synth_dataset: image size must be >= 32");
  // Scene parameterizations: size x shape color x shape x background color (!= shape color).
  struct Scene {
    int size, color, shape, background;
  };
  std::vector<Scene> scenes;
  for (int sz = 0; sz < static_cast<int>(kSizes.size()); ++sz)
    for (int c = 0; c < static_cast<int>(kColors.size()); ++c)
      for (int sh = 0; sh < static_cast<int>(kShapes.size()); ++sh)
        for (int bg = 0; bg < static_cast<int>(kColors.size()); ++bg)
          if (bg != c) scenes.push_back({sz, c, sh, bg});

  Rng order_rng(derive_seed(seed, 0x5ca1ab1e));
  for (std::size_t i = scenes.size() - 1; i > 0; --i)
    std::swap(scenes[i], scenes[static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i)))]);

  std::vector<RawPair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Scene& sc = scenes[static_cast<std::size_t>(i) % scenes.size()];
    Rng rng(derive_seed(seed, 0xd47a, static_cast<std::uint64_t>(i)));
    const double radius = image_size * (sc.size == 0 ? 0.16 : 0.3);
    const double cx = rng.uniform(radius, image_size - radius);
    const double cy = rng.uniform(radius, image_size - radius);
    const Color& fg = kColors[static_cast<std::size_t>(sc.color)];
    const Color& bg = kColors[static_cast<std::size_t>(sc.background)];

    RawPair p;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05d", i);
    p.id = id;
    p.image = Image(image_size, image_size);
    for (int y = 0; y < image_size; ++y)
      for (int x = 0; x < image_size; ++x) {
        const bool in = inside_shape(sc.shape, x + 0.5 - cx, y + 0.5 - cy, radius);
        const Color& col = in ? fg : bg;
        p.image.at(y, x, 0) = static_cast<float>(col.r) / 255.0f;
        p.image.at(y, x, 1) = static_cast<float>(col.g) / 255.0f;
        p.image.at(y, x, 2) = static_cast<float>(col.b) / 255.0f;
      }
    p.caption = std::string("a ") + kSizes[static_cast<std::size_t>(sc.size)] + " " + fg.name + " " +
                kShapes[static_cast<std::size_t>(sc.shape)] + " on a " + bg.name + " field";
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------- manifests

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("image").get<std::string>(),
                     j.at("caption").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& e : entries)
    os << nlohmann::json{{"id", e.id}, {"image", e.image}, {"caption", e.caption}}.dump() << "\n";
}

std::filesystem::path write_dataset(const std::vector<RawPair>& pairs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::vector<ManifestEntry> entries;
  for (const auto& p : pairs) {
    const std::string rel = "images/" + p.id + ".ppm";
    write_ppm(p.image, dir / rel);
    entries.push_back({p.id, rel, p.caption});
  }
  const auto manifest = dir / "manifest.jsonl";
  write_manifest(entries, manifest);
  return manifest;
}

std::vector<RawPair> load_dataset(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  std::vector<RawPair> out;
  for (const auto& e : read_manifest(manifest_path)) {
    RawPair p{e.id, read_ppm(base / e.image), e.caption};
    validate(p);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace wmcir
