#pragma once

// Single-file archive of named f64 arrays plus a JSON manifest.
//
// Layout: 8-byte magic "WMCIRAR1", u64 little-endian manifest length, the
// manifest JSON, then the raw array payloads. The manifest lists each array's
// name, shape, dtype, byte offset (relative to the payload start) and size.

#include "wmcir/autodiff.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace wmcir {

inline constexpr int kArchiveFormatVersion = 1;

struct NamedArray {
  std::string name;
  Mat value;
};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const Mat& array(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

}  // namespace wmcir
