#include "wmcir/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace wmcir {

namespace {

constexpr char kMagic[8] = {'W', 'M', 'C', 'I', 'R', 'A', 'R', '1'};

}  // namespace

const Mat& Archive::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.value;
  throw std::out_of_range("archive has no array named '" + name + "'");
}

bool Archive::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kArchiveFormatVersion;
  manifest["meta"] = archive.meta;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::set<std::string> names;
  for (const auto& a : archive.arrays) {
    if (!names.insert(a.name).second) throw std::invalid_argument("archive: duplicate array name '" + a.name + "'");
    const std::uint64_t nbytes = static_cast<std::uint64_t>(a.value.size()) * sizeof(double);
    manifest["arrays"].push_back({{"name", a.name},
                                  {"shape", {a.value.rows(), a.value.cols()}},
                                  {"dtype", "f64"},
                                  {"order", "col_major"},
                                  {"offset", offset},
                                  {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = manifest.dump();
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
    os.write(kMagic, sizeof kMagic);
    const std::uint64_t len = header.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& a : archive.arrays)
      os.write(reinterpret_cast<const char*>(a.value.data()),
               static_cast<std::streamsize>(a.value.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open archive: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("not a wmcir archive: " + path.string());
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1ULL << 32)) throw std::runtime_error("corrupt archive header: " + path.string());
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("truncated archive header: " + path.string());

  Archive out;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt archive manifest in " + path.string() + ": " + e.what());
  }
  const int version = manifest.value("format_version", 0);
  if (version != kArchiveFormatVersion)
    throw std::runtime_error("unsupported archive format version " + std::to_string(version) + " in " +
                             path.string());
  out.meta = manifest.at("meta");
  const auto payload_start = is.tellg();
  for (const auto& entry : manifest.at("arrays")) {
    if (entry.at("dtype") != "f64") throw std::runtime_error("unsupported dtype in " + path.string());
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    NamedArray a{entry.at("name").get<std::string>(), Mat(rows, cols)};
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(a.value.data()), static_cast<std::streamsize>(a.value.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated array '" + a.name + "' in " + path.string());
    out.arrays.push_back(std::move(a));
  }
  return out;
}

}  // namespace wmcir
