#pragma once

// Manifest + blob persistence shared by corpora, checkpoints and embedding
// files: a JSON manifest next to a raw little-endian float32 blob.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/errors.hpp"

namespace mantis::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.json";

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::span<const float> v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(v.data(), v.size_bytes(), h);
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::vector<char> to_le_bytes(std::span<const float> values) {
  std::vector<char> bytes(values.size_bytes());
  std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
  return bytes;
}

inline void write_blob(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const auto bytes = to_le_bytes(values);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

// Reads exactly `count` floats; any size mismatch is a corruption error.
inline std::vector<float> read_blob(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CorruptionError("missing blob '" + path.string() + "'");
  const auto size = std::size_t(in.tellg());
  if (size != count * sizeof(float))
    throw CorruptionError("blob '" + path.string() + "' holds " + std::to_string(size) +
                          " bytes, manifest expects " + std::to_string(count * sizeof(float)));
  in.seekg(0);
  std::vector<char> bytes(size);
  in.read(bytes.data(), std::streamsize(size));
  if (!in) throw CorruptionError("short read on '" + path.string() + "'");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
  std::vector<float> values(count);
  std::memcpy(values.data(), bytes.data(), size);
  return values;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CorruptionError("missing manifest '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptionError("corrupt manifest '" + path.string() + "': " + e.what());
  }
}

// Typed field access that reports schema problems as corruption.
template <class V>
V field(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw CorruptionError(where + ": bad or missing field '" + key + "': " + e.what());
  }
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
}

// Checksum record stored in manifests next to a blob.
inline json blob_record(const std::string& file, std::span<const float> values) {
  return {{"file", file}, {"floats", values.size()}, {"fnv1a64", hex64(fnv1a64(values))}};
}

inline std::vector<float> read_checked_blob(const fs::path& dir, const json& record,
                                            const std::string& where) {
  const auto file = field<std::string>(record, "file", where);
  const auto n = field<std::size_t>(record, "floats", where);
  auto values = read_blob(dir / file, n);
  if (hex64(fnv1a64(values)) != field<std::string>(record, "fnv1a64", where))
    throw CorruptionError(where + ": checksum mismatch for '" + file + "'");
  return values;
}

}  // namespace mantis::io
