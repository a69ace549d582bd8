#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace spanet {

/// Tool version recorded in every manifest.
std::string version();

/// Lower-case hex SHA-256 of a file's bytes. Throws IoError.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const void* data, std::size_t size);

/// Record of one CLI invocation, written next to its outputs.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json flags = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> outputs;  // relative to the output directory
};

/// Digests every output (relative to `dir`) and writes the manifest JSON to
/// `dir / name`. Returns the JSON that was written.
nlohmann::ordered_json write_manifest(const RunManifest& m, const std::filesystem::path& dir,
                                      const std::string& name);

/// Writes `j` with two-space indentation and a trailing newline.
void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace spanet
