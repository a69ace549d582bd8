#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "spanet/tensor.hpp"

namespace spanet {

// Parameter container: 8 magic bytes "SPANPRM1", a little-endian u64 giving
// the JSON index length, the UTF-8 JSON index, then the raw payload of
// little-endian float64 values. The index is
// {"format": "spanet-params", "version": 1, "tensors": {...}} where "tensors"
// maps each name, in insertion order, to
// {"dtype": "f64", "shape": [...], "offset": <byte offset into payload>}.

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_container(const std::filesystem::path& path, const NamedTensors& tensors);
/// Throws IoError for unreadable or malformed files.
NamedTensors read_container(const std::filesystem::path& path);

std::vector<char> encode_container(const NamedTensors& tensors);
NamedTensors decode_container(const std::vector<char>& bytes);

}  // namespace spanet
