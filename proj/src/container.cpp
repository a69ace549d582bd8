#include "spanet/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "spanet/error.hpp"

namespace spanet {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'N', 'P', 'R', 'M', '1'};

void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::vector<char> encode_container(const NamedTensors& tensors) {
  nlohmann::ordered_json index;
  index["format"] = "spanet-params";
  index["version"] = 1;
  index["tensors"] = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (index["tensors"].contains(name)) throw IoError("duplicate tensor name '" + name + "'");
    index["tensors"][name] = {{"dtype", "f64"}, {"shape", t.shape()}, {"offset", offset}};
    offset += 8 * t.size();
  }
  const std::string header = index.dump();

  std::vector<char> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors) {
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

NamedTensors decode_container(const std::vector<char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("not a parameter container (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw IoError("truncated container index");
  const std::size_t payload = 16 + static_cast<std::size_t>(header_len);

  nlohmann::ordered_json index;
  try {
    index = nlohmann::ordered_json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(payload));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed container index: ") + e.what());
  }
  if (!index.contains("tensors") || !index["tensors"].is_object()) {
    throw IoError("container index has no tensor table");
  }
  NamedTensors out;
  try {
    for (const auto& [name, entry] : index["tensors"].items()) {
      if (entry.at("dtype").get<std::string>() != "f64") {
        throw IoError("tensor '" + name + "' has unsupported dtype");
      }
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      std::size_t count = 1;
      for (auto d : shape) count *= d;
      if (offset % 8 != 0 || payload + offset + 8 * count > bytes.size()) {
        throw IoError("tensor '" + name + "' lies outside the payload");
      }
      std::vector<double> data(count);
      const char* p = bytes.data() + payload + offset;
      for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<double>(get_u64(p + 8 * i));
      out.emplace_back(name, Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed container entry: ") + e.what());
  }
  return out;
}

void write_container(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_container(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

NamedTensors read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace spanet
