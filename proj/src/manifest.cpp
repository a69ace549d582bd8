#include "spanet/manifest.hpp"

#include <array>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "spanet/error.hpp"

#ifndef SPANET_VERSION
#define SPANET_VERSION "0.0.0"
#endif

namespace spanet {

namespace {

using DigestCtx = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

DigestCtx new_ctx() {
  DigestCtx ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 initialisation failed");
  }
  return ctx;
}

std::string finish_hex(EVP_MD_CTX* ctx) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, md.data(), &len) != 1) throw Error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

template <class J>
void write_text(const J& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string version() { return SPANET_VERSION; }

std::string sha256_hex(const void* data, std::size_t size) {
  auto ctx = new_ctx();
  EVP_DigestUpdate(ctx.get(), data, size);
  return finish_hex(ctx.get());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  auto ctx = new_ctx();
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad()) throw IoError("failed reading " + path.string());
  return finish_hex(ctx.get());
}

nlohmann::ordered_json write_manifest(const RunManifest& m, const std::filesystem::path& dir,
                                      const std::string& name) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["flags"] = m.flags;
  j["seed"] = m.seed;
  j["version"] = version();
  j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& p : m.outputs) {
    j["outputs"].push_back({{"path", p.generic_string()}, {"sha256", sha256_file(dir / p)}});
  }
  write_text(j, dir / name);
  return j;
}

void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
  write_text(j, path);
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  write_text(j, path);
}

}  // namespace spanet
