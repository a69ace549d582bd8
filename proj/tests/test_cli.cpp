#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "spanet/container.hpp"
#include "spanet/error.hpp"
#include "spanet/manifest.hpp"

using namespace spanet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kTool = SPANET_TOOL;
const std::string kConfigs = SPANET_CONFIG_DIR;

fs::path fresh_dir(const std::string& tag) {
  std::string templ = (fs::temp_directory_path() / ("spanet-" + tag + "-XXXXXX")).string();
  REQUIRE(mkdtemp(templ.data()) != nullptr);
  return templ;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + kTool + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json load(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return json::parse(in);
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  return std::count(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>(), '\n');
}

void check_manifest(const fs::path& dir, const fs::path& name, const std::string& command) {
  const json m = load(dir / name);
  CHECK(m["command"] == command);
  CHECK(m["version"] == version());
  CHECK(m.contains("flags"));
  CHECK(m.contains("seed"));
  REQUIRE(m["outputs"].is_array());
  CHECK(!m["outputs"].empty());
  for (const auto& o : m["outputs"]) {
    const fs::path p = dir / o["path"].get<std::string>();
    CHECK(fs::exists(p));
    CHECK(o["sha256"] == sha256_file(p));
  }
}

std::vector<std::string> digests(const fs::path& manifest) {
  std::vector<std::string> out;
  for (const auto& o : load(manifest)["outputs"]) out.push_back(o["sha256"]);
  return out;
}

}  // namespace

TEST_CASE("sha256 digests") {
  CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("", 0) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const fs::path dir = fresh_dir("sha");
  std::ofstream(dir / "abc.txt") << "abc";
  CHECK(sha256_file(dir / "abc.txt") == sha256_hex("abc", 3));
  CHECK_THROWS_AS(sha256_file(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("parameter container") {
  const fs::path dir = fresh_dir("container");
  Tensor a({2, 3}), b({4}), s({1});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.1 * double(i) - 1.0 / 3.0;
  b[0] = -0.0;
  b[1] = 1e-310;
  b[2] = 1e300;
  b[3] = std::nextafter(1.0, 2.0);
  s[0] = 42.0;
  const NamedTensors named{{"z.weight", a}, {"a.bias", b}, {"scalar", s}};
  write_container(dir / "p.bin", named);
  const NamedTensors back = read_container(dir / "p.bin");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].first == named[i].first);
    CHECK(back[i].second.shape() == named[i].second.shape());
    CHECK(std::memcmp(back[i].second.values().data(), named[i].second.values().data(),
                      named[i].second.size() * sizeof(double)) == 0);
  }
  const std::vector<char> bytes = encode_container(named);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "SPANPRM1");

  SUBCASE("malformed inputs") {
    std::vector<char> bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_container(bad), IoError);
    bad = bytes;
    bad.resize(bad.size() - 8);
    CHECK_THROWS_AS(decode_container(bad), IoError);
    bad = std::vector<char>(bytes.begin(), bytes.begin() + 12);
    CHECK_THROWS_AS(decode_container(bad), IoError);
    bad = bytes;
    bad[8] = char(0xff);
    bad[15] = char(0x7f);
    CHECK_THROWS_AS(decode_container(bad), IoError);
    CHECK_THROWS_AS(read_container(dir / "nope.bin"), IoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest writer") {
  const fs::path dir = fresh_dir("manifest");
  std::ofstream(dir / "out.txt") << "payload";
  RunManifest m{"verify", {{"suite", "conv"}}, 3, {"out.txt"}};
  const auto j = write_manifest(m, dir, "m.json");
  CHECK(j["seed"] == 3);
  CHECK(j["flags"]["suite"] == "conv");
  check_manifest(dir, "m.json", "verify");
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  const fs::path dir = fresh_dir("exit");
  const std::string out = "--out " + dir.string() + " ";
  CHECK(run("--version") == 0);
  CHECK(run(out + "frobnicate") == 2);
  CHECK(run(out + "profile --graph grid --kernel 3 --trials 0") == 2);
  CHECK(run(out + "profile --graph grid --kernel 4 --trials 1 --patch 4") == 2);
  CHECK(run(out + "profile --graph grid --kernel three --trials 1 --patch 4") == 2);
  CHECK(run(out + "profile --graph torus --kernel 3 --trials 1 --patch 4") == 2);
  CHECK(run(out + "profile --graph grid --kernel attention --trials 1 --patch 4") == 2);
  CHECK(run(out + "verify --suite everything") == 2);
  CHECK(run(out + "model --config " + (dir / "missing.json").string() + " --action build") == 3);
  {
    std::ofstream(dir / "bad.json") << R"({"dims": [6, 16, 32, 64], "image_size": 64})";
    CHECK(run(out + "model --config " + (dir / "bad.json").string() + " --action build") == 2);
    std::ofstream(dir / "typo.json") << R"({"dimz": [8, 16, 32, 64]})";
    CHECK(run(out + "model --config " + (dir / "typo.json").string() + " --action build") == 2);
  }
  CHECK(run(out + "model --config " + kConfigs + "/toy_pure.json --action dance") == 2);
  std::ofstream(dir / "garbage.bin") << "not a container";
  CHECK(run(out + "rla --input " + (dir / "garbage.bin").string()) == 3);
  fs::remove_all(dir);
}

TEST_CASE("profile command") {
  const fs::path a = fresh_dir("profile-a"), b = fresh_dir("profile-b");
  const std::string flags = "profile --graph grid --kernel 5 --trials 3 --patch 4 --seed 9";
  REQUIRE(run("--out " + a.string() + " --threads 1 " + flags) == 0);
  REQUIRE(run("--threads 2 " + flags, "SPANET_OUTPUT_DIR=" + b.string()) == 0);
  const std::string stem = "profile-grid-k5-t3-p4-seed9";
  CHECK(line_count(a / (stem + ".csv")) == 3 * 16 + 1);
  CHECK(line_count(a / (stem + ".aggregate.csv")) == 33);
  check_manifest(a, stem + ".manifest.json", "profile");
  CHECK(digests(a / (stem + ".manifest.json")) == digests(b / (stem + ".manifest.json")));
  const json summary = load(a / (stem + ".summary.json"));
  CHECK(summary["trials"] == 3);
  CHECK(summary["eigenvalue_min"].get<double>() >= -1e-9);
  CHECK(summary["eigenvalue_max"].get<double>() <= 2.0 + 1e-9);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("verify command") {
  const fs::path dir = fresh_dir("verify");
  REQUIRE(run("--out " + dir.string() + " verify --suite conv --seed 4") == 0);
  const json r = load(dir / "verify-conv-seed4.json");
  CHECK(r["instances"] == 100);
  CHECK(r["passed"] == true);
  CHECK(r["max_error"].get<double>() <= r["tolerance"].get<double>());
  check_manifest(dir, "verify-conv-seed4.manifest.json", "verify");
  fs::remove_all(dir);
}

TEST_CASE("model command") {
  const fs::path dir = fresh_dir("model");
  const std::string out = "--out " + dir.string() + " ";
  REQUIRE(run(out + "model --config " + kConfigs + "/s18_pure.json --action count-params") == 0);
  const json c = load(dir / "model-s18_pure-count-params.json");
  CHECK(std::abs(c["total_parameters"].get<double>() - 29e6) <= 2.9e6);
  check_manifest(dir, "model-s18_pure-count-params.manifest.json", "model");

  const std::string toy = kConfigs + "/toy_pure.json";
  REQUIRE(run(out + "model --config " + toy + " --action build --seed 3") == 0);
  const NamedTensors built = read_container(dir / "model-toy_pure-build.params.bin");
  CHECK(built.front().first == "stages.0.down.conv.weight");

  // forward with an explicit image and the saved parameters
  Tensor img({3, 64, 64});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::sin(0.01 * double(i));
  write_container(dir / "image.bin", {{"image", img}});
  REQUIRE(run(out + "model --config " + toy + " --action forward --image " + (dir / "image.bin").string() +
              " --params " + (dir / "model-toy_pure-build.params.bin").string()) == 0);
  const NamedTensors feats = read_container(dir / "model-toy_pure-forward.features.bin");
  REQUIRE(feats.size() == 5);
  CHECK(feats[0].second.shape() == std::vector<std::size_t>{8, 16, 16});
  CHECK(feats[3].second.shape() == std::vector<std::size_t>{64, 2, 2});
  check_manifest(dir, "model-toy_pure-forward.manifest.json", "model");

  REQUIRE(run(out + "rla --input " + (dir / "model-toy_pure-forward.features.bin").string() + " --tensor stage0") == 0);
  CHECK(fs::exists(dir / "rla-model-toy_pure-forward.features-stage0.csv"));

  Tensor wrong({3, 32, 32});
  write_container(dir / "small.bin", {{"image", wrong}});
  CHECK(run(out + "model --config " + toy + " --action forward --image " + (dir / "small.bin").string()) == 3);
  fs::remove_all(dir);
}
