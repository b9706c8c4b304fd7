#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "geomem/config.hpp"
#include "geomem/ioutil.hpp"

using namespace geomem;

TEST_CASE("config round trip is a fixed point") {
  ExperimentConfig def;
  const std::string s1 = def.serialize();
  ExperimentConfig back = ExperimentConfig::parse(s1);
  const std::string s2 = back.serialize();
  CHECK(s1 == s2);
  CHECK(def.hash() == back.hash());

  SUBCASE("non-default values survive, including awkward doubles") {
    ExperimentConfig c;
    c.train.lr = 0.1 + 0.2;  // 0.30000000000000004
    c.data.noise = 1e-17;
    c.dims.pos_norm = 12.75;
    c.ablation.fusion = "add";
    c.ablation.rep3d = false;
    c.train.seed = 0xffffffffffffffffULL;
    ExperimentConfig rt = ExperimentConfig::parse(c.serialize());
    CHECK(rt.train.lr == c.train.lr);
    CHECK(rt.data.noise == c.data.noise);
    CHECK(rt.dims.pos_norm == c.dims.pos_norm);
    CHECK(rt.ablation.fusion == "add");
    CHECK(rt.ablation.rep3d == false);
    CHECK(rt.train.seed == c.train.seed);
    CHECK(rt.serialize() == c.serialize());
  }
}

TEST_CASE("config parser rejections carry line numbers") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[dims]\nbogus_key = 3\n"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[nonsense]\n"), doctest::Contains("nonsense"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[dims]\nh only\n"), doctest::Contains("line 2"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[dims]\nh = banana\n"),
                       doctest::Contains("banana"), ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[ablation]\nrep3d = maybe\n"),
                       doctest::Contains("maybe"), ConfigError);
  // comments and blank lines are fine
  ExperimentConfig c =
      ExperimentConfig::parse("# leading comment\n\n[train]\nsteps = 5  # trailing\n");
  CHECK(c.train.steps == 5);
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  c.dims.h = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.memory.working_capacity = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.ablation.working_memory = false;  // capacity irrelevant when disabled
  CHECK_NOTHROW(c.validate());
  c = ExperimentConfig{};
  c.train.precision = 16;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.ablation.fusion = "bilinear";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config hash tracks content") {
  ExperimentConfig a, b;
  CHECK(a.hash() == b.hash());
  b.train.steps += 1;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e308, -0.0, 12345.6789, 2.2250738585072014e-308}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
}

TEST_CASE("crc32 known vectors") {
  const char* check = "123456789";
  CHECK(crc32(check, 9) == 0xCBF43926u);
  CHECK(crc32("", 0) == 0u);
  // streaming equals one-shot
  const std::uint32_t part = crc32(check, 4);
  CHECK(crc32(check + 4, 5, part) == 0xCBF43926u);
}

TEST_CASE("byte reader reports offsets") {
  ByteWriter w;
  w.pod<std::uint32_t>(7);
  w.str("abc");
  ByteReader r(w.bytes());
  CHECK(r.pod<std::uint32_t>() == 7);
  CHECK(r.str() == "abc");
  CHECK(r.remaining() == 0);
  ByteReader r2(w.bytes());
  (void)r2.pod<std::uint64_t>();  // consumes 8 of 11 bytes
  CHECK_THROWS_WITH_AS((void)r2.pod<std::uint64_t>(), doctest::Contains("offset 8"), DataError);
}

TEST_CASE("manifest round trip") {
  Manifest m;
  m.set("command", "train");
  m.set("config_hash", hex64(0xdeadbeefULL));
  m.set("dataset", "out/data.bin");
  const std::string text = m.serialize();
  Manifest back = Manifest::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.get("command") == "train");
  CHECK(back.get("config_hash") == hex64(0xdeadbeefULL));

  const std::string path = (std::filesystem::temp_directory_path() / "geomem_manifest.txt").string();
  m.save(path);
  Manifest loaded = Manifest::load(path);
  CHECK(loaded.serialize() == text);
  std::filesystem::remove(path);
}

TEST_CASE("file io round trip") {
  const std::string path = (std::filesystem::temp_directory_path() / "geomem_blob.bin").string();
  std::vector<std::uint8_t> payload;
  for (int i = 0; i < 300; ++i) payload.push_back(static_cast<std::uint8_t>(i * 7));
  write_file(path, payload);
  CHECK(read_file(path) == payload);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)read_file(path), DataError);
}
