#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "sqd/store.hpp"

#include "helpers.hpp"

using namespace sqd;
using test::random_tensor;

TEST_SUITE("store") {

TEST_CASE("round-trip preserves payload bits and manifest") {
  std::string dir = test::scratch_dir("store-rt");
  for (StoreKind kind : {StoreKind::Trajectory, StoreKind::Synthetic, StoreKind::Metrics}) {
    std::string path = dir + "/k" + std::to_string(int(kind)) + ".sqds";
    Tensor payload = random_tensor({3, 4, 2}, 200 + uint64_t(kind), -5.0, 5.0);
    nlohmann::json manifest = {{"alpha", 1}, {"tag", "x"}};
    save_store(path, kind, payload, manifest);

    StoreData back = load_store(path);
    CHECK(back.kind == kind);
    CHECK(back.payload.equals(payload));
    nlohmann::json m = load_manifest(path);
    CHECK(m.at("alpha") == 1);
    CHECK(m.at("tag") == "x");
  }
}

TEST_CASE("kind mismatch and missing files are distinct errors") {
  std::string dir = test::scratch_dir("store-kind");
  save_store(dir + "/a.sqds", StoreKind::Metrics, random_tensor({4}, 201), {});
  CHECK_NOTHROW(load_store(dir + "/a.sqds", StoreKind::Metrics));
  CHECK_THROWS_AS(load_store(dir + "/a.sqds", StoreKind::Synthetic), StoreError);
  CHECK_THROWS_AS(load_store(dir + "/missing.sqds"), MissingInputError);
}

TEST_CASE("every single-byte flip is detected") {
  std::string dir = test::scratch_dir("store-flip");
  std::string path = dir + "/t.sqds";
  save_store(path, StoreKind::Synthetic, random_tensor({3, 5}, 202), {{"k", 1}});
  std::vector<unsigned char> good = test::read_bytes(path);
  REQUIRE(good.size() > 20);

  for (size_t i = 0; i < good.size(); ++i) {
    auto bad = good;
    bad[i] ^= 0x40;
    test::write_bytes(path, bad);
    CHECK_THROWS_AS(load_store(path), StoreError);
  }
  test::write_bytes(path, good);
  CHECK_NOTHROW(load_store(path));
}

TEST_CASE("truncation and trailing garbage are detected") {
  std::string dir = test::scratch_dir("store-trunc");
  std::string path = dir + "/t.sqds";
  save_store(path, StoreKind::Metrics, random_tensor({2, 2}, 203), {});
  std::vector<unsigned char> good = test::read_bytes(path);

  auto shorter = good;
  shorter.pop_back();
  test::write_bytes(path, shorter);
  CHECK_THROWS_AS(load_store(path), StoreError);

  auto longer = good;
  longer.push_back(0);
  test::write_bytes(path, longer);
  CHECK_THROWS_AS(load_store(path), StoreError);

  test::write_bytes(path, {});
  CHECK_THROWS_AS(load_store(path), StoreError);
}

TEST_CASE("no temp files survive a save") {
  std::string dir = test::scratch_dir("store-tmp");
  save_store(dir + "/t.sqds", StoreKind::Metrics, random_tensor({4}, 204), {{"a", 2}});
  size_t files = 0;
  for (auto& e : std::filesystem::directory_iterator(dir)) {
    ++files;
    CHECK(e.path().extension() != ".tmp");
  }
  CHECK(files == 2);  // store + manifest sidecar
}

TEST_CASE("architecture json round-trips") {
  Architecture a;
  a.kind = ArchKind::ConvNetMini;
  a.input_shape = {1, 14, 14};
  a.classes = 10;
  a.channels = 6;
  a.blocks = 2;
  a.activation = Activation::Relu;
  Architecture b = arch_from_json(arch_to_json(a));
  CHECK(b.kind == a.kind);
  CHECK(b.input_shape == a.input_shape);
  CHECK(b.classes == a.classes);
  CHECK(b.channels == a.channels);
  CHECK(b.blocks == a.blocks);
  CHECK(b.activation == a.activation);

  Architecture m;
  m.kind = ArchKind::Mlp;
  m.input_shape = {16};
  m.classes = 3;
  m.hidden = {64, 32};
  Architecture mb = arch_from_json(arch_to_json(m));
  CHECK(mb.hidden == m.hidden);
  CHECK(mb.kind == ArchKind::Mlp);
}

TEST_CASE("csv round-trips numeric tables") {
  std::string dir = test::scratch_dir("store-csv");
  std::string path = dir + "/t.csv";
  std::vector<std::string> header = {"epoch", "easy_mean", "hard_mean"};
  std::vector<std::vector<double>> rows = {{0, 1.0986122886681098, 2.5},
                                           {1, 0.25, -3.75e-4},
                                           {2, 1e-300, 12345678.9}};
  write_csv(path, header, rows);
  CsvTable t = read_csv(path);
  CHECK(t.header == header);
  REQUIRE(t.rows.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      CHECK(t.rows[i][j] == rows[i][j]);  // full precision expected
}

TEST_CASE("atomic text write replaces content completely") {
  std::string dir = test::scratch_dir("store-text");
  std::string path = dir + "/t.json";
  write_text_atomic(path, "first version");
  write_text_atomic(path, "second");
  auto bytes = test::read_bytes(path);
  CHECK(std::string(bytes.begin(), bytes.end()) == "second");
}

}  // TEST_SUITE
