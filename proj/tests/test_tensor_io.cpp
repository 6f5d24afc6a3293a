#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "mmgt/rng.hpp"
#include "mmgt/tensor.hpp"

namespace fs = std::filesystem;
using namespace mmgt;

namespace {
fs::path temp_dir(const char* name) {
  fs::path d = fs::temp_directory_path() / "mmgt_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("f32 tensor round-trips through the container") {
  auto dir = temp_dir("tensor_f32");
  Rng rng(11);
  std::vector<std::uint64_t> dims = {3, 4, 5};
  std::vector<float> data(60);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  F32Tensor t(dims, data);
  save_tensor(dir / "t.mmgt", t);
  F32Tensor back = load_f32_tensor(dir / "t.mmgt");
  CHECK(back == t);
}

TEST_CASE("u8 tensor round-trips through the container") {
  auto dir = temp_dir("tensor_u8");
  U8Tensor t({2, 3}, {0, 1, 2, 253, 254, 255});
  save_tensor(dir / "m.mmgt", t);
  U8Tensor back = load_u8_tensor(dir / "m.mmgt");
  CHECK(back == t);
}

TEST_CASE("rank-0 scalar tensor is one element") {
  auto dir = temp_dir("tensor_scalar");
  F32Tensor t({}, {2.5f});
  save_tensor(dir / "s.mmgt", t);
  F32Tensor back = load_f32_tensor(dir / "s.mmgt");
  CHECK(back.rank() == 0);
  CHECK(back.size() == 1);
  CHECK(back[0] == 2.5f);
}

TEST_CASE("container header layout is as documented") {
  auto dir = temp_dir("tensor_header");
  F32Tensor t({2}, {1.0f, 2.0f});
  save_tensor(dir / "h.mmgt", t);
  auto bytes = read_bytes(dir / "h.mmgt");
  REQUIRE(bytes.size() == 8 + 8 + 8);  // header + one dim + payload
  CHECK(bytes[0] == 'M');
  CHECK(bytes[1] == 'M');
  CHECK(bytes[2] == 'G');
  CHECK(bytes[3] == 'T');
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 1);  // f32 dtype
  CHECK(bytes[6] == 1);  // rank
  CHECK(bytes[7] == 0);  // reserved
  // little-endian u64 dim = 2
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  for (int i = 9; i < 16; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("loader rejects malformed files") {
  auto dir = temp_dir("tensor_bad");
  F32Tensor t({2, 2}, {1, 2, 3, 4});
  save_tensor(dir / "ok.mmgt", t);
  auto good = read_bytes(dir / "ok.mmgt");

  auto write_variant = [&](const char* name, std::vector<char> bytes) {
    std::ofstream out(dir / name, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };

  SUBCASE("wrong magic") {
    auto b = good;
    b[0] = 'X';
    write_variant("bad.mmgt", b);
    CHECK_THROWS_AS((void)load_f32_tensor(dir / "bad.mmgt"), TensorIoError);
  }
  SUBCASE("wrong version") {
    auto b = good;
    b[4] = 9;
    write_variant("bad.mmgt", b);
    CHECK_THROWS_AS((void)load_f32_tensor(dir / "bad.mmgt"), TensorIoError);
  }
  SUBCASE("dtype mismatch against the requested type") {
    CHECK_THROWS_AS((void)load_u8_tensor(dir / "ok.mmgt"), TensorIoError);
  }
  SUBCASE("truncated payload") {
    auto b = good;
    b.resize(b.size() - 3);
    write_variant("bad.mmgt", b);
    CHECK_THROWS_AS((void)load_f32_tensor(dir / "bad.mmgt"), TensorIoError);
  }
  SUBCASE("trailing bytes") {
    auto b = good;
    b.push_back(0);
    write_variant("bad.mmgt", b);
    CHECK_THROWS_AS((void)load_f32_tensor(dir / "bad.mmgt"), TensorIoError);
  }
  SUBCASE("non-finite f32 payload") {
    F32Tensor nan_t({1}, {std::numeric_limits<float>::quiet_NaN()});
    save_tensor(dir / "nan.mmgt", nan_t);
    CHECK_THROWS_AS((void)load_f32_tensor(dir / "nan.mmgt"), TensorIoError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS((void)load_f32_tensor(dir / "absent.mmgt"), TensorIoError);
  }
}

TEST_CASE("dims/data mismatch throws at construction") {
  CHECK_THROWS_AS(F32Tensor({2, 2}, {1.0f}), std::invalid_argument);
}

TEST_CASE("double<->f32 narrowing helpers") {
  std::vector<double> vals = {0.0, 1.5, -2.25};
  F32Tensor t = to_f32({3}, vals);
  auto back = to_f64(t);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == vals[i]);

  CHECK_THROWS(to_f32({1}, {1e310}));  // outside float range
}

TEST_CASE("save is byte-deterministic") {
  auto dir = temp_dir("tensor_det");
  Rng rng(5);
  std::vector<float> data(24);
  for (auto& v : data) v = static_cast<float>(rng.uniform(-3, 3));
  F32Tensor t({2, 3, 4}, data);
  save_tensor(dir / "a.mmgt", t);
  save_tensor(dir / "b.mmgt", t);
  CHECK(read_bytes(dir / "a.mmgt") == read_bytes(dir / "b.mmgt"));
}
