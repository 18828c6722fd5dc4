#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "pcx/error.hpp"
#include "pcx/tensor.hpp"

using namespace pcx;

namespace {

std::vector<std::uint8_t> hand_encoded_2x3() {
  std::vector<std::uint8_t> b{'P', 'C', 'X', 'T', 1, 1, 2};
  auto u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  u64(2);
  u64(3);
  for (float f : {1.0f, -2.0f, 0.5f, 3.25f, 0.0f, -0.125f}) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return b;
}

}  // namespace

TEST_CASE("tensor data length must equal the shape product") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), InputError);
  CHECK_THROWS_AS(Tensor({2, 0}), InputError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(shape_str(t.shape()) == "[2,3]");
}

TEST_CASE("encoding matches the byte layout written by hand") {
  const Tensor t({2, 3}, {1.0f, -2.0f, 0.5f, 3.25f, 0.0f, -0.125f});
  CHECK(encode_pcxt(t) == hand_encoded_2x3());
  CHECK(decode_pcxt(hand_encoded_2x3()) == t);
}

TEST_CASE("decode errors carry the origin and byte offset") {
  auto bytes = hand_encoded_2x3();
  bytes[0] = 'X';
  try {
    decode_pcxt(bytes, "bad.pcxt");
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.pcxt") != std::string::npos);
    CHECK(msg.find("offset 0") != std::string::npos);
  }
  auto truncated = hand_encoded_2x3();
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(decode_pcxt(truncated), InputError);
  auto wrong_dtype = hand_encoded_2x3();
  wrong_dtype[5] = 2;
  CHECK_THROWS_AS(decode_pcxt(wrong_dtype), InputError);
  auto trailing = hand_encoded_2x3();
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_pcxt(trailing), InputError);
}

TEST_CASE("non-finite payloads are rejected on read") {
  Tensor t({2});
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(decode_pcxt(encode_pcxt(t)), InputError);
}

TEST_CASE("file round trip is exact and atomic writes leave no temp file") {
  const auto dir = std::filesystem::temp_directory_path() / "pcx_unit_tensor";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const Tensor t({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, -8.5f});
  write_tensor(dir / "t.pcxt", t);
  CHECK(read_tensor(dir / "t.pcxt") == t);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  CHECK_THROWS_AS(read_tensor(dir / "missing.pcxt"), InputError);
}
