#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "respiro/errors.hpp"
#include "respiro/rng.hpp"
#include "respiro/serialize.hpp"

using namespace respiro::core;
using respiro::FormatError;
using respiro::IntegrityError;
using respiro::IoError;
using respiro::Rng;

namespace {

std::filesystem::path temp_file(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(3);
  std::vector<Parameter> params;
  params.push_back({"enc/w", Tensor::randn({4, 3}, rng)});
  params.push_back({"enc/b", Tensor::randn({4}, rng)});
  params.push_back({"head/w", Tensor::randn({2, 4, 1}, rng)});

  const auto path = temp_file("ck_roundtrip.rck");
  save_checkpoint(path.string(), params);
  const auto loaded = load_checkpoint(path.string());
  REQUIRE(loaded.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded[i].name == params[i].name);
    REQUIRE(loaded[i].tensor.shape() == params[i].tensor.shape());
    CHECK(std::memcmp(loaded[i].tensor.data(), params[i].tensor.data(),
                      sizeof(float) * static_cast<std::size_t>(params[i].tensor.size())) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint header layout") {
  std::vector<Parameter> params;
  params.push_back({"w", Tensor({1, 2}, {1.0f, 2.0f})});
  const auto path = temp_file("ck_header.rck");
  save_checkpoint(path.string(), params);

  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "RCK1");
  std::uint32_t count;
  in.read(reinterpret_cast<char*>(&count), 4);
  CHECK(count == 1);
  std::uint16_t name_len;
  in.read(reinterpret_cast<char*>(&name_len), 2);
  CHECK(name_len == 1);
  char name;
  in.read(&name, 1);
  CHECK(name == 'w');
  std::uint8_t rank;
  in.read(reinterpret_cast<char*>(&rank), 1);
  CHECK(rank == 2);
  std::uint32_t e0, e1;
  in.read(reinterpret_cast<char*>(&e0), 4);
  in.read(reinterpret_cast<char*>(&e1), 4);
  CHECK(e0 == 1);
  CHECK(e1 == 2);
  std::filesystem::remove(path);
}

TEST_CASE("loader reports truncation with a byte offset") {
  const auto path = temp_file("ck_truncated.rck");
  {
    std::vector<Parameter> params;
    params.push_back({"w", Tensor({8}, std::vector<float>(8, 1.0f))});
    save_checkpoint(path.string(), params);
  }
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 6);
  try {
    load_checkpoint(path.string());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("loader rejects a wrong magic") {
  const auto path = temp_file("ck_magic.rck");
  {
    std::ofstream out(path, std::ios::binary);
    out.write("NOPE\0\0\0\0", 8);
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);
  CHECK_THROWS_AS(load_tensors(path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("missing file raises an io error") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.rck"), IoError);
}

TEST_CASE("load_checkpoint_into validates coverage and shapes") {
  Rng rng(5);
  ParamRegistry reg;
  Tensor w = reg.add("w", Tensor::randn({3, 3}, rng));
  const auto path = temp_file("ck_into.rck");
  save_checkpoint(path.string(), reg.params());

  ParamRegistry same;
  same.add_zeros("w", {3, 3});
  load_checkpoint_into(path.string(), same);
  CHECK(std::memcmp(same.find("w")->data(), w.data(), sizeof(float) * 9) == 0);

  ParamRegistry wrong_shape;
  wrong_shape.add_zeros("w", {3, 4});
  CHECK_THROWS_AS(load_checkpoint_into(path.string(), wrong_shape), IntegrityError);

  ParamRegistry extra;
  extra.add_zeros("w", {3, 3});
  extra.add_zeros("v", {1});
  CHECK_THROWS_AS(load_checkpoint_into(path.string(), extra), IntegrityError);
  std::filesystem::remove(path);
}

TEST_CASE("tensor cache round-trip") {
  Rng rng(9);
  std::vector<Tensor> ts;
  ts.push_back(Tensor::randn({5, 2}, rng));
  ts.push_back(Tensor::randn({1}, rng));
  const auto path = temp_file("cache.rsf");
  save_tensors(path.string(), ts);
  const auto back = load_tensors(path.string());
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    REQUIRE(back[i].shape() == ts[i].shape());
    CHECK(std::memcmp(back[i].data(), ts[i].data(),
                      sizeof(float) * static_cast<std::size_t>(ts[i].size())) == 0);
  }
  std::filesystem::remove(path);
}
