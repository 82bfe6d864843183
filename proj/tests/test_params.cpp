// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "logah/errors.hpp"
#include "logah/hashing.hpp"
#include "logah/param_set.hpp"

using namespace logah;
using namespace logah::params;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("logah_params_" + name);
  fs::remove_all(p);
  return p;
}

PredictedParameterSet sample_set() {
  PredictedParameterSet s;
  s.arch_kind = "vit";
  s.non_predicted = {"blocks.0.attn.causal_mask"};
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd;
  NamedTensor a{"a.weight", {3, 4}, {}, Status::predicted};
  for (int i = 0; i < 12; ++i) a.values.push_back(nd(rng));
  // odd bit patterns must survive too
  a.values[0] = -0.0f;
  a.values[1] = std::numeric_limits<float>::denorm_min();
  a.values[2] = std::numeric_limits<float>::max();
  NamedTensor b{"b.bias", {4}, {1, 2, 3, 4}, Status::fallback};
  NamedTensor c{"c.conv", {2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, Status::reinitialized};
  s.tensors = {a, b, c};
  return s;
}
}  // namespace

TEST_CASE("sha256 known vectors") {
  CHECK(hashing::sha256_hex(std::string("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hashing::sha256_hex(std::string()) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("archive round trip is bit exact") {
  const auto dir = scratch("rt");
  const auto set = sample_set();
  save_archive(dir.string(), set);
  const auto back = load_archive(dir.string());
  REQUIRE(back.tensors.size() == set.tensors.size());
  for (std::size_t i = 0; i < set.tensors.size(); ++i) {
    CHECK(std::memcmp(back.tensors[i].values.data(), set.tensors[i].values.data(),
                      set.tensors[i].values.size() * sizeof(float)) == 0);
  }
  CHECK(std::signbit(back.tensors[0].values[0]));
  CHECK(back == set);
  CHECK(back.fallback_report() == std::vector<std::string>{"b.bias"});
  CHECK(back.scalar_count() == 24);
  fs::remove_all(dir);
}

TEST_CASE("corruption is detected") {
  const auto dir = scratch("bad");
  save_archive(dir.string(), sample_set());
  {
    std::fstream f(dir / "1.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_archive(dir.string()), ParseError);
  fs::resize_file(dir / "1.f32", 8);
  CHECK_THROWS_AS(load_archive(dir.string()), ParseError);
  CHECK_THROWS_AS(load_archive((dir / "nope").string()), IoError);
  auto s = sample_set();
  s.tensors[0].values.pop_back();
  CHECK_THROWS_AS(save_archive(dir.string(), s), ContractError);
  fs::remove_all(dir);
}

TEST_CASE("status names and tensor conversion") {
  for (auto s : {Status::predicted, Status::fallback, Status::reinitialized}) CHECK(parse_status(status_name(s)) == s);
  CHECK_THROWS_AS(parse_status("guessed"), ParseError);
  const Tensor t(Shape{2, 2}, std::vector<double>{0.5, 1.5, -2, 4});
  const auto nt = from_tensor("x", t, Status::predicted);
  CHECK(to_tensor(nt) == t);
}

TEST_CASE("path hashing covers directory contents") {
  const auto dir = scratch("hash");
  save_archive(dir.string(), sample_set());
  const auto h1 = hashing::sha256_path(dir.string());
  CHECK(h1 == hashing::sha256_path(dir.string()));
  CHECK(hashing::sha256_file((dir / "0.f32").string()) == hashing::sha256_path((dir / "0.f32").string()));
  {
    std::ofstream extra(dir / "extra.txt");
    extra << "x";
  }
  CHECK(hashing::sha256_path(dir.string()) != h1);
  fs::remove_all(dir);
}
