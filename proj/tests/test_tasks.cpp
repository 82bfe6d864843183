// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "logah/errors.hpp"
#include "logah/tasks.hpp"

using namespace logah;
using namespace logah::tasks;
namespace fs = std::filesystem;

TEST_CASE("synthetic images are deterministic and labelled in range") {
  const auto a = synth_images(100, 3, 8, 10, 4);
  const auto b = synth_images(100, 3, 8, 10, 4);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.pixels.size() == 100u * 3 * 8 * 8);
  for (auto l : a.labels) {
    CHECK(l >= 0);
    CHECK(l < 10);
  }
  CHECK(synth_images(100, 3, 8, 10, 5).pixels != a.pixels);
}

TEST_CASE("synthetic tokens follow their chain") {
  const auto t = synth_tokens(5000, 16, 2);
  CHECK(t.tokens.size() == 5000);
  // with 2 likely successors per token, most transitions repeat
  std::vector<std::vector<int>> seen(16, std::vector<int>(16, 0));
  for (std::size_t i = 1; i < t.tokens.size(); ++i) ++seen[t.tokens[i - 1]][t.tokens[i]];
  std::int64_t top2 = 0, all = 0;
  for (auto& row : seen) {
    std::sort(row.rbegin(), row.rend());
    top2 += row[0] + row[1];
    for (int c : row) all += c;
  }
  CHECK(double(top2) / all > 0.8);
}

TEST_CASE("save and load") {
  const auto dir = fs::temp_directory_path() / "logah_tasks";
  fs::remove_all(dir);
  const Task im = synth_images(20, 3, 8, 10, 1);
  save_task((dir / "im").string(), im);
  const auto back = std::get<ImageTask>(load_task((dir / "im").string()));
  CHECK(back.pixels == std::get<ImageTask>(im).pixels);
  CHECK(back.labels == std::get<ImageTask>(im).labels);
  const Task tk = synth_tokens(300, 32, 1);
  save_task((dir / "tk").string(), tk);
  CHECK(std::get<TokenTask>(load_task((dir / "tk").string())).tokens == std::get<TokenTask>(tk).tokens);
  CHECK_THROWS(load_task((dir / "missing").string()));
  fs::remove_all(dir);
}

TEST_CASE("batches") {
  const Task im = synth_images(50, 3, 8, 10, 1);
  std::mt19937_64 rng(1);
  const auto b = sample_batch(im, 7, 1, rng);
  CHECK(b.n == 7);
  CHECK(b.images.shape == Shape{7, 192});
  CHECK(b.targets.size() == 7);
  const auto e = eval_batch(im, 5, 1);
  for (int i = 0; i < 5; ++i) CHECK(e.targets[i] == std::get<ImageTask>(im).labels[i]);

  const Task tk = synth_tokens(200, 32, 1);
  const auto tb = sample_batch(tk, 4, 16, rng);
  CHECK(tb.tokens.size() == 64);
  CHECK(tb.targets.size() == 64);
  const auto& toks = std::get<TokenTask>(tk).tokens;
  // targets are the next tokens
  const auto eb = eval_batch(tk, 3, 16);
  for (int w = 0; w < 3; ++w) {
    for (int i = 0; i + 1 < 16; ++i) CHECK(eb.targets[w * 16 + i] == eb.tokens[w * 16 + i + 1]);
  }
  CHECK(eb.tokens[0] == toks[0]);
  CHECK_THROWS_AS(sample_batch(im, 0, 1, rng), ConfigError);
}

TEST_CASE("compatibility") {
  const Task im = synth_images(5, 3, 8, 10, 1);
  const Task tk = synth_tokens(100, 32, 1);
  archspace::ViTSpec v{1, 2, 16, 64, 4, 8, 10, 3};
  CHECK_NOTHROW(check_compatible(v, im));
  CHECK_THROWS_AS(check_compatible(v, tk), ConfigError);
  v.num_classes = 100;
  CHECK_THROWS_AS(check_compatible(v, im), ConfigError);
  archspace::GPTSpec g{1, 2, 16, 32, 16, false};
  CHECK_NOTHROW(check_compatible(g, tk));
  g.vocab_size = 8;
  CHECK_THROWS_AS(check_compatible(g, tk), ConfigError);
}
