// SPDX-License-Identifier: Apache-2.0
#include "logah/tasks.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"

namespace logah::tasks {

namespace fs = std::filesystem;

namespace {

template <class T>
void write_le(const fs::path& path, const std::vector<T>& v) {
  static_assert(sizeof(T) == 4);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& x : v) {
    const auto u = std::bit_cast<std::uint32_t>(x);
    const char b[4] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF),
                       static_cast<char>((u >> 16) & 0xFF), static_cast<char>((u >> 24) & 0xFF)};
    os.write(b, 4);
  }
}

template <class T>
std::vector<T> read_le(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) throw ParseError(path.string() + ": size is not a multiple of 4");
  std::vector<T> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint32_t u = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    v[i] = std::bit_cast<T>(u);
  }
  return v;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace

std::string task_kind(const Task& task) { return std::holds_alternative<ImageTask>(task) ? "images" : "tokens"; }

ImageTask synth_images(std::int64_t count, std::int64_t channels, std::int64_t image_size, std::int64_t num_classes,
                       std::uint64_t seed, double noise) {
  if (count < 1 || channels < 1 || image_size < 1 || num_classes < 1) throw ValidationError("bad image task shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> label(0, static_cast<std::int32_t>(num_classes - 1));
  ImageTask t;
  t.channels = channels;
  t.image_size = image_size;
  t.num_classes = num_classes;
  const auto dim = t.sample_size();
  std::vector<double> protos(static_cast<std::size_t>(num_classes * dim));
  for (auto& v : protos) v = normal(rng);
  t.pixels.resize(static_cast<std::size_t>(count * dim));
  t.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto y = label(rng);
    t.labels[static_cast<std::size_t>(i)] = y;
    for (std::int64_t e = 0; e < dim; ++e) {
      t.pixels[static_cast<std::size_t>(i * dim + e)] =
          static_cast<float>(protos[static_cast<std::size_t>(y * dim + e)] + noise * normal(rng));
    }
  }
  return t;
}

TokenTask synth_tokens(std::int64_t count, std::int64_t vocab_size, std::uint64_t seed, std::int64_t branching) {
  if (count < 2 || vocab_size < 2 || branching < 1) throw ValidationError("bad token task shape");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> any(0, static_cast<std::int32_t>(vocab_size - 1));
  std::vector<std::vector<std::int32_t>> next(static_cast<std::size_t>(vocab_size));
  for (auto& succ : next) {
    for (std::int64_t b = 0; b < branching; ++b) succ.push_back(any(rng));
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(branching - 1));
  TokenTask t;
  t.vocab_size = vocab_size;
  t.tokens.resize(static_cast<std::size_t>(count));
  std::int32_t cur = any(rng);
  for (auto& tok : t.tokens) {
    tok = cur;
    // One step in ten jumps anywhere so every token stays reachable.
    cur = u(rng) < 0.1 ? any(rng) : next[static_cast<std::size_t>(cur)][pick(rng)];
  }
  return t;
}

void save_task(const std::string& dir, const Task& task) {
  fs::create_directories(dir);
  if (const auto* im = std::get_if<ImageTask>(&task)) {
    write_le(fs::path(dir) / "images.bin", im->pixels);
    write_le(fs::path(dir) / "labels.bin", im->labels);
    write_json(fs::path(dir) / "meta.json", {{"task", "images"},
                                             {"count", im->count()},
                                             {"channels", im->channels},
                                             {"image_size", im->image_size},
                                             {"num_classes", im->num_classes}});
  } else {
    const auto& tk = std::get<TokenTask>(task);
    write_le(fs::path(dir) / "tokens.bin", tk.tokens);
    write_json(fs::path(dir) / "meta.json",
               {{"task", "tokens"}, {"count", static_cast<std::int64_t>(tk.tokens.size())}, {"vocab_size", tk.vocab_size}});
  }
}

Task load_task(const std::string& dir) {
  const auto meta_path = fs::path(dir) / "meta.json";
  std::ifstream ms(meta_path);
  if (!ms) throw IoError("cannot read " + meta_path.string());
  try {
    const auto meta = nlohmann::json::parse(ms);
    const auto kind = meta.at("task").get<std::string>();
    if (kind == "images") {
      ImageTask t;
      t.channels = meta.at("channels").get<std::int64_t>();
      t.image_size = meta.at("image_size").get<std::int64_t>();
      t.num_classes = meta.at("num_classes").get<std::int64_t>();
      t.pixels = read_le<float>(fs::path(dir) / "images.bin");
      t.labels = read_le<std::int32_t>(fs::path(dir) / "labels.bin");
      const auto count = meta.at("count").get<std::int64_t>();
      if (t.count() != count || static_cast<std::int64_t>(t.pixels.size()) != count * t.sample_size()) {
        throw ParseError(dir + ": array sizes disagree with meta.json");
      }
      for (auto y : t.labels) {
        if (y < 0 || y >= t.num_classes) throw ParseError(dir + ": label out of range");
      }
      return t;
    }
    if (kind == "tokens") {
      TokenTask t;
      t.vocab_size = meta.at("vocab_size").get<std::int64_t>();
      t.tokens = read_le<std::int32_t>(fs::path(dir) / "tokens.bin");
      if (static_cast<std::int64_t>(t.tokens.size()) != meta.at("count").get<std::int64_t>()) {
        throw ParseError(dir + ": token count disagrees with meta.json");
      }
      for (auto tok : t.tokens) {
        if (tok < 0 || tok >= t.vocab_size) throw ParseError(dir + ": token id out of range");
      }
      return t;
    }
    throw ParseError(dir + ": unknown task kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
}

namespace {

Batch image_batch(const ImageTask& t, const std::vector<std::int64_t>& rows) {
  Batch b;
  b.n = static_cast<std::int64_t>(rows.size());
  const auto dim = t.sample_size();
  b.images = Tensor(Shape{b.n, dim});
  for (std::int64_t i = 0; i < b.n; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)];
    std::copy_n(t.pixels.begin() + r * dim, dim, b.images.data.begin() + i * dim);
    b.targets.push_back(t.labels[static_cast<std::size_t>(r)]);
  }
  return b;
}

Batch token_batch(const TokenTask& t, const std::vector<std::int64_t>& starts, std::int64_t seq) {
  Batch b;
  b.n = static_cast<std::int64_t>(starts.size());
  b.seq = seq;
  for (auto s : starts) {
    for (std::int64_t i = 0; i < seq; ++i) {
      b.tokens.push_back(t.tokens[static_cast<std::size_t>(s + i)]);
      b.targets.push_back(t.tokens[static_cast<std::size_t>(s + i + 1)]);
    }
  }
  return b;
}

std::int64_t window_limit(const TokenTask& t, std::int64_t seq) {
  const auto limit = static_cast<std::int64_t>(t.tokens.size()) - seq - 1;
  if (seq < 1 || limit < 0) throw ConfigError("token corpus shorter than one window");
  return limit;
}

}  // namespace

Batch sample_batch(const Task& task, std::int64_t n, std::int64_t seq, std::mt19937_64& rng) {
  if (n < 1) throw ConfigError("batch size must be positive");
  std::vector<std::int64_t> picks(static_cast<std::size_t>(n));
  if (const auto* im = std::get_if<ImageTask>(&task)) {
    if (im->count() < 1) throw ConfigError("image task is empty");
    std::uniform_int_distribution<std::int64_t> u(0, im->count() - 1);
    for (auto& p : picks) p = u(rng);
    return image_batch(*im, picks);
  }
  const auto& tk = std::get<TokenTask>(task);
  std::uniform_int_distribution<std::int64_t> u(0, window_limit(tk, seq));
  for (auto& p : picks) p = u(rng);
  return token_batch(tk, picks, seq);
}

Batch eval_batch(const Task& task, std::int64_t n, std::int64_t seq) {
  if (n < 1) throw ConfigError("batch size must be positive");
  if (const auto* im = std::get_if<ImageTask>(&task)) {
    std::vector<std::int64_t> rows;
    for (std::int64_t i = 0; i < std::min(n, im->count()); ++i) rows.push_back(i);
    return image_batch(*im, rows);
  }
  const auto& tk = std::get<TokenTask>(task);
  const auto limit = window_limit(tk, seq);
  std::vector<std::int64_t> starts;
  for (std::int64_t i = 0; i < n; ++i) starts.push_back(n == 1 ? 0 : i * limit / (n - 1));
  return token_batch(tk, starts, seq);
}

void check_compatible(const archspace::ArchSpec& spec, const Task& task) {
  if (const auto* v = std::get_if<archspace::ViTSpec>(&spec)) {
    const auto* im = std::get_if<ImageTask>(&task);
    if (!im) throw ConfigError("vit architectures need an image task");
    if (im->channels != v->channels || im->image_size != v->image_size || im->num_classes != v->num_classes) {
      throw ConfigError("image task (" + std::to_string(im->channels) + "x" + std::to_string(im->image_size) + ", " +
                        std::to_string(im->num_classes) + " classes) does not match architecture");
    }
    return;
  }
  if (const auto* g = std::get_if<archspace::GPTSpec>(&spec)) {
    const auto* tk = std::get_if<TokenTask>(&task);
    if (!tk) throw ConfigError("gpt2 architectures need a token task");
    if (tk->vocab_size > g->vocab_size) throw ConfigError("token vocabulary larger than architecture vocabulary");
    return;
  }
  const auto& l = std::get<archspace::LinearSpec>(spec);
  const auto* im = std::get_if<ImageTask>(&task);
  if (!im || im->sample_size() != l.in_features || im->num_classes != l.out_features) {
    throw ConfigError("linear architecture does not match the task");
  }
}

}  // namespace logah::tasks
