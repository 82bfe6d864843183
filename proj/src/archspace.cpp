// SPDX-License-Identifier: Apache-2.0
#include "logah/archspace.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"

namespace logah::archspace {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

std::int64_t choose(Rng& rng, std::initializer_list<std::int64_t> options) {
  const auto i = uniform_int(rng, 0, static_cast<std::int64_t>(options.size()) - 1);
  return *(options.begin() + i);
}

std::int64_t pick_width(Rng& rng, const WidthRange& r) {
  const auto steps = (r.hi - r.lo) / r.step;
  return r.lo + r.step * uniform_int(rng, 0, steps);
}

void check_positive(std::int64_t v, const char* what) {
  if (v <= 0) throw ValidationError(std::string(what) + " must be positive, got " + std::to_string(v));
}

// torch Linear(in, out, bias=True)
constexpr std::int64_t linear_params(std::int64_t in, std::int64_t out) { return in * out + out; }

std::int64_t vit_count(const ViTSpec& s) {
  const auto d = s.hidden_dim;
  std::int64_t n = 0;
  n += d * s.channels * s.patch_size * s.patch_size + d;  // patch projection
  n += d;                                                  // class token
  n += s.seq_length() * d;                                 // position embedding
  const std::int64_t block = 2 * d                         // ln_1
                             + linear_params(d, 3 * d)     // fused qkv
                             + linear_params(d, d)         // attention output
                             + 2 * d                       // ln_2
                             + linear_params(d, s.mlp_dim) + linear_params(s.mlp_dim, d);
  n += s.num_layers * block;
  n += 2 * d;  // final norm
  n += linear_params(d, s.num_classes);
  return n;
}

std::int64_t gpt_count(const GPTSpec& s) {
  const auto d = s.embed_dim;
  std::int64_t n = s.vocab_size * d + s.context_length * d;
  const std::int64_t block = 2 * d + linear_params(d, 3 * d) + linear_params(d, d) + 2 * d +
                             linear_params(d, s.mlp_dim()) + linear_params(s.mlp_dim(), d);
  n += s.num_layers * block;
  n += 2 * d;
  if (!s.tie_word_embeddings) n += s.vocab_size * d;
  return n;
}

}  // namespace

Kind kind_of(const ArchSpec& spec) {
  return std::visit(Overloaded{[](const ViTSpec&) { return Kind::vit; }, [](const GPTSpec&) { return Kind::gpt2; },
                               [](const LinearSpec&) { return Kind::linear; }},
                    spec);
}

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::vit:
      return "vit";
    case Kind::gpt2:
      return "gpt2";
    case Kind::linear:
      return "linear";
  }
  return "unknown";
}

Kind parse_kind(const std::string& name) {
  if (name == "vit") return Kind::vit;
  if (name == "gpt2") return Kind::gpt2;
  if (name == "linear") return Kind::linear;
  throw ValidationError("unknown architecture kind '" + name + "'");
}

void validate(const ArchSpec& spec) {
  std::visit(Overloaded{
                 [](const ViTSpec& s) {
                   check_positive(s.num_layers, "num_layers");
                   check_positive(s.num_heads, "num_heads");
                   check_positive(s.hidden_dim, "hidden_dim");
                   check_positive(s.mlp_dim, "mlp_dim");
                   check_positive(s.patch_size, "patch_size");
                   check_positive(s.image_size, "image_size");
                   check_positive(s.num_classes, "num_classes");
                   check_positive(s.channels, "channels");
                   if (s.hidden_dim % s.num_heads != 0) {
                     throw ValidationError("hidden_dim " + std::to_string(s.hidden_dim) + " is not divisible by " +
                                           std::to_string(s.num_heads) + " heads");
                   }
                   if (s.image_size % s.patch_size != 0) {
                     throw ValidationError("image_size must be a multiple of patch_size");
                   }
                 },
                 [](const GPTSpec& s) {
                   check_positive(s.num_layers, "num_layers");
                   check_positive(s.num_heads, "num_heads");
                   check_positive(s.embed_dim, "embed_dim");
                   check_positive(s.vocab_size, "vocab_size");
                   check_positive(s.context_length, "context_length");
                   if (s.embed_dim % s.num_heads != 0) {
                     throw ValidationError("embed_dim " + std::to_string(s.embed_dim) + " is not divisible by " +
                                           std::to_string(s.num_heads) + " heads");
                   }
                 },
                 [](const LinearSpec& s) {
                   check_positive(s.in_features, "in_features");
                   check_positive(s.out_features, "out_features");
                 },
             },
             spec);
}

std::int64_t spec_param_count(const ArchSpec& spec) {
  validate(spec);
  return std::visit(Overloaded{[](const ViTSpec& s) { return vit_count(s); },
                               [](const GPTSpec& s) { return gpt_count(s); },
                               [](const LinearSpec& s) {
                                 return s.in_features * s.out_features + (s.bias ? s.out_features : 0);
                               }},
                    spec);
}

WidthRange vit_width_range(std::int64_t num_layers) {
  if (num_layers > 5) return {128, 256, 32};
  if (num_layers > 3) return {256, 384, 32};
  return {384, 512, 32};
}

WidthRange gpt_width_range(std::int64_t num_layers) {
  if (num_layers > 5) return {72, 176, 8};
  if (num_layers > 3) return {128, 176, 8};
  return {176, 256, 8};
}

std::int64_t vit_heads_for(std::int64_t hidden_dim, Rng& rng) {
  if (hidden_dim % 12 == 0) return choose(rng, {3, 6, 12});
  if (hidden_dim % 6 == 0) return choose(rng, {3, 6});
  if (hidden_dim % 3 == 0) return 3;
  return choose(rng, {4, 8});
}

std::int64_t gpt_heads_for(std::int64_t embed_dim) {
  for (std::int64_t h : {8, 6, 4}) {
    if (embed_dim % h == 0) return h;
  }
  throw ValidationError("embed_dim " + std::to_string(embed_dim) + " admits none of 8, 6, 4 heads");
}

ViTSpec sample_vit_spec(Rng& rng) {
  ViTSpec s;
  s.num_layers = uniform_int(rng, 3, 9);
  s.hidden_dim = pick_width(rng, vit_width_range(s.num_layers));
  s.mlp_dim = 4 * s.hidden_dim;
  s.num_heads = vit_heads_for(s.hidden_dim, rng);
  s.patch_size = 2;
  s.image_size = 32;
  s.num_classes = 100;
  return s;
}

GPTSpec sample_gpt_spec(Rng& rng) {
  GPTSpec s;
  s.num_layers = uniform_int(rng, 3, 9);
  s.embed_dim = pick_width(rng, gpt_width_range(s.num_layers));
  s.num_heads = gpt_heads_for(s.embed_dim);
  s.vocab_size = 50257;
  s.context_length = 1024;
  s.tie_word_embeddings = false;
  return s;
}

ViTSpec sample_tiny_vit_spec(Rng& rng) {
  ViTSpec s;
  s.num_layers = uniform_int(rng, 1, 3);
  const WidthRange r = s.num_layers > 2 ? WidthRange{16, 24, 8} : WidthRange{16, 32, 8};
  s.hidden_dim = pick_width(rng, r);
  s.mlp_dim = 4 * s.hidden_dim;
  s.num_heads = choose(rng, {2, 4});
  s.patch_size = 4;
  s.image_size = 8;
  s.num_classes = 10;
  return s;
}

GPTSpec sample_tiny_gpt_spec(Rng& rng) {
  GPTSpec s;
  s.num_layers = uniform_int(rng, 1, 3);
  const WidthRange r = s.num_layers > 2 ? WidthRange{16, 24, 8} : WidthRange{16, 32, 8};
  s.embed_dim = pick_width(rng, r);
  s.num_heads = choose(rng, {2, 4});
  s.vocab_size = 32;
  s.context_length = 16;
  s.tie_word_embeddings = false;
  return s;
}

ArchSpec preset(const std::string& name) {
  if (name == "vit-s") return ViTSpec{12, 6, 384, 1536, 16, 224, 1000, 3};
  if (name == "vit-b") return ViTSpec{12, 12, 768, 3072, 16, 224, 1000, 3};
  if (name == "vit-l") return ViTSpec{24, 16, 1024, 4096, 16, 224, 1000, 3};
  if (name == "gpt2-s") return GPTSpec{12, 12, 768, 50257, 1024, true};
  if (name == "gpt2-m") return GPTSpec{24, 16, 1024, 50257, 1024, true};
  if (name == "gpt2-l") return GPTSpec{36, 20, 1280, 50257, 1024, true};
  throw ValidationError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"vit-s", "vit-b", "vit-l", "gpt2-s", "gpt2-m", "gpt2-l"}; }

std::uint64_t record_seed(std::uint64_t global_seed, std::int64_t index) {
  // splitmix64 over (seed, index)
  std::uint64_t z = global_seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ArchDataset generate_dataset(Kind kind, std::int64_t n, std::uint64_t seed, std::int64_t cap, Scale scale) {
  if (n < 1) throw ValidationError("dataset size must be at least 1");
  if (cap <= 0) throw ValidationError("parameter cap must be positive");
  if (kind == Kind::linear) throw ValidationError("no sampler for the linear family");
  ArchDataset ds{kind, cap, {}};
  ds.records.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint64_t rs = record_seed(seed, i);
    Rng rng(rs);
    ArchRecord rec;
    rec.id = i;
    rec.seed = rs;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxResamples && !placed; ++attempt) {
      ArchSpec spec;
      if (kind == Kind::vit) {
        spec = scale == Scale::tiny ? sample_tiny_vit_spec(rng) : sample_vit_spec(rng);
      } else {
        spec = scale == Scale::tiny ? sample_tiny_gpt_spec(rng) : sample_gpt_spec(rng);
      }
      const auto count = spec_param_count(spec);
      if (count <= cap) {
        rec.spec = spec;
        rec.param_count = count;
        placed = true;
      }
    }
    // Leave param_count at 0 on failure; reported below outside the
    // parallel region.
    ds.records[static_cast<std::size_t>(i)] = std::move(rec);
  }
  for (const auto& rec : ds.records) {
    if (rec.param_count == 0) {
      throw GenerationError("cap " + std::to_string(cap) + " admits no " + kind_name(kind) + " spec for record " +
                            std::to_string(rec.id) + " after " + std::to_string(kMaxResamples) + " draws");
    }
  }
  return ds;
}

std::vector<HistogramBucket> histogram(const ArchDataset& dataset, std::int64_t bucket_width) {
  if (bucket_width <= 0) throw ValidationError("bucket width must be positive");
  std::int64_t top = dataset.cap;
  for (const auto& r : dataset.records) top = std::max(top, r.param_count);
  const std::int64_t nb = top / bucket_width + (top % bucket_width ? 1 : 0);
  std::vector<HistogramBucket> out(static_cast<std::size_t>(std::max<std::int64_t>(nb, 1)));
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].lo = static_cast<std::int64_t>(b) * bucket_width;
    out[b].hi = out[b].lo + bucket_width;
  }
  for (const auto& r : dataset.records) {
    auto b = static_cast<std::size_t>(r.param_count / bucket_width);
    if (b >= out.size()) b = out.size() - 1;
    ++out[b].count;
  }
  return out;
}

nlohmann::json spec_to_json(const ArchSpec& spec) {
  return std::visit(Overloaded{
                        [](const ViTSpec& s) {
                          return nlohmann::json{{"num_layers", s.num_layers}, {"num_heads", s.num_heads},
                                                {"hidden_dim", s.hidden_dim}, {"mlp_dim", s.mlp_dim},
                                                {"patch_size", s.patch_size}, {"image_size", s.image_size},
                                                {"num_classes", s.num_classes}, {"channels", s.channels}};
                        },
                        [](const GPTSpec& s) {
                          return nlohmann::json{{"num_layers", s.num_layers},
                                                {"num_heads", s.num_heads},
                                                {"embed_dim", s.embed_dim},
                                                {"vocab_size", s.vocab_size},
                                                {"context_length", s.context_length},
                                                {"tie_word_embeddings", s.tie_word_embeddings}};
                        },
                        [](const LinearSpec& s) {
                          return nlohmann::json{
                              {"in_features", s.in_features}, {"out_features", s.out_features}, {"bias", s.bias}};
                        },
                    },
                    spec);
}

ArchSpec spec_from_json(Kind kind, const nlohmann::json& c) {
  try {
    ArchSpec spec;
    switch (kind) {
      case Kind::vit: {
        ViTSpec s;
        s.num_layers = c.at("num_layers").get<std::int64_t>();
        s.num_heads = c.at("num_heads").get<std::int64_t>();
        s.hidden_dim = c.at("hidden_dim").get<std::int64_t>();
        s.mlp_dim = c.at("mlp_dim").get<std::int64_t>();
        s.patch_size = c.at("patch_size").get<std::int64_t>();
        s.image_size = c.at("image_size").get<std::int64_t>();
        s.num_classes = c.at("num_classes").get<std::int64_t>();
        s.channels = c.value("channels", std::int64_t{3});
        spec = s;
        break;
      }
      case Kind::gpt2: {
        GPTSpec s;
        s.num_layers = c.at("num_layers").get<std::int64_t>();
        s.num_heads = c.at("num_heads").get<std::int64_t>();
        s.embed_dim = c.at("embed_dim").get<std::int64_t>();
        s.vocab_size = c.at("vocab_size").get<std::int64_t>();
        s.context_length = c.at("context_length").get<std::int64_t>();
        s.tie_word_embeddings = c.at("tie_word_embeddings").get<bool>();
        spec = s;
        break;
      }
      case Kind::linear: {
        LinearSpec s;
        s.in_features = c.at("in_features").get<std::int64_t>();
        s.out_features = c.at("out_features").get<std::int64_t>();
        s.bias = c.value("bias", true);
        spec = s;
        break;
      }
    }
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad architecture config: ") + e.what());
  }
}

void write_jsonl(std::ostream& os, const ArchDataset& dataset) {
  for (const auto& r : dataset.records) {
    nlohmann::json j{{"id", r.id},
                     {"kind", kind_name(dataset.kind)},
                     {"seed", r.seed},
                     {"config", spec_to_json(r.spec)},
                     {"param_count", r.param_count}};
    os << j.dump() << '\n';
  }
}

ArchDataset read_jsonl(std::istream& is) {
  ArchDataset ds;
  std::string line;
  std::int64_t lineno = 0;
  bool first = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const Kind kind = parse_kind(j.at("kind").get<std::string>());
      if (first) {
        ds.kind = kind;
        first = false;
      } else if (kind != ds.kind) {
        throw ParseError("mixed kinds in one dataset");
      }
      ArchRecord r;
      r.id = j.at("id").get<std::int64_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.spec = spec_from_json(kind, j.at("config"));
      r.param_count = j.at("param_count").get<std::int64_t>();
      ds.cap = std::max(ds.cap, r.param_count);
      ds.records.push_back(std::move(r));
    } catch (const Error& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (ds.records.empty()) throw ParseError("architecture dataset is empty");
  return ds;
}

void write_histogram_csv(std::ostream& os, const std::vector<HistogramBucket>& buckets) {
  os << "bucket_lo,bucket_hi,count\n";
  for (const auto& b : buckets) os << b.lo << ',' << b.hi << ',' << b.count << '\n';
}

void save_dataset(const std::string& path, const ArchDataset& dataset, std::int64_t bucket_width) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_jsonl(os, dataset);
  std::ofstream hs(path + ".hist.csv");
  if (!hs) throw IoError("cannot write " + path + ".hist.csv");
  write_histogram_csv(hs, histogram(dataset, bucket_width));
}

ArchDataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_jsonl(is);
}

}  // namespace logah::archspace
