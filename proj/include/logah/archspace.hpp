// SPDX-License-Identifier: Apache-2.0
//
// Target-architecture specifications and the samplers that build the
// ViT / GPT-2 training sets.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace logah::archspace {

using Rng = std::mt19937_64;

struct ViTSpec {
  std::int64_t num_layers = 12;
  std::int64_t num_heads = 6;
  std::int64_t hidden_dim = 384;
  std::int64_t mlp_dim = 1536;
  std::int64_t patch_size = 16;
  std::int64_t image_size = 224;
  std::int64_t num_classes = 1000;
  std::int64_t channels = 3;

  std::int64_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  // Patch tokens plus the class token.
  std::int64_t seq_length() const { return num_patches() + 1; }
  bool operator==(const ViTSpec&) const = default;
};

struct GPTSpec {
  std::int64_t num_layers = 12;
  std::int64_t num_heads = 12;
  std::int64_t embed_dim = 768;
  std::int64_t vocab_size = 50257;
  std::int64_t context_length = 1024;
  bool tie_word_embeddings = true;

  std::int64_t mlp_dim() const { return 4 * embed_dim; }
  bool operator==(const GPTSpec&) const = default;
};

// A single fully connected layer. Used as the smallest possible target
// (two learnable tensors) when checking gradients end to end.
struct LinearSpec {
  std::int64_t in_features = 4;
  std::int64_t out_features = 4;
  bool bias = true;
  bool operator==(const LinearSpec&) const = default;
};

using ArchSpec = std::variant<ViTSpec, GPTSpec, LinearSpec>;

enum class Kind { vit, gpt2, linear };

Kind kind_of(const ArchSpec& spec);
std::string kind_name(Kind kind);
Kind parse_kind(const std::string& name);

// Throws ValidationError on non-positive sizes or heads that do not divide
// the width.
void validate(const ArchSpec& spec);

// Exact count of learnable scalars, including biases, norm parameters,
// embeddings and the output head.
std::int64_t spec_param_count(const ArchSpec& spec);

// Training-set samplers (depth-conditioned width ranges).
ViTSpec sample_vit_spec(Rng& rng);
GPTSpec sample_gpt_spec(Rng& rng);

// Desk-scale samplers: same depth-vs-width idea on 8x8 images / short token
// windows so a full train step runs in milliseconds.
ViTSpec sample_tiny_vit_spec(Rng& rng);
GPTSpec sample_tiny_gpt_spec(Rng& rng);

// Width bounds used by the samplers for a given depth: {min, max, step}.
struct WidthRange {
  std::int64_t lo;
  std::int64_t hi;
  std::int64_t step;
};
WidthRange vit_width_range(std::int64_t num_layers);
WidthRange gpt_width_range(std::int64_t num_layers);
std::int64_t vit_heads_for(std::int64_t hidden_dim, Rng& rng);
std::int64_t gpt_heads_for(std::int64_t embed_dim);

// Named reference configurations: vit-s, vit-b, vit-l, gpt2-s, gpt2-m, gpt2-l.
ArchSpec preset(const std::string& name);
std::vector<std::string> preset_names();

enum class Scale { paper, tiny };

struct ArchRecord {
  std::int64_t id = 0;
  std::uint64_t seed = 0;
  ArchSpec spec;
  std::int64_t param_count = 0;
};

struct HistogramBucket {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  std::int64_t count = 0;
};

struct ArchDataset {
  Kind kind = Kind::vit;
  std::int64_t cap = 0;
  std::vector<ArchRecord> records;
};

inline constexpr std::int64_t kVitCap = 10'000'000;
inline constexpr std::int64_t kGptCap = 30'000'000;
inline constexpr int kMaxResamples = 1000;

// Seed of record `index` under a global seed; records are reproducible from
// (kind, seed, index) alone.
std::uint64_t record_seed(std::uint64_t global_seed, std::int64_t index);

// n records, each rejection-resampled until its count fits under cap.
// Throws GenerationError if a record cannot be placed in kMaxResamples draws.
ArchDataset generate_dataset(Kind kind, std::int64_t n, std::uint64_t seed, std::int64_t cap,
                             Scale scale = Scale::paper);

std::vector<HistogramBucket> histogram(const ArchDataset& dataset, std::int64_t bucket_width = 1'000'000);

// JSON-lines I/O: {"id","kind","seed","config":{...},"param_count"} per line.
nlohmann::json spec_to_json(const ArchSpec& spec);
ArchSpec spec_from_json(Kind kind, const nlohmann::json& config);
void write_jsonl(std::ostream& os, const ArchDataset& dataset);
ArchDataset read_jsonl(std::istream& is);
void write_histogram_csv(std::ostream& os, const std::vector<HistogramBucket>& buckets);

void save_dataset(const std::string& path, const ArchDataset& dataset, std::int64_t bucket_width = 1'000'000);
ArchDataset load_dataset(const std::string& path);

}  // namespace logah::archspace
