// SPDX-License-Identifier: Apache-2.0
//
// Task datasets used to train the hypernetwork and to fine-tune predicted
// networks. Images live in a directory with images.bin (float32), labels.bin
// (int32) and meta.json; token corpora as tokens.bin (int32) and meta.json.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "logah/archspace.hpp"
#include "logah/tensor.hpp"

namespace logah::tasks {

struct ImageTask {
  std::int64_t channels = 3;
  std::int64_t image_size = 8;
  std::int64_t num_classes = 10;
  std::vector<float> pixels;  // [count, channels * image_size^2]
  std::vector<std::int32_t> labels;
  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t sample_size() const { return channels * image_size * image_size; }
};

struct TokenTask {
  std::int64_t vocab_size = 32;
  std::vector<std::int32_t> tokens;
};

using Task = std::variant<ImageTask, TokenTask>;

// A batch of n samples. Images: inputs [n, C*H*W] with one label each.
// Tokens: n windows of length seq, flattened, with next-token targets.
struct Batch {
  std::int64_t n = 0;
  std::int64_t seq = 0;
  Tensor images;
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> targets;
};

std::string task_kind(const Task& task);

// Class prototypes plus Gaussian noise.
ImageTask synth_images(std::int64_t count, std::int64_t channels, std::int64_t image_size, std::int64_t num_classes,
                       std::uint64_t seed, double noise = 0.5);
// A random sparse Markov chain: every token has `branching` likely successors.
TokenTask synth_tokens(std::int64_t count, std::int64_t vocab_size, std::uint64_t seed, std::int64_t branching = 2);

void save_task(const std::string& dir, const Task& task);
Task load_task(const std::string& dir);

Batch sample_batch(const Task& task, std::int64_t n, std::int64_t seq, std::mt19937_64& rng);
// The first n samples (images) or n evenly spaced windows (tokens).
Batch eval_batch(const Task& task, std::int64_t n, std::int64_t seq);

// Throws ConfigError when the spec cannot consume the task's samples.
void check_compatible(const archspace::ArchSpec& spec, const Task& task);

}  // namespace logah::tasks
