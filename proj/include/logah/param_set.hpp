// SPDX-License-Identifier: Apache-2.0
//
// Named float32 tensors produced for a target network, and their on-disk
// archive: a directory with one raw little-endian float32 file per tensor and
// a manifest.json listing (name, shape, status, file, sha256).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "logah/tensor.hpp"

namespace logah::params {

enum class Status { predicted, fallback, reinitialized };

std::string status_name(Status s);
Status parse_status(const std::string& s);

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
  Status status = Status::predicted;

  bool operator==(const NamedTensor&) const = default;
};

struct PredictedParameterSet {
  std::string arch_kind;  // "vit", "gpt2", "linear"
  std::vector<NamedTensor> tensors;
  std::vector<std::string> non_predicted;  // buffers left at framework default

  const NamedTensor* find(const std::string& name) const;
  NamedTensor* find(const std::string& name);
  std::vector<std::string> fallback_report() const;
  std::int64_t scalar_count() const;

  bool operator==(const PredictedParameterSet&) const = default;
};

inline constexpr int kArchiveVersion = 1;

// Writes dir/manifest.json and dir/<index>.f32; returns the manifest path.
std::string save_archive(const std::string& dir, const PredictedParameterSet& set);
PredictedParameterSet load_archive(const std::string& dir);

Tensor to_tensor(const NamedTensor& t);
NamedTensor from_tensor(std::string name, const Tensor& t, Status status);

}  // namespace logah::params
