// SPDX-License-Identifier: Apache-2.0
//
// User-level pipelines: predict-and-initialize, head re-initialization for
// transfer, diversity of predicted tensors, and recipe execution.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logah/archspace.hpp"
#include "logah/ghn.hpp"
#include "logah/param_set.hpp"

namespace logah::workflows {

// Throws ConfigError when the checkpoint was trained on another family.
params::PredictedParameterSet initialize_from_ghn(const ghn::GhnModel& model, const std::string& trained_kind,
                                                  const archspace::ArchSpec& spec, bool allow_fallback = true,
                                                  std::uint64_t fallback_seed = 0);
params::PredictedParameterSet initialize_from_checkpoint(const std::string& checkpoint_path,
                                                         const archspace::ArchSpec& spec, bool allow_fallback = true,
                                                         std::uint64_t fallback_seed = 0);

// Name of the classification or LM head weight, or StructuralError.
std::string head_weight_name(const params::PredictedParameterSet& params);

// Replaces the head with Kaiming-normal draws (std sqrt(2 / fan_in)) for
// new_num_classes outputs; a head bias becomes zeros of the new length.
params::PredictedParameterSet transfer_reinit_head(const params::PredictedParameterSet& params,
                                                   std::int64_t new_num_classes, std::uint64_t seed);

struct DiversityReport {
  Shape shape;
  std::int64_t pair_count = 0;
  double mean_abs_cos_distance = 0.0;
  std::vector<double> pairs;  // (i, j) for i < j, row-major upper triangle
  std::vector<std::string> excluded;  // zero-norm tensors
  std::vector<std::string> names;
};

// 1 - |cos| over all pairs. Throws ValidationError with fewer than two usable tensors.
DiversityReport diversity(std::span<const std::vector<double>> tensors, const std::vector<std::string>& names,
                          const Shape& shape);
DiversityReport diversity_report(const params::PredictedParameterSet& params, const Shape& shape);
// Shapes held by at least two tensors, most frequent first.
std::vector<std::pair<Shape, std::int64_t>> frequent_shapes(const params::PredictedParameterSet& params);
void write_diversity_json(std::ostream& os, const DiversityReport& r);

struct Stage {
  std::string name;  // gen, synth-task, train, predict, transfer-head, diversity, finetune
  std::int64_t line = 0;
  std::vector<std::pair<std::string, std::string>> params;
  std::string get(const std::string& key, const std::string& fallback = {}) const;
  bool has(const std::string& key) const;
};

struct Recipe {
  std::vector<Stage> stages;
};

// INI-like text: "[stage]" headers, "key = value" lines, '#' comments.
Recipe parse_recipe(std::istream& is);
Recipe load_recipe(const std::string& path);

struct ArtifactEntry {
  std::string stage;
  std::string path;
  std::string sha256;
};

struct RecipeResult {
  std::vector<ArtifactEntry> artifacts;
  std::string manifest_path;
};

// Paths in the recipe are relative to workdir. Every input must exist or be
// produced by an earlier stage; this is checked before anything runs.
void check_recipe(const Recipe& recipe, const std::string& workdir);
RecipeResult run_recipe(const Recipe& recipe, const std::string& workdir, std::ostream* log = nullptr);

}  // namespace logah::workflows
