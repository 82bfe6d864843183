// SPDX-License-Identifier: Apache-2.0
//
// The end-to-end hypernetwork: graph encoder plus low-rank decoder.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "logah/decoder.hpp"
#include "logah/encoder.hpp"
#include "logah/graphir.hpp"
#include "logah/param_set.hpp"

namespace logah::ghn {

struct GhnConfig {
  std::string variant = "custom";
  encoder::EncoderConfig enc;
  decoder::DecoderConfig dec;
  void validate() const;
  bool operator==(const GhnConfig&) const = default;
};

// "tiny", "small", "base", "large" (rank, layers, width, heads as in the
// reference variant table, K = 32768) or "desk" for the small test setup.
GhnConfig variant_config(const std::string& name);
GhnConfig custom_config(std::int64_t d, std::int64_t r, std::int64_t K, std::int64_t layers, std::int64_t heads);

nlohmann::json config_to_json(const GhnConfig& cfg);
GhnConfig config_from_json(const nlohmann::json& j);

struct GhnModel {
  GhnConfig cfg;
  encoder::EncoderWeights enc;
  decoder::DecoderWeights dec;
};

GhnModel init_ghn(const GhnConfig& cfg, std::uint64_t seed);
std::vector<std::pair<std::string, ad::Var>> named_parameters(const GhnModel& model);
std::int64_t scalar_count(const GhnModel& model);

params::PredictedParameterSet predict(const GhnModel& model, const graphir::CompGraph& graph,
                                      std::uint64_t fallback_seed = 0);
decoder::PredictedVars predict_vars(const GhnModel& model, const graphir::CompGraph& graph,
                                    std::uint64_t fallback_seed = 0);

}  // namespace logah::ghn
