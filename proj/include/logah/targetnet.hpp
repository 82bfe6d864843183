// SPDX-License-Identifier: Apache-2.0
//
// Functional forward passes of the target networks. Parameters are passed as
// a name -> Var map so the same code runs on predicted (differentiable)
// tensors and on plain tensors during fine-tuning.
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>

#include "logah/archspace.hpp"
#include "logah/autodiff.hpp"
#include "logah/param_set.hpp"

namespace logah::targetnet {

using ParamMap = std::unordered_map<std::string, ad::Var>;

// Every learnable tensor of the network with its shape, in graph order.
std::vector<std::pair<std::string, Shape>> tensor_shapes(const archspace::ArchSpec& spec);

// images: [n, channels * image_size^2], channel-major per image. Returns [n, num_classes].
ad::Var vit_forward(const archspace::ViTSpec& spec, const ParamMap& p, const Tensor& images);
// tokens: n sequences of length t, row-major. Returns [n * t, vocab].
ad::Var gpt_forward(const archspace::GPTSpec& spec, const ParamMap& p, std::span<const std::int64_t> tokens,
                    std::int64_t n, std::int64_t t);
// x: [n, in_features]. Returns [n, out_features].
ad::Var linear_forward(const archspace::LinearSpec& spec, const ParamMap& p, const Tensor& x);

// Standard initialization for comparison with predicted parameters: uniform
// +-1/sqrt(fan_in) for weights and biases, unit/zero norms, N(0, 0.02) embeddings.
params::PredictedParameterSet random_init(const archspace::ArchSpec& spec, std::uint64_t seed);

// Constant (non-trainable) or leaf (trainable) Vars from an archive. Throws
// ContractError naming the first tensor whose shape disagrees with the spec.
ParamMap to_param_map(const archspace::ArchSpec& spec, const params::PredictedParameterSet& set, bool trainable);
params::PredictedParameterSet from_param_map(const archspace::ArchSpec& spec, const ParamMap& p,
                                             const params::PredictedParameterSet& like);

}  // namespace logah::targetnet
