// SPDX-License-Identifier: Apache-2.0
#include "logah/ghn.hpp"

#include <random>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"

namespace logah::ghn {

void GhnConfig::validate() const {
  enc.validate();
  dec.validate();
  if (enc.d != dec.d) throw ConfigError("encoder and decoder widths differ");
}

GhnConfig custom_config(std::int64_t d, std::int64_t r, std::int64_t K, std::int64_t layers, std::int64_t heads) {
  GhnConfig cfg;
  cfg.enc.d = d;
  cfg.enc.layers = layers;
  cfg.enc.heads = heads;
  cfg.dec.d = d;
  cfg.dec.r = r;
  cfg.dec.K = K;
  cfg.validate();
  return cfg;
}

GhnConfig variant_config(const std::string& name) {
  GhnConfig cfg;
  if (name == "tiny") {
    cfg = custom_config(64, 32, 32768, 3, 8);
  } else if (name == "small") {
    cfg = custom_config(128, 90, 32768, 5, 16);
  } else if (name == "base") {
    cfg = custom_config(256, 128, 32768, 5, 16);
  } else if (name == "large") {
    cfg = custom_config(256, 256, 32768, 12, 16);
  } else if (name == "desk") {
    cfg = custom_config(16, 8, 512, 2, 4);
  } else {
    throw ConfigError("unknown variant '" + name + "' (expected tiny, small, base, large, desk)");
  }
  cfg.variant = name;
  return cfg;
}

nlohmann::json config_to_json(const GhnConfig& cfg) {
  return {{"variant", cfg.variant},
          {"d", cfg.enc.d},
          {"layers", cfg.enc.layers},
          {"heads", cfg.enc.heads},
          {"max_distance", cfg.enc.max_distance},
          {"max_degree", cfg.enc.max_degree},
          {"ffn_mult", cfg.enc.ffn_mult},
          {"r", cfg.dec.r},
          {"K", cfg.dec.K},
          {"num_classes", cfg.dec.num_classes},
          {"chunk_nodes", cfg.dec.chunk_nodes},
          {"allow_fallback", cfg.dec.allow_fallback}};
}

GhnConfig config_from_json(const nlohmann::json& j) {
  try {
    GhnConfig cfg;
    cfg.variant = j.value("variant", std::string("custom"));
    cfg.enc.d = j.at("d").get<std::int64_t>();
    cfg.enc.layers = j.at("layers").get<std::int64_t>();
    cfg.enc.heads = j.at("heads").get<std::int64_t>();
    cfg.enc.max_distance = j.at("max_distance").get<std::int64_t>();
    cfg.enc.max_degree = j.at("max_degree").get<std::int64_t>();
    cfg.enc.ffn_mult = j.at("ffn_mult").get<std::int64_t>();
    cfg.dec.d = cfg.enc.d;
    cfg.dec.r = j.at("r").get<std::int64_t>();
    cfg.dec.K = j.at("K").get<std::int64_t>();
    cfg.dec.num_classes = j.at("num_classes").get<std::int64_t>();
    cfg.dec.chunk_nodes = j.at("chunk_nodes").get<std::int64_t>();
    cfg.dec.allow_fallback = j.at("allow_fallback").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ghn config: ") + e.what());
  }
}

GhnModel init_ghn(const GhnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  GhnModel m{cfg, encoder::init_encoder(cfg.enc, rng), {}};
  m.dec = decoder::init_decoder(cfg.dec, rng);
  return m;
}

std::vector<std::pair<std::string, ad::Var>> named_parameters(const GhnModel& model) {
  auto out = encoder::named_parameters(model.enc);
  for (auto& p : decoder::named_parameters(model.dec)) out.push_back(std::move(p));
  return out;
}

std::int64_t scalar_count(const GhnModel& model) {
  std::int64_t n = 0;
  for (const auto& [_, v] : named_parameters(model)) n += v->value.numel();
  return n;
}

params::PredictedParameterSet predict(const GhnModel& model, const graphir::CompGraph& graph,
                                      std::uint64_t fallback_seed) {
  const auto features = encoder::encode(graph, model.enc, model.cfg.enc);
  return decoder::predict_all(graph, features, model.dec, model.cfg.dec, fallback_seed);
}

decoder::PredictedVars predict_vars(const GhnModel& model, const graphir::CompGraph& graph,
                                    std::uint64_t fallback_seed) {
  const auto features = encoder::encode(graph, model.enc, model.cfg.enc);
  return decoder::predict_vars(graph, features, model.dec, model.cfg.dec, fallback_seed);
}

}  // namespace logah::ghn
