// SPDX-License-Identifier: Apache-2.0
#include "logah/costmodel.hpp"

#include <limits>
#include <ostream>
#include <sstream>

#include "logah/errors.hpp"
#include "logah/graphir.hpp"

namespace logah::costmodel {

namespace {

constexpr std::int64_t kFace = 16;

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw ValidationError("parameter count overflows 64 bits");
  return out;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw ValidationError("parameter count overflows 64 bits");
  return out;
}

std::int64_t mul(std::initializer_list<std::int64_t> xs) {
  std::int64_t p = 1;
  for (auto x : xs) p = checked_mul(p, x);
  return p;
}

std::vector<std::pair<std::string, std::int64_t>> ghn3_terms(std::int64_t d, std::int64_t nc) {
  return {{"mlp_in", mul({d, 4 * d, kFace, kFace})},
          {"mlp_hidden", mul({4 * d, 8 * d})},
          {"mlp_out", mul({8 * d, d, d})},
          {"class_head", mul({d, nc})}};
}

std::vector<std::pair<std::string, std::int64_t>> logah_terms(std::int64_t d, std::int64_t r, std::int64_t K) {
  return {{"m1", mul({d, 4 * d})}, {"m2", mul({4 * d, 8 * d})}, {"m3", mul({8 * d, 2, r, r})}, {"m4", mul({r, K})}};
}

std::int64_t total(const std::vector<std::pair<std::string, std::int64_t>>& terms) {
  std::int64_t s = 0;
  for (const auto& [_, v] : terms) s = checked_add(s, v);
  return s;
}

}  // namespace

std::string method_name(Method m) { return m == Method::ghn3 ? "ghn3" : "logah"; }

Method parse_method(const std::string& name) {
  if (name == "ghn3") return Method::ghn3;
  if (name == "logah") return Method::logah;
  throw ConfigError("unknown method '" + name + "' (expected ghn3 or logah)");
}

std::int64_t ghn3_decoder_params(std::int64_t d, std::int64_t num_classes) {
  if (d < 1 || num_classes < 0) throw ValidationError("ghn3 count needs d >= 1 and num_classes >= 0");
  return total(ghn3_terms(d, num_classes));
}

std::int64_t logah_decoder_params(std::int64_t d, std::int64_t r, std::int64_t K) {
  if (d < 1 || r < 0 || K < 0) throw ValidationError("logah count needs d >= 1, r >= 0, K >= 0");
  return total(logah_terms(d, r, K));
}

std::int64_t param_delta(std::int64_t d, std::int64_t r, std::int64_t num_classes, std::int64_t c_out,
                         std::int64_t h) {
  const std::int64_t t1 = mul({4, d, d, kFace * kFace - 1});
  const std::int64_t t2 = mul({8, d}) * (mul({d, d}) - mul({2, r, r}));
  const std::int64_t t3 = mul({d, num_classes});
  const std::int64_t t4 = mul({r, c_out, h});
  return t1 + t2 + t3 - t4;
}

std::int64_t delta1(std::int64_t d) { return mul({16, d}) * (64 * d - 1024); }

std::int64_t encoder_params(const encoder::EncoderConfig& cfg) {
  const auto d = cfg.d;
  const auto f = cfg.ffn_mult * d;
  const std::int64_t tables = graphir::kNumOpTypes * d + (cfg.max_degree + 1) * d + cfg.heads * (cfg.max_distance + 2);
  const std::int64_t layer = (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (f * d + f) + (d * f + d) + 2 * d;
  return tables + cfg.layers * layer;
}

CountReport count(Method method, std::int64_t d, std::int64_t r, std::int64_t K, std::int64_t num_classes) {
  CountReport rep;
  rep.method = method;
  rep.d = d;
  rep.r = r;
  rep.K = K;
  rep.num_classes = num_classes;
  if (method == Method::ghn3) {
    rep.decoder_params = ghn3_decoder_params(d, num_classes);
    rep.terms = ghn3_terms(d, num_classes);
  } else {
    rep.decoder_params = logah_decoder_params(d, r, K);
    rep.terms = logah_terms(d, r, K);
  }
  return rep;
}

std::vector<ScalingRow> scaling_table(const std::vector<std::int64_t>& widths, std::int64_t d, std::int64_t r,
                                      std::int64_t K, std::int64_t num_classes) {
  for (std::size_t i = 1; i < widths.size(); ++i) {
    if (widths[i] <= widths[i - 1]) throw ValidationError("widths must be sorted ascending");
  }
  const auto logah = logah_decoder_params(d, r, K);
  std::vector<ScalingRow> rows;
  rows.reserve(widths.size());
  for (auto w : widths) {
    rows.push_back({w, ghn3_decoder_params(w, num_classes), logah, w * kFace <= K});
  }
  return rows;
}

void write_scaling_csv(std::ostream& os, const std::vector<ScalingRow>& rows) {
  os << "width,ghn3_params,logah_params,logah_supported\n";
  for (const auto& r : rows) {
    os << r.width << ',' << r.ghn3_params << ',';
    if (r.logah_supported) os << r.logah_params;
    os << ',' << (r.logah_supported ? "true" : "false") << '\n';
  }
}

std::vector<std::int64_t> parse_widths(const std::string& text) {
  std::vector<std::int64_t> out;
  try {
    if (auto pos = text.find(".."); pos != std::string::npos) {
      const auto lo = std::stoll(text.substr(0, pos));
      const auto hi = std::stoll(text.substr(pos + 2));
      if (lo < 1 || hi < lo) throw ConfigError("bad width range '" + text + "'");
      for (std::int64_t w = lo; w <= hi; w *= 2) out.push_back(w);
      return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  } catch (const std::logic_error&) {
    throw ConfigError("bad width list '" + text + "'");
  }
  return out;
}

const std::vector<Variant>& variants() {
  static const std::vector<Variant> table = {
      {"logah-tiny", Method::logah, 32, 3, 64, 8, 32768, 100, 2.5},
      {"logah-small", Method::logah, 90, 5, 128, 16, 32768, 100, 21.4},
      {"logah-base", Method::logah, 128, 5, 256, 16, 32768, 100, 78.2},
      {"logah-large", Method::logah, 256, 12, 256, 16, 32768, 100, 289.4},
      {"ghn3-tiny", Method::ghn3, 0, 3, 64, 8, 0, 100, 6.9},
      {"ghn3-small", Method::ghn3, 0, 5, 128, 16, 0, 100, 35.8},
      {"ghn3-large", Method::ghn3, 0, 12, 256, 16, 0, 100, 214.7},
  };
  return table;
}

const Variant& find_variant(const std::string& name) {
  for (const auto& v : variants()) {
    if (v.name == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

encoder::EncoderConfig variant_encoder(const Variant& v) {
  encoder::EncoderConfig cfg;
  cfg.d = v.d;
  cfg.layers = v.layers;
  cfg.heads = v.heads;
  return cfg;
}

std::int64_t variant_total_params(const Variant& v) {
  const auto dec = v.method == Method::ghn3 ? ghn3_decoder_params(v.d, v.num_classes)
                                            : logah_decoder_params(v.d, v.r, v.K);
  return encoder_params(variant_encoder(v)) + dec;
}

}  // namespace logah::costmodel
