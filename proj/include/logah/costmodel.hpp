// SPDX-License-Identifier: Apache-2.0
//
// Closed-form parameter counts for the two decoder families and the
// width-scaling table. Everything here is exact 64-bit integer arithmetic.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "logah/encoder.hpp"

namespace logah::costmodel {

enum class Method { ghn3, logah };

std::string method_name(Method m);
Method parse_method(const std::string& name);

// 4d^2*256 + 32d^2 + 8d^3 + d*num_classes
std::int64_t ghn3_decoder_params(std::int64_t d, std::int64_t num_classes);
// 4d^2 + 32d^2 + 8d*2r^2 + r*K
std::int64_t logah_decoder_params(std::int64_t d, std::int64_t r, std::int64_t K);
// Difference of the two counts with K taken as c_out*h.
std::int64_t param_delta(std::int64_t d, std::int64_t r, std::int64_t num_classes, std::int64_t c_out, std::int64_t h);
// 16d(64d - 1024)
std::int64_t delta1(std::int64_t d);

// Scalar count of the graph encoder, matching encoder::init_encoder.
std::int64_t encoder_params(const encoder::EncoderConfig& cfg);

struct CountReport {
  Method method = Method::logah;
  std::int64_t d = 0;
  std::int64_t r = 0;
  std::int64_t K = 0;
  std::int64_t num_classes = 0;
  std::int64_t decoder_params = 0;
  std::vector<std::pair<std::string, std::int64_t>> terms;
};

CountReport count(Method method, std::int64_t d, std::int64_t r, std::int64_t K, std::int64_t num_classes);

struct ScalingRow {
  std::int64_t width = 0;
  std::int64_t ghn3_params = 0;
  std::int64_t logah_params = 0;
  bool logah_supported = false;
};

// GHN-3 needs d = width to cover a width without tiling; the LoGAH count
// does not depend on width but only covers widths with width*16 <= K.
std::vector<ScalingRow> scaling_table(const std::vector<std::int64_t>& widths, std::int64_t d, std::int64_t r,
                                      std::int64_t K, std::int64_t num_classes = 100);
void write_scaling_csv(std::ostream& os, const std::vector<ScalingRow>& rows);
// Parses "a..b" (powers of two from a to b) or "a,b,c".
std::vector<std::int64_t> parse_widths(const std::string& text);

struct Variant {
  std::string name;
  Method method = Method::logah;
  std::int64_t r = 0;
  std::int64_t layers = 0;
  std::int64_t d = 0;
  std::int64_t heads = 0;
  std::int64_t K = 0;
  std::int64_t num_classes = 0;
  double reference_millions = 0.0;
};

const std::vector<Variant>& variants();
const Variant& find_variant(const std::string& name);
encoder::EncoderConfig variant_encoder(const Variant& v);
std::int64_t variant_total_params(const Variant& v);

}  // namespace logah::costmodel
