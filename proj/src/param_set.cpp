// SPDX-License-Identifier: Apache-2.0
#include "logah/param_set.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"
#include "logah/hashing.hpp"

namespace logah::params {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> to_le_bytes(const std::vector<float>& v) {
  std::vector<unsigned char> bytes(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(u >> (8 * b));
  }
  return bytes;
}

std::vector<float> from_le_bytes(const std::vector<unsigned char>& bytes) {
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

}  // namespace

std::string status_name(Status s) {
  switch (s) {
    case Status::predicted:
      return "predicted";
    case Status::fallback:
      return "fallback";
    case Status::reinitialized:
      return "reinitialized";
  }
  return "unknown";
}

Status parse_status(const std::string& s) {
  if (s == "predicted") return Status::predicted;
  if (s == "fallback") return Status::fallback;
  if (s == "reinitialized") return Status::reinitialized;
  throw ParseError("unknown tensor status '" + s + "'");
}

const NamedTensor* PredictedParameterSet::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

NamedTensor* PredictedParameterSet::find(const std::string& name) {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

std::vector<std::string> PredictedParameterSet::fallback_report() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) {
    if (t.status == Status::fallback) out.push_back(t.name);
  }
  return out;
}

std::int64_t PredictedParameterSet::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::int64_t>(t.values.size());
  return n;
}

std::string save_archive(const std::string& dir, const PredictedParameterSet& set) {
  fs::create_directories(dir);
  nlohmann::json manifest{{"format", "logah-params"},
                          {"version", kArchiveVersion},
                          {"arch_kind", set.arch_kind},
                          {"dtype", "float32"},
                          {"byte_order", "little"},
                          {"non_predicted", set.non_predicted},
                          {"fallback", set.fallback_report()}};
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < set.tensors.size(); ++i) {
    const auto& t = set.tensors[i];
    if (static_cast<std::int64_t>(t.values.size()) != shape_numel(t.shape)) {
      throw ContractError("tensor " + t.name + " has " + std::to_string(t.values.size()) + " values for shape " +
                          shape_string(t.shape));
    }
    const std::string file = std::to_string(i) + ".f32";
    const auto bytes = to_le_bytes(t.values);
    std::ofstream os(fs::path(dir) / file, std::ios::binary);
    if (!os) throw IoError("cannot write " + (fs::path(dir) / file).string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    entries.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"status", status_name(t.status)},
                       {"file", file},
                       {"sha256", hashing::sha256_hex(bytes)}});
  }
  manifest["tensors"] = std::move(entries);
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ofstream ms(path);
  if (!ms) throw IoError("cannot write " + path);
  ms << manifest.dump(2) << '\n';
  return path;
}

PredictedParameterSet load_archive(const std::string& dir) {
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ifstream ms(path);
  if (!ms) throw IoError("cannot read " + path);
  PredictedParameterSet set;
  try {
    const auto manifest = nlohmann::json::parse(ms);
    if (manifest.at("format").get<std::string>() != "logah-params") throw ParseError("not a parameter archive");
    if (manifest.at("version").get<int>() != kArchiveVersion) throw ParseError("unsupported archive version");
    set.arch_kind = manifest.value("arch_kind", std::string{});
    set.non_predicted = manifest.value("non_predicted", std::vector<std::string>{});
    for (const auto& e : manifest.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      t.status = parse_status(e.at("status").get<std::string>());
      const auto file = (fs::path(dir) / e.at("file").get<std::string>()).string();
      std::ifstream is(file, std::ios::binary);
      if (!is) throw IoError("cannot read " + file);
      std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
      if (static_cast<std::int64_t>(bytes.size()) != 4 * shape_numel(t.shape)) {
        throw ParseError("tensor " + t.name + ": file size does not match shape " + shape_string(t.shape));
      }
      if (e.contains("sha256") && e.at("sha256").get<std::string>() != hashing::sha256_hex(bytes)) {
        throw ParseError("tensor " + t.name + ": content hash mismatch");
      }
      t.values = from_le_bytes(bytes);
      set.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return set;
}

Tensor to_tensor(const NamedTensor& t) {
  return Tensor(t.shape, std::vector<double>(t.values.begin(), t.values.end()));
}

NamedTensor from_tensor(std::string name, const Tensor& t, Status status) {
  NamedTensor out{std::move(name), t.shape, std::vector<float>(t.data.size()), status};
  for (std::size_t i = 0; i < t.data.size(); ++i) out.values[i] = static_cast<float>(t.data[i]);
  return out;
}

}  // namespace logah::params
