// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"
#include "logah/trainer.hpp"
#include "logah/workflows.hpp"

using namespace logah;
using namespace logah::workflows;
namespace fs = std::filesystem;

namespace {
const archspace::ViTSpec kVit{1, 2, 16, 64, 4, 8, 10, 3};

params::PredictedParameterSet predicted_vit() {
  const auto model = ghn::init_ghn(ghn::custom_config(8, 4, 128, 1, 2), 1);
  return initialize_from_ghn(model, "vit", kVit);
}

std::string read(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("initialize_from_ghn checks the family") {
  const auto model = ghn::init_ghn(ghn::custom_config(8, 4, 128, 1, 2), 1);
  CHECK_NOTHROW(initialize_from_ghn(model, "", kVit));
  CHECK_THROWS_AS(initialize_from_ghn(model, "gpt2", kVit), ConfigError);
  const auto set = initialize_from_ghn(model, "vit", kVit);
  CHECK(set.arch_kind == "vit");
  for (const auto& [name, shape] : targetnet::tensor_shapes(kVit)) {
    REQUIRE(set.find(name) != nullptr);
    CHECK(set.find(name)->shape == shape);
  }
}

TEST_CASE("head re-initialization") {
  const auto set = predicted_vit();
  CHECK(head_weight_name(set) == "head.weight");
  const auto out = transfer_reinit_head(set, 100, 3);
  const auto* w = out.find("head.weight");
  const auto* b = out.find("head.bias");
  CHECK(w->shape == Shape{100, 16});
  CHECK(w->status == params::Status::reinitialized);
  CHECK(b->shape == Shape{100});
  for (float v : b->values) CHECK(v == 0.0f);
  // Kaiming std sqrt(2 / fan_in) with fan_in 16
  double s = 0, sq = 0;
  for (float v : w->values) {
    s += v;
    sq += double(v) * v;
  }
  const double n = static_cast<double>(w->values.size());
  const double var = sq / n - (s / n) * (s / n);
  CHECK(var == doctest::Approx(2.0 / 16).epsilon(0.12));
  // everything else untouched
  for (const auto& t : set.tensors) {
    if (t.name.rfind("head.", 0) == 0) continue;
    CHECK(*out.find(t.name) == t);
  }
  params::PredictedParameterSet tied;
  tied.tensors.push_back({"wte.weight", {32, 16}, std::vector<float>(512, 0.f), params::Status::predicted});
  CHECK_THROWS_AS(head_weight_name(tied), StructuralError);
}

TEST_CASE("diversity") {
  std::vector<std::vector<double>> ts{{1, 0, 0, 0}, {0, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 0, 0}};
  const auto r = diversity(ts, {"a", "b", "c", "z"}, Shape{4});
  CHECK(r.excluded == std::vector<std::string>{"z"});
  CHECK(r.pair_count == 3);
  const double c = 1.0 - 1.0 / std::sqrt(2.0);
  CHECK(r.pairs[0] == doctest::Approx(1.0));
  CHECK(r.pairs[1] == doctest::Approx(c));
  CHECK(r.pairs[2] == doctest::Approx(c));
  CHECK(r.mean_abs_cos_distance == doctest::Approx((1.0 + 2 * c) / 3));
  // sign flips do not count as diversity
  std::vector<std::vector<double>> flip{{1, 2, 3}, {-1, -2, -3}};
  CHECK(diversity(flip, {"p", "q"}, Shape{3}).mean_abs_cos_distance == doctest::Approx(0.0));
  std::vector<std::vector<double>> lonely{{1, 2, 3}, {0, 0, 0}};
  CHECK_THROWS_AS(diversity(lonely, {"p", "q"}, Shape{3}), ValidationError);

  const auto set = predicted_vit();
  const auto shapes = frequent_shapes(set);
  REQUIRE_FALSE(shapes.empty());
  for (std::size_t i = 1; i < shapes.size(); ++i) CHECK(shapes[i].second <= shapes[i - 1].second);
  const auto rep = diversity_report(set, shapes.front().first);
  CHECK(rep.names.size() + rep.excluded.size() == static_cast<std::size_t>(shapes.front().second));
  std::ostringstream os;
  write_diversity_json(os, rep);
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j.contains("pair_count"));
}

TEST_CASE("recipe parsing") {
  std::istringstream ok("# c\n[gen]\nkind = vit # trailing\nout = a.jsonl\n\n[synth-task]\nout=t\n");
  const auto r = parse_recipe(ok);
  REQUIRE(r.stages.size() == 2);
  CHECK(r.stages[0].get("kind") == "vit");
  CHECK(r.stages[0].line == 2);
  CHECK(r.stages[1].get("out") == "t");
  CHECK(r.stages[1].get("missing", "dflt") == "dflt");
  std::istringstream unknown("[bake]\nout = x\n");
  CHECK_THROWS_AS(parse_recipe(unknown), ParseError);
  std::istringstream loose("out = x\n");
  CHECK_THROWS_AS(parse_recipe(loose), ParseError);
  std::istringstream noeq("[gen]\nwhat\n");
  CHECK_THROWS_AS(parse_recipe(noeq), ParseError);
}

TEST_CASE("recipe dependencies are checked before anything runs") {
  const auto wd = fs::temp_directory_path() / "logah_recipe_dep";
  fs::remove_all(wd);
  std::istringstream text("[gen]\nkind = vit\nscale = tiny\ncount = 3\nout = a.jsonl\n"
                          "[train]\narch-dataset = a.jsonl\ntask-path = nowhere\nout = g.ckpt\n");
  const auto r = parse_recipe(text);
  CHECK_THROWS_AS(run_recipe(r, wd.string()), ConfigError);
  CHECK_FALSE(fs::exists(wd / "a.jsonl"));
  std::istringstream noout("[gen]\nkind = vit\n");
  CHECK_THROWS_AS(check_recipe(parse_recipe(noout), wd.string()), ConfigError);
  fs::remove_all(wd);
}

TEST_CASE("empty recipe writes an empty manifest") {
  const auto wd = fs::temp_directory_path() / "logah_recipe_empty";
  fs::remove_all(wd);
  std::istringstream text("# nothing\n");
  const auto res = run_recipe(parse_recipe(text), wd.string());
  CHECK(res.artifacts.empty());
  CHECK(nlohmann::json::parse(read(res.manifest_path)).at("artifacts").empty());
  fs::remove_all(wd);
}

TEST_CASE("recipe reruns are byte-identical") {
  const std::string text =
      "[gen]\nkind = vit\ncount = 4\nscale = tiny\nout = archs.jsonl\n"
      "[synth-task]\ntask = images\nout = task\n"
      "[train]\narch-dataset = archs.jsonl\ntask-path = task\nepochs = 1\nout = ghn.ckpt\nlog = train.csv\n"
      "[predict]\ncheckpoint = ghn.ckpt\narch-dataset = archs.jsonl\nindex = 1\nout = pred\n"
      "[diversity]\nparams = pred\nout = div.json\n";
  std::string manifests[2];
  for (int i = 0; i < 2; ++i) {
    const auto wd = fs::temp_directory_path() / ("logah_recipe_run" + std::to_string(i));
    fs::remove_all(wd);
    std::istringstream is(text);
    const auto res = run_recipe(parse_recipe(is), wd.string());
    CHECK(res.artifacts.size() >= 5);
    for (const auto& a : res.artifacts) CHECK(fs::exists(wd / a.path));
    manifests[i] = read(res.manifest_path);
    fs::remove_all(wd);
  }
  CHECK(manifests[0] == manifests[1]);
}
