// SPDX-License-Identifier: Apache-2.0
#include "logah/workflows.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"
#include "logah/graphir.hpp"
#include "logah/hashing.hpp"
#include "logah/kernels.hpp"
#include "logah/tasks.hpp"
#include "logah/trainer.hpp"

namespace logah::workflows {

namespace fs = std::filesystem;

params::PredictedParameterSet initialize_from_ghn(const ghn::GhnModel& model, const std::string& trained_kind,
                                                  const archspace::ArchSpec& spec, bool allow_fallback,
                                                  std::uint64_t fallback_seed) {
  archspace::validate(spec);
  const auto kind = archspace::kind_name(archspace::kind_of(spec));
  if (!trained_kind.empty() && trained_kind != kind) {
    throw ConfigError("checkpoint was trained on " + trained_kind + " graphs, spec is " + kind);
  }
  ghn::GhnModel m = model;
  m.cfg.dec.allow_fallback = allow_fallback;
  const auto graph = graphir::build_graph(spec);
  return ghn::predict(m, graph, fallback_seed);
}

params::PredictedParameterSet initialize_from_checkpoint(const std::string& checkpoint_path,
                                                         const archspace::ArchSpec& spec, bool allow_fallback,
                                                         std::uint64_t fallback_seed) {
  const auto state = trainer::load_checkpoint(checkpoint_path);
  return initialize_from_ghn(state.model, state.arch_kind, spec, allow_fallback, fallback_seed);
}

std::string head_weight_name(const params::PredictedParameterSet& params) {
  for (const char* name : {"head.weight", "fc.weight", "lm_head.weight"}) {
    if (params.find(name)) return name;
  }
  throw StructuralError("parameter set has no classification or LM head");
}

params::PredictedParameterSet transfer_reinit_head(const params::PredictedParameterSet& params,
                                                   std::int64_t new_num_classes, std::uint64_t seed) {
  if (new_num_classes < 1) throw ValidationError("new class count must be positive");
  const auto wname = head_weight_name(params);
  const auto bname = wname.substr(0, wname.size() - std::string("weight").size()) + "bias";
  auto out = params;
  auto* w = out.find(wname);
  if (w->shape.size() != 2) throw StructuralError("head weight " + wname + " is not a matrix");
  const auto fan_in = w->shape[1];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  w->shape = Shape{new_num_classes, fan_in};
  w->values.resize(static_cast<std::size_t>(new_num_classes * fan_in));
  for (auto& v : w->values) v = static_cast<float>(dist(rng));
  w->status = params::Status::reinitialized;
  if (auto* b = out.find(bname)) {
    b->shape = Shape{new_num_classes};
    b->values.assign(static_cast<std::size_t>(new_num_classes), 0.0f);
    b->status = params::Status::reinitialized;
  }
  return out;
}

DiversityReport diversity(std::span<const std::vector<double>> tensors, const std::vector<std::string>& names,
                          const Shape& shape) {
  DiversityReport rep;
  rep.shape = shape;
  std::vector<std::span<const double>> rows;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
    double sq = 0.0;
    for (double v : t) sq += v * v;
    if (sq == 0.0) {
      std::cerr << "warning: excluding zero-norm tensor " << name << " from diversity\n";
      rep.excluded.push_back(name);
      continue;
    }
    rows.emplace_back(t);
    rep.names.push_back(name);
  }
  if (rows.size() < 2) throw ValidationError("diversity needs at least two non-zero tensors of shape " + shape_string(shape));
  rep.pairs = kernels::pairwise_abs_cosine_distance(rows);
  rep.pair_count = static_cast<std::int64_t>(rep.pairs.size());
  double s = 0.0;
  for (double d : rep.pairs) s += d;
  rep.mean_abs_cos_distance = s / static_cast<double>(rep.pair_count);
  return rep;
}

DiversityReport diversity_report(const params::PredictedParameterSet& params, const Shape& shape) {
  std::vector<std::vector<double>> tensors;
  std::vector<std::string> names;
  for (const auto& t : params.tensors) {
    if (t.shape != shape) continue;
    tensors.emplace_back(t.values.begin(), t.values.end());
    names.push_back(t.name);
  }
  return diversity(tensors, names, shape);
}

std::vector<std::pair<Shape, std::int64_t>> frequent_shapes(const params::PredictedParameterSet& params) {
  std::map<Shape, std::int64_t> counts;
  for (const auto& t : params.tensors) ++counts[t.shape];
  std::vector<std::pair<Shape, std::int64_t>> out;
  for (const auto& [s, c] : counts) {
    if (c >= 2) out.emplace_back(s, c);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

void write_diversity_json(std::ostream& os, const DiversityReport& r) {
  nlohmann::json j{{"shape", r.shape},
                   {"pair_count", r.pair_count},
                   {"mean_abs_cos_distance", r.mean_abs_cos_distance},
                   {"tensors", r.names},
                   {"excluded", r.excluded},
                   {"pairs", r.pairs}};
  os << j.dump(2) << '\n';
}

// --- recipes ----------------------------------------------------------------

namespace {

const std::set<std::string> kStages = {"gen", "synth-task", "train", "predict", "transfer-head", "diversity", "finetune"};
const std::vector<std::string> kInputKeys = {"arch-dataset", "task-path", "checkpoint", "params"};
const std::vector<std::string> kOutputKeys = {"out", "log", "params-out"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::int64_t to_int(const Stage& st, const std::string& key, std::int64_t fallback) {
  if (!st.has(key)) return fallback;
  try {
    return std::stoll(st.get(key));
  } catch (const std::logic_error&) {
    throw ConfigError("stage " + st.name + " (line " + std::to_string(st.line) + "): '" + key + "' is not an integer");
  }
}

double to_double(const Stage& st, const std::string& key, double fallback) {
  if (!st.has(key)) return fallback;
  try {
    return std::stod(st.get(key));
  } catch (const std::logic_error&) {
    throw ConfigError("stage " + st.name + " (line " + std::to_string(st.line) + "): '" + key + "' is not a number");
  }
}

std::string resolve(const std::string& workdir, const std::string& p) {
  return fs::path(p).is_absolute() ? p : (fs::path(workdir) / p).string();
}

archspace::ArchSpec stage_spec(const Stage& st, const std::string& workdir) {
  if (st.has("preset")) return archspace::preset(st.get("preset"));
  if (st.has("arch-dataset")) {
    const auto ds = archspace::load_dataset(resolve(workdir, st.get("arch-dataset")));
    const auto idx = to_int(st, "index", 0);
    if (idx < 0 || idx >= static_cast<std::int64_t>(ds.records.size())) {
      throw ConfigError("stage " + st.name + ": index " + std::to_string(idx) + " outside the dataset");
    }
    return ds.records[static_cast<std::size_t>(idx)].spec;
  }
  throw ConfigError("stage " + st.name + " (line " + std::to_string(st.line) + ") needs 'preset' or 'arch-dataset'");
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) s.push_back(std::stoll(trim(item)));
  return s;
}

std::vector<std::string> run_stage(const Stage& st, const std::string& wd) {
  const auto out = resolve(wd, st.get("out"));
  if (st.name == "gen") {
    const auto kind = archspace::parse_kind(st.get("kind", "vit"));
    const auto cap = to_int(st, "cap", kind == archspace::Kind::gpt2 ? archspace::kGptCap : archspace::kVitCap);
    const auto scale = st.get("scale", "paper") == "tiny" ? archspace::Scale::tiny : archspace::Scale::paper;
    const auto ds = archspace::generate_dataset(kind, to_int(st, "count", 1000),
                                                static_cast<std::uint64_t>(to_int(st, "seed", 0)), cap, scale);
    archspace::save_dataset(out, ds);
    return {out, out + ".hist.csv"};
  }
  if (st.name == "synth-task") {
    const auto seed = static_cast<std::uint64_t>(to_int(st, "seed", 0));
    if (st.get("task", "images") == "images") {
      tasks::save_task(out, tasks::synth_images(to_int(st, "count", 2000), to_int(st, "channels", 3),
                                                to_int(st, "image-size", 8), to_int(st, "classes", 10), seed,
                                                to_double(st, "noise", 0.5)));
    } else {
      tasks::save_task(out, tasks::synth_tokens(to_int(st, "count", 20000), to_int(st, "vocab", 32), seed));
    }
    return {out};
  }
  if (st.name == "train") {
    const auto ds = archspace::load_dataset(resolve(wd, st.get("arch-dataset")));
    const auto task = tasks::load_task(resolve(wd, st.get("task-path")));
    trainer::TrainConfig cfg;
    cfg.m = to_int(st, "m", cfg.m);
    cfg.n = to_int(st, "n", cfg.n);
    cfg.epochs = to_int(st, "epochs", cfg.epochs);
    cfg.max_steps = to_int(st, "max-steps", cfg.max_steps);
    cfg.seq_len = to_int(st, "seq-len", cfg.seq_len);
    cfg.base_lr = to_double(st, "lr", cfg.base_lr);
    cfg.gamma = to_double(st, "gamma", cfg.gamma);
    cfg.weight_decay = to_double(st, "weight-decay", cfg.weight_decay);
    cfg.seed = static_cast<std::uint64_t>(to_int(st, "seed", 0));
    cfg.optimizer = trainer::parse_optimizer(st.get("optimizer", "adamw"));
    auto state = trainer::init_state(ghn::variant_config(st.get("variant", "desk")), cfg);
    const auto log = trainer::train(state, ds, task, cfg);
    trainer::save_checkpoint(out, state);
    std::vector<std::string> produced{out};
    if (st.has("log")) {
      const auto lp = resolve(wd, st.get("log"));
      std::ofstream os(lp);
      if (!os) throw IoError("cannot write " + lp);
      trainer::write_log_csv(os, log);
      produced.push_back(lp);
    }
    return produced;
  }
  if (st.name == "predict") {
    const auto spec = stage_spec(st, wd);
    const auto set = initialize_from_checkpoint(resolve(wd, st.get("checkpoint")), spec,
                                                st.get("allow-fallback", "true") == "true");
    params::save_archive(out, set);
    return {out};
  }
  if (st.name == "transfer-head") {
    const auto set = params::load_archive(resolve(wd, st.get("params")));
    params::save_archive(out, transfer_reinit_head(set, to_int(st, "classes", 1000),
                                                   static_cast<std::uint64_t>(to_int(st, "seed", 0))));
    return {out};
  }
  if (st.name == "diversity") {
    const auto set = params::load_archive(resolve(wd, st.get("params")));
    Shape shape;
    if (st.has("shape")) {
      shape = parse_shape(st.get("shape"));
    } else {
      const auto shapes = frequent_shapes(set);
      if (shapes.empty()) throw ConfigError("no tensor shape occurs twice");
      shape = shapes.front().first;
    }
    std::ofstream os(out);
    if (!os) throw IoError("cannot write " + out);
    write_diversity_json(os, diversity_report(set, shape));
    return {out};
  }
  // finetune
  const auto spec = stage_spec(st, wd);
  const auto task = tasks::load_task(resolve(wd, st.get("task-path")));
  const auto init = params::load_archive(resolve(wd, st.get("params")));
  trainer::FinetuneConfig cfg;
  cfg.steps = to_int(st, "steps", cfg.steps);
  cfg.n = to_int(st, "n", cfg.n);
  cfg.lr = to_double(st, "lr", cfg.lr);
  cfg.eval_every = to_int(st, "eval-every", cfg.eval_every);
  cfg.optimizer = trainer::parse_optimizer(st.get("optimizer", "sgd"));
  cfg.seed = static_cast<std::uint64_t>(to_int(st, "seed", 0));
  const auto res = trainer::finetune(spec, init, task, cfg);
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out);
  trainer::write_curve_csv(os, res);
  std::vector<std::string> produced{out};
  if (st.has("params-out")) {
    const auto pp = resolve(wd, st.get("params-out"));
    params::save_archive(pp, res.params);
    produced.push_back(pp);
  }
  return produced;
}

}  // namespace

std::string Stage::get(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : params) {
    if (k == key) return v;
  }
  return fallback;
}

bool Stage::has(const std::string& key) const {
  return std::any_of(params.begin(), params.end(), [&](const auto& kv) { return kv.first == key; });
}

Recipe parse_recipe(std::istream& is) {
  Recipe r;
  std::string raw;
  std::int64_t line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const auto text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ParseError("recipe line " + std::to_string(line) + ": unterminated stage header");
      const auto name = trim(text.substr(1, text.size() - 2));
      if (!kStages.contains(name)) throw ParseError("recipe line " + std::to_string(line) + ": unknown stage '" + name + "'");
      r.stages.push_back({name, line, {}});
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("recipe line " + std::to_string(line) + ": expected key = value");
    if (r.stages.empty()) throw ParseError("recipe line " + std::to_string(line) + ": key outside a stage");
    r.stages.back().params.emplace_back(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
  return r;
}

Recipe load_recipe(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return parse_recipe(is);
}

void check_recipe(const Recipe& recipe, const std::string& workdir) {
  std::set<std::string> produced;
  for (const auto& st : recipe.stages) {
    for (const auto& key : kInputKeys) {
      if (!st.has(key)) continue;
      const auto p = fs::weakly_canonical(resolve(workdir, st.get(key))).string();
      if (!produced.contains(p) && !fs::exists(p)) {
        throw ConfigError("stage " + st.name + " (line " + std::to_string(st.line) + "): missing dependency " +
                          st.get(key));
      }
    }
    if (!st.has("out")) {
      throw ConfigError("stage " + st.name + " (line " + std::to_string(st.line) + ") has no 'out'");
    }
    for (const auto& key : kOutputKeys) {
      if (st.has(key)) produced.insert(fs::weakly_canonical(resolve(workdir, st.get(key))).string());
    }
  }
}

RecipeResult run_recipe(const Recipe& recipe, const std::string& workdir, std::ostream* log) {
  fs::create_directories(workdir);
  check_recipe(recipe, workdir);
  RecipeResult res;
  for (const auto& st : recipe.stages) {
    if (log) *log << "stage " << st.name << " (line " << st.line << ")\n";
    for (const auto& path : run_stage(st, workdir)) {
      res.artifacts.push_back({st.name, fs::relative(path, workdir).generic_string(), hashing::sha256_path(path)});
    }
  }
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : res.artifacts) arts.push_back({{"stage", a.stage}, {"path", a.path}, {"sha256", a.sha256}});
  res.manifest_path = (fs::path(workdir) / "manifest.json").string();
  std::ofstream os(res.manifest_path);
  if (!os) throw IoError("cannot write " + res.manifest_path);
  os << nlohmann::json{{"artifacts", arts}}.dump(2) << '\n';
  return res;
}

}  // namespace logah::workflows
