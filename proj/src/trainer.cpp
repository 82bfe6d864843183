// SPDX-License-Identifier: Apache-2.0
#include "logah/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"

namespace logah::trainer {

namespace {

void zero_grads(const std::vector<std::pair<std::string, ad::Var>>& params) {
  for (const auto& [_, v] : params) v->grad = Tensor();
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

targetnet::ParamMap param_map(const decoder::PredictedVars& pv) {
  return targetnet::ParamMap(pv.tensors.begin(), pv.tensors.end());
}

std::string task_kind_for(archspace::Kind k) {
  switch (k) {
    case archspace::Kind::gpt2:
      return "tokens";
    default:
      return "images";
  }
}

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = is.get();
    if (c == EOF) throw ParseError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

std::int64_t argmax_row(const Tensor& t, std::int64_t r) {
  const auto c = t.cols();
  std::int64_t best = 0;
  for (std::int64_t j = 1; j < c; ++j) {
    if (t.at(r, j) > t.at(r, best)) best = j;
  }
  return best;
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adamw") return OptimizerKind::adamw;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adamw or sgd)");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adamw ? "adamw" : "sgd"; }

void TrainConfig::validate() const {
  if (m < 1 || n < 1) throw ConfigError("meta-batch and mini-batch sizes must be positive");
  if (epochs < 0 || max_steps < 0) throw ConfigError("epochs and max_steps must be non-negative");
  if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
  if (base_lr < 0.0 || weight_decay < 0.0) throw ConfigError("learning rate and weight decay must be non-negative");
  if (seq_len < 1) throw ConfigError("sequence length must be positive");
}

double cosine_lr(double base, std::int64_t step, std::int64_t total) {
  if (total <= 1) return base;
  const double x = static_cast<double>(std::clamp<std::int64_t>(step, 0, total - 1)) / static_cast<double>(total - 1);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

void Optimizer::step(const std::vector<std::pair<std::string, ad::Var>>& params, double lr, double weight_decay) {
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& [name, var] : params) {
    auto& w = var->value.data;
    const bool has = var->has_grad();
    auto& mom = m[name];
    if (mom.empty()) mom.assign(w.size(), 0.0);
    if (kind == OptimizerKind::adamw) {
      auto& sec = v[name];
      if (sec.empty()) sec.assign(w.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = has ? var->grad.data[i] : 0.0;
        mom[i] = beta1 * mom[i] + (1.0 - beta1) * g;
        sec[i] = beta2 * sec[i] + (1.0 - beta2) * g * g;
        w[i] *= 1.0 - lr * weight_decay;
        w[i] -= lr * (mom[i] / c1) / (std::sqrt(sec[i] / c2) + eps);
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = (has ? var->grad.data[i] : 0.0) + weight_decay * w[i];
        mom[i] = momentum * mom[i] + g;
        w[i] -= lr * mom[i];
      }
    }
  }
}

Optimizer make_optimizer(const TrainConfig& cfg) {
  Optimizer o;
  o.kind = cfg.optimizer;
  o.beta1 = cfg.beta1;
  o.beta2 = cfg.beta2;
  o.eps = cfg.eps;
  o.momentum = cfg.momentum;
  return o;
}

TrainState init_state(const ghn::GhnConfig& ghn_cfg, const TrainConfig& cfg) {
  cfg.validate();
  return TrainState{ghn::init_ghn(ghn_cfg, cfg.seed), make_optimizer(cfg), 0, std::mt19937_64(mix(cfg.seed, 0xBA7C)),
                    {}};
}

ad::Var task_loss(const archspace::ArchSpec& spec, const targetnet::ParamMap& p, const tasks::Batch& batch) {
  if (const auto* v = std::get_if<archspace::ViTSpec>(&spec)) {
    return ad::cross_entropy(targetnet::vit_forward(*v, p, batch.images), batch.targets);
  }
  if (const auto* g = std::get_if<archspace::GPTSpec>(&spec)) {
    return ad::cross_entropy(targetnet::gpt_forward(*g, p, batch.tokens, batch.n, batch.seq), batch.targets);
  }
  return ad::cross_entropy(targetnet::linear_forward(std::get<archspace::LinearSpec>(spec), p, batch.images),
                           batch.targets);
}

LossParts ghn_loss(const ghn::GhnModel& model, const std::vector<const graphir::CompGraph*>& graphs,
                   const tasks::Batch& batch, double gamma) {
  if (graphs.empty()) throw ConfigError("meta-batch is empty");
  const double inv = 1.0 / static_cast<double>(graphs.size());
  ad::Var task_sum;
  ad::Var reg_sum;
  LossParts out;
  for (const auto* g : graphs) {
    if (!g->arch) throw ConfigError("graph " + g->id + " carries no architecture");
    const auto pv = ghn::predict_vars(model, *g);
    auto loss = task_loss(*g->arch, param_map(pv), batch);
    if (!std::isfinite(loss->value.data[0])) throw NumericError("non-finite task loss on graph " + g->id);
    task_sum = task_sum ? ad::add(task_sum, loss) : loss;
    for (const auto& name : pv.predicted) {
      auto sq = ad::sum_squares(pv.tensors.at(name));
      reg_sum = reg_sum ? ad::add(reg_sum, sq) : sq;
    }
  }
  auto task = ad::scale(task_sum, inv);
  out.task = task->value.data[0];
  out.total = task;
  if (reg_sum) {
    auto reg = ad::scale(reg_sum, gamma * inv);
    out.reg = reg->value.data[0];
    out.total = ad::add(task, reg);
  }
  return out;
}

StepResult training_step(TrainState& state, const std::vector<const graphir::CompGraph*>& graphs,
                         const tasks::Batch& batch, const TrainConfig& cfg, double lr) {
  const auto params = ghn::named_parameters(state.model);
  zero_grads(params);
  auto parts = ghn_loss(state.model, graphs, batch, cfg.gamma);
  if (!std::isfinite(parts.total->value.data[0])) {
    std::string ids;
    for (const auto* g : graphs) ids += (ids.empty() ? "" : ",") + g->id;
    throw NumericError("non-finite loss at step " + std::to_string(state.step) + " on graphs " + ids);
  }
  ad::backward(parts.total);
  double sq = 0.0;
  for (const auto& [_, v] : params) {
    for (double g : v->grad.data) sq += g * g;
  }
  state.opt.step(params, lr, cfg.weight_decay);
  ++state.step;
  return {parts.task, parts.reg, std::sqrt(sq)};
}

void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows) {
  os << "step,epoch,lr,task_loss,reg_loss\n";
  os.precision(10);
  for (const auto& r : rows) os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.task_loss << ',' << r.reg_loss << '\n';
}

std::int64_t total_steps(const TrainConfig& cfg, std::int64_t dataset_size) {
  const auto per_epoch = (dataset_size + cfg.m - 1) / cfg.m;
  const auto t = cfg.epochs * per_epoch;
  return cfg.max_steps > 0 ? std::min(t, cfg.max_steps) : t;
}

std::vector<LogRow> train(TrainState& state, const archspace::ArchDataset& dataset, const tasks::Task& task,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.records.empty()) throw ConfigError("architecture dataset is empty");
  const auto kind = archspace::kind_name(dataset.kind);
  if (task_kind_for(dataset.kind) != tasks::task_kind(task)) {
    throw ConfigError(kind + " architectures cannot train on a " + tasks::task_kind(task) + " task");
  }
  if (!state.arch_kind.empty() && state.arch_kind != kind) {
    throw ConfigError("checkpoint was trained on " + state.arch_kind + ", dataset is " + kind);
  }
  std::vector<graphir::CompGraph> graphs;
  graphs.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    tasks::check_compatible(rec.spec, task);
    graphs.push_back(graphir::build_graph(rec.spec, "arch-" + std::to_string(rec.id)));
  }
  state.arch_kind = kind;

  const auto n = static_cast<std::int64_t>(graphs.size());
  const auto per_epoch = (n + cfg.m - 1) / cfg.m;
  const auto total = total_steps(cfg, n);
  std::vector<LogRow> log;
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> order;
  while (state.step < total) {
    const auto t = state.step;
    const auto epoch = t / per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(n, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto pos = (t % per_epoch) * cfg.m;
    std::vector<const graphir::CompGraph*> meta;
    for (auto i = pos; i < std::min(n, pos + cfg.m); ++i) meta.push_back(&graphs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    const auto batch = tasks::sample_batch(task, cfg.n, cfg.seq_len, state.rng);
    const double lr = cosine_lr(cfg.base_lr, t, total);
    const auto res = training_step(state, meta, batch, cfg, lr);
    log.push_back({t, epoch, lr, res.task_loss, res.reg_loss});
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && state.step % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.checkpoint_path, state);
    }
  }
  return log;
}

void save_checkpoint(const std::string& path, const TrainState& state) {
  std::vector<std::pair<std::string, const std::vector<double>*>> blobs;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Shape& shape, const std::vector<double>& data) {
    index.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", data.size()}});
    offset += data.size();
    blobs.emplace_back(name, &data);
  };
  for (const auto& [name, v] : ghn::named_parameters(state.model)) add(name, v->value.shape, v->value.data);
  for (const auto& [name, data] : state.opt.m) add("opt.m." + name, Shape{static_cast<std::int64_t>(data.size())}, data);
  for (const auto& [name, data] : state.opt.v) add("opt.v." + name, Shape{static_cast<std::int64_t>(data.size())}, data);
  std::ostringstream rng;
  rng << state.rng;
  const nlohmann::json header{{"config", ghn::config_to_json(state.model.cfg)},
                              {"step", state.step},
                              {"arch_kind", state.arch_kind},
                              {"rng", rng.str()},
                              {"optimizer",
                               {{"kind", optimizer_name(state.opt.kind)},
                                {"beta1", state.opt.beta1},
                                {"beta2", state.opt.beta2},
                                {"eps", state.opt.eps},
                                {"momentum", state.opt.momentum},
                                {"t", state.opt.t}}},
                              {"dtype", "float64"},
                              {"tensors", index}};
  const auto text = header.dump();
  const auto tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(os, kCheckpointVersion);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, data] : blobs) {
      for (double x : *data) put_u64(os, std::bit_cast<std::uint64_t>(x));
    }
    if (!os) throw IoError("write failed for " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kCheckpointMagic)) throw ParseError(path + ": not a checkpoint");
  const auto version = static_cast<std::uint32_t>(get_le(is, 4));
  if (version != kCheckpointVersion) throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = get_le(is, 8);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw ParseError(path + ": truncated header");
  try {
    const auto header = nlohmann::json::parse(text);
    const auto cfg = ghn::config_from_json(header.at("config"));
    TrainState state{ghn::init_ghn(cfg, 0), {}, header.at("step").get<std::int64_t>(), {},
                     header.at("arch_kind").get<std::string>()};
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> state.rng;
    const auto& o = header.at("optimizer");
    state.opt.kind = parse_optimizer(o.at("kind").get<std::string>());
    state.opt.beta1 = o.at("beta1").get<double>();
    state.opt.beta2 = o.at("beta2").get<double>();
    state.opt.eps = o.at("eps").get<double>();
    state.opt.momentum = o.at("momentum").get<double>();
    state.opt.t = o.at("t").get<std::int64_t>();
    std::map<std::string, ad::Var> by_name;
    for (const auto& [name, v] : ghn::named_parameters(state.model)) by_name[name] = v;
    std::size_t loaded = 0;
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto count = e.at("count").get<std::size_t>();
      std::vector<double> data(count);
      for (auto& x : data) x = std::bit_cast<double>(get_le(is, 8));
      if (name.rfind("opt.m.", 0) == 0) {
        state.opt.m[name.substr(6)] = std::move(data);
      } else if (name.rfind("opt.v.", 0) == 0) {
        state.opt.v[name.substr(6)] = std::move(data);
      } else {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ParseError(path + ": unexpected tensor " + name);
        if (it->second->value.data.size() != count) throw ParseError(path + ": wrong size for tensor " + name);
        it->second->value.data = std::move(data);
        ++loaded;
      }
    }
    if (loaded != by_name.size()) throw ParseError(path + ": checkpoint is missing model tensors");
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Evaluation evaluate(const archspace::ArchSpec& spec, const params::PredictedParameterSet& params,
                    const tasks::Task& task, std::int64_t n, std::int64_t seq_len) {
  tasks::check_compatible(spec, task);
  const auto p = targetnet::to_param_map(spec, params, false);
  const auto batch = tasks::eval_batch(task, n, seq_len);
  Evaluation ev;
  if (std::holds_alternative<tasks::TokenTask>(task)) {
    const auto& g = std::get<archspace::GPTSpec>(spec);
    auto logits = targetnet::gpt_forward(g, p, batch.tokens, batch.n, batch.seq);
    ev.loss = ad::cross_entropy(logits, batch.targets)->value.data[0];
    ev.metric = std::exp(ev.loss);
    ev.metric_name = "perplexity";
    return ev;
  }
  ad::Var logits = std::holds_alternative<archspace::ViTSpec>(spec)
                       ? targetnet::vit_forward(std::get<archspace::ViTSpec>(spec), p, batch.images)
                       : targetnet::linear_forward(std::get<archspace::LinearSpec>(spec), p, batch.images);
  ev.loss = ad::cross_entropy(logits, batch.targets)->value.data[0];
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < batch.n; ++i) correct += argmax_row(logits->value, i) == batch.targets[static_cast<std::size_t>(i)];
  ev.metric = static_cast<double>(correct) / static_cast<double>(batch.n);
  ev.metric_name = "accuracy";
  return ev;
}

FinetuneResult finetune(const archspace::ArchSpec& spec, const params::PredictedParameterSet& init,
                        const tasks::Task& task, const FinetuneConfig& cfg) {
  if (cfg.steps < 0 || cfg.n < 1) throw ConfigError("finetune needs steps >= 0 and n >= 1");
  tasks::check_compatible(spec, task);
  auto p = targetnet::to_param_map(spec, init, true);
  std::vector<std::pair<std::string, ad::Var>> named;
  for (const auto& [name, _] : targetnet::tensor_shapes(spec)) named.emplace_back(name, p.at(name));
  Optimizer opt;
  opt.kind = cfg.optimizer;
  std::mt19937_64 rng(cfg.seed);
  FinetuneResult out;
  auto record = [&](std::int64_t step) {
    const auto ev = evaluate(spec, targetnet::from_param_map(spec, p, init), task, cfg.eval_n, cfg.seq_len);
    out.curve.push_back({step, ev.loss, ev.metric});
    out.metric_name = ev.metric_name;
  };
  record(0);
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    zero_grads(named);
    const auto batch = tasks::sample_batch(task, cfg.n, cfg.seq_len, rng);
    auto loss = task_loss(spec, p, batch);
    if (!std::isfinite(loss->value.data[0])) throw NumericError("non-finite loss at fine-tuning step " + std::to_string(s));
    ad::backward(loss);
    opt.step(named, cfg.lr, cfg.weight_decay);
    if ((s + 1) % std::max<std::int64_t>(1, cfg.eval_every) == 0 || s + 1 == cfg.steps) record(s + 1);
  }
  out.params = targetnet::from_param_map(spec, p, init);
  return out;
}

void write_curve_csv(std::ostream& os, const FinetuneResult& r) {
  os << "step,loss," << (r.metric_name.empty() ? "metric" : r.metric_name) << '\n';
  os.precision(10);
  for (const auto& pt : r.curve) os << pt.step << ',' << pt.loss << ',' << pt.metric << '\n';
}

}  // namespace logah::trainer
