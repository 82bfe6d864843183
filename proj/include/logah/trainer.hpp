// SPDX-License-Identifier: Apache-2.0
//
// Hypernetwork training over an architecture dataset, checkpointing, and the
// fine-tuning loop for networks initialized from predictions.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "logah/archspace.hpp"
#include "logah/ghn.hpp"
#include "logah/graphir.hpp"
#include "logah/param_set.hpp"
#include "logah/targetnet.hpp"
#include "logah/tasks.hpp"

namespace logah::trainer {

enum class OptimizerKind { adamw, sgd };
OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind k);

struct TrainConfig {
  std::int64_t m = 1;             // architectures per step
  std::int64_t n = 32;            // task samples per step
  std::int64_t epochs = 1;
  std::int64_t max_steps = 0;     // 0: epochs * ceil(|dataset| / m)
  std::int64_t seq_len = 16;      // token windows
  double base_lr = 3e-4;
  double weight_decay = 1e-2;
  double gamma = 3e-5;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;          // sgd only
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;
  std::string checkpoint_path;    // written every checkpoint_every steps when set
  void validate() const;
};

// Cosine annealing from base to 0 over `total` steps (the last step gets 0).
double cosine_lr(double base, std::int64_t step, std::int64_t total);

struct Optimizer {
  OptimizerKind kind = OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  std::int64_t t = 0;
  std::map<std::string, std::vector<double>> m;  // first moment or sgd velocity
  std::map<std::string, std::vector<double>> v;  // second moment
  void step(const std::vector<std::pair<std::string, ad::Var>>& params, double lr, double weight_decay);
};

Optimizer make_optimizer(const TrainConfig& cfg);

struct TrainState {
  ghn::GhnModel model;
  Optimizer opt;
  std::int64_t step = 0;
  std::mt19937_64 rng;
  std::string arch_kind;  // empty until trained on a dataset
};

TrainState init_state(const ghn::GhnConfig& ghn_cfg, const TrainConfig& cfg);

struct LossParts {
  ad::Var total;
  double task = 0.0;
  double reg = 0.0;  // already multiplied by gamma
};

// Mean task loss over the graphs plus gamma * sum of squared predicted
// (non-fallback) parameters, itself averaged over the graphs.
LossParts ghn_loss(const ghn::GhnModel& model, const std::vector<const graphir::CompGraph*>& graphs,
                   const tasks::Batch& batch, double gamma);

// Task loss of one network on a batch: cross-entropy over classes or next tokens.
ad::Var task_loss(const archspace::ArchSpec& spec, const targetnet::ParamMap& p, const tasks::Batch& batch);

struct StepResult {
  double task_loss = 0.0;
  double reg_loss = 0.0;
  double grad_norm = 0.0;
};

StepResult training_step(TrainState& state, const std::vector<const graphir::CompGraph*>& graphs,
                         const tasks::Batch& batch, const TrainConfig& cfg, double lr);

struct LogRow {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double task_loss = 0.0;
  double reg_loss = 0.0;
};

void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows);

std::int64_t total_steps(const TrainConfig& cfg, std::int64_t dataset_size);

// Runs from state.step to the configured total. Data order depends only on
// (seed, step), so a resumed run replays the same meta-batches.
std::vector<LogRow> train(TrainState& state, const archspace::ArchDataset& dataset, const tasks::Task& task,
                          const TrainConfig& cfg);

inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'G', 'A', 'H', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

struct FinetuneConfig {
  std::int64_t steps = 100;
  std::int64_t n = 32;
  std::int64_t seq_len = 16;
  double lr = 0.05;
  double weight_decay = 0.0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::int64_t eval_every = 10;
  std::int64_t eval_n = 256;
  std::uint64_t seed = 0;
};

struct MetricPoint {
  std::int64_t step = 0;
  double loss = 0.0;
  double metric = 0.0;  // top-1 accuracy or perplexity
};

struct Evaluation {
  double loss = 0.0;
  double metric = 0.0;
  std::string metric_name;
};

Evaluation evaluate(const archspace::ArchSpec& spec, const params::PredictedParameterSet& params,
                    const tasks::Task& task, std::int64_t n, std::int64_t seq_len);

struct FinetuneResult {
  params::PredictedParameterSet params;
  std::vector<MetricPoint> curve;
  std::string metric_name;
};

FinetuneResult finetune(const archspace::ArchSpec& spec, const params::PredictedParameterSet& init,
                        const tasks::Task& task, const FinetuneConfig& cfg);
void write_curve_csv(std::ostream& os, const FinetuneResult& r);

}  // namespace logah::trainer
