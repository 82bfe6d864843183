// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "logah/archspace.hpp"
#include "logah/costmodel.hpp"
#include "logah/errors.hpp"
#include "logah/tasks.hpp"
#include "logah/trainer.hpp"
#include "logah/workflows.hpp"

using namespace logah;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  return os;
}

archspace::ArchSpec resolve_spec(const std::string& preset, const std::string& dataset, std::int64_t index) {
  if (!preset.empty()) return archspace::preset(preset);
  if (dataset.empty()) throw ConfigError("give --preset or --arch-dataset");
  const auto ds = archspace::load_dataset(dataset);
  if (index < 0 || index >= static_cast<std::int64_t>(ds.records.size())) throw ConfigError("--index outside the dataset");
  return ds.records[static_cast<std::size_t>(index)].spec;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) s.push_back(std::stoll(item));
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"logah: low-rank graph hypernetwork tools"};
  app.require_subcommand(1);

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "sample an architecture dataset");
  std::string gen_kind = "vit", gen_out;
  std::int64_t gen_count = 1000, gen_cap = 0;
  std::uint64_t gen_seed = 0;
  bool gen_tiny = false;
  gen->add_option("--kind", gen_kind)->check(CLI::IsMember({"vit", "gpt2"}));
  gen->add_option("--count", gen_count);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--cap", gen_cap, "parameter cap (default 10M vit, 30M gpt2)");
  gen->add_flag("--tiny", gen_tiny, "desk-scale sampler");
  gen->add_option("--out", gen_out)->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "parameter counting");
  analyze->require_subcommand(1);
  auto* count = analyze->add_subcommand("count", "decoder parameter count");
  std::string count_method = "logah";
  std::int64_t cd = 64, cr = 32, cK = 32768, cnc = 100;
  count->add_option("--method", count_method)->check(CLI::IsMember({"ghn3", "logah"}));
  count->add_option("--d", cd);
  count->add_option("--r", cr);
  count->add_option("--K", cK);
  count->add_option("--num-classes", cnc);
  auto* scaling = analyze->add_subcommand("scaling", "width scaling table");
  std::string widths = "64..4096", logah_cfg = "64,32,32768", scaling_out;
  scaling->add_option("--widths", widths, "a..b (doubling) or a,b,c");
  scaling->add_option("--logah", logah_cfg, "d,r,K");
  scaling->add_option("--out", scaling_out);

  // train-ghn
  auto* train = app.add_subcommand("train-ghn", "train the hypernetwork");
  std::string tr_arch, tr_task = "images", tr_task_path, tr_variant = "desk", tr_out, tr_log, tr_opt = "adamw",
                       tr_resume;
  std::int64_t tr_d = 16, tr_r = 8, tr_K = 512, tr_L = 2, tr_H = 4;
  trainer::TrainConfig tcfg;
  train->add_option("--arch-dataset", tr_arch)->required();
  train->add_option("--task", tr_task)->check(CLI::IsMember({"images", "tokens"}));
  train->add_option("--task-path", tr_task_path)->required();
  train->add_option("--variant", tr_variant)->check(CLI::IsMember({"tiny", "small", "base", "large", "desk", "custom"}));
  train->add_option("--d", tr_d, "custom variant width");
  train->add_option("--r", tr_r, "custom variant rank");
  train->add_option("--K", tr_K, "custom variant max mask");
  train->add_option("--layers", tr_L, "custom variant encoder layers");
  train->add_option("--heads", tr_H, "custom variant heads");
  train->add_option("--m", tcfg.m);
  train->add_option("--n", tcfg.n);
  train->add_option("--epochs", tcfg.epochs);
  train->add_option("--max-steps", tcfg.max_steps);
  train->add_option("--seq-len", tcfg.seq_len);
  train->add_option("--lr", tcfg.base_lr);
  train->add_option("--weight-decay", tcfg.weight_decay);
  train->add_option("--gamma", tcfg.gamma);
  train->add_option("--optimizer", tr_opt)->check(CLI::IsMember({"adamw", "sgd"}));
  train->add_option("--seed", tcfg.seed);
  train->add_option("--checkpoint-every", tcfg.checkpoint_every);
  train->add_option("--resume", tr_resume, "continue from a checkpoint");
  train->add_option("--log", tr_log, "CSV training log");
  train->add_option("--out", tr_out)->required();

  // predict
  auto* predict = app.add_subcommand("predict", "predict parameters for an architecture");
  std::string pr_ckpt, pr_preset, pr_dataset, pr_out;
  std::int64_t pr_index = 0;
  std::uint64_t pr_seed = 0;
  bool pr_no_fallback = false;
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--preset", pr_preset);
  predict->add_option("--arch-dataset", pr_dataset);
  predict->add_option("--index", pr_index);
  predict->add_option("--fallback-seed", pr_seed);
  predict->add_flag("--no-fallback", pr_no_fallback, "fail on tensors larger than the max mask");
  predict->add_option("--out", pr_out)->required();

  // transfer-head
  auto* transfer = app.add_subcommand("transfer-head", "re-initialize the classification head");
  std::string th_params, th_out;
  std::int64_t th_classes = 1000;
  std::uint64_t th_seed = 0;
  transfer->add_option("--params", th_params)->required();
  transfer->add_option("--classes", th_classes)->required();
  transfer->add_option("--seed", th_seed);
  transfer->add_option("--out", th_out)->required();

  // diversity
  auto* div = app.add_subcommand("diversity", "pairwise absolute cosine distance of same-shape tensors");
  std::string dv_params, dv_shape, dv_out;
  div->add_option("--params", dv_params)->required();
  div->add_option("--shape", dv_shape, "comma-separated; default: most frequent shape");
  div->add_option("--out", dv_out);

  // recipe
  auto* recipe = app.add_subcommand("recipe", "run a staged experiment recipe");
  std::string rc_file, rc_workdir;
  recipe->add_option("file", rc_file)->required();
  recipe->add_option("--workdir", rc_workdir, "default: the recipe's directory");

  // finetune
  auto* ft = app.add_subcommand("finetune", "train a network from an initialization");
  std::string ft_params, ft_preset, ft_dataset, ft_task_path, ft_out, ft_opt = "sgd", ft_params_out;
  std::int64_t ft_index = 0;
  trainer::FinetuneConfig fcfg;
  ft->add_option("--params", ft_params)->required();
  ft->add_option("--preset", ft_preset);
  ft->add_option("--arch-dataset", ft_dataset);
  ft->add_option("--index", ft_index);
  ft->add_option("--task-path", ft_task_path)->required();
  ft->add_option("--steps", fcfg.steps);
  ft->add_option("--n", fcfg.n);
  ft->add_option("--lr", fcfg.lr);
  ft->add_option("--optimizer", ft_opt)->check(CLI::IsMember({"adamw", "sgd"}));
  ft->add_option("--eval-every", fcfg.eval_every);
  ft->add_option("--seed", fcfg.seed);
  ft->add_option("--params-out", ft_params_out);
  ft->add_option("--out", ft_out)->required();

  // synth-task
  auto* synth = app.add_subcommand("synth-task", "write a synthetic task dataset");
  std::string sy_task = "images", sy_out;
  std::int64_t sy_count = 2000, sy_channels = 3, sy_size = 8, sy_classes = 10, sy_vocab = 32;
  std::uint64_t sy_seed = 0;
  double sy_noise = 0.5;
  synth->add_option("--task", sy_task)->check(CLI::IsMember({"images", "tokens"}));
  synth->add_option("--count", sy_count);
  synth->add_option("--channels", sy_channels);
  synth->add_option("--image-size", sy_size);
  synth->add_option("--classes", sy_classes);
  synth->add_option("--vocab", sy_vocab);
  synth->add_option("--noise", sy_noise);
  synth->add_option("--seed", sy_seed);
  synth->add_option("--out", sy_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto kind = archspace::parse_kind(gen_kind);
      const auto cap = gen_cap > 0 ? gen_cap : (kind == archspace::Kind::gpt2 ? archspace::kGptCap : archspace::kVitCap);
      const auto ds = archspace::generate_dataset(kind, gen_count, gen_seed, cap,
                                                  gen_tiny ? archspace::Scale::tiny : archspace::Scale::paper);
      archspace::save_dataset(gen_out, ds);
      std::cout << "wrote " << ds.records.size() << " records to " << gen_out << "\n";
    } else if (count->parsed()) {
      const auto rep = costmodel::count(costmodel::parse_method(count_method), cd, cr, cK, cnc);
      nlohmann::json j{{"method", count_method}, {"d", rep.d}, {"decoder_params", rep.decoder_params}};
      if (rep.method == costmodel::Method::logah) {
        j["r"] = rep.r;
        j["K"] = rep.K;
      } else {
        j["num_classes"] = rep.num_classes;
      }
      for (const auto& [name, v] : rep.terms) j["terms"][name] = v;
      std::cout << j.dump(2) << "\n";
    } else if (scaling->parsed()) {
      const auto c = costmodel::parse_widths(logah_cfg);
      if (c.size() != 3) throw ConfigError("--logah expects d,r,K");
      const auto rows = costmodel::scaling_table(costmodel::parse_widths(widths), c[0], c[1], c[2]);
      if (scaling_out.empty()) {
        costmodel::write_scaling_csv(std::cout, rows);
      } else {
        auto os = open_out(scaling_out);
        costmodel::write_scaling_csv(os, rows);
      }
    } else if (train->parsed()) {
      tcfg.optimizer = trainer::parse_optimizer(tr_opt);
      const auto ds = archspace::load_dataset(tr_arch);
      const auto task = tasks::load_task(tr_task_path);
      if (tasks::task_kind(task) != tr_task) throw ConfigError("--task does not match the data at --task-path");
      auto state = tr_resume.empty()
                       ? trainer::init_state(tr_variant == "custom" ? ghn::custom_config(tr_d, tr_r, tr_K, tr_L, tr_H)
                                                                    : ghn::variant_config(tr_variant),
                                             tcfg)
                       : trainer::load_checkpoint(tr_resume);
      if (tcfg.checkpoint_every > 0) tcfg.checkpoint_path = tr_out;
      const auto log = trainer::train(state, ds, task, tcfg);
      trainer::save_checkpoint(tr_out, state);
      if (!tr_log.empty()) {
        auto os = open_out(tr_log);
        trainer::write_log_csv(os, log);
      }
      std::cout << "trained " << log.size() << " steps";
      if (!log.empty()) std::cout << ", final task loss " << log.back().task_loss;
      std::cout << "; checkpoint " << tr_out << "\n";
    } else if (predict->parsed()) {
      const auto spec = resolve_spec(pr_preset, pr_dataset, pr_index);
      const auto set = workflows::initialize_from_checkpoint(pr_ckpt, spec, !pr_no_fallback, pr_seed);
      params::save_archive(pr_out, set);
      std::cout << "wrote " << set.tensors.size() << " tensors to " << pr_out;
      const auto fb = set.fallback_report();
      std::cout << " (" << fb.size() << " fallback)\n";
      for (const auto& n : fb) std::cout << "  fallback: " << n << "\n";
    } else if (transfer->parsed()) {
      const auto set = params::load_archive(th_params);
      params::save_archive(th_out, workflows::transfer_reinit_head(set, th_classes, th_seed));
      std::cout << "wrote " << th_out << "\n";
    } else if (div->parsed()) {
      const auto set = params::load_archive(dv_params);
      Shape shape;
      if (!dv_shape.empty()) {
        shape = parse_shape(dv_shape);
      } else {
        const auto shapes = workflows::frequent_shapes(set);
        if (shapes.empty()) throw ConfigError("no tensor shape occurs twice");
        shape = shapes.front().first;
      }
      const auto rep = workflows::diversity_report(set, shape);
      if (dv_out.empty()) {
        workflows::write_diversity_json(std::cout, rep);
      } else {
        auto os = open_out(dv_out);
        workflows::write_diversity_json(os, rep);
      }
    } else if (recipe->parsed()) {
      const auto wd = rc_workdir.empty() ? std::filesystem::path(rc_file).parent_path().string() : rc_workdir;
      const auto res = workflows::run_recipe(workflows::load_recipe(rc_file), wd.empty() ? "." : wd, &std::cout);
      std::cout << "manifest " << res.manifest_path << " (" << res.artifacts.size() << " artifacts)\n";
    } else if (ft->parsed()) {
      fcfg.optimizer = trainer::parse_optimizer(ft_opt);
      const auto spec = resolve_spec(ft_preset, ft_dataset, ft_index);
      const auto res = trainer::finetune(spec, params::load_archive(ft_params), tasks::load_task(ft_task_path), fcfg);
      auto os = open_out(ft_out);
      trainer::write_curve_csv(os, res);
      if (!ft_params_out.empty()) params::save_archive(ft_params_out, res.params);
      const auto& last = res.curve.back();
      std::cout << "final loss " << last.loss << ", " << res.metric_name << " " << last.metric << "\n";
    } else if (synth->parsed()) {
      if (sy_task == "images") {
        tasks::save_task(sy_out, tasks::synth_images(sy_count, sy_channels, sy_size, sy_classes, sy_seed, sy_noise));
      } else {
        tasks::save_task(sy_out, tasks::synth_tokens(sy_count, sy_vocab, sy_seed));
      }
      std::cout << "wrote " << sy_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
