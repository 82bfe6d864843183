// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failures unless --known-failures is given.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "logah/archspace.hpp"
#include "logah/costmodel.hpp"
#include "logah/decoder.hpp"
#include "logah/ghn.hpp"
#include "logah/graphir.hpp"
#include "logah/targetnet.hpp"
#include "logah/tasks.hpp"
#include "logah/trainer.hpp"
#include "logah/workflows.hpp"

using namespace logah;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Check = std::function<Outcome()>;

// ---- 1 -------------------------------------------------------------------
Outcome counting_goldens() {
  std::ostringstream os;
  bool ok = true;
  const auto lg = costmodel::logah_decoder_params(64, 32, 32768);
  const auto gh = costmodel::ghn3_decoder_params(64, 100);
  ok &= lg == 2'244'608;
  ok &= gh == 6'428'928;
  os << "logah=" << lg << " ghn3=" << gh;
  for (const auto& v : costmodel::variants()) {
    const double total = static_cast<double>(costmodel::variant_total_params(v));
    const double ref = v.reference_millions * 1e6;
    const double rel = std::abs(total - ref) / ref;
    ok &= rel <= 0.15;
    os << " " << v.name << "=" << std::fixed << std::setprecision(2) << total / 1e6 << "M(" << std::setprecision(1)
       << rel * 100 << "%)";
  }
  return {ok, os.str()};
}

// ---- 2 -------------------------------------------------------------------
Outcome scaling() {
  const std::vector<std::int64_t> widths{256, 512, 1024, 2048, 4096};
  // LoGAH-Tiny: d = 64, r = 32, K = 32768
  const auto rows = costmodel::scaling_table(widths, 64, 32, 32768);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double x = std::log(static_cast<double>(r.width));
    const double y = std::log(static_cast<double>(r.ghn3_params));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  bool constant = true;
  const auto tiny = costmodel::logah_decoder_params(64, 32, 32768);
  for (const auto& r : rows) {
    if (r.width <= 2048) constant &= r.logah_supported && r.logah_params == tiny;
  }
  std::int64_t at2048 = 0;
  for (const auto& r : rows) {
    if (r.width == 2048) at2048 = r.ghn3_params;
  }
  std::ostringstream os;
  os << "slope=" << std::setprecision(4) << slope << " logah_const=" << constant << " ghn3@2048=" << at2048;
  return {std::abs(slope - 3.0) <= 0.1 && constant && at2048 >= 70'000'000'000LL, os.str()};
}

// ---- 3 -------------------------------------------------------------------
Outcome delta_identity() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> d(1, 512), r(1, 64), nc(1, 2000), co(1, 4096), h(1, 16);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const auto dd = d(rng), rr = r(rng), cc = nc(rng), c = co(rng), hh = h(rng);
    const auto lhs = costmodel::param_delta(dd, rr, cc, c, hh);
    const auto rhs = costmodel::ghn3_decoder_params(dd, cc) - costmodel::logah_decoder_params(dd, rr, c * hh);
    exact += lhs == rhs;
  }
  // 16d(64d - 1024) by hand
  const bool d1 = costmodel::delta1(64) == 16 * 64 * (64 * 64 - 1024) && costmodel::delta1(64) > 0 &&
                  costmodel::delta1(128) > 0 && costmodel::delta1(256) > 0 && costmodel::delta1(16) == 0;
  std::ostringstream os;
  os << exact << "/100 exact, delta1 ok=" << d1;
  return {exact == 100 && d1, os.str()};
}

// ---- 4 -------------------------------------------------------------------
decoder::LowRankFactors random_factors(std::int64_t K, std::int64_t r, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  decoder::LowRankFactors f{Tensor(Shape{K, r}), Tensor(Shape{r, K})};
  for (auto& v : f.a.data) v = nd(rng);
  for (auto& v : f.b.data) v = nd(rng);
  return f;
}

Outcome layout_oracle() {
  std::mt19937_64 rng(4);
  const std::int64_t K = 16, r = 3;
  const auto f = random_factors(K, r, rng);
  std::int64_t shapes = 0, bad = 0;
  auto ab = [&](std::int64_t row, std::int64_t col) {
    double s = 0.0;
    for (std::int64_t p = 0; p < r; ++p) s += f.a.data[row * r + p] * f.b.data[p * K + col];
    return s;
  };
  for (std::int64_t co = 1; co <= 4; ++co) {
    // n_dim = 1
    {
      const auto w = decoder::realize_tensor(f, {co, 1, 1, 1}, 1);
      ++shapes;
      bool same = w.shape == Shape{co};
      for (std::int64_t i = 0; same && i < co; ++i) same = w.data[i] == ab(i, 0);
      bad += !same;
    }
    for (std::int64_t ci = 1; ci <= 4; ++ci) {
      {
        const auto w = decoder::realize_tensor(f, {co, ci, 1, 1}, 2);
        ++shapes;
        bool same = w.shape == Shape{co, ci};
        for (std::int64_t i = 0; same && i < co; ++i)
          for (std::int64_t j = 0; same && j < ci; ++j) same = w.data[i * ci + j] == ab(i, j);
        bad += !same;
      }
      for (std::int64_t ko = 1; ko <= 4; ++ko) {
        for (std::int64_t ki = 1; ki <= 4; ++ki) {
          const auto w = decoder::realize_tensor(f, {co, ci, ko, ki}, 4);
          ++shapes;
          bool same = w.shape == Shape{co, ci, ko, ki};
          for (std::int64_t a = 0; same && a < co; ++a)
            for (std::int64_t b = 0; same && b < ci; ++b)
              for (std::int64_t y = 0; same && y < ko; ++y)
                for (std::int64_t x = 0; same && x < ki; ++x)
                  same = w.data[((a * ci + b) * ko + y) * ki + x] == ab(a * ko + y, b * ki + x);
          bad += !same;
        }
      }
    }
  }

  // Reinterpretation: rebuild the (2r, K) block by plain loops and read A and
  // B through flat indices.
  decoder::DecoderConfig cfg;
  cfg.d = 6;
  cfg.r = 3;
  cfg.K = 20;
  std::mt19937_64 wr(41);
  const auto w = decoder::init_decoder(cfg, wr);
  const std::int64_t nodes = 5;
  Tensor feats(Shape{nodes, cfg.d});
  std::normal_distribution<double> nd;
  for (auto& v : feats.data) v = nd(rng);
  const auto factors = decoder::decode_factors(feats, w, cfg);
  auto mm = [](const std::vector<double>& x, std::int64_t n, std::int64_t k, const Tensor& m, bool relu) {
    const auto c = m.cols();
    std::vector<double> out(static_cast<std::size_t>(n * c), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::int64_t p = 0; p < k; ++p) s += x[i * k + p] * m.data[p * c + j];
        out[i * c + j] = relu ? std::max(s, 0.0) : s;
      }
    return out;
  };
  auto x1 = mm(feats.data, nodes, cfg.d, w.m1->value, true);
  auto x2 = mm(x1, nodes, 4 * cfg.d, w.m2->value, true);
  // relu after M3 comes from the reshape step
  auto x3 = mm(x2, nodes, 8 * cfg.d, w.m3->value, true);
  std::int64_t flat_bad = 0;
  const auto R = cfg.r, KK = cfg.K;
  for (std::int64_t v = 0; v < nodes; ++v) {
    std::vector<double> blk(x3.begin() + v * 2 * R * R, x3.begin() + (v + 1) * 2 * R * R);
    auto p = mm(blk, 2 * R, R, w.m4->value, false);  // [2r, K]
    const auto& fv = factors[static_cast<std::size_t>(v)];
    for (std::int64_t i = 0; i < KK; ++i)
      for (std::int64_t j = 0; j < R; ++j) {
        flat_bad += fv.a.data[i * R + j] != p[i * R + j];
        flat_bad += fv.b.data[j * KK + i] != p[(KK + i) * R + j];
      }
  }
  std::ostringstream os;
  os << shapes << " shapes, " << bad << " mismatched; reinterpretation mismatches=" << flat_bad;
  return {bad == 0 && flat_bad == 0 && shapes == 4 + 16 + 256, os.str()};
}

// ---- 5 -------------------------------------------------------------------
Outcome rank_property() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> dim(12, 48);
  double worst = 0.0;
  int trials = 0;
  for (std::int64_t r : {1, 4, 8}) {
    for (int t = 0; t < 50; ++t) {
      const auto f = random_factors(64, r, rng);
      const std::int64_t rows = dim(rng), cols = dim(rng);
      const auto w = decoder::realize_tensor(f, {rows, cols, 1, 1}, 2);
      Eigen::MatrixXd m(rows, cols);
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) m(i, j) = w.data[i * cols + j];
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
      const auto& s = svd.singularValues();
      worst = std::max(worst, s(r) / s(0));
      ++trials;
    }
  }
  std::ostringstream os;
  os << trials << " pairs, worst sigma_{r+1}/sigma_1=" << std::scientific << std::setprecision(2) << worst;
  return {worst < 1e-5 && trials == 150, os.str()};
}

// ---- 6 -------------------------------------------------------------------
Outcome gradient_check() {
  auto cfg = ghn::custom_config(3, 2, 16, 1, 1);
  cfg.enc.max_degree = 4;
  cfg.enc.max_distance = 2;
  auto model = ghn::init_ghn(cfg, 6);
  // small dist bias / norm offsets away from their init so every path is exercised
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& [name, v] : ghn::named_parameters(model)) {
    if (name.find("bias") != std::string::npos || name.find("ln_") != std::string::npos) {
      for (auto& x : v->value.data) x += nd(rng);
    }
  }
  const auto count = ghn::scalar_count(model);
  archspace::LinearSpec spec{4, 3, true};
  const auto g = graphir::build_graph(spec, "two");
  tasks::Batch batch;
  batch.n = 6;
  batch.images = Tensor(Shape{6, 4});
  for (auto& x : batch.images.data) x = nd(rng) * 3;
  for (int i = 0; i < 6; ++i) batch.targets.push_back(i % 3);
  const std::vector<const graphir::CompGraph*> gs{&g};
  const double gamma = 1e-2;

  auto params = ghn::named_parameters(model);
  for (auto& [_, v] : params) v->grad = Tensor();
  auto loss = trainer::ghn_loss(model, gs, batch, gamma);
  ad::backward(loss.total);

  std::vector<std::pair<std::size_t, std::size_t>> live;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& v = params[p].second;
    if (!v->has_grad()) continue;
    for (std::size_t i = 0; i < v->grad.data.size(); ++i) {
      if (v->grad.data[i] != 0.0) live.emplace_back(p, i);
    }
  }
  std::shuffle(live.begin(), live.end(), rng);
  const std::size_t picks = std::min<std::size_t>(20, live.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < picks; ++k) {
    auto& v = params[live[k].first].second;
    const auto i = live[k].second;
    const double old = v->value.data[i];
    const double h = 1e-5;
    v->value.data[i] = old + h;
    const double up = trainer::ghn_loss(model, gs, batch, gamma).total->value.data[0];
    v->value.data[i] = old - h;
    const double dn = trainer::ghn_loss(model, gs, batch, gamma).total->value.data[0];
    v->value.data[i] = old;
    const double fd = (up - dn) / (2 * h);
    const double an = v->grad.data[i];
    worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(an), std::abs(fd)));
  }
  std::ostringstream os;
  os << "ghn scalars=" << count << " graph nodes=" << g.size() << " checked=" << picks << " worst rel err="
     << std::scientific << std::setprecision(2) << worst;
  return {count <= 1000 && g.size() == 2 && picks == 20 && worst < 1e-3, os.str()};
}

// ---- 7 -------------------------------------------------------------------
Outcome desk_training() {
  int reduced = 0, better = 0;
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = archspace::generate_dataset(archspace::Kind::vit, 21, seed, archspace::kVitCap,
                                          archspace::Scale::tiny);
    const auto held = ds.records.back();
    ds.records.pop_back();
    const tasks::Task task = tasks::synth_images(2000, 3, 8, 10, seed);
    trainer::TrainConfig cfg;
    cfg.m = 1;
    cfg.n = 32;
    cfg.epochs = 10;
    cfg.base_lr = 1e-3;
    cfg.seed = seed;
    auto st = trainer::init_state(ghn::variant_config("desk"), cfg);
    const auto log = trainer::train(st, ds, task, cfg);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      first += log[i].task_loss;
      last += log[log.size() - 1 - i].task_loss;
    }
    const double red = 1.0 - last / first;
    const auto pred = ghn::predict(st.model, graphir::build_graph(held.spec));
    const double lp = trainer::evaluate(held.spec, pred, task, 256, 16).loss;
    const double lr0 = trainer::evaluate(held.spec, targetnet::random_init(held.spec, seed), task, 256, 16).loss;
    reduced += log.size() == 200 && red >= 0.30;
    better += lp < lr0;
    os << " s" << seed << ":red=" << red << ",pred=" << lp << ",rand=" << lr0;
  }
  std::ostringstream head;
  head << "reduced>=30% on " << reduced << "/5, predicted beats random on " << better << "/5;" << os.str();
  return {reduced == 5 && better >= 4, head.str()};
}

// ---- 8 -------------------------------------------------------------------
// Counts by hand (torchvision ViT, HF GPT-2 with untied head).
std::int64_t vit_oracle(std::int64_t L, std::int64_t D) {
  const std::int64_t S = 16 * 16 + 1;
  return D * 3 * 2 * 2 + D + D + S * D + L * (4 * D + 3 * D * D + 3 * D + D * D + D + 8 * D * D + 4 * D + D) +
         2 * D + D * 100 + 100;
}
std::int64_t gpt_oracle(std::int64_t L, std::int64_t D) {
  const std::int64_t V = 50257, C = 1024;
  return V * D + C * D + L * (4 * D + 3 * D * D + 3 * D + D * D + D + 8 * D * D + 4 * D + D) + 2 * D + V * D;
}

struct Band {
  std::int64_t lo, hi;
};

Outcome dataset_generation() {
  std::ostringstream os;
  bool ok = true;
  for (auto kind : {archspace::Kind::vit, archspace::Kind::gpt2}) {
    const bool vit = kind == archspace::Kind::vit;
    const auto cap = vit ? archspace::kVitCap : archspace::kGptCap;
    const auto ds = archspace::generate_dataset(kind, 1000, 8, cap);
    auto band = [&](std::int64_t L) -> Band {
      if (vit) return L > 5 ? Band{128, 256} : L > 3 ? Band{256, 384} : Band{384, 512};
      return L > 5 ? Band{72, 176} : L > 3 ? Band{128, 176} : Band{176, 256};
    };
    const std::int64_t step = vit ? 32 : 8;
    std::int64_t lo = INT64_MAX, hi = 0;
    for (std::int64_t L = 3; L <= 9; ++L) {
      for (std::int64_t D = band(L).lo; D <= band(L).hi; D += step) {
        const auto c = vit ? vit_oracle(L, D) : gpt_oracle(L, D);
        if (c > cap) continue;
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    }
    std::int64_t violations = 0;
    for (const auto& rec : ds.records) {
      std::int64_t L, D, H, count;
      if (vit) {
        const auto& s = std::get<archspace::ViTSpec>(rec.spec);
        L = s.num_layers, D = s.hidden_dim, H = s.num_heads;
        count = vit_oracle(L, D);
        violations += s.mlp_dim != 4 * D;
      } else {
        const auto& s = std::get<archspace::GPTSpec>(rec.spec);
        L = s.num_layers, D = s.embed_dim, H = s.num_heads;
        count = gpt_oracle(L, D);
        violations += s.tie_word_embeddings;
      }
      const auto b = band(L);
      violations += L < 3 || L > 9 || D < b.lo || D > b.hi || (D - b.lo) % step != 0 || D % H != 0 ||
                    count != rec.param_count || count > cap;
    }
    const auto hist = archspace::histogram(ds);
    std::int64_t empty = 0;
    for (std::int64_t b = lo / 1'000'000; b <= hi / 1'000'000; ++b) empty += hist[static_cast<std::size_t>(b)].count == 0;
    ok &= ds.records.size() == 1000 && violations == 0 && empty == 0;
    os << archspace::kind_name(kind) << ": violations=" << violations << " buckets[" << lo / 1'000'000 << ","
       << hi / 1'000'000 << "] empty=" << empty << " hist=";
    for (std::int64_t b = lo / 1'000'000; b <= hi / 1'000'000; ++b) {
      os << hist[static_cast<std::size_t>(b)].count << (b == hi / 1'000'000 ? "; " : ",");
    }
  }
  return {ok, os.str()};
}

// ---- 9 -------------------------------------------------------------------
Outcome diversity_metric() {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  const std::size_t n = 12, len = 40;
  std::vector<std::vector<double>> ts(n, std::vector<double>(len));
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : ts[i]) v = nd(rng);
    names.push_back("t" + std::to_string(i));
  }
  const auto rep = workflows::diversity(ts, names, Shape{static_cast<std::int64_t>(len)});
  double max_err = 0.0, mean = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t e = 0; e < len; ++e) {
        dot += ts[i][e] * ts[j][e];
        ni += ts[i][e] * ts[i][e];
        nj += ts[j][e] * ts[j][e];
      }
      const double d = 1.0 - std::abs(dot) / (std::sqrt(ni) * std::sqrt(nj));
      mean += d;
      max_err = std::max(max_err, std::abs(d - rep.pairs[k]));
    }
  }
  mean /= static_cast<double>(k);
  max_err = std::max(max_err, std::abs(mean - rep.mean_abs_cos_distance));
  const std::vector<std::vector<double>> same(4, ts[0]);
  const auto rs = workflows::diversity(same, {"a", "b", "c", "d"}, Shape{static_cast<std::int64_t>(len)});
  const std::vector<std::vector<double>> orth{{1, 0, 0}, {0, 2, 0}};
  const auto ro = workflows::diversity(orth, {"x", "y"}, Shape{3});
  std::ostringstream os;
  os << "pairs=" << rep.pair_count << " max|err|=" << std::scientific << std::setprecision(2) << max_err
     << " identical=" << rs.mean_abs_cos_distance << " orthogonal=" << ro.mean_abs_cos_distance;
  return {rep.pair_count == static_cast<std::int64_t>(k) && max_err <= 1e-12 &&
              std::abs(rs.mean_abs_cos_distance) <= 1e-12 && ro.mean_abs_cos_distance == 1.0,
          os.str()};
}

// ---- 10 ------------------------------------------------------------------
Outcome shape_coverage() {
  const auto model = ghn::init_ghn(ghn::variant_config("tiny"), 10);
  std::ostringstream os;
  bool ok = true;
  for (const std::string name : {"vit-s", "vit-b", "gpt2-s"}) {
    const auto spec = archspace::preset(name);
    const auto set = workflows::initialize_from_ghn(model, "", spec);
    std::int64_t missing = 0;
    for (const auto& [tname, shape] : targetnet::tensor_shapes(spec)) {
      const auto* t = set.find(tname);
      missing += t == nullptr || t->shape != shape || static_cast<std::int64_t>(t->values.size()) != shape_numel(shape);
    }
    const auto fb = set.fallback_report();
    std::set<std::string> expected;
    if (name == "gpt2-s") {
      // every tensor with a vocab-sized axis
      for (const auto& [tname, shape] : targetnet::tensor_shapes(spec)) {
        if (std::find(shape.begin(), shape.end(), 50257) != shape.end()) expected.insert(tname);
      }
      ok &= !expected.empty();
    }
    const std::set<std::string> got(fb.begin(), fb.end());
    ok &= missing == 0 && got == expected && set.tensors.size() == targetnet::tensor_shapes(spec).size();
    os << name << ": tensors=" << set.tensors.size() << " missing/misshaped=" << missing << " fallbacks=[";
    for (const auto& f : fb) os << f << (f == fb.back() ? "" : ",");
    os << "] ";
  }
  return {ok, os.str()};
}

}  // namespace

// --known-failures 2,5 : exit 0 only if exactly these criteria fail. The FAIL
// lines are printed either way.
int main(int argc, char** argv) {
  std::set<std::size_t> known;
  for (int a = 1; a + 1 < argc; ++a) {
    if (std::string(argv[a]) != "--known-failures") continue;
    std::stringstream ss(argv[a + 1]);
    std::string item;
    while (std::getline(ss, item, ',')) known.insert(std::stoul(item));
  }
  const std::vector<std::pair<std::string, Check>> checks{
      {"counting goldens", counting_goldens},   {"scaling", scaling},
      {"delta identity", delta_identity},       {"decoder layout oracle", layout_oracle},
      {"rank property", rank_property},         {"gradient check", gradient_check},
      {"desk-scale training", desk_training},   {"dataset generation", dataset_generation},
      {"diversity metric", diversity_metric},   {"shape coverage", shape_coverage},
  };
  int failed = 0;
  std::set<std::size_t> failing;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = checks[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !out.pass;
    if (!out.pass) failing.insert(i + 1);
    std::cout << "criterion " << i + 1 << " [" << checks[i].first << "]: " << (out.pass ? "PASS" : "FAIL") << " ("
              << std::fixed << std::setprecision(2) << secs << " s) " << out.detail << std::endl;
  }
  std::cout << failed << " of " << checks.size() << " criteria failed" << std::endl;
  if (!known.empty()) {
    std::cout << "documented unattainable:";
    for (auto k : known) std::cout << " " << k;
    std::cout << std::endl;
    return failing == known ? 0 : 1;
  }
  return failed;
}
