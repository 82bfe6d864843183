// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP kernels. Prints one line per kernel with both
// timings and whether the outputs are bit-identical.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "logah/ghn.hpp"
#include "logah/graphir.hpp"
#include "logah/kernels.hpp"

using namespace logah;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

double best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const char* name, double serial_ms, double omp_ms, bool same) {
  std::printf("%-26s serial %9.2f ms   omp %9.2f ms   x%5.2f   %s\n", name, serial_ms, omp_ms, serial_ms / omp_ms,
              same ? "identical" : "DIFFERENT");
}

}  // namespace

int main() {
  std::printf("threads: %d\n", kernels::max_threads());

  {
    const std::int64_t m = 384, n = 384, k = 384;
    const auto a = randn(m * k, 1), b = randn(k * n, 2);
    std::vector<double> c1(m * n), c2(m * n);
    const double ts = best_of(3, [&] { kernels::serial::gemm(false, false, m, n, k, a.data(), b.data(), 0.0, c1.data()); });
    const double tp = best_of(3, [&] { kernels::gemm(false, false, m, n, k, a.data(), b.data(), 0.0, c2.data()); });
    report("gemm 384^3", ts, tp, c1 == c2);
  }
  {
    kernels::AttentionShape s{8, 65, 6, 192, false};
    const auto qkv = randn(s.batch * s.seq * 3 * s.width, 3);
    std::vector<double> o1(s.batch * s.seq * s.width), o2 = o1;
    std::vector<double> p1(s.batch * s.heads * s.seq * s.seq), p2 = p1;
    const double ts = best_of(3, [&] { kernels::serial::attention_forward(s, qkv.data(), nullptr, o1.data(), p1.data()); });
    const double tp = best_of(3, [&] { kernels::attention_forward(s, qkv.data(), nullptr, o2.data(), p2.data()); });
    report("attention fwd 8x65x192", ts, tp, o1 == o2 && p1 == p2);
    const auto dout = randn(o1.size(), 4);
    std::vector<double> d1(qkv.size()), d2(qkv.size());
    const double bs = best_of(3, [&] {
      std::fill(d1.begin(), d1.end(), 0.0);
      kernels::serial::attention_backward(s, qkv.data(), p1.data(), dout.data(), d1.data(), nullptr);
    });
    const double bp = best_of(3, [&] {
      std::fill(d2.begin(), d2.end(), 0.0);
      kernels::attention_backward(s, qkv.data(), p1.data(), dout.data(), d2.data(), nullptr);
    });
    report("attention bwd 8x65x192", bs, bp, d1 == d2);
  }
  {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 200; ++i) rows.push_back(randn(4096, 10 + i));
    std::vector<std::span<const double>> views(rows.begin(), rows.end());
    std::vector<double> r1, r2;
    const double ts = best_of(3, [&] { r1 = kernels::serial::pairwise_abs_cosine_distance(views); });
    const double tp = best_of(3, [&] { r2 = kernels::pairwise_abs_cosine_distance(views); });
    report("pairwise cosine 200x4096", ts, tp, r1 == r2);
  }
  {
    const auto g = graphir::build_graph(archspace::preset("gpt2-m"));
    graphir::DistanceMatrix d1, d2;
    const double ts = best_of(3, [&] { d1 = graphir::serial::shortest_path_distances(g); });
    const double tp = best_of(3, [&] { d2 = graphir::shortest_path_distances(g); });
    report("shortest paths gpt2-m", ts, tp, d1.hops == d2.hops);
  }
  {
    // whole-graph prediction, parallel over node chunks
    const auto model = ghn::init_ghn(ghn::variant_config("tiny"), 0);
    const auto g = graphir::build_graph(archspace::preset("vit-s"));
    const double t = best_of(1, [&] { (void)ghn::predict(model, g); });
    std::printf("%-26s %9.2f ms\n", "predict vit-s (tiny ghn)", t);
  }
  return 0;
}
