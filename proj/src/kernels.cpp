// SPDX-License-Identifier: Apache-2.0
#include "logah/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace logah::kernels {

namespace {

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::int64_t kParallelFlops = 1 << 15;

inline double elem_a(bool trans, const double* a, std::int64_t m, std::int64_t k, std::int64_t i, std::int64_t p) {
  return trans ? a[p * m + i] : a[i * k + p];
}

inline double elem_b(bool trans, const double* b, std::int64_t k, std::int64_t n, std::int64_t p, std::int64_t j) {
  return trans ? b[j * k + p] : b[p * n + j];
}

// One output row of gemm. acc[j] is summed over p in ascending order, which
// matches the dot-product order of serial::gemm.
void gemm_row(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
              const double* b, double beta, double* c, std::int64_t i, std::vector<double>& acc) {
  acc.assign(static_cast<std::size_t>(n), 0.0);
  if (trans_b) {
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      if (trans_a) {
        for (std::int64_t p = 0; p < k; ++p) s += a[p * m + i] * brow[p];
      } else {
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      }
      acc[static_cast<std::size_t>(j)] = s;
    }
  } else {
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = elem_a(trans_a, a, m, k, i, p);
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * brow[j];
    }
  }
  double* crow = c + i * n;
  if (beta == 0.0) {
    for (std::int64_t j = 0; j < n; ++j) crow[j] = acc[static_cast<std::size_t>(j)];
  } else {
    for (std::int64_t j = 0; j < n; ++j) crow[j] = beta * crow[j] + acc[static_cast<std::size_t>(j)];
  }
}

void attention_forward_slice(const AttentionShape& s, const double* qkv, const double* bias, double* out,
                             double* probs, std::int64_t b, std::int64_t h) {
  const std::int64_t hd = s.width / s.heads;
  const std::int64_t stride = 3 * s.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* base = qkv + b * s.seq * stride;
  double* p = probs + ((b * s.heads + h) * s.seq) * s.seq;
  const std::int64_t qo = h * hd;
  const std::int64_t ko = s.width + h * hd;
  const std::int64_t vo = 2 * s.width + h * hd;
  for (std::int64_t i = 0; i < s.seq; ++i) {
    double* prow = p + i * s.seq;
    const std::int64_t limit = s.causal ? i + 1 : s.seq;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < limit; ++j) {
      double dot = 0.0;
      for (std::int64_t t = 0; t < hd; ++t) dot += base[i * stride + qo + t] * base[j * stride + ko + t];
      double sc = dot * scale;
      if (bias) sc += bias[(h * s.seq + i) * s.seq + j];
      prow[j] = sc;
      mx = std::max(mx, sc);
    }
    double sum = 0.0;
    for (std::int64_t j = 0; j < limit; ++j) {
      prow[j] = std::exp(prow[j] - mx);
      sum += prow[j];
    }
    for (std::int64_t j = 0; j < limit; ++j) prow[j] /= sum;
    for (std::int64_t j = limit; j < s.seq; ++j) prow[j] = 0.0;
    double* orow = out + (b * s.seq + i) * s.width + h * hd;
    for (std::int64_t t = 0; t < hd; ++t) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < limit; ++j) acc += prow[j] * base[j * stride + vo + t];
      orow[t] = acc;
    }
  }
}

void attention_backward_slice(const AttentionShape& s, const double* qkv, const double* probs, const double* d_out,
                              double* d_qkv, double* d_bias, std::int64_t b, std::int64_t h,
                              std::vector<double>& ds) {
  const std::int64_t hd = s.width / s.heads;
  const std::int64_t stride = 3 * s.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* base = qkv + b * s.seq * stride;
  double* dbase = d_qkv + b * s.seq * stride;
  const double* p = probs + ((b * s.heads + h) * s.seq) * s.seq;
  const std::int64_t qo = h * hd;
  const std::int64_t ko = s.width + h * hd;
  const std::int64_t vo = 2 * s.width + h * hd;
  ds.assign(static_cast<std::size_t>(s.seq * s.seq), 0.0);

  for (std::int64_t i = 0; i < s.seq; ++i) {
    const double* dorow = d_out + (b * s.seq + i) * s.width + h * hd;
    const double* prow = p + i * s.seq;
    double* dsrow = ds.data() + i * s.seq;
    double weighted = 0.0;
    for (std::int64_t j = 0; j < s.seq; ++j) {
      double dp = 0.0;
      for (std::int64_t t = 0; t < hd; ++t) dp += dorow[t] * base[j * stride + vo + t];
      dsrow[j] = dp;
      weighted += prow[j] * dp;
    }
    for (std::int64_t j = 0; j < s.seq; ++j) dsrow[j] = prow[j] * (dsrow[j] - weighted);
  }
  // dV[j] = sum_i p[i,j] dO[i]
  for (std::int64_t j = 0; j < s.seq; ++j) {
    for (std::int64_t t = 0; t < hd; ++t) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < s.seq; ++i) {
        acc += p[i * s.seq + j] * d_out[(b * s.seq + i) * s.width + h * hd + t];
      }
      dbase[j * stride + vo + t] = acc;
    }
  }
  for (std::int64_t i = 0; i < s.seq; ++i) {
    for (std::int64_t t = 0; t < hd; ++t) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < s.seq; ++j) acc += ds[static_cast<std::size_t>(i * s.seq + j)] * base[j * stride + ko + t];
      dbase[i * stride + qo + t] = acc * scale;
    }
  }
  for (std::int64_t j = 0; j < s.seq; ++j) {
    for (std::int64_t t = 0; t < hd; ++t) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < s.seq; ++i) acc += ds[static_cast<std::size_t>(i * s.seq + j)] * base[i * stride + qo + t];
      dbase[j * stride + ko + t] = acc * scale;
    }
  }
  if (d_bias) {
    double* db = d_bias + h * s.seq * s.seq;
    for (std::int64_t e = 0; e < s.seq * s.seq; ++e) db[e] += ds[static_cast<std::size_t>(e)];
  }
}

std::vector<double> row_norms(std::span<const std::span<const double>> rows) {
  std::vector<double> norms(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = 0.0;
    for (double v : rows[i]) s += v * v;
    norms[i] = std::sqrt(s);
  }
  return norms;
}

double abs_cosine_distance(std::span<const double> u, std::span<const double> v, double nu, double nv) {
  double dot = 0.0;
  for (std::size_t t = 0; t < u.size(); ++t) dot += u[t] * v[t];
  const double cos = std::abs(dot) / (nu * nv);
  return std::clamp(1.0 - cos, 0.0, 1.0);
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
          const double* b, double beta, double* c) {
  const bool parallel = m > 1 && m * n * k >= kParallelFlops;
#pragma omp parallel if (parallel)
  {
    std::vector<double> acc;
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) gemm_row(trans_a, trans_b, m, n, k, a, b, beta, c, i, acc);
  }
}

void attention_forward(const AttentionShape& s, const double* qkv, const double* bias, double* out, double* probs) {
  const std::int64_t units = s.batch * s.heads;
  const bool parallel = units > 1 && units * s.seq * s.seq * s.width >= kParallelFlops;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t u = 0; u < units; ++u) {
    attention_forward_slice(s, qkv, bias, out, probs, u / s.heads, u % s.heads);
  }
}

void attention_backward(const AttentionShape& s, const double* qkv, const double* probs, const double* d_out,
                        double* d_qkv, double* d_bias) {
  // Heads own disjoint slices of d_bias, so the batch loop stays inside a head
  // and the bias sum keeps the serial order.
  const bool parallel = s.heads > 1 && s.batch * s.heads * s.seq * s.seq * s.width >= kParallelFlops;
#pragma omp parallel if (parallel)
  {
    std::vector<double> ds;
#pragma omp for schedule(static)
    for (std::int64_t h = 0; h < s.heads; ++h) {
      for (std::int64_t b = 0; b < s.batch; ++b) attention_backward_slice(s, qkv, probs, d_out, d_qkv, d_bias, b, h, ds);
    }
  }
}

std::vector<double> pairwise_abs_cosine_distance(std::span<const std::span<const double>> rows) {
  const auto norms = row_norms(rows);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> out(pairs.size());
  const auto count = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel for schedule(static) if (count > 8)
  for (std::int64_t q = 0; q < count; ++q) {
    const auto [i, j] = pairs[static_cast<std::size_t>(q)];
    out[static_cast<std::size_t>(q)] = abs_cosine_distance(rows[i], rows[j], norms[i], norms[j]);
  }
  return out;
}

namespace serial {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
          const double* b, double beta, double* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += elem_a(trans_a, a, m, k, i, p) * elem_b(trans_b, b, k, n, p, j);
      double& out = c[i * n + j];
      out = beta == 0.0 ? s : beta * out + s;
    }
  }
}

void attention_forward(const AttentionShape& s, const double* qkv, const double* bias, double* out, double* probs) {
  for (std::int64_t b = 0; b < s.batch; ++b) {
    for (std::int64_t h = 0; h < s.heads; ++h) attention_forward_slice(s, qkv, bias, out, probs, b, h);
  }
}

void attention_backward(const AttentionShape& s, const double* qkv, const double* probs, const double* d_out,
                        double* d_qkv, double* d_bias) {
  std::vector<double> ds;
  for (std::int64_t h = 0; h < s.heads; ++h) {
    for (std::int64_t b = 0; b < s.batch; ++b) attention_backward_slice(s, qkv, probs, d_out, d_qkv, d_bias, b, h, ds);
  }
}

std::vector<double> pairwise_abs_cosine_distance(std::span<const std::span<const double>> rows) {
  const auto norms = row_norms(rows);
  std::vector<double> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) out.push_back(abs_cosine_distance(rows[i], rows[j], norms[i], norms[j]));
  }
  return out;
}

}  // namespace serial

}  // namespace logah::kernels
