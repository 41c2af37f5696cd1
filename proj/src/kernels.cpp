#include "dcenet/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dcenet::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Row kernel shared by both paths: one output row of a*b, accumulated in
// a fixed k-major order so serial and parallel results match bitwise.
inline void nn_row(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void nt_row(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] = acc;
  }
}

inline void tn_row(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t m, std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void conv_step(const double* x, const double* kernel,
                      const double* bias, double* y, std::size_t t,
                      std::size_t t_len, std::size_t in_ch, std::size_t out_ch,
                      std::size_t k) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  double* yt = y + t * out_ch;
  for (std::size_t o = 0; o < out_ch; ++o) {
    double acc = bias ? bias[o] : 0.0;
    const double* ko = kernel + o * in_ch * k;
    for (std::size_t c = 0; c < in_ch; ++c) {
      const double* kc = ko + c * k;
      for (std::size_t tap = 0; tap < k; ++tap) {
        const std::ptrdiff_t src =
            static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(tap) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        acc += kc[tap] * x[static_cast<std::size_t>(src) * in_ch + c];
      }
    }
    yt[o] = acc;
  }
}
}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }

bool parallel_enabled() {
#ifdef _OPENMP
  return g_parallel.load();
#else
  return false;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return parallel_enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) nn_row(a, b, c, i, k, n);
}

void matmul_nn_omp(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) nn_row(a, b, c, i, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) nt_row(a, b, c, i, k, n);
}

void matmul_nt_omp(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) nt_row(a, b, c, i, k, n);
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) tn_row(a, b, c, i, m, k, n);
}

void matmul_tn_omp(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) tn_row(a, b, c, i, m, k, n);
}

void conv1d_serial(const double* x, const double* kernel, const double* bias,
                   double* y, std::size_t t_len, std::size_t in_ch,
                   std::size_t out_ch, std::size_t k) {
  for (std::size_t t = 0; t < t_len; ++t)
    conv_step(x, kernel, bias, y, t, t_len, in_ch, out_ch, k);
}

void conv1d_omp(const double* x, const double* kernel, const double* bias,
                double* y, std::size_t t_len, std::size_t in_ch,
                std::size_t out_ch, std::size_t k) {
#pragma omp parallel for schedule(static)
  for (std::size_t t = 0; t < t_len; ++t)
    conv_step(x, kernel, bias, y, t, t_len, in_ch, out_ch, k);
}

// Parallelism pays off only when the row work is substantial; tiny matrices
// stay on the serial path to avoid fork overhead.
namespace {
constexpr std::size_t kMinParallelWork = 16 * 1024;
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (parallel_enabled() && m > 1 && m * k * n >= kMinParallelWork)
    matmul_nn_omp(a, b, c, m, k, n);
  else
    matmul_nn_serial(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (parallel_enabled() && m > 1 && m * k * n >= kMinParallelWork)
    matmul_nt_omp(a, b, c, m, k, n);
  else
    matmul_nt_serial(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (parallel_enabled() && m > 1 && m * k * n >= kMinParallelWork)
    matmul_tn_omp(a, b, c, m, k, n);
  else
    matmul_tn_serial(a, b, c, m, k, n);
}

void conv1d(const double* x, const double* kernel, const double* bias,
            double* y, std::size_t t_len, std::size_t in_ch,
            std::size_t out_ch, std::size_t k) {
  if (parallel_enabled() && t_len > 1 && t_len * in_ch * out_ch * k >= kMinParallelWork)
    conv1d_omp(x, kernel, bias, y, t_len, in_ch, out_ch, k);
  else
    conv1d_serial(x, kernel, bias, y, t_len, in_ch, out_ch, k);
}

}  // namespace dcenet::kernels
