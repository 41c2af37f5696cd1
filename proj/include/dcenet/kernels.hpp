#pragma once

#include <cstddef>

namespace dcenet::kernels {

// Dense kernels behind the tensor ops. Each has a serial reference and an
// OpenMP variant that distributes the outer loop only, so every output
// element is computed by the same per-element arithmetic sequence and the
// two paths agree bitwise. The serial path stays as the test oracle.

// Process-wide switch; defaults to parallel when OpenMP is compiled in.
void set_parallel(bool enabled);
bool parallel_enabled();
int thread_count();

// c[m x n] = a[m x k] * b[k x n]; c is overwritten.
void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nn_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// c[m x n] = a[m x k] * b[n x k]^T.
void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// c[m x n] = a[k x m]^T * b[k x n].
void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// Same-length 1-D convolution over time with zero padding, odd tap count.
// x is [t_len x in_ch], kernel is [out_ch x in_ch x k], y is [t_len x out_ch].
void conv1d_serial(const double* x, const double* kernel, const double* bias,
                   double* y, std::size_t t_len, std::size_t in_ch,
                   std::size_t out_ch, std::size_t k);
void conv1d_omp(const double* x, const double* kernel, const double* bias,
                double* y, std::size_t t_len, std::size_t in_ch,
                std::size_t out_ch, std::size_t k);

// Backward passes for conv1d; both ACCUMULATE into their outputs.
// gx[t_len x in_ch] += correlation of gy with the kernel;
// gk[out_ch x in_ch x k] += gradient of the taps.
void conv1d_grad_x_serial(const double* gy, const double* kernel, double* gx,
                          std::size_t t_len, std::size_t in_ch,
                          std::size_t out_ch, std::size_t k);
void conv1d_grad_x_omp(const double* gy, const double* kernel, double* gx,
                       std::size_t t_len, std::size_t in_ch,
                       std::size_t out_ch, std::size_t k);
void conv1d_grad_k_serial(const double* gy, const double* x, double* gk,
                          std::size_t t_len, std::size_t in_ch,
                          std::size_t out_ch, std::size_t k);
void conv1d_grad_k_omp(const double* gy, const double* x, double* gk,
                       std::size_t t_len, std::size_t in_ch,
                       std::size_t out_ch, std::size_t k);

// Dispatching entry points used by the tensor ops.
void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n);
void conv1d(const double* x, const double* kernel, const double* bias,
            double* y, std::size_t t_len, std::size_t in_ch,
            std::size_t out_ch, std::size_t k);
void conv1d_grad_x(const double* gy, const double* kernel, double* gx,
                   std::size_t t_len, std::size_t in_ch, std::size_t out_ch,
                   std::size_t k);
void conv1d_grad_k(const double* gy, const double* x, double* gk,
                   std::size_t t_len, std::size_t in_ch, std::size_t out_ch,
                   std::size_t k);

}  // namespace dcenet::kernels
