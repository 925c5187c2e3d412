#pragma once

#include <cstdint>

// Hot numeric kernels. The production versions parallelize with OpenMP over
// an axis whose iterations write disjoint outputs, so results are bitwise
// identical for any thread count. kernels::ref holds plain serial loops kept
// as the ground truth for tests and for the bench_kernels comparison.

namespace skelmamba::kernels {

// Row-major C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate);
// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate);

// Grouped 1D cross-correlation.
// x[batch, c_in, t_in], w[c_out, c_in/groups, k], y[batch, c_out, t_out]
void conv1d_forward(int64_t batch, int64_t c_in, int64_t t_in,
                    int64_t c_out, int64_t k, int64_t groups,
                    int64_t stride, int64_t pad,
                    const double* x, const double* w, const double* bias,
                    double* y, int64_t t_out);
void conv1d_backward_input(int64_t batch, int64_t c_in, int64_t t_in,
                           int64_t c_out, int64_t k, int64_t groups,
                           int64_t stride, int64_t pad,
                           const double* gy, const double* w,
                           double* gx, int64_t t_out);
void conv1d_backward_weight(int64_t batch, int64_t c_in, int64_t t_in,
                            int64_t c_out, int64_t k, int64_t groups,
                            int64_t stride, int64_t pad,
                            const double* gy, const double* x,
                            double* gw, int64_t t_out);

// Normalization over the trailing axis of x[rows, c]; saves per-row mean and
// reciprocal stddev for the backward pass.
void layernorm_forward(int64_t rows, int64_t c,
                       const double* x, const double* gain, const double* bias,
                       double eps, double* y, double* mean, double* rstd);
void layernorm_backward(int64_t rows, int64_t c,
                        const double* gy, const double* x,
                        const double* gain, const double* mean, const double* rstd,
                        double* gx, double* ggain, double* gbias);

// Input-dependent scan. Per batch b and channel d:
//   abar[t,n] = exp(dt[b,t,d] * A[d,n])
//   bbar[t,n] = phi(dt*A) * B[b,t,n],  phi = (exp(z)-1)/A  (dt for |z| < tiny)
//   h[t,n]    = abar*h[t-1,n] + bbar*x[b,t,d]
//   y[b,t,d]  = sum_n C[b,t,n]*h[t,n] + Dskip[d]*x[b,t,d]
// h[batch, L, D, N] is stored for the backward pass.
void selective_scan_forward(int64_t batch, int64_t L, int64_t D, int64_t N,
                            const double* x, const double* dt,
                            const double* Bm, const double* Cm,
                            const double* A, const double* Dskip,
                            double* y, double* h);
// lam[batch, L, D, N] is caller-provided scratch for the adjoint state.
void selective_scan_backward(int64_t batch, int64_t L, int64_t D, int64_t N,
                             const double* x, const double* dt,
                             const double* Bm, const double* Cm,
                             const double* A, const double* Dskip,
                             const double* h, const double* gy, double* lam,
                             double* gx, double* gdt, double* gB, double* gC,
                             double* gA, double* gD);

namespace ref {

void gemm_nn(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate);
void gemm_nt(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate);
void gemm_tn(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate);
void conv1d_forward(int64_t batch, int64_t c_in, int64_t t_in,
                    int64_t c_out, int64_t k, int64_t groups,
                    int64_t stride, int64_t pad,
                    const double* x, const double* w, const double* bias,
                    double* y, int64_t t_out);
void conv1d_backward_input(int64_t batch, int64_t c_in, int64_t t_in,
                           int64_t c_out, int64_t k, int64_t groups,
                           int64_t stride, int64_t pad,
                           const double* gy, const double* w,
                           double* gx, int64_t t_out);
void conv1d_backward_weight(int64_t batch, int64_t c_in, int64_t t_in,
                            int64_t c_out, int64_t k, int64_t groups,
                            int64_t stride, int64_t pad,
                            const double* gy, const double* x,
                            double* gw, int64_t t_out);
void layernorm_forward(int64_t rows, int64_t c,
                       const double* x, const double* gain, const double* bias,
                       double eps, double* y, double* mean, double* rstd);
void layernorm_backward(int64_t rows, int64_t c,
                        const double* gy, const double* x,
                        const double* gain, const double* mean, const double* rstd,
                        double* gx, double* ggain, double* gbias);
void selective_scan_forward(int64_t batch, int64_t L, int64_t D, int64_t N,
                            const double* x, const double* dt,
                            const double* Bm, const double* Cm,
                            const double* A, const double* Dskip,
                            double* y, double* h);
void selective_scan_backward(int64_t batch, int64_t L, int64_t D, int64_t N,
                             const double* x, const double* dt,
                             const double* Bm, const double* Cm,
                             const double* A, const double* Dskip,
                             const double* h, const double* gy, double* lam,
                             double* gx, double* gdt, double* gB, double* gC,
                             double* gA, double* gD);

}  // namespace ref

}  // namespace skelmamba::kernels
