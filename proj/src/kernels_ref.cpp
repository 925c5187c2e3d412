#include "skelmamba/kernels.hpp"

#include <cstring>
#include <vector>

#include "scan_math.hpp"

// Serial reference kernels. Straight loops, no pragmas; the production
// kernels in kernels.cpp must agree with these on every input.

namespace skelmamba::kernels::ref {

void gemm_nn(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double aik = a[i * k + p];
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void gemm_nt(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = a + i * k;
            const double* brow = b + j * k;
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

void gemm_tn(int64_t m, int64_t k, int64_t n,
             const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double api = a[p * m + i];
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

void conv1d_forward(int64_t batch, int64_t c_in, int64_t t_in,
                    int64_t c_out, int64_t k, int64_t groups,
                    int64_t stride, int64_t pad,
                    const double* x, const double* w, const double* bias,
                    double* y, int64_t t_out) {
    const int64_t cpg_in = c_in / groups;
    const int64_t cpg_out = c_out / groups;
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t co = 0; co < c_out; ++co) {
            const int64_t g = co / cpg_out;
            const double* wrow = w + co * cpg_in * k;
            double* yrow = y + (b * c_out + co) * t_out;
            for (int64_t t = 0; t < t_out; ++t) {
                double acc = bias ? bias[co] : 0.0;
                const int64_t t0 = t * stride - pad;
                for (int64_t ci = 0; ci < cpg_in; ++ci) {
                    const double* xrow = x + (b * c_in + g * cpg_in + ci) * t_in;
                    for (int64_t j = 0; j < k; ++j) {
                        const int64_t ts = t0 + j;
                        if (ts >= 0 && ts < t_in) acc += wrow[ci * k + j] * xrow[ts];
                    }
                }
                yrow[t] = acc;
            }
        }
    }
}

void conv1d_backward_input(int64_t batch, int64_t c_in, int64_t t_in,
                           int64_t c_out, int64_t k, int64_t groups,
                           int64_t stride, int64_t pad,
                           const double* gy, const double* w,
                           double* gx, int64_t t_out) {
    const int64_t cpg_in = c_in / groups;
    const int64_t cpg_out = c_out / groups;
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t ci = 0; ci < c_in; ++ci) {
            const int64_t g = ci / cpg_in;
            const int64_t ci_l = ci - g * cpg_in;
            double* gxrow = gx + (b * c_in + ci) * t_in;
            for (int64_t t = 0; t < t_in; ++t) {
                double acc = 0.0;
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t num = t + pad - j;
                    if (num < 0 || num % stride != 0) continue;
                    const int64_t tp = num / stride;
                    if (tp >= t_out) continue;
                    for (int64_t co = g * cpg_out; co < (g + 1) * cpg_out; ++co) {
                        acc += w[(co * cpg_in + ci_l) * k + j] *
                               gy[(b * c_out + co) * t_out + tp];
                    }
                }
                gxrow[t] += acc;
            }
        }
    }
}

void conv1d_backward_weight(int64_t batch, int64_t c_in, int64_t t_in,
                            int64_t c_out, int64_t k, int64_t groups,
                            int64_t stride, int64_t pad,
                            const double* gy, const double* x,
                            double* gw, int64_t t_out) {
    const int64_t cpg_in = c_in / groups;
    const int64_t cpg_out = c_out / groups;
    for (int64_t co = 0; co < c_out; ++co) {
        const int64_t g = co / cpg_out;
        for (int64_t ci_l = 0; ci_l < cpg_in; ++ci_l) {
            const int64_t ci = g * cpg_in + ci_l;
            for (int64_t j = 0; j < k; ++j) {
                double acc = 0.0;
                for (int64_t b = 0; b < batch; ++b) {
                    const double* gyrow = gy + (b * c_out + co) * t_out;
                    const double* xrow = x + (b * c_in + ci) * t_in;
                    for (int64_t t = 0; t < t_out; ++t) {
                        const int64_t ts = t * stride - pad + j;
                        if (ts >= 0 && ts < t_in) acc += gyrow[t] * xrow[ts];
                    }
                }
                gw[(co * cpg_in + ci_l) * k + j] += acc;
            }
        }
    }
}

void layernorm_forward(int64_t rows, int64_t c,
                       const double* x, const double* gain, const double* bias,
                       double eps, double* y, double* mean, double* rstd) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * c;
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        double* yr = y + r * c;
        for (int64_t j = 0; j < c; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    }
}

void layernorm_backward(int64_t rows, int64_t c,
                        const double* gy, const double* x,
                        const double* gain, const double* mean, const double* rstd,
                        double* gx, double* ggain, double* gbias) {
    const double inv_c = 1.0 / static_cast<double>(c);
    if (gx) {
        for (int64_t r = 0; r < rows; ++r) {
            const double* gyr = gy + r * c;
            const double* xr = x + r * c;
            double* gxr = gx + r * c;
            const double mu = mean[r];
            const double rs = rstd[r];
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < c; ++j) {
                const double gh = gyr[j] * gain[j];
                const double xh = (xr[j] - mu) * rs;
                s1 += gh;
                s2 += gh * xh;
            }
            s1 *= inv_c;
            s2 *= inv_c;
            for (int64_t j = 0; j < c; ++j) {
                const double gh = gyr[j] * gain[j];
                const double xh = (xr[j] - mu) * rs;
                gxr[j] += rs * (gh - s1 - xh * s2);
            }
        }
    }
    if (ggain || gbias) {
        for (int64_t j = 0; j < c; ++j) {
            double sg = 0.0, sb = 0.0;
            for (int64_t r = 0; r < rows; ++r) {
                const double gyv = gy[r * c + j];
                sg += gyv * (x[r * c + j] - mean[r]) * rstd[r];
                sb += gyv;
            }
            if (ggain) ggain[j] += sg;
            if (gbias) gbias[j] += sb;
        }
    }
}

void selective_scan_forward(int64_t batch, int64_t L, int64_t D, int64_t N,
                            const double* x, const double* dt,
                            const double* Bm, const double* Cm,
                            const double* A, const double* Dskip,
                            double* y, double* h) {
    std::vector<double> hc(N);
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t d = 0; d < D; ++d) {
            for (int64_t n = 0; n < N; ++n) hc[n] = 0.0;
            for (int64_t t = 0; t < L; ++t) {
                const int64_t td = (b * L + t) * D + d;
                const double xv = x[td];
                const double dtv = dt[td];
                const double* Bt = Bm + (b * L + t) * N;
                const double* Ct = Cm + (b * L + t) * N;
                double* ht = h + ((b * L + t) * D + d) * N;
                double acc = Dskip ? Dskip[d] * xv : 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    double abar, phi;
                    detail::zoh_step(dtv, A[d * N + n], abar, phi);
                    const double hv = abar * hc[n] + phi * Bt[n] * xv;
                    hc[n] = hv;
                    ht[n] = hv;
                    acc += Ct[n] * hv;
                }
                y[td] = acc;
            }
        }
    }
}

void selective_scan_backward(int64_t batch, int64_t L, int64_t D, int64_t N,
                             const double* x, const double* dt,
                             const double* Bm, const double* Cm,
                             const double* A, const double* Dskip,
                             const double* h, const double* gy, double* lam,
                             double* gx, double* gdt, double* gB, double* gC,
                             double* gA, double* gD) {
    // adjoint sweep per (b, d); lam[b,t,d,:] stores the complete dL/dh_t
    std::vector<double> lc(N);
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t d = 0; d < D; ++d) {
            for (int64_t n = 0; n < N; ++n) lc[n] = 0.0;
            for (int64_t t = L - 1; t >= 0; --t) {
                const int64_t td = (b * L + t) * D + d;
                const double g = gy[td];
                const double xv = x[td];
                const double dtv = dt[td];
                const double* Bt = Bm + (b * L + t) * N;
                const double* Ct = Cm + (b * L + t) * N;
                const double* hprev =
                    (t > 0) ? h + ((b * L + t - 1) * D + d) * N : nullptr;
                double* lt = lam + ((b * L + t) * D + d) * N;
                double gx_acc = Dskip ? Dskip[d] * g : 0.0;
                double gdt_acc = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const double av = A[d * N + n];
                    double abar, phi;
                    detail::zoh_step(dtv, av, abar, phi);
                    double l = lc[n] + g * Ct[n];
                    lt[n] = l;
                    const double hp = hprev ? hprev[n] : 0.0;
                    gx_acc += l * phi * Bt[n];
                    gdt_acc += l * (hp * av * abar +
                                    xv * Bt[n] * detail::dphi_ddt(dtv, av, abar));
                    lc[n] = abar * l;
                }
                if (gx) gx[td] += gx_acc;
                if (gdt) gdt[td] += gdt_acc;
            }
        }
    }
    if (gC) {
        for (int64_t bt = 0; bt < batch * L; ++bt) {
            for (int64_t n = 0; n < N; ++n) {
                double acc = 0.0;
                for (int64_t d = 0; d < D; ++d)
                    acc += gy[bt * D + d] * h[(bt * D + d) * N + n];
                gC[bt * N + n] += acc;
            }
        }
    }
    if (gB) {
        for (int64_t bt = 0; bt < batch * L; ++bt) {
            const int64_t b = bt / L;
            const int64_t t = bt % L;
            (void)b;
            (void)t;
            for (int64_t n = 0; n < N; ++n) {
                double acc = 0.0;
                for (int64_t d = 0; d < D; ++d) {
                    const double dtv = dt[bt * D + d];
                    double abar, phi;
                    detail::zoh_step(dtv, A[d * N + n], abar, phi);
                    acc += lam[(bt * D + d) * N + n] * x[bt * D + d] * phi;
                }
                gB[bt * N + n] += acc;
            }
        }
    }
    if (gA) {
        for (int64_t d = 0; d < D; ++d) {
            for (int64_t n = 0; n < N; ++n) {
                const double av = A[d * N + n];
                double acc = 0.0;
                for (int64_t b = 0; b < batch; ++b) {
                    for (int64_t t = 0; t < L; ++t) {
                        const int64_t td = (b * L + t) * D + d;
                        const double dtv = dt[td];
                        double abar, phi;
                        detail::zoh_step(dtv, av, abar, phi);
                        const double hp =
                            (t > 0) ? h[((b * L + t - 1) * D + d) * N + n] : 0.0;
                        const double l = lam[td * N + n];
                        acc += l * (hp * dtv * abar +
                                    x[td] * Bm[(b * L + t) * N + n] *
                                        detail::dphi_da(dtv, av, abar, phi));
                    }
                }
                gA[d * N + n] += acc;
            }
        }
    }
    if (gD && Dskip) {
        for (int64_t d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int64_t bt = 0; bt < batch * L; ++bt)
                acc += gy[bt * D + d] * x[bt * D + d];
            gD[d] += acc;
        }
    }
}

}  // namespace skelmamba::kernels::ref
