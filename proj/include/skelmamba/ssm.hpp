#pragma once

#include <cmath>
#include <string_view>
#include <vector>

#include "skelmamba/common.hpp"
#include "skelmamba/params.hpp"
#include "skelmamba/tensor.hpp"

namespace skelmamba {

// ---- time-invariant reference SSM ------------------------------------------
//
// Plain (non-differentiating) state-space primitives used as oracles: the
// evolution matrix is stored as its diagonal. Templated on the scalar type so
// the recurrence/convolution equivalence can be exercised at 32 and 64 bit.

template <class Real>
struct SsmParamsT {
    std::vector<Real> a_diag;   // diagonal of the N x N evolution matrix
    std::vector<Real> b;        // N x 1 input projection
    std::vector<Real> c_proj;   // 1 x N output projection
    Real delta = Real(1);       // timescale
    Real d_skip = Real(0);      // skip coefficient (selective variant)

    int64_t state_size() const { return static_cast<int64_t>(a_diag.size()); }
};

template <class Real>
struct DiscreteSsmT {
    std::vector<Real> a_bar;  // diagonal
    std::vector<Real> b_bar;
};

using SsmParams = SsmParamsT<double>;
using DiscreteSsm = DiscreteSsmT<double>;

// a_bar = exp(dt*A); b_bar = (dt*A)^-1 (exp(dt*A) - I) dt*B, with the limit
// dt*B where |dt*a| underflows the expression.
template <class Real>
DiscreteSsmT<Real> discretize_zoh(const SsmParamsT<Real>& p) {
    if (!(p.delta > Real(0)))
        throw DomainError("discretize_zoh: timescale must be positive");
    const int64_t n = p.state_size();
    if (n < 1) throw DomainError("discretize_zoh: empty state");
    DiscreteSsmT<Real> d;
    d.a_bar.resize(n);
    d.b_bar.resize(n);
    for (int64_t i = 0; i < n; ++i) {
        const Real z = p.delta * p.a_diag[i];
        const Real ab = std::exp(z);
        d.a_bar[i] = ab;
        d.b_bar[i] = (std::fabs(z) < Real(1e-8))
                         ? p.delta * p.b[i]
                         : (ab - Real(1)) / p.a_diag[i] * p.b[i];
    }
    return d;
}

// y_t = C h_t with h_t = a_bar h_{t-1} + b_bar x_t, h_0 = 0.
template <class Real>
std::vector<Real> scan_recurrent(const DiscreteSsmT<Real>& d,
                                 const std::vector<Real>& c_proj,
                                 const std::vector<Real>& x) {
    if (x.empty()) throw DomainError("scan_recurrent: empty sequence");
    const int64_t n = static_cast<int64_t>(d.a_bar.size());
    std::vector<Real> h(n, Real(0));
    std::vector<Real> y(x.size());
    for (size_t t = 0; t < x.size(); ++t) {
        Real acc = Real(0);
        for (int64_t i = 0; i < n; ++i) {
            h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * x[t];
            acc += c_proj[i] * h[i];
        }
        y[t] = acc;
    }
    return y;
}

// K_l = C a_bar^l b_bar; y = causal convolution of x with K.
template <class Real>
std::vector<Real> ssm_kernel(const DiscreteSsmT<Real>& d,
                             const std::vector<Real>& c_proj, int64_t length) {
    const int64_t n = static_cast<int64_t>(d.a_bar.size());
    std::vector<Real> pw(d.b_bar);
    std::vector<Real> k(length);
    for (int64_t l = 0; l < length; ++l) {
        Real acc = Real(0);
        for (int64_t i = 0; i < n; ++i) acc += c_proj[i] * pw[i];
        k[l] = acc;
        for (int64_t i = 0; i < n; ++i) pw[i] *= d.a_bar[i];
    }
    return k;
}

template <class Real>
std::vector<Real> kernel_convolve(const DiscreteSsmT<Real>& d,
                                  const std::vector<Real>& c_proj,
                                  const std::vector<Real>& x) {
    if (x.empty()) throw DomainError("kernel_convolve: empty sequence");
    const int64_t L = static_cast<int64_t>(x.size());
    const std::vector<Real> k = ssm_kernel(d, c_proj, L);
    std::vector<Real> y(L, Real(0));
    for (int64_t t = 0; t < L; ++t) {
        Real acc = Real(0);
        for (int64_t l = 0; l <= t; ++l) acc += k[l] * x[t - l];
        y[t] = acc;
    }
    return y;
}

// ---- selective scan (S6) -----------------------------------------------------
//
// Projection set deriving (B_t, C_t, dt_t) from the input. B_t and C_t are
// shared across channels; dt is per channel through softplus(x W_dt + b_dt).
// The evolution diagonal is parameterized as A = -exp(a_log) to stay negative.
struct SelectiveScanWeights {
    int64_t d = 0;           // channels
    int64_t n = 0;           // state size
    Tensor w_b, w_c;         // [D, N]
    Tensor w_dt;             // [D, D]
    Tensor b_dt;             // [D]
    Tensor a_log;            // [D, N]
    Tensor d_skip;           // [D]

    void collect(const std::string& prefix, ParamList& out);
};

SelectiveScanWeights make_selective_weights(int64_t d, int64_t n, uint64_t seed,
                                            std::string_view name);

// x: [L, D] or [B, L, D] -> same shape.
Tensor selective_scan(const Tensor& x, const SelectiveScanWeights& w);

int64_t selective_weights_param_count(int64_t d, int64_t n);

}  // namespace skelmamba
