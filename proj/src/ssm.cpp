#include "skelmamba/ssm.hpp"

#include <cmath>

namespace skelmamba {

void SelectiveScanWeights::collect(const std::string& prefix, ParamList& out) {
    add_param(out, prefix + ".w_b", w_b);
    add_param(out, prefix + ".w_c", w_c);
    add_param(out, prefix + ".w_dt", w_dt);
    add_param(out, prefix + ".b_dt", b_dt);
    add_param(out, prefix + ".a_log", a_log);
    add_param(out, prefix + ".d_skip", d_skip);
}

SelectiveScanWeights make_selective_weights(int64_t d, int64_t n, uint64_t seed,
                                            std::string_view name) {
    if (d < 1 || n < 1)
        throw ConfigError("selective weights: need d,n >= 1, got d=" +
                          std::to_string(d) + " n=" + std::to_string(n));
    SelectiveScanWeights w;
    w.d = d;
    w.n = n;
    {
        Rng rng = Rng::keyed(seed, std::string(name) + ".w_b");
        w.w_b = kaiming_uniform({d, n}, d, rng);
    }
    {
        Rng rng = Rng::keyed(seed, std::string(name) + ".w_c");
        w.w_c = kaiming_uniform({d, n}, d, rng);
    }
    {
        Rng rng = Rng::keyed(seed, std::string(name) + ".w_dt");
        w.w_dt = kaiming_uniform({d, d}, d, rng);
    }
    {
        // bias placed so softplus lands in [1e-3, 1e-1]
        Rng rng = Rng::keyed(seed, std::string(name) + ".b_dt");
        std::vector<double> b(d);
        for (int64_t i = 0; i < d; ++i) {
            const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            b[i] = dt + std::log(-std::expm1(-dt));  // softplus inverse
        }
        w.b_dt = Tensor::from({d}, std::move(b), true);
    }
    {
        // S4D-real: A_i = -(i+1), stored as log magnitude
        std::vector<double> a(d * n);
        for (int64_t i = 0; i < d; ++i)
            for (int64_t j = 0; j < n; ++j)
                a[i * n + j] = std::log(static_cast<double>(j + 1));
        w.a_log = Tensor::from({d, n}, std::move(a), true);
    }
    w.d_skip = Tensor::full({d}, 1.0, true);
    return w;
}

Tensor selective_scan(const Tensor& x, const SelectiveScanWeights& w) {
    Tensor bm = matmul(x, w.w_b);
    Tensor cm = matmul(x, w.w_c);
    Tensor dt = softplus(add(matmul(x, w.w_dt), w.b_dt));
    Tensor a = neg(exp(w.a_log));
    return selective_scan_core(x, dt, bm, cm, a, w.d_skip);
}

int64_t selective_weights_param_count(int64_t d, int64_t n) {
    return d * n      // w_b
           + d * n    // w_c
           + d * d    // w_dt
           + d        // b_dt
           + d * n    // a_log
           + d;       // d_skip
}

}  // namespace skelmamba
