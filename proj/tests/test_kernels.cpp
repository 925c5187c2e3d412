#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "skelmamba/common.hpp"
#include "skelmamba/kernels.hpp"

// The OpenMP kernels must agree with the serial reference on every input, at
// any worker cap.

using namespace skelmamba;

namespace {

std::vector<double> rand_vec(int64_t n, uint64_t seed, double scale = 1.0) {
    Rng rng = Rng::keyed(seed, "kernels");
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

double worst_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double w = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        w = std::max(w, std::fabs(a[i] - b[i]));
    return w;
}

}  // namespace

TEST_CASE("gemm kernels match the serial reference") {
    for (int cap : {1, 2, 4}) {
        threads::set_cap(cap);
        const int64_t m = 37, k = 19, n = 23;
        auto a = rand_vec(m * k, 1), b = rand_vec(k * n, 2);
        std::vector<double> c1(m * n), c2(m * n);
        kernels::gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false);
        kernels::ref::gemm_nn(m, k, n, a.data(), b.data(), c2.data(), false);
        CHECK(worst_diff(c1, c2) <= 1e-12);

        auto bt = rand_vec(n * k, 3);
        std::fill(c1.begin(), c1.end(), 0.5);
        std::fill(c2.begin(), c2.end(), 0.5);
        kernels::gemm_nt(m, k, n, a.data(), bt.data(), c1.data(), true);
        kernels::ref::gemm_nt(m, k, n, a.data(), bt.data(), c2.data(), true);
        CHECK(worst_diff(c1, c2) <= 1e-12);

        auto at = rand_vec(k * m, 4);
        kernels::gemm_tn(m, k, n, at.data(), b.data(), c1.data(), false);
        kernels::ref::gemm_tn(m, k, n, at.data(), b.data(), c2.data(), false);
        CHECK(worst_diff(c1, c2) <= 1e-12);
    }
    threads::set_cap(0);
}

TEST_CASE("conv1d kernels match the serial reference") {
    struct P {
        int64_t batch, c_in, t_in, c_out, k, groups, stride, pad;
    };
    for (const P& p : {P{3, 6, 17, 4, 3, 2, 1, 1}, P{2, 8, 16, 8, 5, 4, 2, 2},
                       P{1, 4, 9, 4, 4, 4, 1, 3}}) {
        const int64_t t_out = (p.t_in + 2 * p.pad - p.k) / p.stride + 1;
        auto x = rand_vec(p.batch * p.c_in * p.t_in, 11);
        auto w = rand_vec(p.c_out * (p.c_in / p.groups) * p.k, 12);
        auto bias = rand_vec(p.c_out, 13);
        std::vector<double> y1(p.batch * p.c_out * t_out), y2(y1.size());
        kernels::conv1d_forward(p.batch, p.c_in, p.t_in, p.c_out, p.k, p.groups,
                                p.stride, p.pad, x.data(), w.data(), bias.data(),
                                y1.data(), t_out);
        kernels::ref::conv1d_forward(p.batch, p.c_in, p.t_in, p.c_out, p.k,
                                     p.groups, p.stride, p.pad, x.data(), w.data(),
                                     bias.data(), y2.data(), t_out);
        CHECK(worst_diff(y1, y2) <= 1e-12);

        auto gy = rand_vec(y1.size(), 14);
        std::vector<double> gx1(x.size(), 0.1), gx2(x.size(), 0.1);
        kernels::conv1d_backward_input(p.batch, p.c_in, p.t_in, p.c_out, p.k,
                                       p.groups, p.stride, p.pad, gy.data(),
                                       w.data(), gx1.data(), t_out);
        kernels::ref::conv1d_backward_input(p.batch, p.c_in, p.t_in, p.c_out, p.k,
                                            p.groups, p.stride, p.pad, gy.data(),
                                            w.data(), gx2.data(), t_out);
        CHECK(worst_diff(gx1, gx2) <= 1e-12);

        std::vector<double> gw1(w.size(), 0.0), gw2(w.size(), 0.0);
        kernels::conv1d_backward_weight(p.batch, p.c_in, p.t_in, p.c_out, p.k,
                                        p.groups, p.stride, p.pad, gy.data(),
                                        x.data(), gw1.data(), t_out);
        kernels::ref::conv1d_backward_weight(p.batch, p.c_in, p.t_in, p.c_out, p.k,
                                             p.groups, p.stride, p.pad, gy.data(),
                                             x.data(), gw2.data(), t_out);
        CHECK(worst_diff(gw1, gw2) <= 1e-12);
    }
}

TEST_CASE("layernorm kernels match the serial reference") {
    const int64_t rows = 41, c = 13;
    auto x = rand_vec(rows * c, 21, 2.0);
    auto g = rand_vec(c, 22), b = rand_vec(c, 23);
    std::vector<double> y1(rows * c), y2(rows * c), m1(rows), m2(rows), r1(rows),
        r2(rows);
    kernels::layernorm_forward(rows, c, x.data(), g.data(), b.data(), 1e-5,
                               y1.data(), m1.data(), r1.data());
    kernels::ref::layernorm_forward(rows, c, x.data(), g.data(), b.data(), 1e-5,
                                    y2.data(), m2.data(), r2.data());
    CHECK(worst_diff(y1, y2) <= 1e-12);

    auto gy = rand_vec(rows * c, 24);
    std::vector<double> gx1(rows * c, 0.0), gx2(rows * c, 0.0);
    std::vector<double> gg1(c, 0.0), gg2(c, 0.0), gb1(c, 0.0), gb2(c, 0.0);
    kernels::layernorm_backward(rows, c, gy.data(), x.data(), g.data(), m1.data(),
                                r1.data(), gx1.data(), gg1.data(), gb1.data());
    kernels::ref::layernorm_backward(rows, c, gy.data(), x.data(), g.data(),
                                     m2.data(), r2.data(), gx2.data(), gg2.data(),
                                     gb2.data());
    CHECK(worst_diff(gx1, gx2) <= 1e-12);
    CHECK(worst_diff(gg1, gg2) <= 1e-12);
    CHECK(worst_diff(gb1, gb2) <= 1e-12);
}

TEST_CASE("selective scan kernels match the serial reference") {
    const int64_t batch = 3, L = 23, D = 5, N = 4;
    auto x = rand_vec(batch * L * D, 31);
    auto dt = rand_vec(batch * L * D, 32, 0.2);
    for (double& v : dt) v = 0.02 + std::fabs(v);  // positive timescales
    auto Bm = rand_vec(batch * L * N, 33);
    auto Cm = rand_vec(batch * L * N, 34);
    auto A = rand_vec(D * N, 35, 0.5);
    for (double& v : A) v = -0.2 - std::fabs(v);  // stable diagonal
    auto Dk = rand_vec(D, 36);
    std::vector<double> y1(batch * L * D), y2(y1.size());
    std::vector<double> h1(batch * L * D * N), h2(h1.size());
    kernels::selective_scan_forward(batch, L, D, N, x.data(), dt.data(), Bm.data(),
                                    Cm.data(), A.data(), Dk.data(), y1.data(),
                                    h1.data());
    kernels::ref::selective_scan_forward(batch, L, D, N, x.data(), dt.data(),
                                         Bm.data(), Cm.data(), A.data(), Dk.data(),
                                         y2.data(), h2.data());
    CHECK(worst_diff(y1, y2) <= 1e-12);
    CHECK(worst_diff(h1, h2) <= 1e-12);

    auto gy = rand_vec(batch * L * D, 37);
    std::vector<double> lam1(h1.size()), lam2(h2.size());
    std::vector<double> gx1(x.size(), 0.0), gx2(x.size(), 0.0);
    std::vector<double> gdt1(dt.size(), 0.0), gdt2(dt.size(), 0.0);
    std::vector<double> gB1(Bm.size(), 0.0), gB2(Bm.size(), 0.0);
    std::vector<double> gC1(Cm.size(), 0.0), gC2(Cm.size(), 0.0);
    std::vector<double> gA1(A.size(), 0.0), gA2(A.size(), 0.0);
    std::vector<double> gD1(Dk.size(), 0.0), gD2(Dk.size(), 0.0);
    kernels::selective_scan_backward(batch, L, D, N, x.data(), dt.data(),
                                     Bm.data(), Cm.data(), A.data(), Dk.data(),
                                     h1.data(), gy.data(), lam1.data(), gx1.data(),
                                     gdt1.data(), gB1.data(), gC1.data(),
                                     gA1.data(), gD1.data());
    kernels::ref::selective_scan_backward(batch, L, D, N, x.data(), dt.data(),
                                          Bm.data(), Cm.data(), A.data(), Dk.data(),
                                          h2.data(), gy.data(), lam2.data(),
                                          gx2.data(), gdt2.data(), gB2.data(),
                                          gC2.data(), gA2.data(), gD2.data());
    CHECK(worst_diff(gx1, gx2) <= 1e-12);
    CHECK(worst_diff(gdt1, gdt2) <= 1e-12);
    CHECK(worst_diff(gB1, gB2) <= 1e-12);
    CHECK(worst_diff(gC1, gC2) <= 1e-12);
    CHECK(worst_diff(gA1, gA2) <= 1e-12);
    CHECK(worst_diff(gD1, gD2) <= 1e-12);
}
