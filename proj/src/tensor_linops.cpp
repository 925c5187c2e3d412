#include <algorithm>
#include <cmath>
#include <cstring>

#include "skelmamba/kernels.hpp"
#include "skelmamba/tensor.hpp"
#include "tensor_internal.hpp"

namespace skelmamba {

// ---- matmul -----------------------------------------------------------------

namespace {

struct MatmulPlan {
    int64_t nb = 1, m = 0, k = 0, n = 0;
    std::vector<int64_t> a_off, b_off;  // element offsets per flat batch
    bool a_dense = true, b_dense = true;
    Shape out_shape;
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs) {
    if (as.size() < 2 || bs.size() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " +
                         shape_str(as) + " and " + shape_str(bs));
    MatmulPlan p;
    p.m = as[as.size() - 2];
    p.k = as[as.size() - 1];
    p.n = bs[bs.size() - 1];
    if (bs[bs.size() - 2] != p.k)
        throw ShapeError("matmul: inner extents differ for " + shape_str(as) +
                         " and " + shape_str(bs));
    Shape abatch(as.begin(), as.end() - 2);
    Shape bbatch(bs.begin(), bs.end() - 2);
    auto bp = detail::plan_bcast(abatch.empty() ? Shape{1} : abatch,
                                 bbatch.empty() ? Shape{1} : bbatch, "matmul");
    Shape obatch = bp.out;
    p.nb = numel(obatch);
    p.out_shape = obatch;
    if (abatch.empty() && bbatch.empty()) p.out_shape.clear();
    p.out_shape.push_back(p.m);
    p.out_shape.push_back(p.n);
    p.a_off.resize(p.nb);
    p.b_off.resize(p.nb);
    {
        const size_t r = obatch.size();
        std::vector<int64_t> idx(r, 0);
        int64_t oa = 0, ob = 0;
        for (int64_t u = 0; u < p.nb; ++u) {
            p.a_off[u] = oa * p.m * p.k;
            p.b_off[u] = ob * p.k * p.n;
            for (size_t i = r; i-- > 0;) {
                ++idx[i];
                oa += bp.sa[i];
                ob += bp.sb[i];
                if (idx[i] < obatch[i]) break;
                idx[i] = 0;
                oa -= bp.sa[i] * obatch[i];
                ob -= bp.sb[i] * obatch[i];
            }
        }
    }
    for (int64_t u = 0; u < p.nb; ++u) {
        if (p.a_off[u] != u * p.m * p.k) p.a_dense = false;
        if (p.b_off[u] != u * p.k * p.n) p.b_dense = false;
    }
    return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined()) throw UsageError("matmul: undefined operand");
    MatmulPlan p = plan_matmul(a.shape(), b.shape());
    Tensor out = detail::make_out(p.out_shape);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = out.mutable_data().data();
    if (p.nb == 1) {
        kernels::gemm_nn(p.m, p.k, p.n, av + p.a_off[0], bv + p.b_off[0], ov, false);
    } else {
        const int nt = threads::max_threads();
        const int64_t rows = p.nb * p.m;
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && rows > 1)
        for (int64_t w = 0; w < rows; ++w) {
            const int64_t u = w / p.m;
            const int64_t i = w % p.m;
            const double* arow = av + p.a_off[u] + i * p.k;
            const double* bmat = bv + p.b_off[u];
            double* crow = ov + w * p.n;
            std::memset(crow, 0, sizeof(double) * p.n);
            for (int64_t q = 0; q < p.k; ++q) {
                const double aval = arow[q];
                const double* brow = bmat + q * p.n;
                for (int64_t j = 0; j < p.n; ++j) crow[j] += aval * brow[j];
            }
        }
    }
    if (detail::should_record({&a, &b})) {
        auto ad = a.ptr();
        auto bd = b.ptr();
        auto od = out.ptr();
        detail::record({ad, bd}, out, [ad, bd, od, p]() {
            const double* g = od->g.data();
            const double* av2 = ad->v.data();
            const double* bv2 = bd->v.data();
            const int nt = threads::max_threads();
            if (ad->requires_grad) {
                double* ga = ad->grad_buf().data();
                if (p.nb == 1) {
                    kernels::gemm_nt(p.m, p.n, p.k, g, bv2 + p.b_off[0],
                                     ga + p.a_off[0], true);
                } else if (p.a_dense) {
                    const int64_t rows = p.nb * p.m;
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
                    for (int64_t w = 0; w < rows; ++w) {
                        const int64_t u = w / p.m;
                        const double* grow = g + w * p.n;
                        const double* bmat = bv2 + p.b_off[u];
                        double* garow = ga + w * p.k;
                        for (int64_t q = 0; q < p.k; ++q) {
                            double s = 0.0;
                            for (int64_t j = 0; j < p.n; ++j)
                                s += grow[j] * bmat[q * p.n + j];
                            garow[q] += s;
                        }
                    }
                } else {
                    // shared operand: accumulate serially across batches
                    for (int64_t u = 0; u < p.nb; ++u) {
                        kernels::gemm_nt(p.m, p.n, p.k, g + u * p.m * p.n,
                                         bv2 + p.b_off[u], ga + p.a_off[u], true);
                    }
                }
            }
            if (bd->requires_grad) {
                double* gb = bd->grad_buf().data();
                if (p.nb == 1) {
                    kernels::gemm_tn(p.k, p.m, p.n, av2 + p.a_off[0], g,
                                     gb + p.b_off[0], true);
                } else if (!p.b_dense && p.a_dense) {
                    // weight shared across every batch: one flattened gemm
                    bool single = true;
                    for (int64_t u = 1; u < p.nb; ++u)
                        if (p.b_off[u] != p.b_off[0]) single = false;
                    if (single) {
                        kernels::gemm_tn(p.k, p.nb * p.m, p.n, av2, g,
                                         gb + p.b_off[0], true);
                    } else {
                        for (int64_t u = 0; u < p.nb; ++u)
                            kernels::gemm_tn(p.k, p.m, p.n, av2 + p.a_off[u],
                                             g + u * p.m * p.n, gb + p.b_off[u],
                                             true);
                    }
                } else if (p.b_dense) {
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && p.nb > 1)
                    for (int64_t u = 0; u < p.nb; ++u) {
                        const double* amat = av2 + p.a_off[u];
                        const double* gmat = g + u * p.m * p.n;
                        double* gbmat = gb + u * p.k * p.n;
                        for (int64_t i = 0; i < p.m; ++i) {
                            for (int64_t q = 0; q < p.k; ++q) {
                                const double aval = amat[i * p.k + q];
                                const double* grow = gmat + i * p.n;
                                double* gbrow = gbmat + q * p.n;
                                for (int64_t j = 0; j < p.n; ++j)
                                    gbrow[j] += aval * grow[j];
                            }
                        }
                    }
                } else {
                    for (int64_t u = 0; u < p.nb; ++u)
                        kernels::gemm_tn(p.k, p.m, p.n, av2 + p.a_off[u],
                                         g + u * p.m * p.n, gb + p.b_off[u], true);
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor y = matmul(x, weight);
    if (bias.defined()) y = add(y, bias);
    return y;
}

// ---- conv1d -----------------------------------------------------------------

Tensor conv1d_grouped(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int64_t groups, int64_t stride, int64_t padding) {
    if (!x.defined() || !weight.defined())
        throw UsageError("conv1d_grouped: undefined operand");
    if (x.shape().size() < 2)
        throw ShapeError("conv1d_grouped: input must be [.., C, T], got " +
                         shape_str(x.shape()));
    if (weight.shape().size() != 3)
        throw ShapeError("conv1d_grouped: weight must be [C_out, C_in/g, k], got " +
                         shape_str(weight.shape()));
    if (groups < 1 || stride < 1 || padding < 0)
        throw ConfigError("conv1d_grouped: invalid groups/stride/padding");
    const int64_t c_in = x.shape()[x.shape().size() - 2];
    const int64_t t_in = x.shape()[x.shape().size() - 1];
    const int64_t batch = x.numel() / (c_in * t_in);
    const int64_t c_out = weight.shape()[0];
    const int64_t k = weight.shape()[2];
    if (c_in % groups != 0 || c_out % groups != 0)
        throw ConfigError("conv1d_grouped: channels not divisible by groups (C_in=" +
                          std::to_string(c_in) + ", C_out=" + std::to_string(c_out) +
                          ", groups=" + std::to_string(groups) + ")");
    if (weight.shape()[1] != c_in / groups)
        throw ShapeError("conv1d_grouped: weight " + shape_str(weight.shape()) +
                         " does not match C_in/groups=" + std::to_string(c_in / groups));
    if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != c_out))
        throw ShapeError("conv1d_grouped: bias must be [C_out]");
    const int64_t t_out = (t_in + 2 * padding - k) / stride + 1;
    if (t_in + 2 * padding < k || t_out < 1)
        throw ShapeError("conv1d_grouped: kernel " + std::to_string(k) +
                         " longer than padded input " +
                         std::to_string(t_in + 2 * padding));
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = c_out;
    out_shape[out_shape.size() - 1] = t_out;
    Tensor out = detail::make_out(out_shape);
    kernels::conv1d_forward(batch, c_in, t_in, c_out, k, groups, stride, padding,
                            x.data().data(), weight.data().data(),
                            bias.defined() ? bias.data().data() : nullptr,
                            out.mutable_data().data(), t_out);
    if (detail::should_record({&x, &weight, &bias})) {
        auto xd = x.ptr();
        auto wd = weight.ptr();
        auto bd = bias.defined() ? bias.ptr() : nullptr;
        auto od = out.ptr();
        std::vector<std::shared_ptr<TensorData>> ins = {xd, wd};
        if (bd) ins.push_back(bd);
        detail::record(std::move(ins), out,
                       [xd, wd, bd, od, batch, c_in, t_in, c_out, k, groups,
                        stride, padding, t_out]() {
            const double* g = od->g.data();
            if (xd->requires_grad) {
                kernels::conv1d_backward_input(batch, c_in, t_in, c_out, k, groups,
                                               stride, padding, g, wd->v.data(),
                                               xd->grad_buf().data(), t_out);
            }
            if (wd->requires_grad) {
                kernels::conv1d_backward_weight(batch, c_in, t_in, c_out, k, groups,
                                                stride, padding, g, xd->v.data(),
                                                wd->grad_buf().data(), t_out);
            }
            if (bd && bd->requires_grad) {
                double* gb = bd->grad_buf().data();
                for (int64_t co = 0; co < c_out; ++co) {
                    double s = 0.0;
                    for (int64_t b = 0; b < batch; ++b) {
                        const double* grow = g + (b * c_out + co) * t_out;
                        for (int64_t t = 0; t < t_out; ++t) s += grow[t];
                    }
                    gb[co] += s;
                }
            }
        });
    }
    return out;
}

// ---- layernorm ----------------------------------------------------------------

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
    if (!x.defined() || !gain.defined() || !bias.defined())
        throw UsageError("layernorm: undefined operand");
    if (eps <= 0.0) throw DomainError("layernorm: eps must be positive");
    if (x.shape().empty()) throw ShapeError("layernorm: rank-0 input");
    const int64_t c = x.shape().back();
    if (gain.numel() != c || bias.numel() != c)
        throw ShapeError("layernorm: gain/bias must have " + std::to_string(c) +
                         " elements");
    const int64_t rows = x.numel() / c;
    Tensor out = detail::make_out(x.shape());
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    kernels::layernorm_forward(rows, c, x.data().data(), gain.data().data(),
                               bias.data().data(), eps,
                               out.mutable_data().data(), mean->data(),
                               rstd->data());
    if (detail::should_record({&x, &gain, &bias})) {
        auto xd = x.ptr();
        auto gd = gain.ptr();
        auto bd = bias.ptr();
        auto od = out.ptr();
        detail::record({xd, gd, bd}, out, [xd, gd, bd, od, mean, rstd, rows, c]() {
            kernels::layernorm_backward(
                rows, c, od->g.data(), xd->v.data(), gd->v.data(), mean->data(),
                rstd->data(), xd->requires_grad ? xd->grad_buf().data() : nullptr,
                gd->requires_grad ? gd->grad_buf().data() : nullptr,
                bd->requires_grad ? bd->grad_buf().data() : nullptr);
        });
    }
    return out;
}

// ---- batchnorm ----------------------------------------------------------------

void BatchNormState::init(int64_t channels) {
    running_mean.assign(channels, 0.0);
    running_var.assign(channels, 1.0);
}

Tensor batchnorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 BatchNormState& state, bool training, double eps) {
    if (!x.defined() || !gain.defined() || !bias.defined())
        throw UsageError("batchnorm: undefined operand");
    const int64_t c = x.shape().back();
    if (gain.numel() != c || bias.numel() != c ||
        static_cast<int64_t>(state.running_mean.size()) != c)
        throw ShapeError("batchnorm: parameter size mismatch for C=" +
                         std::to_string(c));
    const int64_t rows = x.numel() / c;
    auto mean = std::make_shared<std::vector<double>>(c);
    auto rstd = std::make_shared<std::vector<double>>(c);
    if (training) {
        const int nt = threads::max_threads();
        const double* xv = x.data().data();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && c > 1 && rows * c > 8192)
        for (int64_t j = 0; j < c; ++j) {
            double mu = 0.0;
            for (int64_t r = 0; r < rows; ++r) mu += xv[r * c + j];
            mu /= static_cast<double>(rows);
            double var = 0.0;
            for (int64_t r = 0; r < rows; ++r) {
                const double d = xv[r * c + j] - mu;
                var += d * d;
            }
            var /= static_cast<double>(rows);
            (*mean)[j] = mu;
            (*rstd)[j] = 1.0 / std::sqrt(var + eps);
            state.running_mean[j] =
                (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mu;
            state.running_var[j] =
                (1.0 - state.momentum) * state.running_var[j] + state.momentum * var;
        }
    } else {
        for (int64_t j = 0; j < c; ++j) {
            (*mean)[j] = state.running_mean[j];
            (*rstd)[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
        }
    }
    Tensor out = detail::make_out(x.shape());
    {
        const double* xv = x.data().data();
        const double* gv = gain.data().data();
        const double* bv = bias.data().data();
        double* ov = out.mutable_data().data();
        const int nt = threads::max_threads();
        const int64_t n = rows * c;
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
        for (int64_t i = 0; i < n; ++i) {
            const int64_t j = i % c;
            ov[i] = (xv[i] - (*mean)[j]) * (*rstd)[j] * gv[j] + bv[j];
        }
    }
    if (detail::should_record({&x, &gain, &bias})) {
        auto xd = x.ptr();
        auto gd = gain.ptr();
        auto bd = bias.ptr();
        auto od = out.ptr();
        detail::record({xd, gd, bd}, out,
                       [xd, gd, bd, od, mean, rstd, rows, c, training]() {
            const double* g = od->g.data();
            const double* xv = xd->v.data();
            const double* gv = gd->v.data();
            const double inv_rows = 1.0 / static_cast<double>(rows);
            const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && c > 1 && rows * c > 8192)
            for (int64_t j = 0; j < c; ++j) {
                const double mu = (*mean)[j];
                const double rs = (*rstd)[j];
                double s1 = 0.0, s2 = 0.0;
                for (int64_t r = 0; r < rows; ++r) {
                    const double gy = g[r * c + j];
                    s1 += gy;
                    s2 += gy * (xv[r * c + j] - mu) * rs;
                }
                if (gd->requires_grad) gd->grad_buf()[j] += s2;
                if (bd->requires_grad) bd->grad_buf()[j] += s1;
                if (xd->requires_grad) {
                    double* gx = xd->grad_buf().data();
                    if (training) {
                        const double m1 = s1 * inv_rows;
                        const double m2 = s2 * inv_rows;
                        for (int64_t r = 0; r < rows; ++r) {
                            const double gy = g[r * c + j];
                            const double xh = (xv[r * c + j] - mu) * rs;
                            gx[r * c + j] += gv[j] * rs * (gy - m1 - xh * m2);
                        }
                    } else {
                        for (int64_t r = 0; r < rows; ++r)
                            gx[r * c + j] += gv[j] * rs * g[r * c + j];
                    }
                }
            }
        });
    }
    return out;
}

// ---- log_softmax ----------------------------------------------------------------

Tensor log_softmax(const Tensor& x) {
    if (!x.defined()) throw UsageError("log_softmax: undefined operand");
    if (x.shape().empty()) throw ShapeError("log_softmax: rank-0 input");
    const int64_t c = x.shape().back();
    const int64_t rows = x.numel() / c;
    Tensor out = detail::make_out(x.shape());
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && rows > 1 && rows * c > 8192)
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * c;
        double* yr = ov + r * c;
        double mx = xr[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(xr[j] - mx);
        const double lse = mx + std::log(s);
        for (int64_t j = 0; j < c; ++j) yr[j] = xr[j] - lse;
    }
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, rows, c]() {
            const double* g = od->g.data();
            const double* yv = od->v.data();
            double* gx = xd->grad_buf().data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && rows > 1 && rows * c > 8192)
            for (int64_t r = 0; r < rows; ++r) {
                double s = 0.0;
                for (int64_t j = 0; j < c; ++j) s += g[r * c + j];
                for (int64_t j = 0; j < c; ++j)
                    gx[r * c + j] += g[r * c + j] - std::exp(yv[r * c + j]) * s;
            }
        });
    }
    return out;
}

// ---- shape ops ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (!x.defined()) throw UsageError("reshape: undefined operand");
    if (numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    Tensor out = Tensor::from(std::move(shape),
                              std::vector<double>(x.data().begin(), x.data().end()));
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od]() {
            double* gx = xd->grad_buf().data();
            const double* g = od->g.data();
            const int64_t n = static_cast<int64_t>(xd->v.size());
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    if (!x.defined()) throw UsageError("permute: undefined operand");
    const size_t r = x.shape().size();
    if (perm.size() != r) throw ShapeError("permute: rank mismatch");
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) {
        const int p = perm[i];
        if (p < 0 || p >= static_cast<int>(r) || seen[p])
            throw ShapeError("permute: invalid permutation");
        seen[p] = true;
        out_shape[i] = x.shape()[p];
    }
    auto xst = detail::strides_of(x.shape());
    std::vector<int64_t> src_stride(r);
    for (size_t i = 0; i < r; ++i) src_stride[i] = xst[perm[i]];
    Tensor out = detail::make_out(out_shape);
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int64_t n = out.numel();
    const auto ost = detail::strides_of(out_shape);
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o, src = 0;
        for (size_t i = 0; i < r; ++i) {
            const int64_t q = rem / ost[i];
            rem -= q * ost[i];
            src += q * src_stride[i];
        }
        ov[o] = xv[src];
    }
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, ost, src_stride, r, n]() {
            double* gx = xd->grad_buf().data();
            const double* g = od->g.data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && n > 16384)
            for (int64_t o = 0; o < n; ++o) {
                int64_t rem = o, src = 0;
                for (size_t i = 0; i < r; ++i) {
                    const int64_t q = rem / ost[i];
                    rem -= q * ost[i];
                    src += q * src_stride[i];
                }
                gx[src] += g[o];
            }
        });
    }
    return out;
}

namespace {

// split shape around an axis into [outer, extent, inner]
void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& extent,
                int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    extent = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

int norm_axis(const Shape& s, int axis, const char* name) {
    const int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError(std::string(name) + ": axis out of range for " +
                         shape_str(s));
    return axis;
}

}  // namespace

Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t length) {
    if (!x.defined()) throw UsageError("narrow: undefined operand");
    axis = norm_axis(x.shape(), axis, "narrow");
    int64_t outer, extent, inner;
    axis_split(x.shape(), axis, outer, extent, inner);
    if (start < 0 || length < 1 || start + length > extent)
        throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") exceeds extent " +
                         std::to_string(extent));
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    Tensor out = detail::make_out(out_shape);
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && outer > 1 && outer * length * inner > 16384)
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(ov + o * length * inner,
                    xv + (o * extent + start) * inner,
                    sizeof(double) * length * inner);
    }
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, outer, extent, inner, start, length]() {
            double* gx = xd->grad_buf().data();
            const double* g = od->g.data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && outer > 1 && outer * length * inner > 16384)
            for (int64_t o = 0; o < outer; ++o) {
                const double* grow = g + o * length * inner;
                double* gxrow = gx + (o * extent + start) * inner;
                for (int64_t i = 0; i < length * inner; ++i) gxrow[i] += grow[i];
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw UsageError("concat: empty input list");
    for (const Tensor& t : xs)
        if (!t.defined()) throw UsageError("concat: undefined operand");
    axis = norm_axis(xs[0].shape(), axis, "concat");
    Shape out_shape = xs[0].shape();
    int64_t total = 0;
    for (const Tensor& t : xs) {
        if (t.shape().size() != out_shape.size())
            throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < out_shape.size(); ++i) {
            if (static_cast<int>(i) == axis) continue;
            if (t.shape()[i] != out_shape[i])
                throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) +
                                 " vs " + shape_str(out_shape));
        }
        total += t.shape()[axis];
    }
    out_shape[axis] = total;
    Tensor out = detail::make_out(out_shape);
    int64_t outer, extent, inner;
    axis_split(out_shape, axis, outer, extent, inner);
    double* ov = out.mutable_data().data();
    int64_t pos = 0;
    std::vector<int64_t> starts(xs.size());
    std::vector<int64_t> lens(xs.size());
    for (size_t s = 0; s < xs.size(); ++s) {
        starts[s] = pos;
        lens[s] = xs[s].shape()[axis];
        const double* xv = xs[s].data().data();
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(ov + (o * extent + pos) * inner, xv + o * lens[s] * inner,
                        sizeof(double) * lens[s] * inner);
        }
        pos += lens[s];
    }
    bool any_grad = false;
    for (const Tensor& t : xs)
        if (t.requires_grad()) any_grad = true;
    if (Tape::get().enabled() && any_grad) {
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const Tensor& t : xs) ins.push_back(t.ptr());
        auto od = out.ptr();
        auto ins_copy = ins;
        detail::record(std::move(ins), out,
                       [ins_copy, od, outer, extent, inner, starts, lens]() {
            const double* g = od->g.data();
            for (size_t s = 0; s < ins_copy.size(); ++s) {
                if (!ins_copy[s]->requires_grad) continue;
                double* gx = ins_copy[s]->grad_buf().data();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* grow = g + (o * extent + starts[s]) * inner;
                    double* gxrow = gx + o * lens[s] * inner;
                    for (int64_t i = 0; i < lens[s] * inner; ++i) gxrow[i] += grow[i];
                }
            }
        });
    }
    return out;
}

Tensor gather_axis(const Tensor& x, int axis, const std::vector<int64_t>& idx) {
    if (!x.defined()) throw UsageError("gather_axis: undefined operand");
    axis = norm_axis(x.shape(), axis, "gather_axis");
    int64_t outer, extent, inner;
    axis_split(x.shape(), axis, outer, extent, inner);
    for (int64_t i : idx)
        if (i < 0 || i >= extent)
            throw ShapeError("gather_axis: index " + std::to_string(i) +
                             " out of range [0," + std::to_string(extent) + ")");
    Shape out_shape = x.shape();
    out_shape[axis] = static_cast<int64_t>(idx.size());
    const int64_t m = static_cast<int64_t>(idx.size());
    Tensor out = detail::make_out(out_shape);
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && outer > 1 && outer * m * inner > 16384)
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < m; ++j) {
            std::memcpy(ov + (o * m + j) * inner, xv + (o * extent + idx[j]) * inner,
                        sizeof(double) * inner);
        }
    }
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, outer, extent, inner, idx, m]() {
            double* gx = xd->grad_buf().data();
            const double* g = od->g.data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && outer > 1)
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t j = 0; j < m; ++j) {
                    const double* grow = g + (o * m + j) * inner;
                    double* gxrow = gx + (o * extent + idx[j]) * inner;
                    for (int64_t i = 0; i < inner; ++i) gxrow[i] += grow[i];
                }
            }
        });
    }
    return out;
}

Tensor scatter_add_axis(const Tensor& x, int axis, const std::vector<int64_t>& idx,
                        int64_t out_extent) {
    if (!x.defined()) throw UsageError("scatter_add_axis: undefined operand");
    axis = norm_axis(x.shape(), axis, "scatter_add_axis");
    int64_t outer, extent, inner;
    axis_split(x.shape(), axis, outer, extent, inner);
    if (static_cast<int64_t>(idx.size()) != extent)
        throw ShapeError("scatter_add_axis: index list size " +
                         std::to_string(idx.size()) + " != axis extent " +
                         std::to_string(extent));
    for (int64_t i : idx)
        if (i < 0 || i >= out_extent)
            throw ShapeError("scatter_add_axis: index " + std::to_string(i) +
                             " out of range [0," + std::to_string(out_extent) + ")");
    Shape out_shape = x.shape();
    out_shape[axis] = out_extent;
    Tensor out = detail::make_out(out_shape);
    std::fill(out.mutable_data().begin(), out.mutable_data().end(), 0.0);
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && outer > 1 && outer * extent * inner > 16384)
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < extent; ++j) {
            const double* xrow = xv + (o * extent + j) * inner;
            double* orow = ov + (o * out_extent + idx[j]) * inner;
            for (int64_t i = 0; i < inner; ++i) orow[i] += xrow[i];
        }
    }
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, outer, extent, inner, idx, out_extent]() {
            double* gx = xd->grad_buf().data();
            const double* g = od->g.data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && outer > 1)
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t j = 0; j < extent; ++j) {
                    const double* grow = g + (o * out_extent + idx[j]) * inner;
                    double* gxrow = gx + (o * extent + j) * inner;
                    for (int64_t i = 0; i < inner; ++i) gxrow[i] += grow[i];
                }
            }
        });
    }
    return out;
}

// ---- selective scan -------------------------------------------------------------

Tensor selective_scan_core(const Tensor& x, const Tensor& dt, const Tensor& Bm,
                           const Tensor& Cm, const Tensor& A, const Tensor& Dskip) {
    if (!x.defined() || !dt.defined() || !Bm.defined() || !Cm.defined() ||
        !A.defined())
        throw UsageError("selective_scan: undefined operand");
    const size_t r = x.shape().size();
    if (r != 2 && r != 3)
        throw ShapeError("selective_scan: input must be [L,D] or [B,L,D], got " +
                         shape_str(x.shape()));
    const int64_t batch = (r == 3) ? x.shape()[0] : 1;
    const int64_t L = x.shape()[r - 2];
    const int64_t D = x.shape()[r - 1];
    if (L < 1) throw DomainError("selective_scan: empty sequence");
    if (A.shape().size() != 2 || A.shape()[0] != D)
        throw ShapeError("selective_scan: A must be [D,N] with D=" +
                         std::to_string(D) + ", got " + shape_str(A.shape()));
    const int64_t N = A.shape()[1];
    if (dt.shape() != x.shape())
        throw ShapeError("selective_scan: dt shape " + shape_str(dt.shape()) +
                         " != input shape " + shape_str(x.shape()));
    Shape bc_shape = (r == 3) ? Shape{batch, L, N} : Shape{L, N};
    if (Bm.shape() != bc_shape || Cm.shape() != bc_shape)
        throw ShapeError("selective_scan: B/C must be " + shape_str(bc_shape));
    if (Dskip.defined() && Dskip.numel() != D)
        throw ShapeError("selective_scan: skip term must have D elements");
    for (double v : dt.data())
        if (!std::isfinite(v))
            throw NumericError("selective_scan: nonfinite timestep");

    Tensor out = detail::make_out(x.shape());
    auto h = std::make_shared<std::vector<double>>(batch * L * D * N);
    kernels::selective_scan_forward(batch, L, D, N, x.data().data(),
                                    dt.data().data(), Bm.data().data(),
                                    Cm.data().data(), A.data().data(),
                                    Dskip.defined() ? Dskip.data().data() : nullptr,
                                    out.mutable_data().data(), h->data());
    if (detail::should_record({&x, &dt, &Bm, &Cm, &A, &Dskip})) {
        auto xd = x.ptr();
        auto dtd = dt.ptr();
        auto bd = Bm.ptr();
        auto cd = Cm.ptr();
        auto ad = A.ptr();
        auto dd = Dskip.defined() ? Dskip.ptr() : nullptr;
        auto od = out.ptr();
        std::vector<std::shared_ptr<TensorData>> ins = {xd, dtd, bd, cd, ad};
        if (dd) ins.push_back(dd);
        detail::record(std::move(ins), out,
                       [xd, dtd, bd, cd, ad, dd, od, h, batch, L, D, N]() {
            std::vector<double> lam(batch * L * D * N);
            kernels::selective_scan_backward(
                batch, L, D, N, xd->v.data(), dtd->v.data(), bd->v.data(),
                cd->v.data(), ad->v.data(), dd ? dd->v.data() : nullptr, h->data(),
                od->g.data(), lam.data(),
                xd->requires_grad ? xd->grad_buf().data() : nullptr,
                dtd->requires_grad ? dtd->grad_buf().data() : nullptr,
                bd->requires_grad ? bd->grad_buf().data() : nullptr,
                cd->requires_grad ? cd->grad_buf().data() : nullptr,
                ad->requires_grad ? ad->grad_buf().data() : nullptr,
                (dd && dd->requires_grad) ? dd->grad_buf().data() : nullptr);
        });
    }
    return out;
}

}  // namespace skelmamba
