#include "skelmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "skelmamba/common.hpp"
#include "tensor_internal.hpp"

namespace skelmamba {

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t = detail::make_out(std::move(shape));
    t.ptr()->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.ptr()->v.begin(), t.ptr()->v.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (skelmamba::numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->v = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

int64_t Tensor::dim(int i) const {
    int r = static_cast<int>(d_->shape.size());
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("Tensor::dim: axis out of range");
    return d_->shape[i];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    return *this;
}

void Tensor::zero_grad() {
    std::fill(d_->g.begin(), d_->g.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item: tensor has " +
                                       std::to_string(numel()) + " elements");
    return d_->v[0];
}

double Tensor::at(const std::vector<int64_t>& idx) const {
    if (idx.size() != d_->shape.size())
        throw ShapeError("at: rank mismatch for " + shape_str(d_->shape));
    int64_t off = 0;
    auto st = detail::strides_of(d_->shape);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= d_->shape[i])
            throw ShapeError("at: index out of range");
        off += idx[i] * st[i];
    }
    return d_->v[off];
}

// ---- Tape ------------------------------------------------------------------

Tape& Tape::get() {
    thread_local Tape tape;
    return tape;
}

int64_t Tape::record(TapeNode node) {
    nodes_.push_back(std::move(node));
    return static_cast<int64_t>(nodes_.size()) - 1;
}

void Tape::truncate(int64_t size) {
    if (size < static_cast<int64_t>(nodes_.size()))
        nodes_.resize(static_cast<size_t>(size));
}

void Tape::clear() {
    nodes_.clear();
}

void Tape::backward_from(int64_t node_id) {
    // Intermediate grads reset on every call; leaf grads keep accumulating.
    for (int64_t i = 0; i <= node_id; ++i) {
        auto& out = nodes_[i].out;
        out->g.assign(out->v.size(), 0.0);
    }
    nodes_[node_id].out->g[0] = 1.0;
    for (int64_t i = node_id; i >= 0; --i) nodes_[i].grad_fn();
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward: loss must be a defined scalar tensor");
    auto d = loss.ptr();
    if (d->producer < 0) {
        if (d->requires_grad) d->grad_buf()[0] += 1.0;
        return;
    }
    Tape::get().backward_from(d->producer);
}

// ---- creation / init -------------------------------------------------------

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& x : t.ptr()->v) x = rng.normal() * stddev;
    return t;
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                    bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& x : t.ptr()->v) x = rng.uniform(lo, hi);
    return t;
}

Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng, bool requires_grad) {
    if (fan_in < 1) throw ConfigError("kaiming_uniform: fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rand_uniform(std::move(shape), rng, -bound, bound, requires_grad);
}

bool all_finite(const Tensor& x) {
    for (double v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

// ---- broadcast plan ---------------------------------------------------------

namespace detail {

Bcast plan_bcast(const Shape& a, const Shape& b, const char* opname) {
    Bcast p;
    const size_t ra = a.size(), rb = b.size();
    const size_t r = std::max(ra, rb);
    p.out.resize(r);
    Shape aa(r, 1), bb(r, 1);
    std::copy(a.begin(), a.end(), aa.begin() + (r - ra));
    std::copy(b.begin(), b.end(), bb.begin() + (r - rb));
    for (size_t i = 0; i < r; ++i) {
        if (aa[i] == bb[i]) {
            p.out[i] = aa[i];
        } else if (aa[i] == 1) {
            p.out[i] = bb[i];
        } else if (bb[i] == 1) {
            p.out[i] = aa[i];
        } else {
            throw ShapeError(std::string(opname) + ": cannot broadcast " +
                             shape_str(a) + " with " + shape_str(b));
        }
    }
    p.same = (aa == bb);
    auto full_st = strides_of(p.out);
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    {
        auto sta = strides_of(aa);
        auto stb = strides_of(bb);
        for (size_t i = 0; i < r; ++i) {
            p.sa[i] = (aa[i] == 1 && p.out[i] != 1) ? 0 : sta[i];
            p.sb[i] = (bb[i] == 1 && p.out[i] != 1) ? 0 : stb[i];
        }
    }
    (void)full_st;
    auto suffix_inner = [&](const Shape& s) -> int64_t {
        // s must equal out on a trailing run and be 1 elsewhere
        size_t i = r;
        int64_t inner = 1;
        while (i > 0 && s[i - 1] == p.out[i - 1]) {
            inner *= s[i - 1];
            --i;
        }
        for (size_t j = 0; j < i; ++j)
            if (s[j] != 1) return -1;
        return inner;
    };
    if (aa == p.out) p.inner_b = suffix_inner(bb);
    if (bb == p.out) p.inner_a = suffix_inner(aa);
    return p;
}

}  // namespace detail

// ---- elementwise engines ----------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

template <BinKind K>
inline double bin_f(double a, double b) {
    if constexpr (K == BinKind::Add) return a + b;
    if constexpr (K == BinKind::Sub) return a - b;
    return a * b;
}

// odometer walk over the broadcast output computing both input offsets
template <class Body>
void bcast_walk(const detail::Bcast& p, Body&& body) {
    const size_t r = p.out.size();
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    const int64_t n = numel(p.out);
    for (int64_t o = 0; o < n; ++o) {
        body(o, oa, ob);
        for (size_t i = r; i-- > 0;) {
            ++idx[i];
            oa += p.sa[i];
            ob += p.sb[i];
            if (idx[i] < p.out[i]) break;
            idx[i] = 0;
            oa -= p.sa[i] * p.out[i];
            ob -= p.sb[i] * p.out[i];
        }
    }
}

template <BinKind K>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name) {
    if (!a.defined() || !b.defined())
        throw UsageError(std::string(name) + ": undefined operand");
    auto p = detail::plan_bcast(a.shape(), b.shape(), name);
    Tensor out = detail::make_out(p.out);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = out.mutable_data().data();
    const int64_t n = out.numel();
    const int nt = threads::max_threads();
    if (p.same) {
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
        for (int64_t i = 0; i < n; ++i) ov[i] = bin_f<K>(av[i], bv[i]);
    } else if (p.inner_b >= 0) {
        const int64_t ib = p.inner_b;
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
        for (int64_t i = 0; i < n; ++i) ov[i] = bin_f<K>(av[i], bv[i % ib]);
    } else if (p.inner_a >= 0) {
        const int64_t ia = p.inner_a;
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
        for (int64_t i = 0; i < n; ++i) ov[i] = bin_f<K>(av[i % ia], bv[i]);
    } else {
        bcast_walk(p, [&](int64_t o, int64_t oa, int64_t ob) {
            ov[o] = bin_f<K>(av[oa], bv[ob]);
        });
    }
    if (detail::should_record({&a, &b})) {
        auto ad = a.ptr();
        auto bd = b.ptr();
        auto od = out.ptr();
        detail::record({ad, bd}, out, [ad, bd, od, p]() {
            const int64_t n2 = static_cast<int64_t>(od->v.size());
            const double* g = od->g.data();
            const int nt2 = threads::max_threads();
            auto acc_a = [&](auto val_fn) {
                double* ga = ad->grad_buf().data();
                if (p.same || p.inner_b >= 0) {
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && n2 > 16384)
                    for (int64_t i = 0; i < n2; ++i) ga[i] += val_fn(i) * g[i];
                } else if (p.inner_a >= 0) {
                    const int64_t ia = p.inner_a;
                    const int64_t outer = n2 / ia;
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && ia > 1024)
                    for (int64_t j = 0; j < ia; ++j) {
                        double s = 0.0;
                        for (int64_t o = 0; o < outer; ++o)
                            s += val_fn(o * ia + j) * g[o * ia + j];
                        ga[j] += s;
                    }
                } else {
                    bcast_walk(p, [&](int64_t o, int64_t oa, int64_t) {
                        ga[oa] += val_fn(o) * g[o];
                    });
                }
            };
            auto acc_b = [&](auto val_fn) {
                double* gb = bd->grad_buf().data();
                if (p.same || p.inner_a >= 0) {
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && n2 > 16384)
                    for (int64_t i = 0; i < n2; ++i) gb[i] += val_fn(i) * g[i];
                } else if (p.inner_b >= 0) {
                    const int64_t ib = p.inner_b;
                    const int64_t outer = n2 / ib;
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && ib > 1024)
                    for (int64_t j = 0; j < ib; ++j) {
                        double s = 0.0;
                        for (int64_t o = 0; o < outer; ++o)
                            s += val_fn(o * ib + j) * g[o * ib + j];
                        gb[j] += s;
                    }
                } else {
                    bcast_walk(p, [&](int64_t o, int64_t, int64_t ob) {
                        gb[ob] += val_fn(o) * g[o];
                    });
                }
            };
            // d(out)/da and d(out)/db evaluated at the broadcast position
            const double* av2 = ad->v.data();
            const double* bv2 = bd->v.data();
            const int64_t ia = p.inner_a, ib = p.inner_b;
            auto a_at = [&](int64_t o) -> double {
                if (p.same || ib >= 0) return av2[o];
                if (ia >= 0) return av2[o % ia];
                return 0.0;  // generic path never uses this lambda
            };
            auto b_at = [&](int64_t o) -> double {
                if (p.same || ia >= 0) return bv2[o];
                if (ib >= 0) return bv2[o % ib];
                return 0.0;
            };
            const bool generic = !p.same && ia < 0 && ib < 0;
            if (ad->requires_grad) {
                if constexpr (K == BinKind::Add) {
                    acc_a([](int64_t) { return 1.0; });
                } else if constexpr (K == BinKind::Sub) {
                    acc_a([](int64_t) { return 1.0; });
                } else {
                    if (generic) {
                        double* ga = ad->grad_buf().data();
                        bcast_walk(p, [&](int64_t o, int64_t oa, int64_t ob) {
                            ga[oa] += bv2[ob] * g[o];
                        });
                    } else {
                        acc_a([&](int64_t o) { return b_at(o); });
                    }
                }
            }
            if (bd->requires_grad) {
                if constexpr (K == BinKind::Add) {
                    acc_b([](int64_t) { return 1.0; });
                } else if constexpr (K == BinKind::Sub) {
                    acc_b([](int64_t) { return -1.0; });
                } else {
                    if (generic) {
                        double* gb = bd->grad_buf().data();
                        bcast_walk(p, [&](int64_t o, int64_t oa, int64_t ob) {
                            gb[ob] += av2[oa] * g[o];
                        });
                    } else {
                        acc_b([&](int64_t o) { return a_at(o); });
                    }
                }
            }
        });
    }
    return out;
}

struct GeluFn {
    static double f(double x) {
        return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    static double df(double x, double) {
        return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
               x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    }
};

inline double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct SiluFn {
    static double f(double x) { return x * sigmoid_stable(x); }
    static double df(double x, double) {
        const double s = sigmoid_stable(x);
        return s * (1.0 + x * (1.0 - s));
    }
};

struct SigmoidFn {
    static double f(double x) { return sigmoid_stable(x); }
    static double df(double, double y) { return y * (1.0 - y); }
};

struct SoftplusFn {
    static double f(double x) {
        return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
    }
    static double df(double x, double) { return sigmoid_stable(x); }
};

struct ExpFn {
    static double f(double x) { return std::exp(x); }
    static double df(double, double y) { return y; }
};

template <class F>
Tensor unary_op(const Tensor& x, const char* name) {
    if (!x.defined()) throw UsageError(std::string(name) + ": undefined operand");
    Tensor out = detail::make_out(x.shape());
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int64_t n = out.numel();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
    for (int64_t i = 0; i < n; ++i) ov[i] = F::f(xv[i]);
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od]() {
            const int64_t n2 = static_cast<int64_t>(od->v.size());
            const double* g = od->g.data();
            const double* xv2 = xd->v.data();
            const double* yv2 = od->v.data();
            double* gx = xd->grad_buf().data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && n2 > 16384)
            for (int64_t i = 0; i < n2; ++i)
                gx[i] += F::df(xv2[i], yv2[i]) * g[i];
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op<BinKind::Add>(a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op<BinKind::Sub>(a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op<BinKind::Mul>(a, b, "mul"); }

Tensor affine(const Tensor& x, double scale, double shift) {
    if (!x.defined()) throw UsageError("affine: undefined operand");
    Tensor out = detail::make_out(x.shape());
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int64_t n = out.numel();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 16384)
    for (int64_t i = 0; i < n; ++i) ov[i] = scale * xv[i] + shift;
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, scale]() {
            const int64_t n2 = static_cast<int64_t>(od->v.size());
            const double* g = od->g.data();
            double* gx = xd->grad_buf().data();
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && n2 > 16384)
            for (int64_t i = 0; i < n2; ++i) gx[i] += scale * g[i];
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) { return unary_op<GeluFn>(x, "gelu"); }
Tensor silu(const Tensor& x) { return unary_op<SiluFn>(x, "silu"); }
Tensor sigmoid(const Tensor& x) { return unary_op<SigmoidFn>(x, "sigmoid"); }
Tensor softplus(const Tensor& x) { return unary_op<SoftplusFn>(x, "softplus"); }
Tensor exp(const Tensor& x) { return unary_op<ExpFn>(x, "exp"); }

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
    if (!x.defined()) throw UsageError("sum: undefined operand");
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od]() {
            const double g = od->g[0];
            double* gx = xd->grad_buf().data();
            const int64_t n = static_cast<int64_t>(xd->v.size());
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean_axes(const Tensor& x, std::vector<int> axes) {
    if (!x.defined()) throw UsageError("mean_axes: undefined operand");
    const int r = static_cast<int>(x.shape().size());
    std::vector<bool> reduced(r, false);
    for (int a : axes) {
        if (a < 0) a += r;
        if (a < 0 || a >= r) throw ShapeError("mean_axes: axis out of range");
        if (reduced[a]) throw ShapeError("mean_axes: duplicate axis");
        reduced[a] = true;
    }
    Shape out_shape;
    Shape red_shape;
    for (int i = 0; i < r; ++i)
        (reduced[i] ? red_shape : out_shape).push_back(x.shape()[i]);
    if (out_shape.empty()) out_shape = {1};
    const int64_t red_n = red_shape.empty() ? 1 : numel(red_shape);
    const double inv_k = 1.0 / static_cast<double>(red_n);

    // offset tables: out position -> base offset; reduction odometer offsets
    auto xst = detail::strides_of(x.shape());
    std::vector<int64_t> out_stride_map, red_stride_map;
    Shape out_dims, red_dims;
    for (int i = 0; i < r; ++i) {
        if (reduced[i]) {
            red_dims.push_back(x.shape()[i]);
            red_stride_map.push_back(xst[i]);
        } else {
            out_dims.push_back(x.shape()[i]);
            out_stride_map.push_back(xst[i]);
        }
    }
    const int64_t out_n = numel(out_shape);
    std::vector<int64_t> base(out_n, 0);
    {
        std::vector<int64_t> idx(out_dims.size(), 0);
        int64_t off = 0;
        for (int64_t o = 0; o < out_n; ++o) {
            base[o] = off;
            for (size_t i = out_dims.size(); i-- > 0;) {
                ++idx[i];
                off += out_stride_map[i];
                if (idx[i] < out_dims[i]) break;
                idx[i] = 0;
                off -= out_stride_map[i] * out_dims[i];
            }
        }
    }
    std::vector<int64_t> red_off(red_n, 0);
    {
        std::vector<int64_t> idx(red_dims.size(), 0);
        int64_t off = 0;
        for (int64_t q = 0; q < red_n; ++q) {
            red_off[q] = off;
            for (size_t i = red_dims.size(); i-- > 0;) {
                ++idx[i];
                off += red_stride_map[i];
                if (idx[i] < red_dims[i]) break;
                idx[i] = 0;
                off -= red_stride_map[i] * red_dims[i];
            }
        }
    }

    Tensor out = detail::make_out(out_shape);
    const double* xv = x.data().data();
    double* ov = out.mutable_data().data();
    const int nt = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && out_n > 256)
    for (int64_t o = 0; o < out_n; ++o) {
        double s = 0.0;
        for (int64_t q = 0; q < red_n; ++q) s += xv[base[o] + red_off[q]];
        ov[o] = s * inv_k;
    }
    if (detail::should_record({&x})) {
        auto xd = x.ptr();
        auto od = out.ptr();
        detail::record({xd}, out, [xd, od, base, red_off, inv_k]() {
            const double* g = od->g.data();
            double* gx = xd->grad_buf().data();
            const int64_t on = static_cast<int64_t>(od->v.size());
            const int64_t rn = static_cast<int64_t>(red_off.size());
            const int nt2 = threads::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt2) if (nt2 > 1 && on > 256)
            for (int64_t o = 0; o < on; ++o) {
                const double gv = g[o] * inv_k;
                for (int64_t q = 0; q < rn; ++q) gx[base[o] + red_off[q]] += gv;
            }
        });
    }
    return out;
}

// ---- finite differences ------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double h, int64_t max_coords,
                         uint64_t subset_seed) {
    if (h <= 0.0) throw DomainError("finite_diff_check: h must be positive");
    if (!x.defined()) throw UsageError("finite_diff_check: undefined input");
    Tensor xc = x;
    auto xd = xc.ptr();
    const bool prev_rg = xd->requires_grad;
    std::vector<double> saved_grad = xd->g;

    std::vector<double> analytic;
    {
        TapeScope scope;
        xd->requires_grad = true;
        xd->g.assign(xd->v.size(), 0.0);
        Tensor y = f(xc);
        if (!y.defined() || y.numel() != 1)
            throw UsageError("finite_diff_check: f must return a scalar");
        backward(y);
        analytic = xd->g.empty() ? std::vector<double>(xd->v.size(), 0.0) : xd->g;
    }
    xd->requires_grad = prev_rg;
    xd->g = std::move(saved_grad);

    std::vector<int64_t> coords;
    const int64_t n = static_cast<int64_t>(xd->v.size());
    if (max_coords < 0 || max_coords >= n) {
        coords.resize(n);
        for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        Rng rng = Rng::keyed(subset_seed, "finite_diff_subset");
        coords.reserve(max_coords);
        for (int64_t i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(n));
    }

    NoGradGuard no_grad;
    double worst = 0.0;
    for (int64_t i : coords) {
        const double orig = xd->v[i];
        xd->v[i] = orig + h;
        double fp;
        {
            TapeScope scope;
            fp = f(xc).item();
        }
        xd->v[i] = orig - h;
        double fm;
        {
            TapeScope scope;
            fm = f(xc).item();
        }
        xd->v[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = analytic[i];
        const double rel = std::fabs(fd - an) /
                           std::max({std::fabs(fd), std::fabs(an), 1e-8});
        if (rel > worst) worst = rel;
    }
    return worst;
}

}  // namespace skelmamba
