#pragma once

#include <utility>

#include "skelmamba/tensor.hpp"

namespace skelmamba::detail {

inline Tensor make_out(Shape shape) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->v.resize(numel(d->shape));
    return Tensor(std::move(d));
}

inline bool should_record(std::initializer_list<const Tensor*> ins) {
    if (!Tape::get().enabled()) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

inline void record(std::vector<std::shared_ptr<TensorData>> ins, Tensor& out,
                   std::function<void()> fn) {
    out.ptr()->requires_grad = true;
    out.ptr()->producer =
        Tape::get().record({std::move(ins), out.ptr(), std::move(fn)});
}

inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Trailing-axis broadcast plan: out extents plus per-axis input strides with
// zeros on broadcast axes.
struct Bcast {
    Shape out;
    std::vector<int64_t> sa, sb;  // aligned to out rank
    bool same = false;            // identical shapes
    // b repeats as a contiguous trailing block of out (inner_b = numel(b));
    // only meaningful when a covers out exactly. Symmetric for a.
    int64_t inner_b = -1;
    int64_t inner_a = -1;
};

Bcast plan_bcast(const Shape& a, const Shape& b, const char* opname);

}  // namespace skelmamba::detail
