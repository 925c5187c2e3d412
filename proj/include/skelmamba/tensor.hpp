#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "skelmamba/common.hpp"

namespace skelmamba {

struct TensorData {
    Shape shape;
    std::vector<double> v;
    bool requires_grad = false;
    std::vector<double> g;   // empty until first touched
    int64_t producer = -1;   // tape node that produced this, -1 for leaves

    std::vector<double>& grad_buf() {
        if (g.empty()) g.assign(v.size(), 0.0);
        return g;
    }
};

// Value-semantics handle to a node of the differentiation graph. Copies share
// storage; ops record themselves on the thread-local tape when any input
// requires a gradient.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }
    int64_t dim(int i) const;

    std::span<const double> data() const { return d_->v; }
    std::span<double> mutable_data() { return d_->v; }
    std::span<const double> grad() const { return d_->g; }
    std::vector<double>& grad_buf() { return d_->grad_buf(); }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    void zero_grad();

    double item() const;
    double at(const std::vector<int64_t>& idx) const;

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

// ---- tape ----------------------------------------------------------------

struct TapeNode {
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> out;
    std::function<void()> grad_fn;  // accumulates into inputs' grad buffers
};

class Tape {
public:
    static Tape& get();  // thread-local

    bool enabled() const { return enabled_ && depth_ == 0; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
    int64_t record(TapeNode node);
    void truncate(int64_t size);
    void clear();
    void backward_from(int64_t node_id);

private:
    friend class NoGradGuard;
    std::vector<TapeNode> nodes_;
    bool enabled_ = true;
    int depth_ = 0;  // NoGradGuard nesting
};

class NoGradGuard {
public:
    NoGradGuard() { ++Tape::get().depth_; }
    ~NoGradGuard() { --Tape::get().depth_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Truncates the tape back to its construction size on exit.
class TapeScope {
public:
    TapeScope() : start_(Tape::get().size()) {}
    ~TapeScope() { Tape::get().truncate(start_); }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    int64_t start_;
};

// ---- primitive ops --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift);  // scale*x + shift
inline Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }
inline Tensor scale(const Tensor& x, double a) { return affine(x, a, 0.0); }

Tensor gelu(const Tensor& x);      // exact erf form
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);

// [.., m, k] x [.., k, n] -> [.., m, n]; leading batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[.., c_in, t], weight[c_out, c_in/groups, k], optional bias[c_out].
Tensor conv1d_grouped(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int64_t groups, int64_t stride, int64_t padding);

// Normalization over the trailing axis.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps);

// Per-channel batch normalization over all leading axes; running statistics
// live outside the graph and are updated only in training mode.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    void init(int64_t channels);
};
Tensor batchnorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 BatchNormState& state, bool training, double eps = 1e-5);

Tensor log_softmax(const Tensor& x);  // over the trailing axis

Tensor sum(const Tensor& x);                                // -> shape {1}
Tensor mean_axes(const Tensor& x, std::vector<int> axes);   // axes removed

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor gather_axis(const Tensor& x, int axis, const std::vector<int64_t>& idx);
Tensor scatter_add_axis(const Tensor& x, int axis,
                        const std::vector<int64_t>& idx, int64_t out_extent);

// Input-dependent ZOH scan over x[b?, L, D] with per-step dt[b?, L, D],
// Bm/Cm[b?, L, N], diagonal evolution A[D, N] and optional skip Dskip[D].
Tensor selective_scan_core(const Tensor& x, const Tensor& dt, const Tensor& Bm,
                           const Tensor& Cm, const Tensor& A,
                           const Tensor& Dskip);

// x reinterpreted as [rows, c_in]; returns rows x c_out (+ optional bias).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- autodiff entry points -------------------------------------------------

void backward(const Tensor& loss);

// Central-difference check of backward() for a scalar-valued f at x. Checks
// every coordinate, or a seeded subset of max_coords when set. Returns the
// worst relative error with denominator max(|fd|, |grad|, 1e-8).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double h = 1e-5,
                         int64_t max_coords = -1, uint64_t subset_seed = 0);

// ---- init helpers ----------------------------------------------------------

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
             bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                    bool requires_grad = false);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) over [fan_in, fan_out] style shapes.
Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng,
                       bool requires_grad = true);

bool all_finite(const Tensor& x);

}  // namespace skelmamba
