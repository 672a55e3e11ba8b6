#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dreamtext/rng.hpp"

// Dense 64-bit float tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a shared handle onto flat row-major storage. Gradients are
// recorded on an explicit Tape: while a Tape is alive it is the active tape
// for this thread, every op touching a grad-requiring tensor appends a
// backward closure, and backward() replays the closures in reverse order
// (append order is a topological order of the DAG, so the reverse visit is
// reverse-topological). One training step owns one tape; tensors that do not
// participate in gradients are immutable after construction and safe to share
// read-only across threads.

namespace dreamtext {

using Shape = std::vector<int>;

namespace detail {

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

inline long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive extent " + shape_str(s));
        n *= d;
    }
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;      // empty until a gradient is accumulated
    bool requires_grad = false;
    std::uint64_t tape_id = 0;     // nonzero when produced under a live tape
};

inline void ensure_grad(TensorNode& n) {
    if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
}

}  // namespace detail

class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    static Tensor zeros(const Shape& shape) {
        Tensor t;
        t.node_->shape = shape;
        t.node_->data.assign(static_cast<std::size_t>(detail::shape_numel(shape)), 0.0);
        return t;
    }

    static Tensor full(const Shape& shape, double v) {
        Tensor t = zeros(shape);
        std::fill(t.node_->data.begin(), t.node_->data.end(), v);
        return t;
    }

    static Tensor from(const Shape& shape, std::vector<double> values) {
        if (static_cast<long long>(values.size()) != detail::shape_numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + detail::shape_str(shape));
        Tensor t;
        t.node_->shape = shape;
        t.node_->data = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(shape);
        for (double& x : t.node_->data) x = stddev * rng.normal();
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int numel() const { return static_cast<int>(node_->data.size()); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    double value() const {
        if (numel() != 1)
            throw std::invalid_argument("value() needs a scalar tensor, got shape " +
                                        detail::shape_str(node_->shape));
        return node_->data[0];
    }

    double operator()(int i) const { return node_->data[static_cast<std::size_t>(i)]; }
    double& operator()(int i) { return node_->data[static_cast<std::size_t>(i)]; }
    double operator()(int i, int j) const { return node_->data[idx2(i, j)]; }
    double& operator()(int i, int j) { return node_->data[idx2(i, j)]; }
    double operator()(int i, int j, int k) const { return node_->data[idx3(i, j, k)]; }
    double& operator()(int i, int j, int k) { return node_->data[idx3(i, j, k)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        if (on) detail::ensure_grad(*node_);
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty())
            throw std::logic_error("tensor has no gradient (backward not run or not on a grad path)");
        return node_->grad;
    }
    void zero_grad() {
        if (node_->requires_grad)
            node_->grad.assign(node_->data.size(), 0.0);
        else
            node_->grad.clear();
    }

    // Constant copy, detached from any tape and gradient bookkeeping.
    Tensor detach() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(node_->shape[1]) +
               static_cast<std::size_t>(j);
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(node_->shape[1]) +
                static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(node_->shape[2]) +
               static_cast<std::size_t>(k);
    }

    std::shared_ptr<detail::TensorNode> node_;
};

class Tape {
public:
    Tape() : id_(next_id()++), prev_(active_ptr()) { active_ptr() = this; }
    ~Tape() {
        if (active_ptr() == this) active_ptr() = prev_;
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_ptr(); }
    std::uint64_t id() const { return id_; }
    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }
    bool cleared() const { return cleared_; }

    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    // Releases every recorded node; backward afterwards is an error.
    void clear() {
        records_.clear();
        cleared_ = true;
    }

    void replay_backward() {
        if (cleared_) throw std::logic_error("backward on a cleared tape");
        if (consumed_) throw std::logic_error("backward already ran on this tape; re-record first");
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        consumed_ = true;
    }

private:
    static Tape*& active_ptr() {
        thread_local Tape* active = nullptr;
        return active;
    }
    static std::uint64_t& next_id() {
        static std::uint64_t id = 1;
        return id;
    }

    std::uint64_t id_;
    Tape* prev_;
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
    bool cleared_ = false;
};

namespace detail {

// True when this tensor feeds gradients: either a leaf parameter or an
// intermediate produced under the currently active tape.
inline bool participates(const Tensor& t) {
    if (t.requires_grad()) return true;
    Tape* tape = Tape::active();
    return tape && t.node()->tape_id == tape->id();
}

inline bool any_participates(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (participates(*t)) return true;
    return false;
}

// Marks `out` as produced by the active tape and appends its backward closure.
inline void mark_and_record(Tensor& out, std::function<void()> fn) {
    Tape* tape = Tape::active();
    if (!tape) return;
    out.node()->tape_id = tape->id();
    tape->record(std::move(fn));
}

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

inline void backward(const Tensor& loss, Tape& tape) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    detail::shape_str(loss.shape()));
    if (loss.node()->tape_id != tape.id())
        throw std::logic_error("backward: loss was not recorded on this tape");
    detail::ensure_grad(*loss.node());
    loss.node()->grad[0] = 1.0;
    tape.replay_backward();
}

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

inline void check_matrix(const char* op, const Tensor& a) {
    if (a.rank() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                    shape_str(a.shape()));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_matrix("matmul", a);
    detail::check_matrix("matmul", b);
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                    detail::shape_str(a.shape()) + " vs " +
                                    detail::shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* po = out.data().data();
        for (int i = 0; i < m; ++i) {
            const double* arow = pa + static_cast<std::size_t>(i) * k;
            double* orow = po + static_cast<std::size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = pb + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    if (detail::any_participates({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        const bool ga = detail::participates(a), gb = detail::participates(b);
        detail::mark_and_record(out, [an, bn, on, ga, gb, m, k, n] {
            if (on->grad.empty()) return;
            const double* g = on->grad.data();
            if (ga) {
                detail::ensure_grad(*an);  // dA = G * B^T, with B transposed for locality
                std::vector<double> bt(static_cast<std::size_t>(n) * k);
                for (int kk = 0; kk < k; ++kk)
                    for (int j = 0; j < n; ++j)
                        bt[static_cast<std::size_t>(j) * k + kk] =
                            bn->data[static_cast<std::size_t>(kk) * n + j];
                double* da = an->grad.data();
                for (int i = 0; i < m; ++i) {
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    double* darow = da + static_cast<std::size_t>(i) * k;
                    for (int j = 0; j < n; ++j) {
                        const double gv = grow[j];
                        if (gv == 0.0) continue;
                        const double* btrow = bt.data() + static_cast<std::size_t>(j) * k;
                        for (int kk = 0; kk < k; ++kk) darow[kk] += gv * btrow[kk];
                    }
                }
            }
            if (gb) {
                detail::ensure_grad(*bn);  // dB = A^T * G
                double* db = bn->grad.data();
                const double* pa = an->data.data();
                for (int i = 0; i < m; ++i) {
                    const double* arow = pa + static_cast<std::size_t>(i) * k;
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = arow[kk];
                        if (av == 0.0) continue;
                        double* dbrow = db + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& x) {
    detail::check_matrix("transpose", x);
    const int r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out(j, i) = x(i, j);
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on, r, c] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    xn->grad[static_cast<std::size_t>(i) * c + j] +=
                        on->grad[static_cast<std::size_t>(j) * r + i];
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& x, const Shape& shape) {
    if (detail::shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch: " +
                                    detail::shape_str(x.shape()) + " vs " +
                                    detail::shape_str(shape));
    Tensor out = Tensor::from(shape, x.data());
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::check_matrix("concat_cols", a);
    detail::check_matrix("concat_cols", b);
    if (a.dim(0) != b.dim(0))
        throw std::invalid_argument("concat_cols: row counts disagree: " +
                                    detail::shape_str(a.shape()) + " vs " +
                                    detail::shape_str(b.shape()));
    const int r = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor out = Tensor::zeros({r, ca + cb});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) out(i, j) = a(i, j);
        for (int j = 0; j < cb; ++j) out(i, ca + j) = b(i, j);
    }
    if (detail::any_participates({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        const bool ga = detail::participates(a), gb = detail::participates(b);
        detail::mark_and_record(out, [an, bn, on, ga, gb, r, ca, cb] {
            if (on->grad.empty()) return;
            const int c = ca + cb;
            if (ga) {
                detail::ensure_grad(*an);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < ca; ++j)
                        an->grad[static_cast<std::size_t>(i) * ca + j] +=
                            on->grad[static_cast<std::size_t>(i) * c + j];
            }
            if (gb) {
                detail::ensure_grad(*bn);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < cb; ++j)
                        bn->grad[static_cast<std::size_t>(i) * cb + j] +=
                            on->grad[static_cast<std::size_t>(i) * c + ca + j];
            }
        });
    }
    return out;
}

namespace detail {

// Shared body for same-shape binary elementwise ops.
template <class Fwd, class Bwd>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    check_same_shape(name, a, b);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.data().size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
    if (any_participates({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        const bool ga = participates(a), gb = participates(b);
        mark_and_record(out, [an, bn, on, ga, gb, bwd, n] {
            if (on->grad.empty()) return;
            if (ga) ensure_grad(*an);
            if (gb) ensure_grad(*bn);
            for (std::size_t i = 0; i < n; ++i) {
                const double g = on->grad[i];
                if (g == 0.0) continue;
                double da = 0.0, db = 0.0;
                bwd(an->data[i], bn->data[i], on->data[i], g, da, db);
                if (ga) an->grad[i] += da;
                if (gb) bn->grad[i] += db;
            }
        });
    }
    return out;
}

// Shared body for unary elementwise ops; backward sees (x, y, g).
template <class Fwd, class Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd bwd) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.data().size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(x.data()[i]);
    if (participates(x)) {
        auto xn = x.node(), on = out.node();
        mark_and_record(out, [xn, on, bwd, n] {
            if (on->grad.empty()) return;
            ensure_grad(*xn);
            for (std::size_t i = 0; i < n; ++i) {
                const double g = on->grad[i];
                if (g != 0.0) xn->grad[i] += g * bwd(xn->data[i], on->data[i]);
            }
        });
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

// a*x + b, scalars applied elementwise.
inline Tensor scale_add(const Tensor& x, double a, double b) {
    return detail::unary_elementwise(
        x, [a, b](double v) { return a * v + b; }, [a](double, double) { return a; });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary_elementwise(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary_elementwise(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
    return detail::unary_elementwise(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

// Gradient passes only strictly inside the clamp interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    return detail::unary_elementwise(
        x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// x[r x c] + bias[c], bias broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    detail::check_matrix("add_row_bias", x);
    if (bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw std::invalid_argument("add_row_bias: bias shape " + detail::shape_str(bias.shape()) +
                                    " does not match matrix " + detail::shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out(i, j) = x(i, j) + bias(j);
    if (detail::any_participates({&x, &bias})) {
        auto xn = x.node(), bn = bias.node(), on = out.node();
        const bool gx = detail::participates(x), gb = detail::participates(bias);
        detail::mark_and_record(out, [xn, bn, on, gx, gb, r, c] {
            if (on->grad.empty()) return;
            if (gx) {
                detail::ensure_grad(*xn);
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            }
            if (gb) {
                detail::ensure_grad(*bn);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        bn->grad[static_cast<std::size_t>(j)] +=
                            on->grad[static_cast<std::size_t>(i) * c + j];
            }
        });
    }
    return out;
}

// Row-wise softmax, stabilized by per-row max subtraction. Each output row
// sums to 1 within 1e-12 and every entry lies in [0, 1].
inline Tensor softmax_rows(const Tensor& x) {
    detail::check_matrix("softmax_rows", x);
    const int r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, x(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) out(i, j) /= sum;
    }
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on, r, c] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            for (int i = 0; i < r; ++i) {
                const double* p = on->data.data() + static_cast<std::size_t>(i) * c;
                const double* g = on->grad.data() + static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += p[j] * g[j];
                double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) dx[j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            const double g = on->grad[0];
            for (double& d : xn->grad) d += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) {
    const int n = x.numel();
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s / n);
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on, n] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            const double g = on->grad[0] / n;
            for (double& d : xn->grad) d += g;
        });
    }
    return out;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("dot", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
    Tensor out = Tensor::scalar(s);
    if (detail::any_participates({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        const bool ga = detail::participates(a), gb = detail::participates(b);
        detail::mark_and_record(out, [an, bn, on, ga, gb] {
            if (on->grad.empty()) return;
            const double g = on->grad[0];
            if (g == 0.0) return;
            if (ga) {
                detail::ensure_grad(*an);
                for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += g * bn->data[i];
            }
            if (gb) {
                detail::ensure_grad(*bn);
                for (std::size_t i = 0; i < bn->data.size(); ++i) bn->grad[i] += g * an->data[i];
            }
        });
    }
    return out;
}

// Row gather: out row i = table row indices[i]. Duplicate indices accumulate
// gradient into the same table row.
inline Tensor embed_rows(const Tensor& table, const std::vector<int>& indices) {
    detail::check_matrix("embed_rows", table);
    const int rows = table.dim(0), cols = table.dim(1);
    for (int idx : indices)
        if (idx < 0 || idx >= rows)
            throw std::out_of_range("embed_rows: index " + std::to_string(idx) +
                                    " outside table with " + std::to_string(rows) + " rows");
    const int n = static_cast<int>(indices.size());
    Tensor out = Tensor::zeros({n, cols});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cols; ++j) out(i, j) = table(indices[i], j);
    if (detail::participates(table)) {
        auto tn = table.node(), on = out.node();
        detail::mark_and_record(out, [tn, on, indices, cols, n] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*tn);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cols; ++j)
                    tn->grad[static_cast<std::size_t>(indices[i]) * cols + j] +=
                        on->grad[static_cast<std::size_t>(i) * cols + j];
        });
    }
    return out;
}

// Flat-index gather: out[k] = x.data[indices[k]]. Gradient scatter-adds, so
// duplicate indices accumulate.
inline Tensor gather_elements(const Tensor& x, const std::vector<int>& indices) {
    for (int idx : indices)
        if (idx < 0 || idx >= x.numel())
            throw std::out_of_range("gather_elements: index " + std::to_string(idx) +
                                    " outside tensor with " + std::to_string(x.numel()) +
                                    " elements");
    const int n = static_cast<int>(indices.size());
    Tensor out = Tensor::zeros({std::max(n, 1)});
    for (int k = 0; k < n; ++k)
        out.data()[static_cast<std::size_t>(k)] = x.data()[static_cast<std::size_t>(indices[k])];
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on, indices, n] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            for (int k = 0; k < n; ++k)
                xn->grad[static_cast<std::size_t>(indices[k])] +=
                    on->grad[static_cast<std::size_t>(k)];
        });
    }
    return out;
}

namespace detail {

// 3x3 binomial correlation over an H x W grid stored pixel-major in a
// [H*W x channels] matrix; zero padding outside the grid. The kernel is
// symmetric, so forward and backward use the same stencil.
inline void apply_smooth3x3(const double* in, double* out, int h, int w, int ch) {
    static const double k[3][3] = {{1.0 / 16, 2.0 / 16, 1.0 / 16},
                                   {2.0 / 16, 4.0 / 16, 2.0 / 16},
                                   {1.0 / 16, 2.0 / 16, 1.0 / 16}};
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double* orow = out + (static_cast<std::size_t>(i) * w + j) * ch;
            for (int di = -1; di <= 1; ++di) {
                const int ii = i + di;
                if (ii < 0 || ii >= h) continue;
                for (int dj = -1; dj <= 1; ++dj) {
                    const int jj = j + dj;
                    if (jj < 0 || jj >= w) continue;
                    const double kv = k[di + 1][dj + 1];
                    const double* irow = in + (static_cast<std::size_t>(ii) * w + jj) * ch;
                    for (int c = 0; c < ch; ++c) orow[c] += kv * irow[c];
                }
            }
        }
}

}  // namespace detail

inline Tensor smooth3x3(const Tensor& x, int h, int w) {
    detail::check_matrix("smooth3x3", x);
    if (x.dim(0) != h * w)
        throw std::invalid_argument("smooth3x3: rows " + std::to_string(x.dim(0)) +
                                    " do not cover a " + std::to_string(h) + "x" +
                                    std::to_string(w) + " grid");
    const int ch = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    detail::apply_smooth3x3(x.data().data(), out.data().data(), h, w, ch);
    if (detail::participates(x)) {
        auto xn = x.node(), on = out.node();
        detail::mark_and_record(out, [xn, on, h, w, ch] {
            if (on->grad.empty()) return;
            detail::ensure_grad(*xn);
            std::vector<double> dx(xn->data.size(), 0.0);
            detail::apply_smooth3x3(on->grad.data(), dx.data(), h, w, ch);
            for (std::size_t i = 0; i < dx.size(); ++i) xn->grad[i] += dx[i];
        });
    }
    return out;
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace dreamtext
