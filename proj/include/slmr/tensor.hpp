#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "slmr/errors.hpp"

namespace slmr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Gradient recording is on by default and disabled for inference via
// NoGradGuard. The flag is thread-local: concurrent inference threads never
// touch a tape.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

namespace detail {

// Deterministic parallel loop: each index is owned by exactly one thread and
// processed with the same sequential arithmetic regardless of thread count,
// so results are bit-identical for any OMP_NUM_THREADS.
template <class F>
inline void par_for(std::size_t n, std::size_t flops_per_item, F&& f) {
#ifdef _OPENMP
    if (n > 1 && n * flops_per_item >= 16384) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i) f(static_cast<std::size_t>(i));
        return;
    }
#else
    (void)flops_per_item;
#endif
    for (std::size_t i = 0; i < n; ++i) f(i);
}

// c[m x n] += a[m x k] * b[k x n]
inline void mm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    par_for(m, k * n, [&](std::size_t i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = b + t * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    });
}

// c[m x k] += a[m x n] * b[k x n]^T
inline void mm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    par_for(m, k * n, [&](std::size_t i) {
        double* crow = c + i * k;
        const double* arow = a + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double* brow = b + t * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[t] += acc;
        }
    });
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void mm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    par_for(k, m * n, [&](std::size_t t) {
        double* crow = c + t * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[i * k + t];
            const double* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    });
}

} // namespace detail

// Dense n-d double tensor participating in a define-by-run gradient tape.
// A Tensor is a cheap shared handle to its node; forward values are treated
// as immutable once computed (parameter updates go through data()).
class Tensor {
  public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad; // empty means "not yet used by backward"
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward; // accumulates into parents' grads
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value.assign(shape_numel(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from({}, {v}); }

    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->value.size(); }
    std::size_t extent(std::size_t axis) const { return n_->shape.at(axis); }

    const std::vector<double>& data() const { return n_->value; }
    std::vector<double>& data() { return n_->value; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool on) { n_->requires_grad = on; }

    const std::vector<double>& grad() const {
        if (n_->grad.empty() && numel() > 0) throw ShapeError("tensor has no gradient; call zero_grad() or backward() first");
        return n_->grad;
    }

    void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

    double item() const {
        if (numel() != 1) throw ShapeError("item() requires a scalar tensor, got shape " + shape_str(shape()));
        return n_->value[0];
    }

    double at(std::size_t i) const { return n_->value.at(i); }
    double at(std::size_t i, std::size_t j) const { return n_->value.at(i * n_->shape.at(1) + j); }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return n_->value.at((i * n_->shape.at(1) + j) * n_->shape.at(2) + k);
    }

    bool all_finite() const {
        for (double v : n_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    const std::shared_ptr<Node>& node() const { return n_; }

  private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;
};

namespace detail {

inline std::vector<double>& grad_buf(Tensor::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<std::shared_ptr<Tensor::Node>> parents,
                          std::function<void(Tensor::Node&)> backward) {
    auto node = std::make_shared<Tensor::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool track = false;
    if (grad_mode())
        for (const auto& p : parents)
            if (p->requires_grad) track = true;
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Tensor::wrap(std::move(node));
}

} // namespace detail

// Ordered record of the operations reachable from a root tensor: parents
// always precede the nodes that consume them, so replaying the rules in
// reverse propagates every gradient exactly once.
class Tape {
  public:
    static Tape record_from(const Tensor& root) {
        Tape tape;
        if (!root.node() || !root.node()->requires_grad) return tape;
        struct Frame {
            std::shared_ptr<Tensor::Node> node;
            std::size_t next_parent = 0;
        };
        std::unordered_set<Tensor::Node*> emitted;
        std::unordered_set<Tensor::Node*> open;
        std::vector<Frame> stack;
        stack.push_back({root.node(), 0});
        open.insert(root.node().get());
        while (!stack.empty()) {
            Frame& fr = stack.back();
            if (fr.next_parent < fr.node->parents.size()) {
                std::shared_ptr<Tensor::Node> parent = fr.node->parents[fr.next_parent++];
                Tensor::Node* p = parent.get();
                if (p->requires_grad && !emitted.count(p) && !open.count(p)) {
                    open.insert(p);
                    stack.push_back({std::move(parent), 0}); // invalidates fr
                }
            } else {
                emitted.insert(fr.node.get());
                open.erase(fr.node.get());
                tape.order_.push_back(std::move(fr.node));
                stack.pop_back();
            }
        }
        return tape;
    }

    // Seeds d(root)/d(root) = 1 and applies each backward rule once, in
    // reverse recording order.
    void replay_backward() {
        if (order_.empty()) return;
        auto& root = *order_.back();
        detail::grad_buf(root);
        std::fill(root.grad.begin(), root.grad.end(), 1.0);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Tensor::Node& n = **it;
            if (n.backward) {
                detail::grad_buf(n);
                n.backward(n);
            }
        }
    }

    std::size_t size() const { return order_.size(); }

  private:
    std::vector<std::shared_ptr<Tensor::Node>> order_;
};

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw ShapeError("backward() requires a grad-tracked loss");
    Tape::record_from(loss).replay_backward();
}

// ---------------------------------------------------------------------------
// elementwise binary ops with leading-dimension broadcasting
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_trailing_of(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    const std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[off + i]) return false;
    return true;
}

// folds the full-size gradient g down to the broadcast (trailing) block
inline void fold_to_block(const std::vector<double>& g, std::vector<double>& out, std::size_t block) {
    const std::size_t repeats = g.size() / block;
    for (std::size_t r = 0; r < repeats; ++r) {
        const double* src = g.data() + r * block;
        for (std::size_t p = 0; p < block; ++p) out[p] += src[p];
    }
}

enum class BinKind { Add, Sub, Mul };

inline Tensor binary(BinKind kind, const Tensor& a, const Tensor& b) {
    const bool a_big = a.numel() >= b.numel();
    const Tensor& big = a_big ? a : b;
    const Tensor& small = a_big ? b : a;
    if (!is_trailing_of(small.shape(), big.shape()))
        throw ShapeError("elementwise shapes do not broadcast: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = big.numel();
    const std::size_t block = std::max<std::size_t>(small.numel(), 1);

    std::vector<double> out(n);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    const std::size_t ablock = a_big ? n : block;
    const std::size_t bblock = a_big ? block : n;
    par_for(n, 1, [&](std::size_t i) {
        const double x = av[i % ablock];
        const double y = bv[i % bblock];
        out[i] = kind == BinKind::Add ? x + y : kind == BinKind::Sub ? x - y : x * y;
    });

    auto an = a.node();
    auto bn = b.node();
    return make_result(
        big.shape(), std::move(out), {an, bn}, [kind, ablock, bblock, n](Tensor::Node& node) {
            const auto& g = node.grad;
            auto& ap = *node.parents[0];
            auto& bp = *node.parents[1];
            if (ap.requires_grad) {
                auto& da = grad_buf(ap);
                if (kind == BinKind::Mul) {
                    const double* bv = bp.value.data();
                    if (ablock == n) {
                        par_for(n, 1, [&](std::size_t i) { da[i] += g[i] * bv[i % bblock]; });
                    } else {
                        std::vector<double> tmp(n);
                        for (std::size_t i = 0; i < n; ++i) tmp[i] = g[i] * bv[i % bblock];
                        fold_to_block(tmp, da, ablock);
                    }
                } else {
                    if (ablock == n) {
                        par_for(n, 1, [&](std::size_t i) { da[i] += g[i]; });
                    } else {
                        fold_to_block(g, da, ablock);
                    }
                }
            }
            if (bp.requires_grad) {
                auto& db = grad_buf(bp);
                const double sign = kind == BinKind::Sub ? -1.0 : 1.0;
                if (kind == BinKind::Mul) {
                    const double* av = ap.value.data();
                    if (bblock == n) {
                        par_for(n, 1, [&](std::size_t i) { db[i] += g[i] * av[i % ablock]; });
                    } else {
                        std::vector<double> tmp(n);
                        for (std::size_t i = 0; i < n; ++i) tmp[i] = g[i] * av[i % ablock];
                        fold_to_block(tmp, db, bblock);
                    }
                } else {
                    if (bblock == n) {
                        par_for(n, 1, [&](std::size_t i) { db[i] += sign * g[i]; });
                    } else if (sign > 0) {
                        fold_to_block(g, db, bblock);
                    } else {
                        std::vector<double> tmp(g.size());
                        for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = -g[i];
                        fold_to_block(tmp, db, bblock);
                    }
                }
            }
        });
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinKind::Mul, a, b); }

namespace detail {

inline Tensor scalar_op(const Tensor& a, double s, bool is_mul) {
    std::vector<double> out(a.numel());
    const double* av = a.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = is_mul ? av[i] * s : av[i] + s;
    return make_result(a.shape(), std::move(out), {a.node()}, [s, is_mul](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = grad_buf(ap);
        const double factor = is_mul ? s : 1.0;
        for (std::size_t i = 0; i < node.grad.size(); ++i) da[i] += factor * node.grad[i];
    });
}

} // namespace detail

inline Tensor add(const Tensor& a, double s) { return detail::scalar_op(a, s, false); }
inline Tensor sub(const Tensor& a, double s) { return detail::scalar_op(a, -s, false); }
inline Tensor mul(const Tensor& a, double s) { return detail::scalar_op(a, s, true); }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    detail::mm(a.data().data(), b.data().data(), out.data(), m, k, n);
    return detail::make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        auto& bp = *node.parents[1];
        if (ap.requires_grad) detail::mm_a_bt(node.grad.data(), bp.value.data(), detail::grad_buf(ap).data(), m, n, k);
        if (bp.requires_grad) detail::mm_at_b(ap.value.data(), node.grad.data(), detail::grad_buf(bp).data(), m, k, n);
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor reduce(const Tensor& a, std::size_t axis, bool mean) {
    if (axis >= a.rank()) throw ShapeError("reduce axis " + std::to_string(axis) + " invalid for shape " + shape_str(a.shape()));
    const Shape& s = a.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t extent = s[axis];
    const double scale = mean ? 1.0 / static_cast<double>(extent) : 1.0;

    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);

    std::vector<double> out(outer * inner, 0.0);
    const double* av = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < extent; ++e) {
            const double* src = av + (o * extent + e) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    if (mean)
        for (double& v : out) v *= scale;

    return make_result(std::move(out_shape), std::move(out), {a.node()}, [outer, extent, inner, scale](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = grad_buf(ap);
        const auto& g = node.grad;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t e = 0; e < extent; ++e) {
                double* dst = da.data() + (o * extent + e) * inner;
                const double* src = g.data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += scale * src[i];
            }
    });
}

} // namespace detail

inline Tensor reduce_sum(const Tensor& a, std::size_t axis) { return detail::reduce(a, axis, false); }
inline Tensor reduce_mean(const Tensor& a, std::size_t axis) { return detail::reduce(a, axis, true); }

inline Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return detail::make_result({}, {acc}, {a.node()}, [](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        const double g = node.grad[0];
        for (double& v : da) v += g;
    });
}

inline Tensor mean_all(const Tensor& a) {
    const double scale = 1.0 / static_cast<double>(a.numel());
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    acc *= scale;
    return detail::make_result({}, {acc}, {a.node()}, [scale](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        const double g = node.grad[0] * scale;
        for (double& v : da) v += g;
    });
}

// ---------------------------------------------------------------------------
// unary maps
// ---------------------------------------------------------------------------

namespace detail {

// dfn receives (input value, output value) and returns d(out)/d(in)
inline Tensor unary(const Tensor& a, double (*fn)(double), double (*dfn)(double, double)) {
    std::vector<double> out(a.numel());
    const double* av = a.data().data();
    par_for(out.size(), 4, [&](std::size_t i) { out[i] = fn(av[i]); });
    return make_result(a.shape(), std::move(out), {a.node()}, [dfn](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = grad_buf(ap);
        par_for(node.grad.size(), 4, [&](std::size_t i) { da[i] += node.grad[i] * dfn(ap.value[i], node.value[i]); });
    });
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace detail

inline Tensor sqrt(const Tensor& a) {
    // subgradient 0 at exactly 0 keeps perfect-fit losses finite
    return detail::unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return detail::stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// structural ops (slicing, stacking, reshaping)
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape to " + shape_str(new_shape) + " does not preserve numel of " + shape_str(a.shape()));
    std::vector<double> out = a.data();
    return detail::make_result(std::move(new_shape), std::move(out), {a.node()}, [](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += node.grad[i];
    });
}

// x[B,C,T] -> slice at time t: [B,C]
inline Tensor time_slice(const Tensor& x, std::size_t t) {
    if (x.rank() != 3) throw ShapeError("time_slice expects [B,C,T], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), C = x.extent(1), T = x.extent(2);
    if (t >= T) throw ShapeError("time_slice index out of range");
    std::vector<double> out(B * C);
    const double* xv = x.data().data();
    for (std::size_t i = 0; i < B * C; ++i) out[i] = xv[i * T + t];
    return detail::make_result({B, C}, std::move(out), {x.node()}, [T, t](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        for (std::size_t i = 0; i < node.grad.size(); ++i) da[i * T + t] += node.grad[i];
    });
}

// x[B,T,D] -> slice at time t: [B,D]
inline Tensor step_slice(const Tensor& x, std::size_t t) {
    if (x.rank() != 3) throw ShapeError("step_slice expects [B,T,D], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), T = x.extent(1), D = x.extent(2);
    if (t >= T) throw ShapeError("step_slice index out of range");
    std::vector<double> out(B * D);
    const double* xv = x.data().data();
    for (std::size_t b = 0; b < B; ++b)
        std::copy(xv + (b * T + t) * D, xv + (b * T + t + 1) * D, out.data() + b * D);
    return detail::make_result({B, D}, std::move(out), {x.node()}, [T, D, t](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        const std::size_t B = node.grad.size() / D;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < D; ++d) da[(b * T + t) * D + d] += node.grad[b * D + d];
    });
}

// stacks T tensors of shape [B,H] into [B,T,H]
inline Tensor stack_time(const std::vector<Tensor>& steps) {
    if (steps.empty()) throw ShapeError("stack_time requires at least one step");
    const std::size_t B = steps[0].extent(0), H = steps[0].extent(1), T = steps.size();
    std::vector<double> out(B * T * H);
    std::vector<std::shared_ptr<Tensor::Node>> parents;
    parents.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        if (steps[t].shape() != steps[0].shape()) throw ShapeError("stack_time steps must share a shape");
        const double* sv = steps[t].data().data();
        for (std::size_t b = 0; b < B; ++b)
            std::copy(sv + b * H, sv + (b + 1) * H, out.data() + (b * T + t) * H);
        parents.push_back(steps[t].node());
    }
    return detail::make_result({B, T, H}, std::move(out), std::move(parents), [B, T, H](Tensor::Node& node) {
        for (std::size_t t = 0; t < T; ++t) {
            auto& p = *node.parents[t];
            if (!p.requires_grad) continue;
            auto& dp = detail::grad_buf(p);
            for (std::size_t b = 0; b < B; ++b) {
                const double* src = node.grad.data() + (b * T + t) * H;
                double* dst = dp.data() + b * H;
                for (std::size_t h = 0; h < H; ++h) dst[h] += src[h];
            }
        }
    });
}

// [A,B,C] -> [A,C,B]; used for [B,C,T] <-> [B,T,C]
inline Tensor transpose_12(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("transpose_12 expects rank 3, got " + shape_str(x.shape()));
    const std::size_t A = x.extent(0), B = x.extent(1), C = x.extent(2);
    std::vector<double> out(x.numel());
    const double* xv = x.data().data();
    detail::par_for(A, B * C, [&](std::size_t a) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) out[(a * C + c) * B + b] = xv[(a * B + b) * C + c];
    });
    return detail::make_result({A, C, B}, std::move(out), {x.node()}, [A, B, C](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) da[(a * B + b) * C + c] += node.grad[(a * C + c) * B + b];
    });
}

// strided time subsequence: keeps indices offset, offset+step, ... of the time axis
inline Tensor time_stride(const Tensor& x, std::size_t offset, std::size_t step) {
    if (x.rank() != 3) throw ShapeError("time_stride expects [B,C,T], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), C = x.extent(1), T = x.extent(2);
    if (offset >= step || step == 0) throw ShapeError("time_stride requires 0 <= offset < step");
    const std::size_t To = (T - offset + step - 1) / step;
    std::vector<double> out(B * C * To);
    const double* xv = x.data().data();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t t = 0; t < To; ++t) out[bc * To + t] = xv[bc * T + offset + t * step];
    return detail::make_result({B, C, To}, std::move(out), {x.node()}, [B, C, T, To, offset, step](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        for (std::size_t bc = 0; bc < B * C; ++bc)
            for (std::size_t t = 0; t < To; ++t) da[bc * T + offset + t * step] += node.grad[bc * To + t];
    });
}

// merges two [B,C,t] halves into [B,C,2t]: even goes to slots 0,2,..., odd to 1,3,...
inline Tensor interleave_time(const Tensor& even, const Tensor& odd) {
    if (even.shape() != odd.shape() || even.rank() != 3)
        throw ShapeError("interleave_time expects matching [B,C,t] inputs, got " + shape_str(even.shape()) + " and " +
                         shape_str(odd.shape()));
    const std::size_t B = even.extent(0), C = even.extent(1), t = even.extent(2);
    std::vector<double> out(B * C * 2 * t);
    const double* ev = even.data().data();
    const double* ov = odd.data().data();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t i = 0; i < t; ++i) {
            out[bc * 2 * t + 2 * i] = ev[bc * t + i];
            out[bc * 2 * t + 2 * i + 1] = ov[bc * t + i];
        }
    return detail::make_result({B, C, 2 * t}, std::move(out), {even.node(), odd.node()}, [B, C, t](Tensor::Node& node) {
        auto& ep = *node.parents[0];
        auto& op = *node.parents[1];
        for (std::size_t bc = 0; bc < B * C; ++bc)
            for (std::size_t i = 0; i < t; ++i) {
                if (ep.requires_grad) detail::grad_buf(ep)[bc * t + i] += node.grad[bc * 2 * t + 2 * i];
                if (op.requires_grad) detail::grad_buf(op)[bc * t + i] += node.grad[bc * 2 * t + 2 * i + 1];
            }
    });
}

// x[B,C,T] -> channels [c0, c1)
inline Tensor channel_slice(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (x.rank() != 3) throw ShapeError("channel_slice expects [B,C,T], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), C = x.extent(1), T = x.extent(2);
    if (c0 >= c1 || c1 > C) throw ShapeError("channel_slice range invalid");
    const std::size_t Co = c1 - c0;
    std::vector<double> out(B * Co * T);
    const double* xv = x.data().data();
    for (std::size_t b = 0; b < B; ++b)
        std::copy(xv + (b * C + c0) * T, xv + (b * C + c1) * T, out.data() + b * Co * T);
    return detail::make_result({B, Co, T}, std::move(out), {x.node()}, [B, C, T, c0, Co](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        for (std::size_t b = 0; b < B; ++b) {
            const double* src = node.grad.data() + b * Co * T;
            double* dst = da.data() + (b * C + c0) * T;
            for (std::size_t i = 0; i < Co * T; ++i) dst[i] += src[i];
        }
    });
}

inline Tensor channel_concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("channel_concat requires at least one part");
    const std::size_t B = parts[0].extent(0), T = parts[0].extent(2);
    std::size_t C = 0;
    std::vector<std::shared_ptr<Tensor::Node>> parents;
    for (const auto& p : parts) {
        if (p.rank() != 3 || p.extent(0) != B || p.extent(2) != T)
            throw ShapeError("channel_concat parts must agree on batch and time");
        C += p.extent(1);
        parents.push_back(p.node());
    }
    std::vector<double> out(B * C * T);
    std::size_t c_off = 0;
    for (const auto& p : parts) {
        const std::size_t Cp = p.extent(1);
        const double* pv = p.data().data();
        for (std::size_t b = 0; b < B; ++b)
            std::copy(pv + b * Cp * T, pv + (b + 1) * Cp * T, out.data() + (b * C + c_off) * T);
        c_off += Cp;
    }
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.extent(1));
    return detail::make_result({B, C, T}, std::move(out), std::move(parents), [B, C, T, widths](Tensor::Node& node) {
        std::size_t c_off = 0;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
            auto& p = *node.parents[pi];
            const std::size_t Cp = widths[pi];
            if (p.requires_grad) {
                auto& dp = detail::grad_buf(p);
                for (std::size_t b = 0; b < B; ++b) {
                    const double* src = node.grad.data() + (b * C + c_off) * T;
                    double* dst = dp.data() + b * Cp * T;
                    for (std::size_t i = 0; i < Cp * T; ++i) dst[i] += src[i];
                }
            }
            c_off += Cp;
        }
    });
}

// global average pool over time: [B,C,T] -> [B,C]
inline Tensor avgpool_time(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("avgpool_time expects [B,C,T], got " + shape_str(x.shape()));
    const std::size_t BC = x.extent(0) * x.extent(1), T = x.extent(2);
    std::vector<double> out(BC, 0.0);
    const double* xv = x.data().data();
    for (std::size_t i = 0; i < BC; ++i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) acc += xv[i * T + t];
        out[i] = acc / static_cast<double>(T);
    }
    return detail::make_result({x.extent(0), x.extent(1)}, std::move(out), {x.node()}, [BC, T](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        const double scale = 1.0 / static_cast<double>(T);
        for (std::size_t i = 0; i < BC; ++i) {
            const double g = node.grad[i] * scale;
            for (std::size_t t = 0; t < T; ++t) da[i * T + t] += g;
        }
    });
}

// per-channel rescale: y[b,c,t] = x[b,c,t] * z[b,c]
inline Tensor channel_scale(const Tensor& x, const Tensor& z) {
    if (x.rank() != 3 || z.rank() != 2 || x.extent(0) != z.extent(0) || x.extent(1) != z.extent(1))
        throw ShapeError("channel_scale expects x[B,C,T] and z[B,C], got " + shape_str(x.shape()) + " and " + shape_str(z.shape()));
    const std::size_t BC = x.extent(0) * x.extent(1), T = x.extent(2);
    std::vector<double> out(x.numel());
    const double* xv = x.data().data();
    const double* zv = z.data().data();
    detail::par_for(BC, T, [&](std::size_t i) {
        const double s = zv[i];
        for (std::size_t t = 0; t < T; ++t) out[i * T + t] = xv[i * T + t] * s;
    });
    return detail::make_result(x.shape(), std::move(out), {x.node(), z.node()}, [BC, T](Tensor::Node& node) {
        auto& xp = *node.parents[0];
        auto& zp = *node.parents[1];
        if (xp.requires_grad) {
            auto& dx = detail::grad_buf(xp);
            detail::par_for(BC, T, [&](std::size_t i) {
                const double s = zp.value[i];
                for (std::size_t t = 0; t < T; ++t) dx[i * T + t] += node.grad[i * T + t] * s;
            });
        }
        if (zp.requires_grad) {
            auto& dz = detail::grad_buf(zp);
            detail::par_for(BC, T, [&](std::size_t i) {
                double acc = 0.0;
                for (std::size_t t = 0; t < T; ++t) acc += node.grad[i * T + t] * xp.value[i * T + t];
                dz[i] += acc;
            });
        }
    });
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Max relative error between analytic gradients of f at x and central
// differences. f must be scalar-valued; x must track gradients.
template <class F>
inline double grad_check(F&& f, Tensor& x, double eps) {
    if (eps <= 0.0) throw ConfigError("grad_check eps must be positive");
    if (!x.requires_grad()) throw ShapeError("grad_check input must require gradients");

    x.zero_grad();
    Tensor y = f(x);
    if (y.numel() != 1) throw ShapeError("grad_check function must be scalar-valued");
    if (!std::isfinite(y.item())) throw NumericError("grad_check: function value is not finite");
    backward(y);
    const std::vector<double> analytic = x.grad();

    double max_rel = 0.0;
    NoGradGuard ng;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + eps;
        const double yp = f(x).item();
        x.data()[i] = orig - eps;
        const double ym = f(x).item();
        x.data()[i] = orig;
        if (!std::isfinite(yp) || !std::isfinite(ym)) throw NumericError("grad_check: perturbed function value is not finite");
        const double numeric = (yp - ym) / (2.0 * eps);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

} // namespace slmr
