#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hvae/tensor.hpp"

namespace hvae::ad {

/// One node of the dynamically-built computation graph. The backward closure
/// reads this node's gradient and accumulates into its parents' gradients;
/// closures capture only small parameters, bulk data is reached through the
/// parent pointers.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (!grad.defined()) grad = Tensor<T>(value.shape());
    }
};

template <typename T>
class Var {
public:
    Var() = default;

    static Var leaf(Tensor<T> value, bool requires_grad) {
        Var v;
        v.node_ = std::make_shared<Node<T>>();
        v.node_->value = std::move(value);
        v.node_->requires_grad = requires_grad;
        return v;
    }

    static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
    static Var constant_scalar(T x) { return leaf(Tensor<T>::scalar(x), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    long numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    Tensor<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        if (node_ && node_->grad.defined()) node_->grad.fill(T(0));
    }

    std::shared_ptr<Node<T>> node() const { return node_; }

    /// Re-leaf: same storage viewed as a graph input (used when reusing an
    /// inferred tensor in a fresh graph).
    Var detach() const { return constant(node_->value); }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    Var<T> out = Var<T>::leaf(std::move(value), needs);
    if (needs) {
        auto n = out.node();
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward);
    }
    // When no parent needs gradients the node is a plain value; dropping the
    // closure lets eval-only passes skip all graph bookkeeping.
    return out;
}

/// Reverse-mode sweep from a scalar root. Iterative topological order; the
/// graph may be deep on big models and recursion would risk the stack.
template <typename T>
void backward(const Var<T>& root) {
    require(root.numel() == 1, "backward requires a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops. Operands must share a shape, except that a
// one-element operand broadcasts against any grid (needed for the global
// likelihood log-std and for scalar weights).
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_binary(const Var<T>& a, const Var<T>& b) {
    require(a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1,
            "elementwise op shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
const Shape& binary_shape(const Var<T>& a, const Var<T>& b) {
    return a.numel() == 1 ? b.shape() : a.shape();
}

// Accumulate `g` into parent gradient, reducing when the parent is a
// broadcast scalar.
template <typename T>
void accum(Node<T>& parent, const Tensor<T>& g) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    if (parent.grad.numel() == g.numel()) {
        for (long i = 0; i < g.numel(); ++i) parent.grad[i] += g[i];
    } else {
        T s = T(0);
        for (long i = 0; i < g.numel(); ++i) s += g[i];
        parent.grad[0] += s;
    }
}

template <typename T>
inline T at(const Tensor<T>& t, long i) {
    return t.numel() == 1 ? t[0] : t[i];
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_binary(a, b);
    Tensor<T> out(detail::binary_shape(a, b));
    for (long i = 0; i < out.numel(); ++i) out[i] = detail::at(a.value(), i) + detail::at(b.value(), i);
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        detail::accum(*n.parents[0], n.grad);
        detail::accum(*n.parents[1], n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_binary(a, b);
    Tensor<T> out(detail::binary_shape(a, b));
    for (long i = 0; i < out.numel(); ++i) out[i] = detail::at(a.value(), i) - detail::at(b.value(), i);
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        detail::accum(*n.parents[0], n.grad);
        Tensor<T> gb(n.grad.shape());
        for (long i = 0; i < gb.numel(); ++i) gb[i] = -n.grad[i];
        detail::accum(*n.parents[1], gb);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_binary(a, b);
    Tensor<T> out(detail::binary_shape(a, b));
    for (long i = 0; i < out.numel(); ++i) out[i] = detail::at(a.value(), i) * detail::at(b.value(), i);
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        const Tensor<T>& av = n.parents[0]->value;
        const Tensor<T>& bv = n.parents[1]->value;
        Tensor<T> g(n.grad.shape());
        for (long i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * detail::at(bv, i);
        detail::accum(*n.parents[0], g);
        for (long i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * detail::at(av, i);
        detail::accum(*n.parents[1], g);
    });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    detail::check_binary(a, b);
    Tensor<T> out(detail::binary_shape(a, b));
    for (long i = 0; i < out.numel(); ++i) out[i] = detail::at(a.value(), i) / detail::at(b.value(), i);
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        const Tensor<T>& av = n.parents[0]->value;
        const Tensor<T>& bv = n.parents[1]->value;
        Tensor<T> g(n.grad.shape());
        for (long i = 0; i < g.numel(); ++i) g[i] = n.grad[i] / detail::at(bv, i);
        detail::accum(*n.parents[0], g);
        for (long i = 0; i < g.numel(); ++i) {
            const T bi = detail::at(bv, i);
            g[i] = -n.grad[i] * detail::at(av, i) / (bi * bi);
        }
        detail::accum(*n.parents[1], g);
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops and scalar arithmetic.
// ---------------------------------------------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Var<T> unary_op(const Var<T>& a, FwdFn fwd, BwdFn dfdx_from_xy) {
    Tensor<T> out(a.shape());
    for (long i = 0; i < out.numel(); ++i) out[i] = fwd(a.value()[i]);
    return make_op<T>(std::move(out), {a}, [dfdx_from_xy](Node<T>& n) {
        const Tensor<T>& x = n.parents[0]->value;
        Tensor<T> g(n.grad.shape());
        for (long i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * dfdx_from_xy(x[i], n.value[i]);
        detail::accum(*n.parents[0], g);
    });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    return unary_op(
        a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](T x, T) { return (x < lo || x > hi) ? T(0) : T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::scalar(a.value().sum());
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        Node<T>& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = n.grad[0];
        for (long i = 0; i < p.grad.numel(); ++i) p.grad[i] += g;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// log-sum-exp over a list of same-shaped grids, minus nothing: computes
// elementwise log Σ_k exp(a_k[i]) with max subtraction. Backward distributes
// softmax weights. Used for mixture log-densities.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> logsumexp_list(const std::vector<Var<T>>& xs) {
    require(!xs.empty(), "logsumexp over empty list");
    const Shape& shape = xs[0].shape();
    for (const auto& x : xs) require(x.shape() == shape, "logsumexp operand shape mismatch");

    const size_t K = xs.size();
    Tensor<T> out(shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) {
        T m = xs[0].value()[i];
        for (size_t k = 1; k < K; ++k) m = std::max(m, xs[k].value()[i]);
        T s = T(0);
        for (size_t k = 0; k < K; ++k) s += std::exp(xs[k].value()[i] - m);
        out[i] = m + std::log(s);
    }
    return make_op<T>(std::move(out), xs, [K](Node<T>& n) {
        const long cnt = n.grad.numel();
        for (size_t k = 0; k < K; ++k) {
            Node<T>& p = *n.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (long i = 0; i < cnt; ++i) {
                p.grad[i] += n.grad[i] * std::exp(p.value[i] - n.value[i]);
            }
        }
    });
}

// Convenience operator sugar for graph code readability.
template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }

}  // namespace hvae::ad
