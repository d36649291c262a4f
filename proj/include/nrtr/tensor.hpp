#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "nrtr/parallel.hpp"

namespace nrtr {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error("shape error: " + what) {}
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

inline void check_shape_valid(const Shape& s) {
    for (int d : s)
        if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(s));
}

/// Row-major strides (last dimension fastest).
inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename T>
struct TensorNode {
    using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

    Shape shape;
    Array values;
    Array grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::int64_t numel() const { return shape_numel(shape); }
    void accumulate(const Array& g) {
        if (!requires_grad) return;
        if (grad.size() == 0) grad = Array::Zero(values.size());
        grad += g;
    }
    void ensure_grad() {
        if (grad.size() == 0) grad = Array::Zero(values.size());
    }
};

/// Handle to one node of the autodiff graph. Value semantics on the handle,
/// shared ownership of the node.
template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;
    using Array = typename Node::Array;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        return filled(s, T(0), requires_grad);
    }
    static Tensor filled(const Shape& s, T value, bool requires_grad = false) {
        check_shape_valid(s);
        auto n = std::make_shared<Node>();
        n->shape = s;
        n->values = Array::Constant(shape_numel(s), value);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor from_data(const Shape& s, const std::vector<T>& data,
                            bool requires_grad = false) {
        check_shape_valid(s);
        if (static_cast<std::int64_t>(data.size()) != shape_numel(s))
            throw ShapeError("data length " + std::to_string(data.size()) + " does not fill " +
                             shape_str(s));
        auto n = std::make_shared<Node>();
        n->shape = s;
        n->values = Eigen::Map<const Array>(data.data(), static_cast<Eigen::Index>(data.size()));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor scalar_tensor(T value, bool requires_grad = false) {
        return filled({1}, value, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    Array& values() { return node_->values; }
    const Array& values() const { return node_->values; }
    Array& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return node_->grad.size() != 0; }
    void zero_grad() { node_->grad = Array(); }

    T value_at(std::int64_t i) const { return node_->values[i]; }
    T scalar() const {
        if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
        return node_->values[0];
    }
    std::vector<T> to_vector() const {
        return std::vector<T>(node_->values.data(), node_->values.data() + node_->values.size());
    }

    std::shared_ptr<Node> node() const { return node_; }
    Node* raw() const { return node_.get(); }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(Shape out_shape, typename TensorNode<T>::Array out_values,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(out_shape);
    n->values = std::move(out_values);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

/// a and b broadcast-compatible if equal shapes, or b's shape is a trailing
/// suffix of a's (b is then repeated over a's leading dimensions).
inline bool is_suffix(const Shape& suffix, const Shape& full) {
    if (suffix.size() > full.size()) return false;
    return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

template <typename T>
void check_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!is_suffix(b.shape(), a.shape()))
        throw ShapeError(std::string(op) + ": " + shape_str(b.shape()) +
                         " is not equal to, or a trailing suffix of, " + shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary operations (with trailing-suffix broadcast of b)
// ---------------------------------------------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* name, FwdFn fwd,
                             BwdFn bwd) {
    detail::check_binary(a, b, name);
    const std::int64_t nb = b.numel();
    const std::int64_t na = a.numel();
    typename Tensor<T>::Array out(na);
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    for (std::int64_t i = 0; i < na; ++i) out[i] = fwd(pa[i], pb[i % nb]);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b}, [an, bn, na, nb, bwd](TensorNode<T>& self) {
            const T* pa = an->values.data();
            const T* pb = bn->values.data();
            const T* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                T* da = an->grad.data();
                for (std::int64_t i = 0; i < na; ++i) {
                    T ga, gb;
                    bwd(pa[i], pb[i % nb], g[i], ga, gb);
                    da[i] += ga;
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                T* db = bn->grad.data();
                for (std::int64_t i = 0; i < na; ++i) {
                    T ga, gb;
                    bwd(pa[i], pb[i % nb], g[i], ga, gb);
                    db[i % nb] += gb;
                }
            }
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T g, T& ga, T& gb) {
            ga = g;
            gb = g;
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T g, T& ga, T& gb) {
            ga = g;
            gb = -g;
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& ga, T& gb) {
            ga = g * y;
            gb = g * x;
        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y, T g, T& ga, T& gb) {
            ga = g / y;
            gb = -g * x / (y * y);
        });
}

/// Elementwise minimum; ties propagate the gradient to the first operand.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "minimum", [](T x, T y) { return x < y ? x : y; },
        [](T x, T y, T g, T& ga, T& gb) {
            ga = x <= y ? g : T(0);
            gb = x <= y ? T(0) : g;
        });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "maximum", [](T x, T y) { return x > y ? x : y; },
        [](T x, T y, T g, T& ga, T& gb) {
            ga = x >= y ? g : T(0);
            gb = x >= y ? T(0) : g;
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary operations
// ---------------------------------------------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_elementwise(const Tensor<T>& x, FwdFn fwd, BwdFn bwd) {
    const std::int64_t n = x.numel();
    typename Tensor<T>::Array out(n);
    const T* px = x.values().data();
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
    auto xn = x.node();
    return detail::make_op<T>(x.shape(), std::move(out), {x},
                              [xn, n, bwd](TensorNode<T>& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  const T* px = xn->values.data();
                                  const T* py = self.values.data();
                                  const T* g = self.grad.data();
                                  T* dx = xn->grad.data();
                                  for (std::int64_t i = 0; i < n; ++i)
                                      dx[i] += bwd(px[i], py[i], g[i]);
                              });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return -v; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return v < T(0) ? -v : v; },
        [](T v, T, T g) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return std::log(v); }, [](T v, T, T g) { return g / v; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return std::exp(v); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return std::sqrt(v); }, [](T, T y, T g) { return g / (T(2) * y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T, T g) { return v > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_elementwise(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y, T g) { return g * y * (T(1) - y); });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    return unary_elementwise(
        x,
        [](T v) {
            return static_cast<T>(0.5 * double(v) * (1.0 + std::erf(double(v) * kInvSqrt2)));
        },
        [](T v, T, T g) {
            const double phi = 0.5 * (1.0 + std::erf(double(v) * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * double(v) * double(v));
            return static_cast<T>(double(g) * (phi + double(v) * pdf));
        });
}

/// Pass-through inside (lo, hi), zero gradient outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return unary_elementwise(
        x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](T v, T, T g) { return (v > lo && v < hi) ? g : T(0); });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
    return unary_elementwise(
        x, [s](T v) { return v * s; }, [s](T, T, T g) { return g * s; });
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T s) {
    return unary_elementwise(
        x, [s](T v) { return v + s; }, [](T, T, T g) { return g; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    typename Tensor<T>::Array out(1);
    out[0] = x.values().sum();
    auto xn = x.node();
    return detail::make_op<T>({1}, std::move(out), {x}, [xn](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    typename Tensor<T>::Array out(1);
    out[0] = x.values().sum() / static_cast<T>(n);
    auto xn = x.node();
    return detail::make_op<T>({1}, std::move(out), {x}, [xn, n](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad += self.grad[0] / static_cast<T>(n);
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    std::int64_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < new_shape.size(); ++i) {
        if (new_shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one -1");
            infer = static_cast<int>(i);
        } else {
            known *= new_shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.numel() % known != 0)
            throw ShapeError("reshape: cannot infer dimension");
        new_shape[infer] = static_cast<int>(x.numel() / known);
    }
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    auto xn = x.node();
    return detail::make_op<T>(new_shape, x.values(), {x}, [xn](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad += self.grad;
    });
}

namespace detail {

template <typename T>
void permute_copy(const T* src, const Shape& src_shape, const std::vector<int>& perm, T* dst) {
    const auto src_strides = row_major_strides(src_shape);
    Shape dst_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) dst_shape[i] = src_shape[perm[i]];
    const std::int64_t n = shape_numel(src_shape);
    const int rank = static_cast<int>(perm.size());
    std::vector<std::int64_t> gather_strides(rank);  // dst axis -> src stride
    for (int i = 0; i < rank; ++i) gather_strides[i] = src_strides[perm[i]];
    std::vector<std::int64_t> counter(rank, 0);
    std::int64_t src_idx = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[src_idx];
        // mixed-radix counter over destination coordinates
        for (int a = rank - 1; a >= 0; --a) {
            ++counter[a];
            src_idx += gather_strides[a];
            if (counter[a] < dst_shape[a]) break;
            src_idx -= gather_strides[a] * dst_shape[a];
            counter[a] = 0;
        }
    }
}

}  // namespace detail

/// General axis permutation (materialized copy).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& perm) {
    const int rank = static_cast<int>(x.shape().size());
    if (static_cast<int>(perm.size()) != rank)
        throw ShapeError("transpose: permutation rank mismatch for " + shape_str(x.shape()));
    std::vector<char> seen(rank, 0);
    for (int p : perm) {
        if (p < 0 || p >= rank || seen[p]) throw ShapeError("transpose: invalid permutation");
        seen[p] = 1;
    }
    Shape out_shape(rank);
    for (int i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
    typename Tensor<T>::Array out(x.numel());
    detail::permute_copy(x.values().data(), x.shape(), perm, out.data());

    std::vector<int> inv(rank);
    for (int i = 0; i < rank; ++i) inv[perm[i]] = i;
    auto xn = x.node();
    return detail::make_op<T>(out_shape, std::move(out), {x},
                              [xn, inv, out_shape](TensorNode<T>& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  typename Tensor<T>::Array tmp(self.grad.size());
                                  detail::permute_copy(self.grad.data(), out_shape, inv,
                                                       tmp.data());
                                  xn->grad += tmp;
                              });
}

/// Standard 2-D matrix transpose.
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.shape().size() != 2) throw ShapeError("transpose2d needs rank 2");
    return transpose(x, {1, 0});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    const int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (static_cast<int>(p.shape().size()) != rank)
            throw ShapeError("concat: rank mismatch");
        for (int a = 0; a < rank; ++a)
            if (a != axis && p.shape()[a] != s0[a])
                throw ShapeError("concat: " + shape_str(p.shape()) + " vs " + shape_str(s0));
        out_shape[axis] += p.shape()[axis];
    }
    std::int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s0[a];
    for (int a = axis + 1; a < rank; ++a) inner *= s0[a];

    typename Tensor<T>::Array out(shape_numel(out_shape));
    const std::int64_t out_axis = out_shape[axis];
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t pa = p.shape()[axis];
        const T* src = p.values().data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t k = 0; k < pa; ++k)
                for (std::int64_t i = 0; i < inner; ++i)
                    out[(o * out_axis + offset + k) * inner + i] = src[(o * pa + k) * inner + i];
        offset += pa;
    }

    std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
    std::vector<std::int64_t> sizes;
    for (const auto& p : parts) {
        pnodes.push_back(p.node());
        sizes.push_back(p.shape()[axis]);
    }
    return detail::make_op<T>(
        out_shape, std::move(out), parts,
        [pnodes, sizes, outer, inner, out_axis](TensorNode<T>& self) {
            const T* g = self.grad.data();
            std::int64_t offset = 0;
            for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
                auto& pn = pnodes[pi];
                const std::int64_t pa = sizes[pi];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    T* dst = pn->grad.data();
                    for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t k = 0; k < pa; ++k)
                            for (std::int64_t i = 0; i < inner; ++i)
                                dst[(o * pa + k) * inner + i] +=
                                    g[(o * out_axis + offset + k) * inner + i];
                }
                offset += pa;
            }
        });
}

/// Rectangular sub-block: element (i0..) with starts <= i < starts + sizes.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, const std::vector<int>& starts,
                const std::vector<int>& sizes) {
    const int rank = static_cast<int>(x.shape().size());
    if (static_cast<int>(starts.size()) != rank || static_cast<int>(sizes.size()) != rank)
        throw ShapeError("slice: starts/sizes rank mismatch");
    for (int a = 0; a < rank; ++a)
        if (starts[a] < 0 || sizes[a] <= 0 || starts[a] + sizes[a] > x.shape()[a])
            throw ShapeError("slice: window leaves " + shape_str(x.shape()));
    Shape out_shape(sizes.begin(), sizes.end());
    const auto in_strides = row_major_strides(x.shape());
    const std::int64_t n = shape_numel(out_shape);
    typename Tensor<T>::Array out(n);
    const T* src = x.values().data();
    std::vector<std::int64_t> counter(rank, 0);
    std::int64_t base = 0;
    for (int a = 0; a < rank; ++a) base += in_strides[a] * starts[a];
    std::int64_t src_idx = base;
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = src[src_idx];
        for (int a = rank - 1; a >= 0; --a) {
            ++counter[a];
            src_idx += in_strides[a];
            if (counter[a] < sizes[a]) break;
            src_idx -= in_strides[a] * sizes[a];
            counter[a] = 0;
        }
    }
    auto xn = x.node();
    return detail::make_op<T>(
        out_shape, std::move(out), {x},
        [xn, in_strides, starts, sizes, rank, n, base](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            T* dst = xn->grad.data();
            const T* g = self.grad.data();
            std::vector<std::int64_t> counter(rank, 0);
            std::int64_t dst_idx = base;
            for (std::int64_t i = 0; i < n; ++i) {
                dst[dst_idx] += g[i];
                for (int a = rank - 1; a >= 0; --a) {
                    ++counter[a];
                    dst_idx += in_strides[a];
                    if (counter[a] < sizes[a]) break;
                    dst_idx -= in_strides[a] * sizes[a];
                    counter[a] = 0;
                }
            }
        });
}

/// Gathers rows of a rank-2 table; backward scatter-adds.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& indices) {
    if (table.shape().size() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
    const int rows = table.shape()[0];
    const int cols = table.shape()[1];
    for (int idx : indices)
        if (idx < 0 || idx >= rows)
            throw ShapeError("embedding_lookup: index " + std::to_string(idx) + " out of " +
                             std::to_string(rows) + " rows");
    const int n = static_cast<int>(indices.size());
    if (n == 0) throw ShapeError("embedding_lookup: empty index list");
    typename Tensor<T>::Array out(static_cast<std::int64_t>(n) * cols);
    const T* src = table.values().data();
    for (int k = 0; k < n; ++k)
        for (int c = 0; c < cols; ++c)
            out[static_cast<std::int64_t>(k) * cols + c] =
                src[static_cast<std::int64_t>(indices[k]) * cols + c];
    auto tn = table.node();
    return detail::make_op<T>({n, cols}, std::move(out), {table},
                              [tn, indices, cols, n](TensorNode<T>& self) {
                                  if (!tn->requires_grad) return;
                                  tn->ensure_grad();
                                  T* dst = tn->grad.data();
                                  const T* g = self.grad.data();
                                  for (int k = 0; k < n; ++k)
                                      for (int c = 0; c < cols; ++c)
                                          dst[static_cast<std::int64_t>(indices[k]) * cols + c] +=
                                              g[static_cast<std::int64_t>(k) * cols + c];
                              });
}

// ---------------------------------------------------------------------------
// Matrix multiply and attention (Eigen GEMM kernels)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: need rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    typename Tensor<T>::Array out(static_cast<std::int64_t>(m) * n);
    detail::ConstMatMap<T> A(a.values().data(), m, k), B(b.values().data(), k, n);
    detail::MatMap<T>(out.data(), m, n).noalias() = A * B;
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>({m, n}, std::move(out), {a, b},
                              [an, bn, m, k, n](TensorNode<T>& self) {
                                  detail::ConstMatMap<T> G(self.grad.data(), m, n);
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      detail::ConstMatMap<T> B(bn->values.data(), k, n);
                                      detail::MatMap<T>(an->grad.data(), m, k).noalias() +=
                                          G * B.transpose();
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      detail::ConstMatMap<T> A(an->values.data(), m, k);
                                      detail::MatMap<T>(bn->grad.data(), k, n).noalias() +=
                                          A.transpose() * G;
                                  }
                              });
}

/// softmax(Q Kᵀ / sqrt(d)) V over rank-3 [heads, rows, dim] operands.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v) {
    for (const auto* t : {&q, &k, &v})
        if (t->shape().size() != 3)
            throw ShapeError("attention: operands must be rank 3 [heads, rows, dim]");
    const int H = q.shape()[0], nq = q.shape()[1], d = q.shape()[2];
    const int nk = k.shape()[1];
    if (k.shape()[0] != H || v.shape()[0] != H || k.shape()[2] != d || v.shape()[1] != nk ||
        v.shape()[2] != d)
        throw ShapeError("attention: incompatible shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    typename Tensor<T>::Array out(static_cast<std::int64_t>(H) * nq * d);
    auto attn = std::make_shared<typename Tensor<T>::Array>(
        static_cast<std::int64_t>(H) * nq * nk);  // saved softmax weights
    for (int h = 0; h < H; ++h) {
        detail::ConstMatMap<T> Q(q.values().data() + static_cast<std::int64_t>(h) * nq * d, nq, d);
        detail::ConstMatMap<T> K(k.values().data() + static_cast<std::int64_t>(h) * nk * d, nk, d);
        detail::ConstMatMap<T> V(v.values().data() + static_cast<std::int64_t>(h) * nk * d, nk, d);
        detail::MatMap<T> A(attn->data() + static_cast<std::int64_t>(h) * nq * nk, nq, nk);
        A.noalias() = Q * K.transpose();
        for (int i = 0; i < nq; ++i) {
            T mx = A(i, 0) * scale;
            for (int j = 1; j < nk; ++j) mx = std::max(mx, A(i, j) * scale);
            T sum = T(0);
            for (int j = 0; j < nk; ++j) {
                const T e = std::exp(A(i, j) * scale - mx);
                A(i, j) = e;
                sum += e;
            }
            for (int j = 0; j < nk; ++j) A(i, j) /= sum;
        }
        detail::MatMap<T>(out.data() + static_cast<std::int64_t>(h) * nq * d, nq, d).noalias() =
            A * V;
    }

    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();
    return detail::make_op<T>(
        {H, nq, d}, std::move(out), {q, k, v},
        [qn, kn, vn, attn, H, nq, nk, d, scale](TensorNode<T>& self) {
            if (qn->requires_grad) qn->ensure_grad();
            if (kn->requires_grad) kn->ensure_grad();
            if (vn->requires_grad) vn->ensure_grad();
            Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dA(nq, nk), dS(nq, nk);
            for (int h = 0; h < H; ++h) {
                detail::ConstMatMap<T> A(attn->data() + static_cast<std::int64_t>(h) * nq * nk, nq,
                                         nk);
                detail::ConstMatMap<T> G(self.grad.data() + static_cast<std::int64_t>(h) * nq * d,
                                         nq, d);
                detail::ConstMatMap<T> Q(qn->values.data() + static_cast<std::int64_t>(h) * nq * d,
                                         nq, d);
                detail::ConstMatMap<T> K(kn->values.data() + static_cast<std::int64_t>(h) * nk * d,
                                         nk, d);
                detail::ConstMatMap<T> V(vn->values.data() + static_cast<std::int64_t>(h) * nk * d,
                                         nk, d);
                if (vn->requires_grad)
                    detail::MatMap<T>(vn->grad.data() + static_cast<std::int64_t>(h) * nk * d, nk,
                                      d)
                        .noalias() += A.transpose() * G;
                if (!qn->requires_grad && !kn->requires_grad) continue;
                dA.noalias() = G * V.transpose();
                for (int i = 0; i < nq; ++i) {
                    T dot = T(0);
                    for (int j = 0; j < nk; ++j) dot += dA(i, j) * A(i, j);
                    for (int j = 0; j < nk; ++j) dS(i, j) = A(i, j) * (dA(i, j) - dot) * scale;
                }
                if (qn->requires_grad)
                    detail::MatMap<T>(qn->grad.data() + static_cast<std::int64_t>(h) * nq * d, nq,
                                      d)
                        .noalias() += dS * K;
                if (kn->requires_grad)
                    detail::MatMap<T>(kn->grad.data() + static_cast<std::int64_t>(h) * nk * d, nk,
                                      d)
                        .noalias() += dS.transpose() * Q;
            }
        });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int rank = static_cast<int>(x.shape().size());
    if (axis < 0 || axis >= rank) throw ShapeError("softmax: bad axis for " + shape_str(x.shape()));
    const std::int64_t n = x.shape()[axis];
    if (n <= 0) throw ShapeError("softmax over empty axis");
    std::int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= x.shape()[a];
    for (int a = axis + 1; a < rank; ++a) inner *= x.shape()[a];

    typename Tensor<T>::Array out(x.numel());
    const T* px = x.values().data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            T mx = px[base];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
            T s = T(0);
            for (std::int64_t j = 0; j < n; ++j) {
                const T e = std::exp(px[base + j * inner] - mx);
                out[base + j * inner] = e;
                s += e;
            }
            for (std::int64_t j = 0; j < n; ++j) out[base + j * inner] /= s;
        }
    auto xn = x.node();
    auto saved = std::make_shared<typename Tensor<T>::Array>(out);
    return detail::make_op<T>(x.shape(), std::move(out), {x},
                              [xn, saved, outer, inner, n](TensorNode<T>& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  const T* y = saved->data();
                                  const T* g = self.grad.data();
                                  T* dx = xn->grad.data();
                                  for (std::int64_t o = 0; o < outer; ++o)
                                      for (std::int64_t i = 0; i < inner; ++i) {
                                          const std::int64_t base = o * n * inner + i;
                                          T dot = T(0);
                                          for (std::int64_t j = 0; j < n; ++j)
                                              dot += g[base + j * inner] * y[base + j * inner];
                                          for (std::int64_t j = 0; j < n; ++j)
                                              dx[base + j * inner] +=
                                                  y[base + j * inner] * (g[base + j * inner] - dot);
                                      }
                              });
}

/// Normalizes jointly over all axes from first_axis to the end, per leading
/// index: y = (x - mean) / sqrt(var + eps). Affine terms are separate ops.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, int first_axis, T eps = static_cast<T>(1e-5)) {
    const int rank = static_cast<int>(x.shape().size());
    if (first_axis < 0 || first_axis >= rank)
        throw ShapeError("layernorm: bad axis for " + shape_str(x.shape()));
    std::int64_t groups = 1, gsize = 1;
    for (int a = 0; a < first_axis; ++a) groups *= x.shape()[a];
    for (int a = first_axis; a < rank; ++a) gsize *= x.shape()[a];

    typename Tensor<T>::Array out(x.numel());
    auto inv_std = std::make_shared<typename Tensor<T>::Array>(groups);
    auto xhat = std::make_shared<typename Tensor<T>::Array>(x.numel());
    const T* px = x.values().data();
    for (std::int64_t g = 0; g < groups; ++g) {
        const T* row = px + g * gsize;
        T mu = T(0);
        for (std::int64_t i = 0; i < gsize; ++i) mu += row[i];
        mu /= static_cast<T>(gsize);
        T var = T(0);
        for (std::int64_t i = 0; i < gsize; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<T>(gsize);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[g] = is;
        for (std::int64_t i = 0; i < gsize; ++i) {
            const T xh = (row[i] - mu) * is;
            (*xhat)[g * gsize + i] = xh;
            out[g * gsize + i] = xh;
        }
    }
    auto xn = x.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {x}, [xn, inv_std, xhat, groups, gsize](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = self.grad.data();
            T* dx = xn->grad.data();
            for (std::int64_t gr = 0; gr < groups; ++gr) {
                const T* gy = g + gr * gsize;
                const T* xh = xhat->data() + gr * gsize;
                T mean_g = T(0), mean_gx = T(0);
                for (std::int64_t i = 0; i < gsize; ++i) {
                    mean_g += gy[i];
                    mean_gx += gy[i] * xh[i];
                }
                mean_g /= static_cast<T>(gsize);
                mean_gx /= static_cast<T>(gsize);
                const T is = (*inv_std)[gr];
                for (std::int64_t i = 0; i < gsize; ++i)
                    dx[gr * gsize + i] += is * (gy[i] - mean_g - xh[i] * mean_gx);
            }
        });
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

/// Reverse-mode accumulation from a scalar loss. Each call adds one more
/// d(loss)/d(leaf) into the leaves' grad buffers; interior node grads are
/// transient per call.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Post-order DFS, then reversed = topological order from the loss.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(loss.raw(), 0);
    visited.insert(loss.raw());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorNode<T>* n : order)
        if (n->backward_fn) n->grad = typename TensorNode<T>::Array();
    loss.raw()->ensure_grad();
    loss.raw()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

}  // namespace nrtr
