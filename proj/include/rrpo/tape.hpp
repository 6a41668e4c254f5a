#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rrpo/array.hpp"

namespace rrpo {

// log() is clamped at this floor instead of erroring on non-positive input.
// The clamp point is non-smooth: the derivative is taken as 0 at and below it.
constexpr double kLogFloor = 1e-12;

// Norm below which a direction is treated as degenerate (no normalization).
constexpr double kNormFloor = 1e-12;

enum class Op : std::uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kMatmul,
    kScale,        // value * attrs.scalar
    kAddScalar,    // value + attrs.scalar
    kMulScalarNode,  // array * scalar node (the one permitted broadcast)
    kExp,
    kLog,
    kTanh,
    kRelu,
    kSqrt,
    kSoftmax,   // over last axis, rank 1 or 2
    kSumAll,    // -> scalar
    kMeanAll,   // -> scalar
    kSlice,     // attrs.axis in {0,1}, rows/cols [begin, end)
    kConcat,    // attrs.axis in {0,1}
    kTranspose, // rank 2
    kL2Norm,    // -> scalar
    kReshape,   // attrs.target, same numel
    kStraightThrough,  // forward: one-hot argmax of parent; backward: identity
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kDiv: return "div";
        case Op::kMatmul: return "matmul";
        case Op::kScale: return "scale";
        case Op::kAddScalar: return "add_scalar";
        case Op::kMulScalarNode: return "mul_scalar_node";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kTanh: return "tanh";
        case Op::kRelu: return "relu";
        case Op::kSqrt: return "sqrt";
        case Op::kSoftmax: return "softmax";
        case Op::kSumAll: return "sum";
        case Op::kMeanAll: return "mean";
        case Op::kSlice: return "slice";
        case Op::kConcat: return "concat";
        case Op::kTranspose: return "transpose";
        case Op::kL2Norm: return "l2norm";
        case Op::kReshape: return "reshape";
        case Op::kStraightThrough: return "straight_through";
    }
    return "?";
}

struct OpAttrs {
    double scalar = 0.0;
    int axis = 0;
    std::int64_t begin = 0;
    std::int64_t end = 0;
    Shape target{};
};

struct Node {
    Array value;
    Array grad;  // same shape as value, accumulated by backward()
    Op op = Op::kLeaf;
    OpAttrs attrs;
    std::vector<std::int32_t> parents;
    bool requires_grad = true;  // leaves only: false suppresses grad accumulation
};

namespace detail {

[[noreturn]] inline void shape_error(Op op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch (" + a.str() + " vs " + b.str() + ")");
}

[[noreturn]] inline void op_error(Op op, const std::string& msg) {
    throw std::invalid_argument(std::string(op_name(op)) + ": " + msg);
}

inline void softmax_row(const double* z, double* y, std::int64_t n) {
    double m = z[0];
    for (std::int64_t i = 1; i < n; ++i) m = std::max(m, z[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        y[i] = std::exp(z[i] - m);
        s += y[i];
    }
    const double inv = 1.0 / s;
    for (std::int64_t i = 0; i < n; ++i) y[i] *= inv;
}

}  // namespace detail

// Forward evaluation of one primitive. Kept free-standing so stored values
// can be replayed and checked against this function.
inline Array eval_op(Op op, const OpAttrs& attrs, std::span<const Array* const> in) {
    using detail::op_error;
    using detail::shape_error;
    auto need = [&](std::size_t n) {
        if (in.size() != n) op_error(op, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    };
    switch (op) {
        case Op::kLeaf:
            op_error(op, "leaf has no forward rule");
        case Op::kAdd: {
            need(2);
            if (in[0]->shape != in[1]->shape) shape_error(op, in[0]->shape, in[1]->shape);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = in[0]->v[i] + in[1]->v[i];
            return out;
        }
        case Op::kSub: {
            need(2);
            if (in[0]->shape != in[1]->shape) shape_error(op, in[0]->shape, in[1]->shape);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = in[0]->v[i] - in[1]->v[i];
            return out;
        }
        case Op::kMul: {
            need(2);
            if (in[0]->shape != in[1]->shape) shape_error(op, in[0]->shape, in[1]->shape);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = in[0]->v[i] * in[1]->v[i];
            return out;
        }
        case Op::kDiv: {
            need(2);
            if (in[0]->shape != in[1]->shape) shape_error(op, in[0]->shape, in[1]->shape);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = in[0]->v[i] / in[1]->v[i];
            return out;
        }
        case Op::kMatmul: {
            need(2);
            const Shape& a = in[0]->shape;
            const Shape& b = in[1]->shape;
            if (a.rank != 2 || b.rank != 2 || a.dim[1] != b.dim[0]) shape_error(op, a, b);
            const std::int64_t m = a.dim[0], k = a.dim[1], n = b.dim[1];
            Array out(Shape::mat(m, n));
            const double* pa = in[0]->v.data();
            const double* pb = in[1]->v.data();
            double* po = out.v.data();
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t l = 0; l < k; ++l) {
                    const double aa = pa[i * k + l];
                    if (aa == 0.0) continue;
                    const double* rb = pb + l * n;
                    double* ro = po + i * n;
                    for (std::int64_t j = 0; j < n; ++j) ro[j] += aa * rb[j];
                }
            }
            return out;
        }
        case Op::kScale: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = attrs.scalar * in[0]->v[i];
            return out;
        }
        case Op::kAddScalar: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = in[0]->v[i] + attrs.scalar;
            return out;
        }
        case Op::kMulScalarNode: {
            need(2);
            if (in[1]->shape.rank != 0) op_error(op, "second input must be scalar, got " + in[1]->shape.str());
            const double s = in[1]->v[0];
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = s * in[0]->v[i];
            return out;
        }
        case Op::kExp: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::exp(in[0]->v[i]);
            return out;
        }
        case Op::kLog: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::log(std::max(in[0]->v[i], kLogFloor));
            return out;
        }
        case Op::kTanh: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::tanh(in[0]->v[i]);
            return out;
        }
        case Op::kRelu: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = in[0]->v[i] > 0.0 ? in[0]->v[i] : 0.0;
            return out;
        }
        case Op::kSqrt: {
            need(1);
            Array out(in[0]->shape);
            for (std::size_t i = 0; i < out.v.size(); ++i) {
                if (in[0]->v[i] < 0.0) op_error(op, "negative input");
                out.v[i] = std::sqrt(in[0]->v[i]);
            }
            return out;
        }
        case Op::kSoftmax: {
            need(1);
            const Shape& s = in[0]->shape;
            if (s.rank != 1 && s.rank != 2) op_error(op, "rank must be 1 or 2, got " + s.str());
            Array out(s);
            const std::int64_t rows = s.rank == 2 ? s.dim[0] : 1;
            const std::int64_t n = s.rank == 2 ? s.dim[1] : s.dim[0];
            for (std::int64_t r = 0; r < rows; ++r)
                detail::softmax_row(in[0]->v.data() + r * n, out.v.data() + r * n, n);
            return out;
        }
        case Op::kSumAll: {
            need(1);
            return Array::scalar(sum_of(*in[0]));
        }
        case Op::kMeanAll: {
            need(1);
            return Array::scalar(sum_of(*in[0]) / static_cast<double>(in[0]->v.size()));
        }
        case Op::kSlice: {
            need(1);
            const Shape& s = in[0]->shape;
            const std::int64_t b = attrs.begin, e = attrs.end;
            if (s.rank == 1) {
                if (attrs.axis != 0 || b < 0 || e > s.dim[0] || b >= e)
                    op_error(op, "bad range [" + std::to_string(b) + "," + std::to_string(e) + ") on " + s.str());
                Array out(Shape::vec(e - b));
                std::copy(in[0]->v.begin() + b, in[0]->v.begin() + e, out.v.begin());
                return out;
            }
            if (s.rank != 2) op_error(op, "rank must be 1 or 2, got " + s.str());
            const std::int64_t extent = attrs.axis == 0 ? s.dim[0] : s.dim[1];
            if ((attrs.axis != 0 && attrs.axis != 1) || b < 0 || e > extent || b >= e)
                op_error(op, "bad range [" + std::to_string(b) + "," + std::to_string(e) + ") on axis " +
                                 std::to_string(attrs.axis) + " of " + s.str());
            if (attrs.axis == 0) {
                Array out(Shape::mat(e - b, s.dim[1]));
                std::copy(in[0]->v.begin() + b * s.dim[1], in[0]->v.begin() + e * s.dim[1], out.v.begin());
                return out;
            }
            Array out(Shape::mat(s.dim[0], e - b));
            for (std::int64_t i = 0; i < s.dim[0]; ++i)
                for (std::int64_t j = b; j < e; ++j) out.at(i, j - b) = in[0]->at(i, j);
            return out;
        }
        case Op::kConcat: {
            if (in.empty()) op_error(op, "needs at least one input");
            const int rank = in[0]->shape.rank;
            if (rank != 1 && rank != 2) op_error(op, "rank must be 1 or 2, got " + in[0]->shape.str());
            if (rank == 1) {
                std::int64_t total = 0;
                for (const Array* a : in) {
                    if (a->shape.rank != 1) shape_error(op, in[0]->shape, a->shape);
                    total += a->shape.dim[0];
                }
                Array out(Shape::vec(total));
                std::int64_t off = 0;
                for (const Array* a : in) {
                    std::copy(a->v.begin(), a->v.end(), out.v.begin() + off);
                    off += a->shape.dim[0];
                }
                return out;
            }
            if (attrs.axis == 0) {
                const std::int64_t c = in[0]->shape.dim[1];
                std::int64_t rows = 0;
                for (const Array* a : in) {
                    if (a->shape.rank != 2 || a->shape.dim[1] != c) shape_error(op, in[0]->shape, a->shape);
                    rows += a->shape.dim[0];
                }
                Array out(Shape::mat(rows, c));
                std::int64_t off = 0;
                for (const Array* a : in) {
                    std::copy(a->v.begin(), a->v.end(), out.v.begin() + off);
                    off += static_cast<std::int64_t>(a->v.size());
                }
                return out;
            }
            if (attrs.axis != 1) op_error(op, "axis must be 0 or 1");
            const std::int64_t r = in[0]->shape.dim[0];
            std::int64_t cols = 0;
            for (const Array* a : in) {
                if (a->shape.rank != 2 || a->shape.dim[0] != r) shape_error(op, in[0]->shape, a->shape);
                cols += a->shape.dim[1];
            }
            Array out(Shape::mat(r, cols));
            std::int64_t off = 0;
            for (const Array* a : in) {
                const std::int64_t c = a->shape.dim[1];
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) out.at(i, off + j) = a->at(i, j);
                off += c;
            }
            return out;
        }
        case Op::kTranspose: {
            need(1);
            const Shape& s = in[0]->shape;
            if (s.rank != 2) op_error(op, "rank must be 2, got " + s.str());
            Array out(Shape::mat(s.dim[1], s.dim[0]));
            for (std::int64_t i = 0; i < s.dim[0]; ++i)
                for (std::int64_t j = 0; j < s.dim[1]; ++j) out.at(j, i) = in[0]->at(i, j);
            return out;
        }
        case Op::kL2Norm: {
            need(1);
            return Array::scalar(l2_norm(*in[0]));
        }
        case Op::kReshape: {
            need(1);
            if (attrs.target.numel() != in[0]->shape.numel()) shape_error(op, in[0]->shape, attrs.target);
            Array out = *in[0];
            out.shape = attrs.target;
            return out;
        }
        case Op::kStraightThrough: {
            need(1);
            const Shape& s = in[0]->shape;
            if (s.rank != 1 && s.rank != 2) op_error(op, "rank must be 1 or 2, got " + s.str());
            Array out(s);
            const std::int64_t rows = s.rank == 2 ? s.dim[0] : 1;
            const std::int64_t n = s.rank == 2 ? s.dim[1] : s.dim[0];
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* z = in[0]->v.data() + r * n;
                std::int64_t best = 0;
                for (std::int64_t i = 1; i < n; ++i)
                    if (z[i] > z[best]) best = i;
                out.v[static_cast<std::size_t>(r * n + best)] = 1.0;
            }
            return out;
        }
    }
    detail::op_error(op, "unhandled op");
}

// Recorded computation graph. Append-only; insertion order is topological
// order (every parent precedes its children). Single-writer: no two
// operations on one tape may run concurrently.
class Tape {
public:
    using Id = std::int32_t;

    Id leaf(Array value, bool requires_grad = true) {
        Node n;
        n.grad = Array(value.shape);
        n.value = std::move(value);
        n.op = Op::kLeaf;
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id constant(Array value) { return leaf(std::move(value), false); }

    Id apply(Op op, std::span<const Id> parents, const OpAttrs& attrs = {}) {
        std::vector<const Array*> in;
        in.reserve(parents.size());
        for (Id p : parents) {
            if (p < 0 || p >= static_cast<Id>(nodes_.size()))
                detail::op_error(op, "parent id out of range");
            in.push_back(&nodes_[static_cast<std::size_t>(p)].value);
        }
        Node n;
        n.value = eval_op(op, attrs, in);
        n.grad = Array(n.value.shape);
        n.op = op;
        n.attrs = attrs;
        n.parents.assign(parents.begin(), parents.end());
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id apply(Op op, std::initializer_list<Id> parents, const OpAttrs& attrs = {}) {
        return apply(op, std::span<const Id>(parents.begin(), parents.size()), attrs);
    }

    // Adjoints of `root` w.r.t. every node at or below it; pure query,
    // does not touch stored grads. Unreachable nodes get an empty slot.
    std::vector<Array> adjoints(Id root) const {
        check_id(root);
        if (nodes_[static_cast<std::size_t>(root)].value.shape.rank != 0)
            throw std::invalid_argument("backward: root must be scalar-shaped, got " +
                                        nodes_[static_cast<std::size_t>(root)].value.shape.str());
        std::vector<Array> adj(nodes_.size());
        adj[static_cast<std::size_t>(root)] = Array::scalar(1.0);
        auto acc = [&](Id p) -> Array& {
            Array& a = adj[static_cast<std::size_t>(p)];
            if (a.empty()) a = Array(nodes_[static_cast<std::size_t>(p)].value.shape);
            return a;
        };
        for (Id i = root; i >= 0; --i) {
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            const Array& g = adj[static_cast<std::size_t>(i)];
            if (g.empty() || n.op == Op::kLeaf) continue;
            propagate(n, g, acc);
        }
        return adj;
    }

    // Accumulate d(root)/d(node) into every node's grad. Accumulation is
    // additive: a second call without reset exactly doubles each grad.
    void backward(Id root) {
        std::vector<Array> adj = adjoints(root);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (adj[i].empty()) continue;
            if (nodes_[i].op == Op::kLeaf && !nodes_[i].requires_grad) continue;
            for (std::size_t k = 0; k < adj[i].v.size(); ++k) nodes_[i].grad.v[k] += adj[i].v[k];
        }
    }

    void zero_grads() {
        for (Node& n : nodes_) std::fill(n.grad.v.begin(), n.grad.v.end(), 0.0);
    }

    const Array& value(Id id) const {
        check_id(id);
        return nodes_[static_cast<std::size_t>(id)].value;
    }

    // Detached copy of the accumulated gradient.
    Array grad_of(Id id) const {
        check_id(id);
        return nodes_[static_cast<std::size_t>(id)].grad;
    }

    const Node& node(Id id) const {
        check_id(id);
        return nodes_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return nodes_.size(); }

private:
    void check_id(Id id) const {
        if (id < 0 || id >= static_cast<Id>(nodes_.size())) throw std::invalid_argument("tape: node id out of range");
    }

    template <typename Acc>
    void propagate(const Node& n, const Array& g, Acc&& acc) const {
        const auto pv = [&](int i) -> const Array& { return nodes_[static_cast<std::size_t>(n.parents[static_cast<std::size_t>(i)])].value; };
        switch (n.op) {
            case Op::kLeaf:
                return;
            case Op::kAdd: {
                Array& a = acc(n.parents[0]);
                Array& b = acc(n.parents[1]);
                for (std::size_t i = 0; i < g.v.size(); ++i) {
                    a.v[i] += g.v[i];
                    b.v[i] += g.v[i];
                }
                return;
            }
            case Op::kSub: {
                Array& a = acc(n.parents[0]);
                Array& b = acc(n.parents[1]);
                for (std::size_t i = 0; i < g.v.size(); ++i) {
                    a.v[i] += g.v[i];
                    b.v[i] -= g.v[i];
                }
                return;
            }
            case Op::kMul: {
                Array& a = acc(n.parents[0]);
                Array& b = acc(n.parents[1]);
                const Array& av = pv(0);
                const Array& bv = pv(1);
                for (std::size_t i = 0; i < g.v.size(); ++i) {
                    a.v[i] += g.v[i] * bv.v[i];
                    b.v[i] += g.v[i] * av.v[i];
                }
                return;
            }
            case Op::kDiv: {
                Array& a = acc(n.parents[0]);
                Array& b = acc(n.parents[1]);
                const Array& bv = pv(1);
                for (std::size_t i = 0; i < g.v.size(); ++i) {
                    const double inv = 1.0 / bv.v[i];
                    a.v[i] += g.v[i] * inv;
                    b.v[i] -= g.v[i] * n.value.v[i] * inv;
                }
                return;
            }
            case Op::kMatmul: {
                const Array& av = pv(0);
                const Array& bv = pv(1);
                const std::int64_t m = av.shape.dim[0], k = av.shape.dim[1], c = bv.shape.dim[1];
                Array& ga = acc(n.parents[0]);
                Array& gb = acc(n.parents[1]);
                // ga += g * b^T ; gb += a^T * g
                for (std::int64_t i = 0; i < m; ++i) {
                    const double* gr = g.v.data() + i * c;
                    for (std::int64_t l = 0; l < k; ++l) {
                        const double* br = bv.v.data() + l * c;
                        double s = 0.0;
                        for (std::int64_t j = 0; j < c; ++j) s += gr[j] * br[j];
                        ga.v[static_cast<std::size_t>(i * k + l)] += s;
                    }
                }
                for (std::int64_t l = 0; l < k; ++l) {
                    double* gbr = gb.v.data() + l * c;
                    for (std::int64_t i = 0; i < m; ++i) {
                        const double aa = av.v[static_cast<std::size_t>(i * k + l)];
                        if (aa == 0.0) continue;
                        const double* gr = g.v.data() + i * c;
                        for (std::int64_t j = 0; j < c; ++j) gbr[j] += aa * gr[j];
                    }
                }
                return;
            }
            case Op::kScale: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i) a.v[i] += n.attrs.scalar * g.v[i];
                return;
            }
            case Op::kAddScalar: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i) a.v[i] += g.v[i];
                return;
            }
            case Op::kMulScalarNode: {
                Array& a = acc(n.parents[0]);
                Array& s = acc(n.parents[1]);
                const Array& av = pv(0);
                const double sv = pv(1).v[0];
                double dot = 0.0;
                for (std::size_t i = 0; i < g.v.size(); ++i) {
                    a.v[i] += sv * g.v[i];
                    dot += g.v[i] * av.v[i];
                }
                s.v[0] += dot;
                return;
            }
            case Op::kExp: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i) a.v[i] += g.v[i] * n.value.v[i];
                return;
            }
            case Op::kLog: {
                Array& a = acc(n.parents[0]);
                const Array& av = pv(0);
                for (std::size_t i = 0; i < g.v.size(); ++i)
                    if (av.v[i] > kLogFloor) a.v[i] += g.v[i] / av.v[i];
                return;
            }
            case Op::kTanh: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i) a.v[i] += g.v[i] * (1.0 - n.value.v[i] * n.value.v[i]);
                return;
            }
            case Op::kRelu: {
                Array& a = acc(n.parents[0]);
                const Array& av = pv(0);
                for (std::size_t i = 0; i < g.v.size(); ++i)
                    if (av.v[i] > 0.0) a.v[i] += g.v[i];
                return;
            }
            case Op::kSqrt: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i)
                    if (n.value.v[i] > 0.0) a.v[i] += g.v[i] / (2.0 * n.value.v[i]);
                return;
            }
            case Op::kSoftmax: {
                Array& a = acc(n.parents[0]);
                const Shape& s = n.value.shape;
                const std::int64_t rows = s.rank == 2 ? s.dim[0] : 1;
                const std::int64_t nn = s.rank == 2 ? s.dim[1] : s.dim[0];
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* y = n.value.v.data() + r * nn;
                    const double* gr = g.v.data() + r * nn;
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < nn; ++i) dot += gr[i] * y[i];
                    double* ar = a.v.data() + r * nn;
                    for (std::int64_t i = 0; i < nn; ++i) ar[i] += y[i] * (gr[i] - dot);
                }
                return;
            }
            case Op::kSumAll: {
                Array& a = acc(n.parents[0]);
                const double gs = g.v[0];
                for (double& x : a.v) x += gs;
                return;
            }
            case Op::kMeanAll: {
                Array& a = acc(n.parents[0]);
                const double gs = g.v[0] / static_cast<double>(a.v.size());
                for (double& x : a.v) x += gs;
                return;
            }
            case Op::kSlice: {
                Array& a = acc(n.parents[0]);
                const Shape& s = pv(0).shape;
                const std::int64_t b = n.attrs.begin;
                if (s.rank == 1 || n.attrs.axis == 0) {
                    const std::int64_t w = s.rank == 1 ? 1 : s.dim[1];
                    for (std::size_t i = 0; i < g.v.size(); ++i) a.v[static_cast<std::size_t>(b * w) + i] += g.v[i];
                } else {
                    const std::int64_t cols = n.value.shape.dim[1];
                    for (std::int64_t i = 0; i < n.value.shape.dim[0]; ++i)
                        for (std::int64_t j = 0; j < cols; ++j) a.at(i, b + j) += g.at(i, j);
                }
                return;
            }
            case Op::kConcat: {
                std::int64_t off = 0;
                for (std::size_t p = 0; p < n.parents.size(); ++p) {
                    Array& a = acc(n.parents[p]);
                    const Shape& s = a.shape;
                    if (s.rank == 1 || n.attrs.axis == 0) {
                        const std::int64_t len = static_cast<std::int64_t>(a.v.size());
                        for (std::int64_t i = 0; i < len; ++i) a.v[static_cast<std::size_t>(i)] += g.v[static_cast<std::size_t>(off + i)];
                        off += len;
                    } else {
                        for (std::int64_t i = 0; i < s.dim[0]; ++i)
                            for (std::int64_t j = 0; j < s.dim[1]; ++j) a.at(i, j) += g.at(i, off + j);
                        off += s.dim[1];
                    }
                }
                return;
            }
            case Op::kTranspose: {
                Array& a = acc(n.parents[0]);
                const Shape& s = a.shape;
                for (std::int64_t i = 0; i < s.dim[0]; ++i)
                    for (std::int64_t j = 0; j < s.dim[1]; ++j) a.at(i, j) += g.at(j, i);
                return;
            }
            case Op::kL2Norm: {
                const double norm = n.value.v[0];
                if (norm < kNormFloor) return;
                Array& a = acc(n.parents[0]);
                const Array& av = pv(0);
                const double gs = g.v[0] / norm;
                for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += gs * av.v[i];
                return;
            }
            case Op::kReshape: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i) a.v[i] += g.v[i];
                return;
            }
            case Op::kStraightThrough: {
                Array& a = acc(n.parents[0]);
                for (std::size_t i = 0; i < g.v.size(); ++i) a.v[i] += g.v[i];
                return;
            }
        }
    }

    std::vector<Node> nodes_;
};

// Lightweight handle pairing a tape with a node id; all graph-building
// helpers below work in terms of it.
struct Ref {
    Tape* tape = nullptr;
    Tape::Id id = -1;

    const Array& value() const { return tape->value(id); }
    Array grad() const { return tape->grad_of(id); }
    const Shape& shape() const { return tape->value(id).shape; }
};

inline Ref make_ref(Tape& t, Tape::Id id) { return Ref{&t, id}; }
inline Ref leaf(Tape& t, Array v, bool requires_grad = true) { return make_ref(t, t.leaf(std::move(v), requires_grad)); }
inline Ref constant(Tape& t, Array v) { return make_ref(t, t.constant(std::move(v))); }

namespace detail {
inline Ref apply2(Op op, Ref a, Ref b, const OpAttrs& attrs = {}) {
    return make_ref(*a.tape, a.tape->apply(op, {a.id, b.id}, attrs));
}
inline Ref apply1(Op op, Ref a, const OpAttrs& attrs = {}) {
    return make_ref(*a.tape, a.tape->apply(op, {a.id}, attrs));
}
}  // namespace detail

inline Ref add(Ref a, Ref b) { return detail::apply2(Op::kAdd, a, b); }
inline Ref sub(Ref a, Ref b) { return detail::apply2(Op::kSub, a, b); }
inline Ref mul(Ref a, Ref b) { return detail::apply2(Op::kMul, a, b); }
inline Ref div(Ref a, Ref b) { return detail::apply2(Op::kDiv, a, b); }
inline Ref matmul(Ref a, Ref b) { return detail::apply2(Op::kMatmul, a, b); }
inline Ref scale(Ref a, double s) { return detail::apply1(Op::kScale, a, OpAttrs{.scalar = s}); }
inline Ref add_scalar(Ref a, double s) { return detail::apply1(Op::kAddScalar, a, OpAttrs{.scalar = s}); }
inline Ref mul_scalar_node(Ref a, Ref s) { return detail::apply2(Op::kMulScalarNode, a, s); }
inline Ref exp(Ref a) { return detail::apply1(Op::kExp, a); }
inline Ref log(Ref a) { return detail::apply1(Op::kLog, a); }
inline Ref tanh(Ref a) { return detail::apply1(Op::kTanh, a); }
inline Ref relu(Ref a) { return detail::apply1(Op::kRelu, a); }
inline Ref sqrt(Ref a) { return detail::apply1(Op::kSqrt, a); }
inline Ref softmax(Ref a) { return detail::apply1(Op::kSoftmax, a); }
inline Ref sum_all(Ref a) { return detail::apply1(Op::kSumAll, a); }
inline Ref mean_all(Ref a) { return detail::apply1(Op::kMeanAll, a); }
inline Ref slice(Ref a, int axis, std::int64_t begin, std::int64_t end) {
    return detail::apply1(Op::kSlice, a, OpAttrs{.axis = axis, .begin = begin, .end = end});
}
inline Ref concat(std::span<const Ref> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input list");
    std::vector<Tape::Id> ids;
    ids.reserve(parts.size());
    for (const Ref& r : parts) ids.push_back(r.id);
    return make_ref(*parts[0].tape, parts[0].tape->apply(Op::kConcat, ids, OpAttrs{.axis = axis}));
}
inline Ref transpose(Ref a) { return detail::apply1(Op::kTranspose, a); }
inline Ref l2norm(Ref a) { return detail::apply1(Op::kL2Norm, a); }
inline Ref reshape(Ref a, const Shape& target) { return detail::apply1(Op::kReshape, a, OpAttrs{.target = target}); }
inline Ref straight_through(Ref a) { return detail::apply1(Op::kStraightThrough, a); }

inline Ref operator+(Ref a, Ref b) { return add(a, b); }
inline Ref operator-(Ref a, Ref b) { return sub(a, b); }
inline Ref operator*(Ref a, Ref b) { return mul(a, b); }

}  // namespace rrpo
