#include "hft/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hft::nn {

namespace {

std::atomic<bool> g_finite_checks{false};

template <class S>
bool all_finite(std::span<const S> v) {
    for (const S x : v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

/// b must equal a or a trailing suffix of a.
void require_suffix(const Shape& a, const Shape& b, const char* op) {
    bool ok = b.size() <= a.size();
    if (ok) {
        for (size_t i = 0; i < b.size(); ++i) {
            if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) {
                ok = false;
                break;
            }
        }
    }
    if (!ok) {
        fail(std::string(op) + ": shape " + shape_str(b) + " is not a trailing suffix of " +
             shape_str(a));
    }
}

template <class S>
Tensor<S> make_op(Shape shape, std::vector<S> value, std::vector<Tensor<S>> inputs,
                  std::function<void(Node<S>&)> backprop, const char* op_name) {
    if (g_finite_checks.load(std::memory_order_relaxed) && !all_finite<S>(value)) {
        throw std::runtime_error(std::string("non-finite value in output of ") + op_name);
    }
    Tensor<S> out = Tensor<S>::from(std::move(shape), std::move(value));
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    if (rg) {
        auto& node = *out.node();
        node.requires_grad = true;
        node.parents.reserve(inputs.size());
        for (auto& in : inputs) node.parents.push_back(in.node());
        node.backprop = std::move(backprop);
    }
    return out;
}

template <class S>
void accumulate(Node<S>& parent, std::span<const S> g) {
    parent.ensure_grad();
    S* dst = parent.grad.data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// --- matmul kernels (row-parallel, deterministic) ---------------------------

// C[m,n] += A[m,k] * B[k,n]
template <class S>
void mm_nn_row(S* c, const S* a, const S* b, int64_t i, int64_t k, int64_t n) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (int64_t t = 0; t < k; ++t) {
        const S av = arow[t];
        if (av == S(0)) continue;
        const S* brow = b + t * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class S>
void mm_nt_row(S* c, const S* a, const S* b, int64_t i, int64_t k, int64_t n) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
        const S* brow = b + j * k;
        S acc = S(0);
        for (int64_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
        crow[j] += acc;
    }
}

// C[k,n] += A[m,k]^T * B[m,n], parallel over rows of C (the k axis)
template <class S>
void mm_tn(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    parallel_for_work(k, m * k * n, [=](int64_t p0, int64_t p1) {
        for (int64_t i = 0; i < m; ++i) {
            const S* arow = a + i * k;
            const S* brow = b + i * n;
            for (int64_t p = p0; p < p1; ++p) {
                const S av = arow[p];
                if (av == S(0)) continue;
                S* crow = c + p * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

struct MatDims {
    int64_t batch, m, k, n;
    bool batched_b;
};

template <class S>
MatDims matmul_dims(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b) {
    require(a.rank() >= 2, "matmul: lhs rank must be >= 2, got shape " + shape_str(a.shape()));
    require(b.rank() == 2 || b.rank() == a.rank(),
            "matmul: rhs must be rank 2 or match lhs rank; lhs " + shape_str(a.shape()) +
                " rhs " + shape_str(b.shape()));
    MatDims d;
    d.m = a.extent(-2);
    d.k = a.extent(-1);
    d.batch = a.size() / (d.m * d.k);
    d.batched_b = b.rank() > 2;
    const int64_t bk = transpose_b ? b.extent(-1) : b.extent(-2);
    d.n = transpose_b ? b.extent(-2) : b.extent(-1);
    if (bk != d.k || (d.batched_b && b.size() != d.batch * d.k * d.n)) {
        fail("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
             shape_str(b.shape()) + (transpose_b ? " (rhs transposed)" : ""));
    }
    return d;
}

}  // namespace

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ")";
    return os.str();
}

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }
bool finite_checks() { return g_finite_checks.load(std::memory_order_relaxed); }

// --- Tensor basics -----------------------------------------------------------

template <class S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
    Tensor<S> t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->value.assign(numel(shape), S(0));
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    return t;
}

template <class S>
Tensor<S> Tensor<S>::full(Shape shape, S v) {
    Tensor<S> t = zeros(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
}

template <class S>
Tensor<S> Tensor<S>::from(Shape shape, std::vector<S> values, bool requires_grad) {
    require(numel(shape) == static_cast<int64_t>(values.size()),
            "tensor: value count " + std::to_string(values.size()) + " does not match shape " +
                shape_str(shape));
    Tensor<S> t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
}

template <class S>
Tensor<S> Tensor<S>::scalar(S v) {
    return from({1}, {v});
}

template <class S>
int64_t Tensor<S>::extent(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    require(axis >= 0 && axis < r, "tensor: axis out of range for shape " + shape_str(shape()));
    return node_->shape[axis];
}

template <class S>
S Tensor<S>::item() const {
    require(size() == 1, "item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->value[0];
}

// --- elementwise -------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require_suffix(a.shape(), b.shape(), "add");
    const int64_t bs = b.size();
    std::vector<S> v(a.values().begin(), a.values().end());
    const S* bp = b.values().data();
    for (int64_t base = 0; base < a.size(); base += bs) {
        S* row = v.data() + base;
        for (int64_t i = 0; i < bs; ++i) row[i] += bp[i];
    }
    return make_op<S>(
        a.shape(), std::move(v), {a, b},
        [bs](Node<S>& n) {
            const std::span<const S> g = n.grad;
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) accumulate(pa, g);
            if (pb.requires_grad) {
                pb.ensure_grad();
                S* dst = pb.grad.data();
                for (size_t i = 0; i < g.size(); ++i) dst[i % bs] += g[i];
            }
        },
        "add");
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require_suffix(a.shape(), b.shape(), "mul");
    const int64_t bs = b.size();
    std::vector<S> v(a.values().begin(), a.values().end());
    const S* bp = b.values().data();
    for (int64_t base = 0; base < a.size(); base += bs) {
        S* row = v.data() + base;
        for (int64_t i = 0; i < bs; ++i) row[i] *= bp[i];
    }
    return make_op<S>(
        a.shape(), std::move(v), {a, b},
        [bs](Node<S>& n) {
            const std::span<const S> g = n.grad;
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            const S* av = pa.value.data();
            const S* bv = pb.value.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                S* dst = pa.grad.data();
                for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bv[i % bs];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                S* dst = pb.grad.data();
                for (size_t i = 0; i < g.size(); ++i) dst[i % bs] += g[i] * av[i];
            }
        },
        "mul");
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> v(a.values().begin(), a.values().end());
    for (S& x : v) x *= c;
    return make_op<S>(
        a.shape(), std::move(v), {a},
        [c](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const std::span<const S> g = n.grad;
            for (size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
        },
        "scale");
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    std::vector<S> v(a.values().begin(), a.values().end());
    for (S& x : v) x = x > S(0) ? x : S(0);
    return make_op<S>(
        a.shape(), std::move(v), {a},
        [](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const S* x = pa.value.data();
            const std::span<const S> g = n.grad;
            for (size_t i = 0; i < g.size(); ++i) {
                if (x[i] > S(0)) dst[i] += g[i];
            }
        },
        "relu");
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    std::vector<S> v(a.values().begin(), a.values().end());
    for (S& x : v) {
        if (x >= S(0)) {
            x = S(1) / (S(1) + std::exp(-x));
        } else {
            const S e = std::exp(x);
            x = e / (S(1) + e);
        }
    }
    return make_op<S>(
        a.shape(), std::move(v), {a},
        [](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const S* y = n.value.data();
            const std::span<const S> g = n.grad;
            for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i] * (S(1) - y[i]);
        },
        "sigmoid");
}

namespace {

struct AxisSplit {
    int64_t outer, mid, inner;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
    const int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    require(axis >= 0 && axis < r,
            std::string(op) + ": axis out of range for shape " + shape_str(s));
    AxisSplit sp{1, s[axis], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    for (int i = axis + 1; i < r; ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
    std::vector<S> v(a.values().begin(), a.values().end());
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            S* base = v.data() + o * sp.mid * sp.inner + in;
            S mx = base[0];
            for (int64_t m = 1; m < sp.mid; ++m) mx = std::max(mx, base[m * sp.inner]);
            S z = S(0);
            for (int64_t m = 0; m < sp.mid; ++m) {
                S& x = base[m * sp.inner];
                x = std::exp(x - mx);
                z += x;
            }
            const S inv = S(1) / z;
            for (int64_t m = 0; m < sp.mid; ++m) base[m * sp.inner] *= inv;
        }
    }
    return make_op<S>(
        a.shape(), std::move(v), {a},
        [sp](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            const S* y = n.value.data();
            const S* g = n.grad.data();
            S* dst = pa.grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.mid * sp.inner + in;
                    S dot = S(0);
                    for (int64_t m = 0; m < sp.mid; ++m) {
                        const int64_t i = base + m * sp.inner;
                        dot += g[i] * y[i];
                    }
                    for (int64_t m = 0; m < sp.mid; ++m) {
                        const int64_t i = base + m * sp.inner;
                        dst[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        },
        "softmax");
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& a, int axis, S eps) {
    const AxisSplit sp = split_axis(a.shape(), axis, "layer_norm");
    std::vector<S> v(a.size());
    std::vector<S> inv_std(sp.outer * sp.inner);
    const S* x = a.values().data();
    const S inv_mid = S(1) / static_cast<S>(sp.mid);
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.mid * sp.inner + in;
            S mean = S(0);
            for (int64_t m = 0; m < sp.mid; ++m) mean += x[base + m * sp.inner];
            mean *= inv_mid;
            S var = S(0);
            for (int64_t m = 0; m < sp.mid; ++m) {
                const S d = x[base + m * sp.inner] - mean;
                var += d * d;
            }
            var *= inv_mid;
            const S inv = S(1) / std::sqrt(var + eps);
            inv_std[o * sp.inner + in] = inv;
            for (int64_t m = 0; m < sp.mid; ++m) {
                const int64_t i = base + m * sp.inner;
                v[i] = (x[i] - mean) * inv;
            }
        }
    }
    return make_op<S>(
        a.shape(), std::move(v), {a},
        [sp, inv_std = std::move(inv_std), inv_mid](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            const S* y = n.value.data();
            const S* g = n.grad.data();
            S* dst = pa.grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.mid * sp.inner + in;
                    S gm = S(0), gym = S(0);
                    for (int64_t m = 0; m < sp.mid; ++m) {
                        const int64_t i = base + m * sp.inner;
                        gm += g[i];
                        gym += g[i] * y[i];
                    }
                    gm *= inv_mid;
                    gym *= inv_mid;
                    const S inv = inv_std[o * sp.inner + in];
                    for (int64_t m = 0; m < sp.mid; ++m) {
                        const int64_t i = base + m * sp.inner;
                        dst[i] += inv * (g[i] - gm - y[i] * gym);
                    }
                }
            }
        },
        "layer_norm");
}

// --- shape ops ---------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    require(numel(shape) == a.size(), "reshape: cannot view " + shape_str(a.shape()) + " as " +
                                          shape_str(shape));
    std::vector<S> v(a.values().begin(), a.values().end());
    return make_op<S>(
        std::move(shape), std::move(v), {a},
        [](Node<S>& n) { accumulate(*n.parents[0], std::span<const S>(n.grad)); }, "reshape");
}

namespace {

std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// For each output linear index, the corresponding input linear index.
std::vector<int64_t> permute_map(const Shape& in_shape, const std::vector<int>& axes) {
    const int r = static_cast<int>(in_shape.size());
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
    const auto in_strides = strides_of(in_shape);
    const auto out_strides = strides_of(out_shape);
    const int64_t n = numel(in_shape);
    std::vector<int64_t> map(n);
    for (int64_t i = 0; i < n; ++i) {
        int64_t rem = i, src = 0;
        for (int d = 0; d < r; ++d) {
            const int64_t c = rem / out_strides[d];
            rem -= c * out_strides[d];
            src += c * in_strides[axes[d]];
        }
        map[i] = src;
    }
    return map;
}

}  // namespace

template <class S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes) {
    const int r = a.rank();
    require(static_cast<int>(axes.size()) == r, "permute: axes count must equal rank");
    std::vector<bool> seen(r, false);
    for (int ax : axes) {
        require(ax >= 0 && ax < r && !seen[ax], "permute: invalid axes for shape " +
                                                    shape_str(a.shape()));
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = a.shape()[axes[i]];
    auto map = permute_map(a.shape(), axes);
    std::vector<S> v(a.size());
    const S* x = a.values().data();
    for (int64_t i = 0; i < a.size(); ++i) v[i] = x[map[i]];
    return make_op<S>(
        std::move(out_shape), std::move(v), {a},
        [map = std::move(map)](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const S* g = n.grad.data();
            for (size_t i = 0; i < map.size(); ++i) dst[map[i]] += g[i];
        },
        "permute");
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a, int axis0, int axis1) {
    const int r = a.rank();
    if (axis0 < 0) axis0 += r;
    if (axis1 < 0) axis1 += r;
    std::vector<int> axes(r);
    for (int i = 0; i < r; ++i) axes[i] = i;
    require(axis0 >= 0 && axis0 < r && axis1 >= 0 && axis1 < r, "transpose: axis out of range");
    std::swap(axes[axis0], axes[axis1]);
    return permute(a, axes);
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& first = parts[0].shape();
    const int r = static_cast<int>(first.size());
    if (axis < 0) axis += r;
    require(axis >= 0 && axis < r, "concat: axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        require(p.rank() == r, "concat: rank mismatch");
        for (int d = 0; d < r; ++d) {
            if (d != axis) {
                require(p.shape()[d] == first[d], "concat: shape mismatch " +
                                                      shape_str(p.shape()) + " vs " +
                                                      shape_str(first));
            }
        }
        out_shape[axis] += p.shape()[axis];
    }
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first[d];
    for (int d = axis + 1; d < r; ++d) inner *= first[d];

    std::vector<S> v(numel(out_shape));
    std::vector<int64_t> blocks(parts.size());
    const int64_t out_block = out_shape[axis] * inner;
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        blocks[pi] = parts[pi].shape()[axis] * inner;
        const S* src = parts[pi].values().data();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * blocks[pi], blocks[pi], v.data() + o * out_block + off);
        }
        off += blocks[pi];
    }
    return make_op<S>(
        std::move(out_shape), std::move(v), parts,
        [outer, out_block, blocks = std::move(blocks)](Node<S>& n) {
            const S* g = n.grad.data();
            int64_t off = 0;
            for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                auto& p = *n.parents[pi];
                if (p.requires_grad) {
                    p.ensure_grad();
                    S* dst = p.grad.data();
                    for (int64_t o = 0; o < outer; ++o) {
                        const S* srow = g + o * out_block + off;
                        S* drow = dst + o * blocks[pi];
                        for (int64_t i = 0; i < blocks[pi]; ++i) drow[i] += srow[i];
                    }
                }
                off += blocks[pi];
            }
        },
        "concat");
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, int64_t start, int64_t stop) {
    const int r = a.rank();
    if (axis < 0) axis += r;
    require(axis >= 0 && axis < r, "slice: axis out of range");
    const int64_t ext = a.shape()[axis];
    require(start >= 0 && stop <= ext && start < stop,
            "slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                ") invalid for extent " + std::to_string(ext));
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (int d = axis + 1; d < r; ++d) inner *= a.shape()[d];
    Shape out_shape = a.shape();
    out_shape[axis] = stop - start;
    const int64_t in_block = ext * inner;
    const int64_t out_block = (stop - start) * inner;
    std::vector<S> v(numel(out_shape));
    const S* x = a.values().data();
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(x + o * in_block + start * inner, out_block, v.data() + o * out_block);
    }
    return make_op<S>(
        std::move(out_shape), std::move(v), {a},
        [outer, inner, in_block, out_block, start](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const S* g = n.grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                const S* srow = g + o * out_block;
                S* drow = dst + o * in_block + start * inner;
                for (int64_t i = 0; i < out_block; ++i) drow[i] += srow[i];
            }
        },
        "slice");
}

template <class S>
Tensor<S> expand_leading(const Tensor<S>& a, int64_t n) {
    require(n >= 1, "expand_leading: n must be >= 1");
    const int64_t sz = a.size();
    Shape out_shape;
    out_shape.reserve(a.rank() + 1);
    out_shape.push_back(n);
    for (int64_t e : a.shape()) out_shape.push_back(e);
    std::vector<S> v(n * sz);
    for (int64_t r = 0; r < n; ++r) {
        std::copy_n(a.values().data(), sz, v.data() + r * sz);
    }
    return make_op<S>(
        std::move(out_shape), std::move(v), {a},
        [n, sz](Node<S>& node) {
            auto& pa = *node.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const S* g = node.grad.data();
            for (int64_t r = 0; r < n; ++r) {
                const S* row = g + r * sz;
                for (int64_t i = 0; i < sz; ++i) dst[i] += row[i];
            }
        },
        "expand_leading");
}

// --- matmul ------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b) {
    const MatDims d = matmul_dims(a, b, transpose_b);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.back() = d.m;
    out_shape.push_back(d.n);

    std::vector<S> v(d.batch * d.m * d.n, S(0));
    {
        const S* av = a.values().data();
        const S* bv = b.values().data();
        S* cv = v.data();
        const auto dd = d;
        parallel_for_work(d.batch * d.m, d.batch * d.m * d.k * d.n,
                          [=](int64_t lo, int64_t hi) {
            for (int64_t idx = lo; idx < hi; ++idx) {
                const int64_t bi = idx / dd.m;
                const int64_t i = idx % dd.m;
                const S* ab = av + bi * dd.m * dd.k;
                const S* bb = dd.batched_b ? bv + bi * dd.k * dd.n : bv;
                S* cb = cv + bi * dd.m * dd.n;
                if (transpose_b) {
                    mm_nt_row(cb, ab, bb, i, dd.k, dd.n);
                } else {
                    mm_nn_row(cb, ab, bb, i, dd.k, dd.n);
                }
            }
        });
    }

    return make_op<S>(
        std::move(out_shape), std::move(v), {a, b},
        [d, transpose_b](Node<S>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            const S* g = n.grad.data();
            const S* av = pa.value.data();
            const S* bv = pb.value.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                S* da = pa.grad.data();
                parallel_for_work(d.batch * d.m, d.batch * d.m * d.k * d.n,
                                  [=](int64_t lo, int64_t hi) {
                    for (int64_t idx = lo; idx < hi; ++idx) {
                        const int64_t bi = idx / d.m;
                        const int64_t i = idx % d.m;
                        const S* gb = g + bi * d.m * d.n;
                        const S* bb = d.batched_b ? bv + bi * d.k * d.n : bv;
                        S* dab = da + bi * d.m * d.k;
                        if (transpose_b) {
                            // dA = dC * B, B stored (n, k)
                            mm_nn_row(dab, gb, bb, i, d.n, d.k);
                        } else {
                            // dA = dC * B^T, B stored (k, n)
                            mm_nt_row(dab, gb, bb, i, d.n, d.k);
                        }
                    }
                });
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                S* db = pb.grad.data();
                for (int64_t bi = 0; bi < d.batch; ++bi) {
                    const S* ab = av + bi * d.m * d.k;
                    const S* gb = g + bi * d.m * d.n;
                    S* dbb = d.batched_b ? db + bi * d.k * d.n : db;
                    if (transpose_b) {
                        // dB = dC^T * A, dB stored (n, k)
                        mm_tn(dbb, gb, ab, d.m, d.n, d.k);
                    } else {
                        // dB = A^T * dC, dB stored (k, n)
                        mm_tn(dbb, ab, gb, d.m, d.k, d.n);
                    }
                }
            }
        },
        "matmul");
}

// --- conv1d ------------------------------------------------------------------

template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
    require(x.rank() == 3, "conv1d: input must be (batch, channels, length), got " +
                               shape_str(x.shape()));
    require(w.rank() == 3, "conv1d: kernel must be (out, in, k), got " + shape_str(w.shape()));
    const int64_t B = x.extent(0), Cin = x.extent(1), L = x.extent(2);
    const int64_t Cout = w.extent(0), K = w.extent(2);
    require(w.extent(1) == Cin, "conv1d: channel mismatch, input " + shape_str(x.shape()) +
                                    " kernel " + shape_str(w.shape()));
    require(L >= K, "conv1d: length " + std::to_string(L) + " shorter than kernel " +
                        std::to_string(K));
    const bool has_bias = bias.defined();
    if (has_bias) {
        require(bias.rank() == 1 && bias.extent(0) == Cout,
                "conv1d: bias must be (out_channels), got " + shape_str(bias.shape()));
    }
    const int64_t Lo = L - K + 1;

    std::vector<S> v(B * Cout * Lo, S(0));
    {
        const S* xv = x.values().data();
        const S* wv = w.values().data();
        const S* bv = has_bias ? bias.values().data() : nullptr;
        S* out = v.data();
        parallel_for_work(B, B * Cout * Lo * Cin * K, [=](int64_t b0, int64_t b1) {
            for (int64_t b = b0; b < b1; ++b) {
                for (int64_t co = 0; co < Cout; ++co) {
                    S* orow = out + (b * Cout + co) * Lo;
                    if (bv != nullptr) {
                        for (int64_t t = 0; t < Lo; ++t) orow[t] = bv[co];
                    }
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const S* xrow = xv + (b * Cin + ci) * L;
                        const S* wrow = wv + (co * Cin + ci) * K;
                        for (int64_t k = 0; k < K; ++k) {
                            const S wk = wrow[k];
                            for (int64_t t = 0; t < Lo; ++t) orow[t] += wk * xrow[t + k];
                        }
                    }
                }
            }
        });
    }

    std::vector<Tensor<S>> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_op<S>(
        {B, Cout, Lo}, std::move(v), std::move(inputs),
        [B, Cin, Cout, L, K, Lo, has_bias](Node<S>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            const S* g = n.grad.data();
            const S* xv = px.value.data();
            const S* wv = pw.value.data();
            if (px.requires_grad) {
                px.ensure_grad();
                S* dx = px.grad.data();
                parallel_for_work(B, B * Cout * Lo * Cin * K, [=](int64_t b0, int64_t b1) {
                    for (int64_t b = b0; b < b1; ++b) {
                        for (int64_t co = 0; co < Cout; ++co) {
                            const S* grow = g + (b * Cout + co) * Lo;
                            for (int64_t ci = 0; ci < Cin; ++ci) {
                                S* drow = dx + (b * Cin + ci) * L;
                                const S* wrow = wv + (co * Cin + ci) * K;
                                for (int64_t k = 0; k < K; ++k) {
                                    const S wk = wrow[k];
                                    for (int64_t t = 0; t < Lo; ++t) drow[t + k] += wk * grow[t];
                                }
                            }
                        }
                    }
                });
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                S* dw = pw.grad.data();
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t co = 0; co < Cout; ++co) {
                        const S* grow = g + (b * Cout + co) * Lo;
                        for (int64_t ci = 0; ci < Cin; ++ci) {
                            const S* xrow = xv + (b * Cin + ci) * L;
                            S* wrow = dw + (co * Cin + ci) * K;
                            for (int64_t k = 0; k < K; ++k) {
                                S acc = S(0);
                                for (int64_t t = 0; t < Lo; ++t) acc += grow[t] * xrow[t + k];
                                wrow[k] += acc;
                            }
                        }
                    }
                }
            }
            if (has_bias && n.parents[2]->requires_grad) {
                auto& pb = *n.parents[2];
                pb.ensure_grad();
                S* db = pb.grad.data();
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t co = 0; co < Cout; ++co) {
                        const S* grow = g + (b * Cout + co) * Lo;
                        S acc = S(0);
                        for (int64_t t = 0; t < Lo; ++t) acc += grow[t];
                        db[co] += acc;
                    }
                }
            }
        },
        "conv1d");
}

// --- dropout / embedding -------------------------------------------------------

template <class S>
Tensor<S> dropout(const Tensor<S>& a, double rate, bool train, Rng& rng) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
    if (!train || rate == 0.0) return a;
    const double keep = 1.0 - rate;
    const S inv_keep = static_cast<S>(1.0 / keep);
    std::vector<S> mask(a.size());
    for (auto& m : mask) m = rng.uniform() < keep ? inv_keep : S(0);
    std::vector<S> v(a.values().begin(), a.values().end());
    for (int64_t i = 0; i < a.size(); ++i) v[i] *= mask[i];
    return make_op<S>(
        a.shape(), std::move(v), {a},
        [mask = std::move(mask)](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            S* dst = pa.grad.data();
            const S* g = n.grad.data();
            for (size_t i = 0; i < mask.size(); ++i) dst[i] += g[i] * mask[i];
        },
        "dropout");
}

template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const int64_t> idx) {
    require(table.rank() == 2, "embedding_lookup: table must be rank 2, got " +
                                   shape_str(table.shape()));
    const int64_t rows = table.extent(0), width = table.extent(1);
    std::vector<S> v(static_cast<int64_t>(idx.size()) * width);
    const S* t = table.values().data();
    for (size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < rows,
                "embedding_lookup: index " + std::to_string(idx[i]) + " out of range [0, " +
                    std::to_string(rows) + ")");
        std::copy_n(t + idx[i] * width, width, v.data() + static_cast<int64_t>(i) * width);
    }
    std::vector<int64_t> idx_copy(idx.begin(), idx.end());
    return make_op<S>(
        {static_cast<int64_t>(idx.size()), width}, std::move(v), {table},
        [width, idx_copy = std::move(idx_copy)](Node<S>& n) {
            auto& pt = *n.parents[0];
            pt.ensure_grad();
            S* dst = pt.grad.data();
            const S* g = n.grad.data();
            for (size_t i = 0; i < idx_copy.size(); ++i) {
                const S* grow = g + static_cast<int64_t>(i) * width;
                S* drow = dst + idx_copy[i] * width;
                for (int64_t j = 0; j < width; ++j) drow[j] += grow[j];
            }
        },
        "embedding_lookup");
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
    S acc = S(0);
    for (const S x : a.values()) acc += x;
    return make_op<S>(
        {1}, std::vector<S>{acc}, {a},
        [](Node<S>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            const S g = n.grad[0];
            for (S& d : pa.grad) d += g;
        },
        "sum");
}

// --- losses --------------------------------------------------------------------

namespace {
template <class S>
constexpr S kProbClamp = S(1e-7);
}

template <class S>
Tensor<S> bce_sum(const Tensor<S>& target, const Tensor<S>& posterior) {
    require(target.shape() == posterior.shape(),
            "bce_sum: target shape " + shape_str(target.shape()) + " != posterior shape " +
                shape_str(posterior.shape()));
    const S* y = target.values().data();
    const S* p = posterior.values().data();
    S acc = S(0);
    for (int64_t i = 0; i < posterior.size(); ++i) {
        if (p[i] < S(-1e-6) || p[i] > S(1) + S(1e-6)) {
            throw std::invalid_argument("bce_sum: posterior " + std::to_string(p[i]) +
                                        " outside (0, 1)");
        }
        const S pc = std::clamp(p[i], kProbClamp<S>, S(1) - kProbClamp<S>);
        acc -= y[i] * std::log(pc) + (S(1) - y[i]) * std::log(S(1) - pc);
    }
    return make_op<S>(
        {1}, std::vector<S>{acc}, {target, posterior},
        [](Node<S>& n) {
            auto& pt = *n.parents[0];
            auto& pp = *n.parents[1];
            const S g = n.grad[0];
            const S* y = pt.value.data();
            const S* p = pp.value.data();
            if (pp.requires_grad) {
                pp.ensure_grad();
                S* dst = pp.grad.data();
                for (size_t i = 0; i < pp.value.size(); ++i) {
                    const S pc = std::clamp(p[i], kProbClamp<S>, S(1) - kProbClamp<S>);
                    dst[i] += g * (-y[i] / pc + (S(1) - y[i]) / (S(1) - pc));
                }
            }
            if (pt.requires_grad) {
                pt.ensure_grad();
                S* dst = pt.grad.data();
                for (size_t i = 0; i < pt.value.size(); ++i) {
                    const S pc = std::clamp(p[i], kProbClamp<S>, S(1) - kProbClamp<S>);
                    dst[i] += g * (std::log(S(1) - pc) - std::log(pc));
                }
            }
        },
        "bce_sum");
}

template <class S>
Tensor<S> cce_sum(std::span<const uint8_t> ids, const Tensor<S>& logits) {
    require(logits.rank() >= 1, "cce_sum: logits must have a class axis");
    const int64_t classes = logits.extent(-1);
    const int64_t cells = logits.size() / classes;
    require(static_cast<int64_t>(ids.size()) == cells,
            "cce_sum: " + std::to_string(ids.size()) + " ids for " + std::to_string(cells) +
                " cells of " + shape_str(logits.shape()));
    const S* x = logits.values().data();
    std::vector<S> probs(logits.size());
    S acc = S(0);
    for (int64_t c = 0; c < cells; ++c) {
        require(ids[c] < classes, "cce_sum: class id " + std::to_string(ids[c]) +
                                      " >= " + std::to_string(classes));
        const S* row = x + c * classes;
        S* prow = probs.data() + c * classes;
        S mx = row[0];
        for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        S z = S(0);
        for (int64_t j = 0; j < classes; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        const S inv = S(1) / z;
        for (int64_t j = 0; j < classes; ++j) prow[j] *= inv;
        acc -= std::log(prow[ids[c]]);
    }
    std::vector<uint8_t> ids_copy(ids.begin(), ids.end());
    return make_op<S>(
        {1}, std::vector<S>{acc}, {logits},
        [classes, cells, probs = std::move(probs), ids_copy = std::move(ids_copy)](Node<S>& n) {
            auto& pl = *n.parents[0];
            pl.ensure_grad();
            S* dst = pl.grad.data();
            const S g = n.grad[0];
            for (int64_t c = 0; c < cells; ++c) {
                const S* prow = probs.data() + c * classes;
                S* drow = dst + c * classes;
                for (int64_t j = 0; j < classes; ++j) drow[j] += g * prow[j];
                drow[ids_copy[c]] -= g;
            }
        },
        "cce_sum");
}

// --- backward ------------------------------------------------------------------

template <class S>
void backward(const Tensor<S>& loss) {
    require(loss.defined() && loss.size() == 1,
            "backward: loss must be scalar" +
                (loss.defined() ? ", got shape " + shape_str(loss.shape()) : std::string()));
    Node<S>* root = loss.node().get();
    if (!root->requires_grad) return;

    // Post-order over parent edges: inputs come before consumers.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> visited;
    struct Frame {
        Node<S>* n;
        size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node<S>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

template <class S>
FiniteDiffReport finite_diff_check(const std::function<Tensor<S>()>& loss_fn,
                                   std::span<const std::pair<std::string, Tensor<S>>> params,
                                   double eps, int64_t max_coords, uint64_t seed) {
    FiniteDiffReport report;
    if (params.empty()) return report;
    require(eps > 0.0, "finite_diff_check: eps must be positive");

    for (const auto& [name, p] : params) {
        Tensor<S> t = p;
        t.zero_grad();
    }
    Tensor<S> loss = loss_fn();
    backward(loss);
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
        if (analytic.back().empty()) analytic.back().assign(p.size(), S(0));
    }

    Rng rng(seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<S> t = params[pi].second;
        const int64_t sz = t.size();
        std::vector<int64_t> coords;
        if (sz <= max_coords) {
            coords.resize(sz);
            for (int64_t i = 0; i < sz; ++i) coords[i] = i;
        } else {
            coords.resize(max_coords);
            for (auto& c : coords) c = static_cast<int64_t>(rng.uniform_index(sz));
        }
        for (const int64_t ci : coords) {
            S* v = t.mut_values().data();
            const S orig = v[ci];
            v[ci] = orig + static_cast<S>(eps);
            const double fp = static_cast<double>(loss_fn().item());
            v[ci] = orig - static_cast<S>(eps);
            const double fm = static_cast<double>(loss_fn().item());
            v[ci] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double exact = static_cast<double>(analytic[pi][ci]);
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            const double rel = std::abs(exact - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = params[pi].first;
                report.worst_index = ci;
            }
        }
    }
    return report;
}

// --- explicit instantiations ----------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;

#define HFT_INSTANTIATE_OPS(S)                                                              \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> scale(const Tensor<S>&, S);                                         \
    template Tensor<S> relu(const Tensor<S>&);                                             \
    template Tensor<S> sigmoid(const Tensor<S>&);                                          \
    template Tensor<S> softmax(const Tensor<S>&, int);                                     \
    template Tensor<S> layer_norm(const Tensor<S>&, int, S);                               \
    template Tensor<S> reshape(const Tensor<S>&, Shape);                                   \
    template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                 \
    template Tensor<S> transpose(const Tensor<S>&, int, int);                              \
    template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                         \
    template Tensor<S> slice(const Tensor<S>&, int, int64_t, int64_t);                     \
    template Tensor<S> expand_leading(const Tensor<S>&, int64_t);                          \
    template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&, bool);                   \
    template Tensor<S> conv1d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
    template Tensor<S> dropout(const Tensor<S>&, double, bool, Rng&);                      \
    template Tensor<S> embedding_lookup(const Tensor<S>&, std::span<const int64_t>);       \
    template Tensor<S> sum(const Tensor<S>&);                                              \
    template Tensor<S> bce_sum(const Tensor<S>&, const Tensor<S>&);                        \
    template Tensor<S> cce_sum(std::span<const uint8_t>, const Tensor<S>&);                \
    template void backward(const Tensor<S>&);                                              \
    template FiniteDiffReport finite_diff_check(                                           \
        const std::function<Tensor<S>()>&,                                                 \
        std::span<const std::pair<std::string, Tensor<S>>>, double, int64_t, uint64_t);

HFT_INSTANTIATE_OPS(float)
HFT_INSTANTIATE_OPS(double)

#undef HFT_INSTANTIATE_OPS

}  // namespace hft::nn
