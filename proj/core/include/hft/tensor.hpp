#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hft/common.hpp"

// Dense row-major tensors with reverse-mode differentiation. Small by
// design: only the operations the transcription model needs, no general
// broadcasting (the second operand of add/mul may match a trailing suffix
// of the first operand's shape, which covers bias and positional terms).
//
// Ops that see a gradient-requiring input record themselves on the implicit
// graph (child nodes link their parents); backward() replays that record in
// reverse topological order and accumulates gradients on every
// gradient-requiring node reachable from the loss.

namespace hft::nn {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

/// When enabled, every op output is scanned for non-finite values and an
/// error is raised naming the op. Used by the test suites; off by default.
void set_finite_checks(bool on);
bool finite_checks();

template <class S>
struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated on demand during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backprop;  // pulls node.grad into parents

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

template <class S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, S v);
    static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false);
    static Tensor scalar(S v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t size() const { return node_->size(); }
    int64_t extent(int axis) const;  // negative axis counts from the back

    std::span<const S> values() const { return node_->value; }
    /// Mutable view of the raw values. Only meaningful for leaves (weights
    /// being updated in place); nodes recorded on a graph must not change.
    std::span<S> mut_values() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Gradient accumulated by the latest backward(). Empty if none.
    std::span<const S> grad() const { return node_->grad; }
    std::span<S> mut_grad() { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

    S item() const;  // value of a single-element tensor

    std::shared_ptr<Node<S>>& node() { return node_; }
    const std::shared_ptr<Node<S>>& node() const { return node_; }

private:
    std::shared_ptr<Node<S>> node_;
};

// --- elementwise and shape ops --------------------------------------------

/// b's shape must equal a's shape or a trailing suffix of it.
template <class S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> scale(const Tensor<S>& a, S c);
template <class S> Tensor<S> relu(const Tensor<S>& a);
template <class S> Tensor<S> sigmoid(const Tensor<S>& a);
template <class S> Tensor<S> softmax(const Tensor<S>& a, int axis);
template <class S> Tensor<S> layer_norm(const Tensor<S>& a, int axis, S eps = S(1e-5));

template <class S> Tensor<S> reshape(const Tensor<S>& a, Shape shape);
template <class S> Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes);
template <class S> Tensor<S> transpose(const Tensor<S>& a, int axis0, int axis1);
template <class S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);
template <class S> Tensor<S> slice(const Tensor<S>& a, int axis, int64_t start, int64_t stop);
/// Prepends a leading axis of extent n (values repeated n times).
template <class S> Tensor<S> expand_leading(const Tensor<S>& a, int64_t n);

/// a: (..., m, k). b: (k, n) applied to every leading batch, or batched with
/// leading extents equal to a's. transpose_b swaps b's last two axes.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false);

/// x: (batch, in_channels, length), w: (out_channels, in_channels, kernel),
/// bias: (out_channels) or undefined. Stride 1, no padding.
template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias);

/// Inverted dropout: identity when !train or rate == 0.
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double rate, bool train, Rng& rng);

/// table: (rows, width); gathers table[idx[i], :] into (n, width).
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const int64_t> idx);

template <class S> Tensor<S> sum(const Tensor<S>& a);  // scalar

// --- losses ----------------------------------------------------------------

/// Sum over all cells of -[y log p + (1-y) log(1-p)], soft targets allowed.
/// p is clamped to [1e-7, 1-1e-7] before the logs; values outside (0,1) by
/// more than 1e-6 are an error.
template <class S> Tensor<S> bce_sum(const Tensor<S>& target, const Tensor<S>& posterior);

/// logits: (..., classes); ids: one class per leading cell, each in
/// [0, classes). Sum over cells of -log softmax(logits)[id].
template <class S> Tensor<S> cce_sum(std::span<const uint8_t> ids, const Tensor<S>& logits);

// --- reverse mode ------------------------------------------------------------

/// loss must be scalar. Accumulates into .grad of every gradient-requiring
/// node reachable from loss (call zero_grad on leaves between steps).
template <class S> void backward(const Tensor<S>& loss);

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
};

/// Central-difference check of analytic gradients. loss_fn re-evaluates the
/// loss from the current parameter values; at most max_coords coordinates
/// per tensor are probed (sampled deterministically from seed). Relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <class S>
FiniteDiffReport finite_diff_check(const std::function<Tensor<S>()>& loss_fn,
                                   std::span<const std::pair<std::string, Tensor<S>>> params,
                                   double eps, int64_t max_coords = 200, uint64_t seed = 0);

}  // namespace hft::nn
