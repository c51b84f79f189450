#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "vitol/tensor.hpp"

namespace vitol {

struct NodeRef {
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::size_t index = kNone;
    bool valid() const { return index != kNone; }
};

// One gradient tensor per encoder block, shaped like that block's attention.
using GradStack = std::vector<Tensor>;

// Recording reverse-mode differentiation over the handful of primitives the
// transformer needs. Every op computes its value eagerly and remembers how to
// recompute it (replay) and how to push adjoints to its inputs (backward).
//
// A tape is owned by one thread; distinct tapes are independent.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    NodeRef constant(Tensor value);
    NodeRef variable(Tensor value);
    // Leaf that aliases caller-owned storage; `value` must outlive the tape.
    NodeRef parameter(const Tensor& value, bool requires_grad);

    NodeRef matmul(NodeRef a, NodeRef b);
    // x (m x k) * w (k x n) + bias (n), bias broadcast over rows.
    NodeRef linear(NodeRef x, NodeRef w, NodeRef bias);
    NodeRef add(NodeRef a, NodeRef b);
    NodeRef layer_norm(NodeRef x, NodeRef gamma, NodeRef beta);
    NodeRef gelu(NodeRef x);
    NodeRef softmax(NodeRef x);

    // qkv is s x 3d laid out [Q | K | V]; returns h x s x s scaled scores.
    NodeRef attention_scores(NodeRef qkv, std::size_t heads, double scale);
    // probs h x s x s applied to the V block of qkv; returns s x d (heads concatenated).
    NodeRef attention_apply(NodeRef probs, NodeRef qkv, std::size_t heads);

    // Stacks a 1 x d row on top of an n x d matrix.
    NodeRef prepend_row(NodeRef first, NodeRef rest);
    // Multiplies row i by the constant factor[i].
    NodeRef row_scale(NodeRef x, std::vector<double> factor);
    // Multiplies row i by sigmoid(mean of row i); the factor is differentiated.
    // With exempt_first_row, row 0 passes through unchanged.
    NodeRef importance_scale(NodeRef x, bool exempt_first_row);
    NodeRef select_row(NodeRef x, std::size_t row);
    // Scalar element x[i] of a flat view.
    NodeRef pick(NodeRef x, std::size_t i);
    // Scalar softmax(x)[i] over the flat view.
    NodeRef softmax_pick(NodeRef x, std::size_t i);
    // Scalar -log softmax(x)[target].
    NodeRef cross_entropy(NodeRef logits, std::size_t target);

    // Marks a freshly recorded node as a differentiation target. Must be called
    // before any other node consumes it.
    void watch(NodeRef node);
    const std::vector<NodeRef>& watched() const { return watched_; }

    // Reverse pass from a single-element node. Gradients from a previous call are cleared.
    void backward(NodeRef scalar);

    const Tensor& value(NodeRef node) const;
    // Adjoint of the last backward pass; zeros when the node was not reached.
    Tensor grad(NodeRef node) const;
    bool requires_grad(NodeRef node) const { return nodes_.at(node.index).requires_grad; }

    // Recomputes every non-leaf node from its inputs in recording order.
    void replay();

    std::size_t size() const { return nodes_.size(); }

    // Negative control for gradient checks: when disabled the softmax backward
    // passes the upstream adjoint through unchanged.
    void set_softmax_jacobian(bool enabled) { softmax_jacobian_ = enabled; }

  private:
    using Forward = std::function<Tensor(const Tape&)>;
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    struct Node {
        Tensor own;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        Forward forward;
        Backward backward;

        const Tensor& value() const { return external ? *external : own; }
    };

    NodeRef record(std::initializer_list<NodeRef> inputs, Forward forward, Backward backward);
    // Adjoint accumulator for `node`, or nullptr when it does not need a gradient.
    Tensor* accum(NodeRef node);
    void check(NodeRef node) const;

    std::vector<Node> nodes_;
    std::vector<NodeRef> watched_;
    bool softmax_jacobian_ = true;
};

// Gradient of a recorded scalar with respect to every watched attention node.
GradStack backward_attention_grads(Tape& tape, NodeRef scalar_output);

}  // namespace vitol
