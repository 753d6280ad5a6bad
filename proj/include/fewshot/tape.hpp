#pragma once

#include <functional>
#include <vector>

#include "fewshot/matrix.hpp"

namespace fewshot {

// Reverse-mode autodiff tape. Ops append nodes in evaluation order, so node
// ids are already a topological order; backward() walks them once in reverse.
// A tape is built per training step and discarded; it is single-threaded.
class Tape {
public:
    using NodeId = int;
    using BackwardFn = std::function<void(Tape&, NodeId self)>;

    // Differentiable leaf (parameter or input we want gradients for).
    NodeId leaf(Matrix value);
    // Non-differentiable input (data, frozen noise); gradients stop here.
    NodeId constant(Matrix value);

    NodeId record(std::vector<NodeId> inputs, Matrix value, BackwardFn backward);

    const Matrix& value(NodeId id) const { return nodes_[id].value; }
    // Gradient of the last backward() root w.r.t. this node; zero matrix if
    // the node does not feed the root.
    const Matrix& grad(NodeId id) const { return nodes_[id].grad; }
    Matrix& grad_ref(NodeId id) { return nodes_[id].grad; }
    bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }

    // Accumulates d(root)/d(node) into every node's gradient buffer. The
    // root must be a 1x1 scalar recorded on this tape. Deterministic: the
    // reverse sweep visits reachable nodes exactly once in decreasing id
    // order, so accumulation order is fixed.
    void backward(NodeId root);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        std::vector<NodeId> inputs;
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
};

}  // namespace fewshot
