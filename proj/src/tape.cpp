#include "fewshot/tape.hpp"

namespace fewshot {

Tape::NodeId Tape::leaf(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::record(std::vector<NodeId> inputs, Matrix value, BackwardFn backward) {
    Node n;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.backward = std::move(backward);
    for (NodeId in : n.inputs) {
        if (nodes_[in].needs_grad) {
            n.needs_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::backward(NodeId root) {
    if (root < 0 || root >= size()) {
        throw ShapeError("backward root id out of range");
    }
    const Matrix& rv = nodes_[root].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ShapeError("backward root must be a 1x1 scalar, got " + rv.shape_str());
    }

    // Fresh zero gradients for every node at or below the root.
    for (NodeId id = 0; id <= root; ++id) {
        Node& n = nodes_[id];
        n.grad = Matrix(n.value.rows(), n.value.cols());
    }

    // Mark nodes the root actually depends on; everything else keeps a zero
    // gradient and is skipped in the sweep.
    std::vector<char> reachable(static_cast<std::size_t>(root) + 1, 0);
    std::vector<NodeId> stack{root};
    reachable[root] = 1;
    while (!stack.empty()) {
        const NodeId id = stack.back();
        stack.pop_back();
        for (NodeId in : nodes_[id].inputs) {
            if (!reachable[in] && nodes_[in].needs_grad) {
                reachable[in] = 1;
                stack.push_back(in);
            }
        }
    }

    nodes_[root].grad(0, 0) = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!reachable[id] || !n.needs_grad || !n.backward) continue;
        n.backward(*this, id);
    }
}

}  // namespace fewshot
