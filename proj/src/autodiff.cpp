#include "patchmix/autodiff.hpp"

#include <stdexcept>

namespace patchmix {

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad});
    return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward rule) {
    bool needs = false;
    for (Var p : parents) {
        if (p.valid() && nodes_.at(p.id).requires_grad) needs = true;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, needs ? std::move(rule) : nullptr, needs});
    return Var{nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty() && n.value.size() != 0) return Tensor(n.value.shape(), 0.0);
    return n.grad;
}

Tensor& Tape::grad_slot(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (g.size() != n.value.size()) {
        throw std::logic_error("tape: gradient " + shape_str(g.shape()) +
                               " does not match value " + shape_str(n.value.shape()));
    }
    Tensor& slot = grad_slot(v);
    double* dst = slot.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < slot.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var root) {
    if (value(root).size() != 1) {
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_str(value(root).shape()));
    }
    if (!nodes_.at(root.id).requires_grad) return;
    grad_slot(root)[0] += 1.0;
    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.rule || n.grad.empty()) continue;
        // Rules only touch lower-indexed nodes, so this reference stays valid.
        n.rule(*this, n.grad);
    }
}

}  // namespace patchmix
