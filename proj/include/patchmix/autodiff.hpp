#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "patchmix/tensor.hpp"

namespace patchmix {

/// Handle to a node recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

/// Reverse-mode tape.
///
/// Nodes are appended in execution order, so walking indices downward is a
/// reverse topological order. Each node with a gradient-carrying parent keeps
/// an adjoint rule; gradients accumulate additively into parents, which
/// handles fan-out. A tape is single-owner and not thread-safe.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op result. The rule is dropped when no parent needs gradient.
    Var record(Tensor value, std::initializer_list<Var> parents, Backward rule) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                      std::move(rule));
    }
    Var record(Tensor value, std::span<const Var> parents, Backward rule);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Accumulated gradient; a zero tensor of the value's shape if none arrived.
    Tensor grad(Var v) const;
    bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

    /// Adds g into the gradient slot of v (no-op when v needs no gradient).
    void accumulate(Var v, const Tensor& g);
    /// Mutable gradient slot, zero-initialized on first use.
    Tensor& grad_slot(Var v);

    /// Seeds d(root)/d(root) = 1 and runs every adjoint rule once, newest first.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward rule;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

}  // namespace patchmix
