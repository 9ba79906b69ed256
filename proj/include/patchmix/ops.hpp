#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "patchmix/autodiff.hpp"

// Differentiable primitives over Tape variables. Every op validates operand
// shapes and throws std::invalid_argument naming the offending shapes.
namespace patchmix::ops {

/// op(a)·op(b) for rank-2 operands, or batch-wise for rank-3 operands
/// sharing the leading batch axis.
Var matmul(Tape& t, Var a, Var b, bool trans_a = false, bool trans_b = false);

/// a + b, where b's shape equals a's shape or a trailing suffix of it.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);

Var softmax(Tape& t, Var a);      // over the last axis; max-subtracted
Var log_softmax(Tape& t, Var a);  // over the last axis

/// Normalizes over the last axis, then applies per-feature gamma/beta.
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-6);

struct BatchStats {
    Tensor mean;
    Tensor var;  // biased (population) variance of the batch
};

/// Batch normalization of x [N, D] with batch statistics. gamma/beta may be
/// invalid Vars for the affine-free variant. Statistics are written to *stats
/// when given.
Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double eps, BatchStats* stats);
/// Batch normalization with fixed (running) statistics.
Var batch_norm_eval(Tape& t, Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                    double eps);

Var gelu(Tape& t, Var a);  // exact erf form
Var relu(Tape& t, Var a);
Var exp(Tape& t, Var a);
Var log(Tape& t, Var a);
Var abs(Tape& t, Var a);

Var transpose(Tape& t, Var a);  // rank-2
Var permute(Tape& t, Var a, const std::vector<std::size_t>& axes);
Var reshape(Tape& t, Var a, Shape shape);
Var concat(Tape& t, std::span<const Var> parts, std::size_t axis);
Var slice(Tape& t, Var a, std::size_t axis, std::size_t begin, std::size_t end);
/// Repeats a along a new leading axis of length n.
Var broadcast_leading(Tape& t, Var a, std::size_t n);

Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);

/// Divides each row (last axis) by its L2 norm; a zero row is rejected.
Var l2_normalize(Tape& t, Var a);

/// Forwards the value unchanged; contributes nothing to the backward pass.
Var stop_gradient(Tape& t, Var a);

/// Scalar sum_k weights[k] * a[rows[k], cols[k]] over a rank-2 a.
Var weighted_pick_sum(Tape& t, Var a, std::span<const std::size_t> rows,
                      std::span<const std::size_t> cols, std::span<const double> weights);

}  // namespace patchmix::ops
