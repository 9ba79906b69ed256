#pragma once

#include <cstddef>
#include <functional>

#include "patchmix/autodiff.hpp"

namespace patchmix {

/// Builds a scalar on the tape from the leaf x.
using ScalarFn = std::function<Var(Tape&, Var x)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t compared = 0;
    /// Coordinates where one-sided differences disagree (a kink); not compared.
    std::size_t non_smooth = 0;
    /// Coordinates where f was non-finite at a probe point; not compared.
    std::size_t non_finite = 0;

    bool passed(double tol) const { return compared > 0 && max_rel_error <= tol; }
};

/// Compares the tape gradient of f at `point` to central differences with
/// step h. Relative error per coordinate is |ad - fd| / max(1e-8, |fd| + |ad|).
GradCheckResult check_gradients(const ScalarFn& f, const Tensor& point, double step);

/// Tape gradient of f at point (one forward, one backward).
Tensor tape_gradient(const ScalarFn& f, const Tensor& point);

}  // namespace patchmix
