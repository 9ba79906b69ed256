#include "patchmix/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchmix {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    Tape t;
    const Var leaf = t.leaf(x, false);
    return t.value(f(t, leaf)).item();
}

}  // namespace

Tensor tape_gradient(const ScalarFn& f, const Tensor& point) {
    Tape t;
    const Var leaf = t.leaf(point, true);
    const Var out = f(t, leaf);
    t.backward(out);
    return t.grad(leaf);
}

GradCheckResult check_gradients(const ScalarFn& f, const Tensor& point, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("check_gradients: step must be positive");
    GradCheckResult res;
    const Tensor analytic = tape_gradient(f, point);
    const double f0 = evaluate(f, point);
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + step;
        const double fp = evaluate(f, probe);
        probe[i] = point[i] - step;
        const double fm = evaluate(f, probe);
        probe[i] = point[i];
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(f0)) {
            ++res.non_finite;
            continue;
        }
        // One-sided slopes that disagree far beyond curvature effects mark a kink.
        const double right = (fp - f0) / step;
        const double left = (f0 - fm) / step;
        if (std::fabs(right - left) > 0.5 * (std::fabs(right) + std::fabs(left)) + 100.0 * step) {
            ++res.non_smooth;
            continue;
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double ad = analytic[i];
        const double rel = std::fabs(ad - fd) / std::max(1e-8, std::fabs(fd) + std::fabs(ad));
        ++res.compared;
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = i;
        }
    }
    return res;
}

}  // namespace patchmix
