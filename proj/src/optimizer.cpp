#include "patchmix/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace patchmix {

AdamMoments AdamMoments::zeros_like(const ParamSet& set) {
    AdamMoments out;
    for (const auto& p : set.items()) {
        out.m.emplace_back(p.value.shape());
        out.v.emplace_back(p.value.shape());
    }
    return out;
}

void optimizer_update(ParamSet& params, const std::vector<Tensor>& grads, double lr, double wd,
                      AdamMoments& moments, const AdamWConfig& cfg) {
    if (grads.size() != params.size() || moments.m.size() != params.size() ||
        moments.v.size() != params.size()) {
        throw std::invalid_argument("optimizer_update: parameter/gradient/moment counts differ");
    }
    moments.t += 1;
    const double t = static_cast<double>(moments.t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = params[k];
        require_same_shape(p.value.shape(), grads[k].shape(), p.name.c_str());
        double* theta = p.value.data();
        const double* g = grads[k].data();
        double* m = moments.m[k].data();
        double* v = moments.v[k].data();
        const double keep = p.decay ? 1.0 - lr * wd : 1.0;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double step = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
            theta[i] = theta[i] * keep - lr * step;
        }
    }
}

double global_grad_norm(const std::vector<const std::vector<Tensor>*>& grads) {
    double acc = 0.0;
    for (const auto* list : grads)
        for (const auto& g : *list)
            for (double x : g.values()) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace patchmix
