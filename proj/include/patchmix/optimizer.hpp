#pragma once

#include <cstdint>
#include <vector>

#include "patchmix/encoder.hpp"

namespace patchmix {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments for one ParamSet, parallel to its items.
struct AdamMoments {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;

    static AdamMoments zeros_like(const ParamSet& set);
    bool operator==(const AdamMoments&) const = default;
};

/// One AdamW step: theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
/// The decay factor applies only to parameters flagged `decay`.
void optimizer_update(ParamSet& params, const std::vector<Tensor>& grads, double lr, double wd,
                      AdamMoments& moments, const AdamWConfig& cfg = {});

/// Global L2 norm over several gradient lists.
double global_grad_norm(const std::vector<const std::vector<Tensor>*>& grads);

}  // namespace patchmix
