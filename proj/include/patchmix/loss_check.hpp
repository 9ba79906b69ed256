#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "patchmix/gradcheck.hpp"

namespace patchmix {

struct LossGradCheckConfig {
    std::size_t batch = 4;
    std::size_t dim = 8;
    std::size_t mix_count = 2;
    double tau = 0.2;
    double step = 1e-3;
    double tolerance = 1e-4;
    /// false drops the stop-gradient on the momentum-branch inputs.
    bool stop_gradient = true;
    std::uint64_t seed = 0;
};

struct LossGradEntry {
    std::string name;  // l_mto, l_mtm, l_oto, l_total
    GradCheckResult result;
    bool passed = false;
};

struct LossGradReport {
    std::vector<LossGradEntry> entries;
    /// Largest |dL_total/dz| over the momentum-branch inputs.
    double xi_grad_max_abs = 0.0;

    bool xi_grad_zero() const { return xi_grad_max_abs == 0.0; }
    bool passed() const;
};

/// Finite-difference checks of every loss with respect to the online-branch
/// embeddings on a random batch, plus the zero-gradient check on the
/// momentum-branch embeddings of the total loss.
LossGradReport run_loss_grad_check(const LossGradCheckConfig& cfg);

}  // namespace patchmix
