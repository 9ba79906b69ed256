#pragma once

#include <cstddef>

namespace patchmix {

enum class ScheduleKind {
    /// Linear 0 -> start over the warmup steps, then half-cosine start -> end.
    WarmupCosine,
    /// Half-cosine start -> end over all steps.
    Cosine,
};

/// Value at `step` of a schedule over `total_steps`. The cosine part is
/// evaluated as start * a + end * (1 - a), a = (1 + cos(pi * progress)) / 2,
/// so both endpoints are reproduced exactly.
double schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double start,
                double end, ScheduleKind kind);

}  // namespace patchmix
