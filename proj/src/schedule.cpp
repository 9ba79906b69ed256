#include "patchmix/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace patchmix {

double schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double start,
                double end, ScheduleKind kind) {
    if (total_steps == 0) throw std::invalid_argument("schedule: total_steps must be positive");
    if (step > total_steps) {
        throw std::invalid_argument("schedule: step " + std::to_string(step) + " beyond total " +
                                    std::to_string(total_steps));
    }
    std::size_t begin = 0;
    if (kind == ScheduleKind::WarmupCosine) {
        if (warmup_steps >= total_steps) {
            throw std::invalid_argument("schedule: warmup must be shorter than the schedule");
        }
        if (step < warmup_steps) {
            return start * static_cast<double>(step) / static_cast<double>(warmup_steps);
        }
        begin = warmup_steps;
    }
    const double progress =
        static_cast<double>(step - begin) / static_cast<double>(total_steps - begin);
    const double a = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return start * a + end * (1.0 - a);
}

}  // namespace patchmix
