#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "patchmix/patch_ops.hpp"
#include "patchmix/rng.hpp"
#include "patchmix/tensor.hpp"

namespace testutil {

inline patchmix::Tensor random_tensor(patchmix::Shape shape, patchmix::Rng& rng, double lo = -1.0, double hi = 1.0) {
    patchmix::Tensor t(std::move(shape));
    for (double& x : t.values()) x = rng.uniform(lo, hi);
    return t;
}

inline patchmix::ImageBatch random_images(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                          patchmix::Rng& rng) {
    return patchmix::ImageBatch(random_tensor({n, c, h, w}, rng, 0.0, 1.0));
}

inline double max_abs_diff(const patchmix::Tensor& a, const patchmix::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Patch batch whose patch (i, j) holds the single value 100 * i + j.
inline patchmix::PatchBatch id_patches(std::size_t n, std::size_t t) {
    patchmix::PatchBatch pb;
    pb.patches = patchmix::Tensor(patchmix::Shape{n, t, 1});
    pb.patch_side = 1;
    pb.grid_h = 1;
    pb.grid_w = t;
    pb.channels = 1;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j) pb.patch(i, j)[0] = static_cast<double>(100 * i + j);
    return pb;
}

}  // namespace testutil
