#pragma once

#include <array>

#include "patchmix/patch_ops.hpp"
#include "patchmix/rng.hpp"

namespace patchmix {

/// Settings that differ between the two views.
struct ViewAugConfig {
    double blur_probability = 1.0;
    double solarization_probability = 0.0;
};

/// Stochastic view pipeline. Defaults are the CIFAR settings: crop area
/// [0.1, 1], aspect [3/4, 4/3], flip 0.5, jitter 0.8 with (0.4, 0.4, 0.2,
/// 0.1), grayscale 0.2, blur sigma [0.1, 2], view 1 blur 1.0 / solarize 0.0,
/// view 2 blur 0.1 / solarize 0.2.
struct AugConfig {
    double crop_area_min = 0.1;
    double crop_area_max = 1.0;
    double crop_aspect_min = 3.0 / 4.0;
    double crop_aspect_max = 4.0 / 3.0;
    double flip_probability = 0.5;
    double jitter_probability = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.2;
    double hue = 0.1;
    double grayscale_probability = 0.2;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double solarize_threshold = 0.5;
    /// Disables jitter and grayscale (for data without color semantics).
    bool color_ops = true;
    std::array<ViewAugConfig, 2> views{{{1.0, 0.0}, {0.1, 0.2}}};

    /// Every stochastic step disabled; augment_view becomes the identity.
    static AugConfig identity();
    void validate() const;
};

/// Gaussian blur kernel width for an image side: side/10 rounded to odd, at least 3.
std::size_t blur_kernel_size(std::size_t image_side);

/// Crop-resize, flip, color jitter, grayscale, blur, solarize (in that order),
/// each image drawing its own parameters from rng. view is 1 or 2.
ImageBatch augment_view(const ImageBatch& batch, const AugConfig& cfg, int view, Rng& rng);

}  // namespace patchmix
