#pragma once

#include <cstddef>
#include <vector>

#include "patchmix/rng.hpp"
#include "patchmix/tensor.hpp"

namespace patchmix {

/// Image batch [N, C, H, W] with pixel values in [0, 1].
class ImageBatch {
public:
    ImageBatch() = default;
    /// Validates rank 4, N >= 1 and finite values.
    explicit ImageBatch(Tensor pixels);

    std::size_t count() const { return pixels_.dim(0); }
    std::size_t channels() const { return pixels_.dim(1); }
    std::size_t height() const { return pixels_.dim(2); }
    std::size_t width() const { return pixels_.dim(3); }
    std::size_t image_size() const { return channels() * height() * width(); }

    const Tensor& pixels() const { return pixels_; }
    Tensor& pixels() { return pixels_; }

    double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return pixels_[((n * channels() + c) * height() + y) * width() + x];
    }
    double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return pixels_[((n * channels() + c) * height() + y) * width() + x];
    }

    /// Copies the listed images into a new batch.
    ImageBatch gather(const std::vector<std::size_t>& indices) const;

    bool operator==(const ImageBatch&) const = default;

private:
    Tensor pixels_;
};

/// Per-image patch sequences [N, T, D], T = (H/P)(W/P), D = C*P*P.
/// Patches run in row-major grid order; values inside a patch are laid out
/// channel-major, then row, then column.
struct PatchBatch {
    Tensor patches;
    std::size_t patch_side = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t channels = 0;

    std::size_t count() const { return patches.dim(0); }
    std::size_t tokens() const { return patches.dim(1); }
    std::size_t patch_dim() const { return patches.dim(2); }

    const double* patch(std::size_t i, std::size_t j) const {
        return patches.data() + (i * tokens() + j) * patch_dim();
    }
    double* patch(std::size_t i, std::size_t j) {
        return patches.data() + (i * tokens() + j) * patch_dim();
    }

    bool operator==(const PatchBatch&) const = default;
};

/// A bijection k on {0..T-1} with its inverse r = argsort(k).
class Permutation {
public:
    Permutation() = default;
    /// Validates that `forward` is a bijection and computes the inverse.
    explicit Permutation(std::vector<std::size_t> forward);

    static Permutation identity(std::size_t length);

    std::size_t size() const { return forward_.size(); }
    const std::vector<std::size_t>& forward() const { return forward_; }
    const std::vector<std::size_t>& inverse() const { return inverse_; }

    bool operator==(const Permutation&) const = default;

private:
    std::vector<std::size_t> forward_;
    std::vector<std::size_t> inverse_;
};

PatchBatch patchify(const ImageBatch& batch, std::size_t patch_side);
ImageBatch unpatchify(const PatchBatch& pb);

/// Uniform random permutation (Fisher-Yates).
Permutation sample_permutation(std::size_t length, Rng& rng);

/// out[i][j] = pb[i][k(j)], the same k for every image.
PatchBatch shuffle(const PatchBatch& pb, const Permutation& perm);
/// out[i][j] = pb[i][r(j)]; exact inverse of shuffle.
PatchBatch unshuffle(const PatchBatch& pb, const Permutation& perm);

}  // namespace patchmix
