#include "patchmix/patch_ops.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace patchmix {

ImageBatch::ImageBatch(Tensor pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 4) {
        throw std::invalid_argument("image batch: expected [N, C, H, W], got " +
                                    shape_str(pixels_.shape()));
    }
    if (pixels_.dim(0) == 0) throw std::invalid_argument("image batch: N must be >= 1");
    if (!pixels_.all_finite()) throw std::invalid_argument("image batch: non-finite pixel value");
}

ImageBatch ImageBatch::gather(const std::vector<std::size_t>& indices) const {
    Tensor out(Shape{indices.size(), channels(), height(), width()});
    const std::size_t sz = image_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= count()) {
            throw std::out_of_range("image batch: index " + std::to_string(indices[k]) +
                                    " >= " + std::to_string(count()));
        }
        std::copy_n(pixels_.data() + indices[k] * sz, sz, out.data() + k * sz);
    }
    return ImageBatch(std::move(out));
}

Permutation::Permutation(std::vector<std::size_t> forward)
    : forward_(std::move(forward)), inverse_(forward_.size(), forward_.size()) {
    for (std::size_t j = 0; j < forward_.size(); ++j) {
        const std::size_t k = forward_[j];
        if (k >= forward_.size() || inverse_[k] != forward_.size()) {
            throw std::invalid_argument("permutation: not a bijection on {0.." +
                                        std::to_string(forward_.size()) + "-1}");
        }
        inverse_[k] = j;
    }
}

Permutation Permutation::identity(std::size_t length) {
    std::vector<std::size_t> k(length);
    std::iota(k.begin(), k.end(), std::size_t{0});
    return Permutation(std::move(k));
}

PatchBatch patchify(const ImageBatch& batch, std::size_t patch_side) {
    if (patch_side == 0) throw std::invalid_argument("patchify: patch side must be positive");
    if (batch.height() % patch_side != 0) {
        throw std::invalid_argument("patchify: height " + std::to_string(batch.height()) +
                                    " is not divisible by patch side " + std::to_string(patch_side));
    }
    if (batch.width() % patch_side != 0) {
        throw std::invalid_argument("patchify: width " + std::to_string(batch.width()) +
                                    " is not divisible by patch side " + std::to_string(patch_side));
    }
    const std::size_t n = batch.count(), c = batch.channels(), p = patch_side;
    const std::size_t gh = batch.height() / p, gw = batch.width() / p;
    PatchBatch pb{Tensor(Shape{n, gh * gw, c * p * p}), p, gh, gw, c};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx) {
                double* dst = pb.patch(i, gy * gw + gx);
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t x = 0; x < p; ++x)
                            *dst++ = batch.at(i, ch, gy * p + y, gx * p + x);
            }
    return pb;
}

ImageBatch unpatchify(const PatchBatch& pb) {
    const std::size_t n = pb.count(), c = pb.channels, p = pb.patch_side;
    if (pb.tokens() != pb.grid_h * pb.grid_w || pb.patch_dim() != c * p * p) {
        throw std::invalid_argument("unpatchify: patch tensor " + shape_str(pb.patches.shape()) +
                                    " inconsistent with grid metadata");
    }
    ImageBatch out(Tensor(Shape{n, c, pb.grid_h * p, pb.grid_w * p}));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t gy = 0; gy < pb.grid_h; ++gy)
            for (std::size_t gx = 0; gx < pb.grid_w; ++gx) {
                const double* src = pb.patch(i, gy * pb.grid_w + gx);
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t x = 0; x < p; ++x)
                            out.at(i, ch, gy * p + y, gx * p + x) = *src++;
            }
    return out;
}

Permutation sample_permutation(std::size_t length, Rng& rng) {
    if (length == 0) throw std::invalid_argument("sample_permutation: length must be >= 1");
    std::vector<std::size_t> k(length);
    std::iota(k.begin(), k.end(), std::size_t{0});
    for (std::size_t i = length; i-- > 1;) {
        const auto j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(k[i], k[j]);
    }
    return Permutation(std::move(k));
}

namespace {

PatchBatch reorder(const PatchBatch& pb, const std::vector<std::size_t>& source, const char* op) {
    if (source.size() != pb.tokens()) {
        throw std::invalid_argument(std::string(op) + ": permutation length " +
                                    std::to_string(source.size()) + " != T = " +
                                    std::to_string(pb.tokens()));
    }
    PatchBatch out = pb;
    const std::size_t d = pb.patch_dim();
    for (std::size_t i = 0; i < pb.count(); ++i)
        for (std::size_t j = 0; j < pb.tokens(); ++j)
            std::copy_n(pb.patch(i, source[j]), d, out.patch(i, j));
    return out;
}

}  // namespace

PatchBatch shuffle(const PatchBatch& pb, const Permutation& perm) {
    return reorder(pb, perm.forward(), "shuffle");
}

PatchBatch unshuffle(const PatchBatch& pb, const Permutation& perm) {
    return reorder(pb, perm.inverse(), "unshuffle");
}

}  // namespace patchmix
