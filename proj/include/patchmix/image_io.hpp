#pragma once

#include <filesystem>

#include "patchmix/patch_ops.hpp"

namespace patchmix {

/// True when PNG support was compiled in.
bool png_available();

/// Writes image n of the batch. The format follows the extension: .png
/// (when available), .ppm (3 channels) or .pgm (1 channel). Values are
/// clamped to [0, 1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const ImageBatch& batch, std::size_t n = 0);

/// Reads a binary PPM/PGM (maxval 255) or, when available, a PNG.
ImageBatch read_image(const std::filesystem::path& path);

/// ".png" when available, ".ppm" otherwise.
const char* default_image_extension(std::size_t channels);

}  // namespace patchmix
