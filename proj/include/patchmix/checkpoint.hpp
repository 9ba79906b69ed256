#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchmix/encoder.hpp"

namespace patchmix {

/// Binary checkpoint container.
///
/// Layout (all integers little-endian):
///   8 bytes  magic "PMXCKPT\0"
///   u32      format version (1)
///   u32 x 10 ViTConfig: patch_side depth heads token_dim mlp_ratio
///            image_side channels proj_hidden pred_hidden out_dim
///   u32 + bytes  free-form metadata (resolved config text)
///   u32      blob count, then per blob:
///            u32 + bytes name, u8 dtype (0 = f32, 1 = f64), u32 rank,
///            u32 x rank dims, values (4 or 8 bytes each, little-endian)
struct CheckpointBlob {
    enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };
    std::string name;
    Dtype dtype = Dtype::F32;
    Tensor value;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    ViTConfig cfg;
    std::string metadata;
    std::vector<CheckpointBlob> blobs;

    void add(std::string name, const Tensor& value, CheckpointBlob::Dtype dtype);
    void add_params(const std::string& prefix, const ParamSet& set, CheckpointBlob::Dtype dtype);
    void add_buffers(const std::string& prefix, const BnBuffers& buffers, CheckpointBlob::Dtype dtype);

    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    /// Overwrites every parameter in `set` from blobs named prefix + name.
    void load_params(const std::string& prefix, ParamSet& set) const;
    void load_buffers(const std::string& prefix, BnBuffers& buffers) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace patchmix
