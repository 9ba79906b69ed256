#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchmix/autodiff.hpp"
#include "patchmix/patch_ops.hpp"
#include "patchmix/rng.hpp"

namespace patchmix {

/// Backbone and head geometry.
struct ViTConfig {
    std::size_t patch_side = 2;
    std::size_t depth = 12;
    std::size_t heads = 3;
    std::size_t token_dim = 192;
    std::size_t mlp_ratio = 4;
    std::size_t image_side = 32;
    std::size_t channels = 3;
    std::size_t proj_hidden = 4096;
    std::size_t pred_hidden = 4096;
    std::size_t out_dim = 256;

    /// ViT-Tiny/2 for 32x32 inputs: 12 blocks, 3 heads, width 192.
    static ViTConfig tiny();
    /// Desk-scale model: 2 blocks, 2 heads, width 32, 8x8 inputs, 256-wide heads.
    static ViTConfig micro();

    std::size_t grid() const { return image_side / patch_side; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t patch_dim() const { return channels * patch_side * patch_side; }
    std::size_t head_dim() const { return token_dim / heads; }

    /// Throws unless token_dim % heads == 0, image_side % patch_side == 0 and
    /// all widths are positive. depth == 0 is accepted (class token only).
    void validate() const;

    bool operator==(const ViTConfig&) const = default;
};

struct Param {
    std::string name;
    Tensor value;
    bool decay = true;  // subject to weight decay
};

/// Ordered, named parameter collection.
class ParamSet {
public:
    void add(std::string name, Tensor value, bool decay);

    std::size_t size() const { return items_.size(); }
    std::size_t numel() const;
    std::vector<Param>& items() { return items_; }
    const std::vector<Param>& items() const { return items_; }
    const Param& operator[](std::size_t i) const { return items_[i]; }
    Param& operator[](std::size_t i) { return items_[i]; }

    std::size_t index_of(std::string_view name) const;
    const Tensor& get(std::string_view name) const { return items_[index_of(name)].value; }
    Tensor& get(std::string_view name) { return items_[index_of(name)].value; }

    bool same_layout(const ParamSet& other) const;
    bool operator==(const ParamSet& other) const;

private:
    std::vector<Param> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Running batch-norm statistics keyed by layer name.
struct BnRunning {
    Tensor mean;
    Tensor var;
    bool operator==(const BnRunning&) const = default;
};
using BnBuffers = std::map<std::string, BnRunning>;

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;  // running = m * running + (1 - m) * batch
inline constexpr double kLayerNormEps = 1e-6;

enum class BnMode { Train, Eval };

/// Theta: backbone F, projection head G, prediction head H.
struct EncoderParams {
    ViTConfig cfg;
    ParamSet backbone;
    ParamSet projector;
    ParamSet predictor;
    BnBuffers buffers;
};

/// Xi: EMA copy of backbone and projection head (no prediction head).
struct MomentumParams {
    ParamSet backbone;
    ParamSet projector;
    BnBuffers buffers;
};

/// Truncated-normal (sigma 0.02) weights, zero biases, unit norms.
EncoderParams init_encoder(const ViTConfig& cfg, Rng& rng);
/// Xi <- Theta.
MomentumParams init_momentum(const EncoderParams& theta);

/// Parameters of one set registered as tape leaves.
class BoundParams {
public:
    BoundParams(Tape& tape, const ParamSet& set, bool requires_grad);
    Var operator[](std::string_view name) const { return vars_[set_->index_of(name)]; }
    Var at(std::size_t i) const { return vars_[i]; }
    /// Gradients parallel to the bound set.
    std::vector<Tensor> gradients(const Tape& tape) const;

private:
    const ParamSet* set_;
    std::vector<Var> vars_;
};

/// Last-block attention probabilities [N * heads, T + 1, T + 1].
struct AttentionCapture {
    Tensor probs;
};

/// Patch embedding, class token, positional embedding, `depth` pre-norm
/// blocks and a final layer norm; returns the class-token state [N, token_dim].
Var forward_backbone(Tape& tape, const BoundParams& backbone, const ViTConfig& cfg,
                     const PatchBatch& pb, AttentionCapture* capture = nullptr);

/// z = G(rep). In Train mode batch statistics normalize and running buffers
/// are updated; in Eval mode running buffers normalize.
Var forward_projector(Tape& tape, const BoundParams& projector, BnBuffers& buffers, BnMode mode,
                      Var rep);
/// h = H(z).
Var forward_predictor(Tape& tape, const BoundParams& predictor, BnBuffers& buffers, BnMode mode,
                      Var z);

struct HeadOutputs {
    Var z;
    Var h;
};
HeadOutputs forward_heads(Tape& tape, const BoundParams& projector, const BoundParams& predictor,
                          BnBuffers& buffers, BnMode mode, Var rep);

/// Backbone features without a gradient tape.
Tensor encode(const ParamSet& backbone, const ViTConfig& cfg, const PatchBatch& pb);

/// xi <- mu * xi + (1 - mu) * theta over backbone and projector.
void ema_update(const EncoderParams& theta, MomentumParams& xi, double mu);

}  // namespace patchmix
