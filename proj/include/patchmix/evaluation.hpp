#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "patchmix/data.hpp"
#include "patchmix/encoder.hpp"

namespace patchmix {

/// L2-normalized backbone features with labels.
struct FeatureBank {
    Tensor features;  // [n, d], unit rows
    std::vector<std::size_t> labels;
    std::size_t classes = 0;

    /// Normalizes the rows of `raw`; a zero row is rejected.
    static FeatureBank build(const Tensor& raw, std::vector<std::size_t> labels, std::size_t classes);
    std::size_t size() const { return labels.size(); }
};

/// Class-token features of every image, computed in chunks.
Tensor extract_features(const ParamSet& backbone, const ViTConfig& cfg, const LabeledDataset& data,
                        std::size_t chunk = 256);

struct KnnResult {
    std::vector<std::size_t> predictions;
    double accuracy = 0.0;                   // NaN when no labels were given
    std::vector<double> per_class_accuracy;  // NaN for classes absent from the queries
    std::size_t k = 0;
    double tau = 0.0;
};

inline constexpr std::size_t kKnnDefaultK = 20;
inline constexpr double kKnnDefaultTau = 0.07;

/// Weighted kNN: top-k bank rows by cosine similarity vote with weight
/// exp(sim / tau); the heaviest class wins, ties going to the smaller index.
/// `queries` are raw features (normalized here); `labels` may be empty.
KnnResult knn_classify(const FeatureBank& bank, const Tensor& queries, const std::vector<std::size_t>& labels,
                       std::size_t k = kKnnDefaultK, double tau = kKnnDefaultTau);

inline constexpr double kSimilarityTau = 0.07;

/// exp(sim(query, key) / tau) / exp(1 / tau) per key, in (0, 1]. query is
/// [d] or [1, d], keys [n, d]; inputs are normalized first.
std::vector<double> similarity_scores(const Tensor& query, const Tensor& keys, double tau = kSimilarityTau);

struct ProbeConfig {
    std::size_t epochs = 100;
    double lr = 1e-2;
    double weight_decay = 0.0;
    std::size_t batch = 256;
    std::uint64_t seed = 0;
    /// Finetune preset: the backbone is trained together with the linear layer.
    bool finetune = false;
    double backbone_lr = 1e-4;

    static ProbeConfig finetune_preset();
};

struct ProbeResult {
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    std::vector<std::size_t> val_predictions;
};

/// Softmax-regression probe on class-token features (AdamW, cross-entropy).
/// With cfg.finetune the backbone copy is updated too; `backbone` itself is
/// never modified.
ProbeResult linear_probe(const ParamSet& backbone, const ViTConfig& model, const LabeledDataset& train,
                         const LabeledDataset& val, const ProbeConfig& cfg);

/// The same probe over precomputed features (no backbone).
ProbeResult linear_probe(const Tensor& train_features, const std::vector<std::size_t>& train_labels,
                         const Tensor& val_features, const std::vector<std::size_t>& val_labels,
                         std::size_t classes, const ProbeConfig& cfg);

/// Last-block attention from the class token to each patch, per head:
/// [heads, grid, grid] for a single image.
Tensor attention_maps(const ParamSet& backbone, const ViTConfig& cfg, const ImageBatch& image);

/// Heads side by side, each min-max scaled to [0, 1] and enlarged by
/// `scale`, separated by one black column: a [1, 1, H, W] grayscale image.
ImageBatch tile_attention_maps(const Tensor& maps, std::size_t scale);

}  // namespace patchmix
