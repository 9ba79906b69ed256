#include "patchmix/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "patchmix/ops.hpp"
#include "patchmix/optimizer.hpp"

namespace patchmix {

namespace {

Tensor normalize_rows(const Tensor& raw, const char* what) {
    if (raw.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected [n, d] features");
    Tensor out = raw;
    const std::size_t n = raw.dim(0), d = raw.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += raw[i * d + j] * raw[i * d + j];
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                        " has zero or non-finite norm");
        }
        const double inv = 1.0 / std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= inv;
    }
    return out;
}

}  // namespace

FeatureBank FeatureBank::build(const Tensor& raw, std::vector<std::size_t> labels, std::size_t classes) {
    FeatureBank b;
    b.features = normalize_rows(raw, "feature bank");
    if (labels.size() != b.features.dim(0)) throw std::invalid_argument("feature bank: label count mismatch");
    for (auto l : labels)
        if (l >= classes) throw std::invalid_argument("feature bank: label out of range");
    b.labels = std::move(labels);
    b.classes = classes;
    return b;
}

Tensor extract_features(const ParamSet& backbone, const ViTConfig& cfg, const LabeledDataset& data,
                        std::size_t chunk) {
    if (chunk == 0) throw std::invalid_argument("extract_features: chunk must be positive");
    Tensor out(Shape{data.size(), cfg.token_dim});
    for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
        const std::size_t end = std::min(data.size(), begin + chunk);
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor f = encode(backbone, cfg, patchify(data.batch(idx), cfg.patch_side));
        std::copy(f.data(), f.data() + f.size(), out.data() + begin * cfg.token_dim);
    }
    return out;
}

KnnResult knn_classify(const FeatureBank& bank, const Tensor& queries, const std::vector<std::size_t>& labels,
                       std::size_t k, double tau) {
    if (bank.size() == 0) throw std::invalid_argument("knn_classify: empty feature bank");
    if (k == 0 || k > bank.size()) {
        throw std::invalid_argument("knn_classify: k = " + std::to_string(k) + " must lie in [1, " +
                                    std::to_string(bank.size()) + "]");
    }
    if (!(tau > 0.0)) throw std::invalid_argument("knn_classify: tau must be positive");
    const Tensor q = normalize_rows(queries, "knn queries");
    const std::size_t nq = q.dim(0), d = q.dim(1), nb = bank.size();
    if (d != bank.features.dim(1)) throw std::invalid_argument("knn_classify: feature widths differ");
    if (!labels.empty() && labels.size() != nq) throw std::invalid_argument("knn_classify: label count mismatch");

    KnnResult res;
    res.k = k;
    res.tau = tau;
    std::vector<double> sims(nb), votes(bank.classes);
    std::vector<std::size_t> order(nb);
    std::vector<std::size_t> hits(bank.classes, 0), seen(bank.classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t b = 0; b < nb; ++b) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += q[i * d + j] * bank.features[b * d + j];
            sims[b] = s;
        }
        std::iota(order.begin(), order.end(), 0);
        // Equal similarities resolve to the lower bank index.
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
        std::fill(votes.begin(), votes.end(), 0.0);
        for (std::size_t r = 0; r < k; ++r) votes[bank.labels[order[r]]] += std::exp(sims[order[r]] / tau);
        std::size_t best = 0;
        for (std::size_t c = 1; c < votes.size(); ++c)
            if (votes[c] > votes[best]) best = c;
        res.predictions.push_back(best);
        if (!labels.empty()) {
            seen.at(labels[i]) += 1;
            if (best == labels[i]) {
                ++correct;
                hits[best] += 1;
            }
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.accuracy = labels.empty() || nq == 0 ? nan : static_cast<double>(correct) / static_cast<double>(nq);
    res.per_class_accuracy.assign(bank.classes, nan);
    if (!labels.empty()) {
        for (std::size_t c = 0; c < bank.classes; ++c)
            if (seen[c]) res.per_class_accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(seen[c]);
    }
    return res;
}

std::vector<double> similarity_scores(const Tensor& query, const Tensor& keys, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("similarity_scores: tau must be positive");
    const Tensor q = normalize_rows(query.reshaped({1, query.size()}), "similarity query");
    const Tensor k = normalize_rows(keys, "similarity keys");
    const std::size_t d = q.dim(1);
    if (k.dim(1) != d) throw std::invalid_argument("similarity_scores: feature widths differ");
    std::vector<double> out(k.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q[j] * k[i * d + j];
        s = std::clamp(s, -1.0, 1.0);
        out[i] = std::exp((s - 1.0) / tau);  // exp(s / tau) / exp(1 / tau)
    }
    return out;
}

ProbeConfig ProbeConfig::finetune_preset() {
    ProbeConfig c;
    c.finetune = true;
    c.epochs = 30;
    c.lr = 1e-3;
    c.weight_decay = 0.05;
    return c;
}

namespace {

// Feature source for one minibatch: a tape Var [b, d].
using FeatureFn = std::function<Var(Tape&, const std::vector<std::size_t>&)>;

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits[i * c + j] > logits[i * c + best]) best = j;
        out[i] = best;
    }
    return out;
}

double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& labels) {
    if (labels.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) ok += pred[i] == labels[i];
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

Var logits_of(Tape& t, const ParamSet& head, Var feats) {
    const BoundParams hp(t, head, false);
    return ops::add(t, ops::matmul(t, feats, hp["probe.weight"]), hp["probe.bias"]);
}

std::vector<std::size_t> predict(const ParamSet& head, const FeatureFn& features, std::size_t n,
                                 std::size_t chunk) {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < n; b += chunk) {
        std::vector<std::size_t> idx(std::min(n, b + chunk) - b);
        std::iota(idx.begin(), idx.end(), b);
        Tape t;
        const auto p = argmax_rows(t.value(logits_of(t, head, features(t, idx))));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

ProbeResult run_probe(std::size_t dim, std::size_t classes, const FeatureFn& train_feats,
                      const std::vector<std::size_t>& train_labels, const FeatureFn& val_feats,
                      std::size_t val_count, const std::vector<std::size_t>& val_labels, const ProbeConfig& cfg,
                      ParamSet* backbone, const std::function<std::vector<Tensor>(const Tape&)>& backbone_grads) {
    if (train_labels.empty()) throw std::invalid_argument("linear_probe: empty training set");
    if (cfg.batch == 0) throw std::invalid_argument("linear_probe: batch must be positive");
    for (auto l : train_labels)
        if (l >= classes) throw std::invalid_argument("linear_probe: label out of range");
    ParamSet head;
    head.add("probe.weight", Tensor(Shape{dim, classes}), true);
    head.add("probe.bias", Tensor(Shape{classes}), false);
    AdamMoments hm = AdamMoments::zeros_like(head);
    AdamMoments bm = backbone ? AdamMoments::zeros_like(*backbone) : AdamMoments{};

    const std::size_t n = train_labels.size();
    std::vector<std::size_t> order(n);
    Rng rng = Rng::derive(cfg.seed, {0x9b0be});
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t b = 0; b < n; b += cfg.batch) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + cfg.batch)));
            Tape t;
            const BoundParams hp(t, head, true);
            const Var feats = train_feats(t, idx);
            const Var logits = ops::add(t, ops::matmul(t, feats, hp["probe.weight"]), hp["probe.bias"]);
            const Var lp = ops::log_softmax(t, logits);
            std::vector<std::size_t> rows(idx.size()), cols(idx.size());
            std::vector<double> w(idx.size(), -1.0 / static_cast<double>(idx.size()));
            for (std::size_t r = 0; r < idx.size(); ++r) {
                rows[r] = r;
                cols[r] = train_labels[idx[r]];
            }
            const Var loss = ops::weighted_pick_sum(t, lp, rows, cols, w);
            t.backward(loss);
            optimizer_update(head, hp.gradients(t), cfg.lr, cfg.weight_decay, hm);
            if (backbone) optimizer_update(*backbone, backbone_grads(t), cfg.backbone_lr, cfg.weight_decay, bm);
        }
    }
    ProbeResult res;
    res.train_accuracy = accuracy(predict(head, train_feats, n, 256), train_labels);
    res.val_predictions = predict(head, val_feats, val_count, 256);
    res.val_accuracy = accuracy(res.val_predictions, val_labels);
    return res;
}

}  // namespace

ProbeResult linear_probe(const Tensor& train_features, const std::vector<std::size_t>& train_labels,
                         const Tensor& val_features, const std::vector<std::size_t>& val_labels,
                         std::size_t classes, const ProbeConfig& cfg) {
    if (cfg.finetune) throw std::invalid_argument("linear_probe: finetuning needs a backbone");
    if (train_features.rank() != 2 || val_features.rank() != 2 || train_features.dim(1) != val_features.dim(1)) {
        throw std::invalid_argument("linear_probe: expected [n, d] features of equal width");
    }
    if (train_features.dim(0) != train_labels.size()) throw std::invalid_argument("linear_probe: label count mismatch");
    const std::size_t d = train_features.dim(1);
    auto rows_of = [d](const Tensor& src) {
        return [&src, d](Tape& t, const std::vector<std::size_t>& idx) {
            Tensor out(Shape{idx.size(), d});
            for (std::size_t r = 0; r < idx.size(); ++r)
                std::copy_n(src.data() + idx[r] * d, d, out.data() + r * d);
            return t.constant(std::move(out));
        };
    };
    return run_probe(d, classes, rows_of(train_features), train_labels, rows_of(val_features),
                     val_features.dim(0), val_labels, cfg, nullptr, {});
}

ProbeResult linear_probe(const ParamSet& backbone, const ViTConfig& model, const LabeledDataset& train,
                         const LabeledDataset& val, const ProbeConfig& cfg) {
    const std::size_t classes = std::max(train.classes(), val.classes());
    if (!cfg.finetune) {
        return linear_probe(extract_features(backbone, model, train), train.labels(),
                            extract_features(backbone, model, val), val.labels(), classes, cfg);
    }
    ParamSet tuned = backbone;
    // Training features rebind the backbone on every tape; the latest binding
    // supplies the backbone gradients.
    std::unique_ptr<BoundParams> bound;
    auto train_feats = [&](Tape& t, const std::vector<std::size_t>& idx) {
        bound = std::make_unique<BoundParams>(t, tuned, true);
        return forward_backbone(t, *bound, model, patchify(train.batch(idx), model.patch_side));
    };
    auto val_feats = [&](Tape& t, const std::vector<std::size_t>& idx) {
        const BoundParams p(t, tuned, false);
        return forward_backbone(t, p, model, patchify(val.batch(idx), model.patch_side));
    };
    auto grads = [&](const Tape& t) { return bound->gradients(t); };
    return run_probe(model.token_dim, classes, train_feats, train.labels(), val_feats, val.size(), val.labels(),
                     cfg, &tuned, grads);
}

Tensor attention_maps(const ParamSet& backbone, const ViTConfig& cfg, const ImageBatch& image) {
    if (image.count() != 1) throw std::invalid_argument("attention_maps: expects a single image");
    if (cfg.depth == 0) throw std::invalid_argument("attention_maps: model has no attention blocks");
    Tape t;
    const BoundParams p(t, backbone, false);
    AttentionCapture cap;
    forward_backbone(t, p, cfg, patchify(image, cfg.patch_side), &cap);
    const std::size_t heads = cfg.heads, tk = cfg.tokens(), t1 = tk + 1, g = cfg.grid();
    Tensor out(Shape{heads, g, g});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < tk; ++j) out[h * tk + j] = cap.probs[(h * t1 + 0) * t1 + 1 + j];
    return out;
}

ImageBatch tile_attention_maps(const Tensor& maps, std::size_t scale) {
    if (maps.rank() != 3 || scale == 0) throw std::invalid_argument("tile_attention_maps: expected [heads, h, w]");
    const std::size_t heads = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    const std::size_t H = h * scale, W = heads * w * scale + (heads - 1);
    Tensor img(Shape{1, 1, H, W});
    for (std::size_t k = 0; k < heads; ++k) {
        const double* m = maps.data() + k * h * w;
        const auto [lo, hi] = std::minmax_element(m, m + h * w);
        const double span = *hi - *lo;
        const std::size_t x0 = k * (w * scale + 1);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < w * scale; ++x) {
                const double v = m[(y / scale) * w + x / scale];
                img[y * W + x0 + x] = span > 0.0 ? (v - *lo) / span : 0.0;
            }
    }
    return ImageBatch(std::move(img));
}

}  // namespace patchmix
