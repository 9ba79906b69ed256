#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "patchmix/evaluation.hpp"

using namespace patchmix;

namespace {

// Two Gaussian clusters around +e0 and -e0 in d dimensions.
void two_clusters(std::size_t n, std::size_t d, double spread, Rng& rng, Tensor& x, std::vector<std::size_t>& y) {
    x = Tensor(Shape{n, d});
    y.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        for (std::size_t k = 0; k < d; ++k) x.at(i, k) = rng.normal(0.0, spread);
        x.at(i, 0) += y[i] ? -1.0 : 1.0;
    }
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("feature bank rows are unit norm") {
    Rng rng(1);
    const FeatureBank bank = FeatureBank::build(testutil::random_tensor({10, 6}, rng), std::vector<std::size_t>(10, 0), 1);
    for (std::size_t i = 0; i < 10; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 6; ++k) s += bank.features.at(i, k) * bank.features.at(i, k);
        CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-6);
    }
    CHECK_THROWS(FeatureBank::build(Tensor(Shape{2, 3}), {0, 0}, 1));
}

TEST_CASE("k=1 query equal to a bank vector returns its label") {
    Rng rng(2);
    const Tensor raw = testutil::random_tensor({12, 5}, rng);
    std::vector<std::size_t> labels(12);
    for (std::size_t i = 0; i < 12; ++i) labels[i] = i % 4;
    const FeatureBank bank = FeatureBank::build(raw, labels, 4);
    const KnnResult r = knn_classify(bank, raw, labels, 1, 0.07);
    CHECK(r.accuracy == 1.0);
    CHECK(r.predictions == labels);
}

TEST_CASE("antipodal classes are classified perfectly") {
    Rng rng(3);
    Tensor bx, qx;
    std::vector<std::size_t> by, qy;
    two_clusters(40, 4, 0.1, rng, bx, by);
    two_clusters(20, 4, 0.1, rng, qx, qy);
    const KnnResult r = knn_classify(FeatureBank::build(bx, by, 2), qx, qy, 5, 0.07);
    CHECK(r.accuracy == 1.0);
    REQUIRE(r.per_class_accuracy.size() == 2);
    CHECK(r.per_class_accuracy[0] == 1.0);
}

TEST_CASE("k = bank size with a huge temperature predicts the majority class") {
    Rng rng(4);
    const Tensor raw = testutil::random_tensor({9, 5}, rng);
    const std::vector<std::size_t> labels = {2, 2, 0, 2, 1, 2, 0, 2, 1};
    const FeatureBank bank = FeatureBank::build(raw, labels, 3);
    const KnnResult r = knn_classify(bank, testutil::random_tensor({7, 5}, rng), {}, 9, 1e12);
    for (std::size_t p : r.predictions) CHECK(p == 2);
    CHECK(std::isnan(r.accuracy));
}

TEST_CASE("vote ties go to the smaller class index") {
    // two bank rows equidistant from the query, different labels
    const Tensor bank_raw(Shape{2, 2}, {1.0, 1.0, 1.0, -1.0});
    const FeatureBank bank = FeatureBank::build(bank_raw, {1, 0}, 2);
    const KnnResult r = knn_classify(bank, Tensor(Shape{1, 2}, {1.0, 0.0}), {0}, 2, 0.07);
    CHECK(r.predictions[0] == 0);
}

TEST_CASE("positive rescaling of raw features leaves predictions unchanged") {
    Rng rng(5);
    const Tensor bank_raw = testutil::random_tensor({30, 6}, rng);
    std::vector<std::size_t> labels(30);
    for (std::size_t i = 0; i < 30; ++i) labels[i] = rng.below(3);
    const Tensor q = testutil::random_tensor({15, 6}, rng);
    const KnnResult a = knn_classify(FeatureBank::build(bank_raw, labels, 3), q, {}, 7, 0.1);
    Tensor bs = bank_raw, qs = q;
    for (Tensor* t : {&bs, &qs})
        for (std::size_t i = 0; i < t->dim(0); ++i) {
            const double s = rng.uniform(0.01, 100.0);
            for (std::size_t k = 0; k < t->dim(1); ++k) t->at(i, k) *= s;
        }
    const KnnResult b = knn_classify(FeatureBank::build(bs, labels, 3), qs, {}, 7, 0.1);
    CHECK(a.predictions == b.predictions);
}

TEST_CASE("invalid kNN inputs are rejected") {
    const FeatureBank empty;
    CHECK_THROWS(knn_classify(empty, Tensor(Shape{1, 2}, 1.0), {}, 1));
    const FeatureBank bank = FeatureBank::build(Tensor(Shape{2, 2}, {1, 0, 0, 1}), {0, 1}, 2);
    CHECK_THROWS(knn_classify(bank, Tensor(Shape{1, 2}, 1.0), {}, 3));
    CHECK_THROWS(knn_classify(bank, Tensor(Shape{1, 3}, 1.0), {}, 1));
}

TEST_CASE("similarity scores") {
    const Tensor a(Shape{2}, {0.6, 0.8});
    const Tensor keys(Shape{3, 2}, {0.6, 0.8, 0.8, -0.6, -0.6, -0.8});
    const auto s = similarity_scores(a, keys, 0.07);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == doctest::Approx(std::exp(-1.0 / 0.07)).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(6.2e-7).epsilon(0.01));
    CHECK(s[2] == doctest::Approx(std::exp(-2.0 / 0.07)).epsilon(1e-12));
    // monotone in cosine similarity
    Rng rng(6);
    const Tensor k2 = testutil::random_tensor({50, 4}, rng);
    const Tensor q = testutil::random_tensor({1, 4}, rng);
    const auto sc = similarity_scores(q, k2);
    const FeatureBank nb = FeatureBank::build(k2, std::vector<std::size_t>(50, 0), 1);
    const FeatureBank nq = FeatureBank::build(q, {0}, 1);
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 50; ++j) {
            double ci = 0, cj = 0;
            for (std::size_t k = 0; k < 4; ++k) {
                ci += nq.features[k] * nb.features.at(i, k);
                cj += nq.features[k] * nb.features.at(j, k);
            }
            if (ci < cj) CHECK(sc[i] <= sc[j]);
        }
    for (double v : sc) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("linear probe on separable features reaches 0.99") {
    Rng rng(7);
    Tensor tx, vx;
    std::vector<std::size_t> ty, vy;
    two_clusters(200, 8, 0.2, rng, tx, ty);
    two_clusters(100, 8, 0.2, rng, vx, vy);
    ProbeConfig cfg;
    cfg.epochs = 50;
    cfg.batch = 32;
    const ProbeResult r = linear_probe(tx, ty, vx, vy, 2, cfg);
    CHECK(r.val_accuracy >= 0.99);
    CHECK(r.train_accuracy >= 0.99);
}

TEST_CASE("linear probe on shuffled labels stays near chance") {
    Rng rng(8);
    const Tensor tx = testutil::random_tensor({400, 8}, rng);
    const Tensor vx = testutil::random_tensor({2000, 8}, rng);
    std::vector<std::size_t> ty(400), vy(2000);
    for (auto& y : ty) y = rng.below(2);
    for (auto& y : vy) y = rng.below(2);
    ProbeConfig cfg;
    cfg.epochs = 20;
    cfg.batch = 64;
    const ProbeResult r = linear_probe(tx, ty, vx, vy, 2, cfg);
    CHECK(std::abs(r.val_accuracy - 0.5) <= 0.05);
}

TEST_CASE("probe and kNN agree on a toy set where both are exact") {
    Rng rng(9);
    Tensor tx, vx;
    std::vector<std::size_t> ty, vy;
    two_clusters(60, 4, 0.05, rng, tx, ty);
    two_clusters(30, 4, 0.05, rng, vx, vy);
    ProbeConfig cfg;
    cfg.epochs = 30;
    cfg.batch = 16;
    const ProbeResult p = linear_probe(tx, ty, vx, vy, 2, cfg);
    const KnnResult k = knn_classify(FeatureBank::build(tx, ty, 2), vx, vy, 5, 0.07);
    CHECK(p.val_predictions == k.predictions);
}

TEST_CASE("backbone probe leaves the backbone untouched, finetune included") {
    ViTConfig m = ViTConfig::micro();
    m.proj_hidden = m.pred_hidden = 8;
    m.out_dim = 8;
    Rng rng(10);
    const EncoderParams p = init_encoder(m, rng);
    SynthConfig sc;
    sc.per_class = 16;
    const LabeledDataset train = synth_blobs(sc);
    sc.split = Split::Val;
    sc.per_class = 8;
    const LabeledDataset val = synth_blobs(sc);
    const ParamSet before = p.backbone;
    ProbeConfig cfg = ProbeConfig::finetune_preset();
    cfg.epochs = 2;
    cfg.batch = 16;
    CHECK(cfg.finetune);
    const ProbeResult r = linear_probe(p.backbone, m, train, val, cfg);
    CHECK(p.backbone == before);
    CHECK(r.val_predictions.size() == val.size());
}

TEST_CASE("attention maps") {
    const ViTConfig m = ViTConfig::micro();
    Rng rng(11);
    const EncoderParams p = init_encoder(m, rng);
    const ImageBatch img = testutil::random_images(1, 3, 8, 8, rng);
    const Tensor a = attention_maps(p.backbone, m, img);
    CHECK(a.shape() == Shape{m.heads, 4, 4});
    for (std::size_t h = 0; h < m.heads; ++h) {
        double s = 0.0;
        for (std::size_t k = 0; k < 16; ++k) {
            CHECK(a[h * 16 + k] >= 0.0);
            s += a[h * 16 + k];
        }
        CHECK(s <= 1.0 + 1e-12);
        CHECK(s > 0.0);
    }
    CHECK(attention_maps(p.backbone, m, img) == a);
    const ImageBatch tiled = tile_attention_maps(a, 4);
    CHECK(tiled.height() == 16);
    CHECK(tiled.width() == 2 * 16 + 1);
    CHECK_THROWS(attention_maps(p.backbone, m, testutil::random_images(2, 3, 8, 8, rng)));
}

TEST_CASE("features are extracted in chunks without changing values") {
    ViTConfig m = ViTConfig::micro();
    Rng rng(12);
    const EncoderParams p = init_encoder(m, rng);
    SynthConfig sc;
    sc.per_class = 10;
    const LabeledDataset d = synth_blobs(sc);
    const Tensor whole = extract_features(p.backbone, m, d, 1000);
    const Tensor parts = extract_features(p.backbone, m, d, 7);
    CHECK(testutil::max_abs_diff(whole, parts) <= 1e-12);
    CHECK(whole.shape() == Shape{20, 32});
}

}  // TEST_SUITE
