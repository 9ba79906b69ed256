#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "patchmix/checkpoint.hpp"
#include "patchmix/encoder.hpp"
#include "patchmix/ops.hpp"

using namespace patchmix;

namespace {

ViTConfig small_cfg() {
    ViTConfig c = ViTConfig::micro();
    c.proj_hidden = 16;
    c.pred_hidden = 16;
    c.out_dim = 8;
    return c;
}

PatchBatch random_patches(const ViTConfig& cfg, std::size_t n, Rng& rng) {
    return patchify(testutil::random_images(n, cfg.channels, cfg.image_side, cfg.image_side, rng),
                    cfg.patch_side);
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("micro backbone output is [N, 32] and heads output 256") {
    const ViTConfig cfg = ViTConfig::micro();
    CHECK(cfg.depth == 2);
    CHECK(cfg.heads == 2);
    CHECK(cfg.token_dim == 32);
    Rng rng(1);
    EncoderParams p = init_encoder(cfg, rng);
    const PatchBatch pb = random_patches(cfg, 5, rng);
    Tape t;
    const BoundParams bb(t, p.backbone, false), g(t, p.projector, false), h(t, p.predictor, false);
    const Var rep = forward_backbone(t, bb, cfg, pb);
    CHECK(t.value(rep).shape() == Shape{5, 32});
    const HeadOutputs out = forward_heads(t, g, h, p.buffers, BnMode::Train, rep);
    CHECK(t.value(out.z).shape() == Shape{5, 256});
    CHECK(t.value(out.h).shape() == Shape{5, 256});
    CHECK(encode(p.backbone, cfg, pb) == t.value(rep));
}

TEST_CASE("tiny preset geometry") {
    const ViTConfig c = ViTConfig::tiny();
    CHECK(c.patch_side == 2);
    CHECK(c.depth == 12);
    CHECK(c.heads == 3);
    CHECK(c.token_dim == 192);
    CHECK(c.tokens() == 256);
    CHECK(c.out_dim == 256);
}

TEST_CASE("invalid configs are rejected") {
    ViTConfig c = small_cfg();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg();
    c.patch_side = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg();
    c.token_dim = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("depth 0 output ignores image content") {
    ViTConfig cfg = small_cfg();
    cfg.depth = 0;
    Rng rng(2);
    const EncoderParams p = init_encoder(cfg, rng);
    const Tensor a = encode(p.backbone, cfg, random_patches(cfg, 3, rng));
    const Tensor b = encode(p.backbone, cfg, random_patches(cfg, 3, rng));
    CHECK(a == b);
    // equals layer_norm(cls + pos[0])
    const Tensor& cls = p.backbone.get("cls_token");
    const Tensor& pos = p.backbone.get("pos_embed");
    const std::size_t d = cfg.token_dim;
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < d; ++k) mean += cls[k] + pos[k];
    mean /= d;
    for (std::size_t k = 0; k < d; ++k) var += std::pow(cls[k] + pos[k] - mean, 2);
    var /= d;
    for (std::size_t k = 0; k < d; ++k)
        CHECK(a.at(1, k) == doctest::Approx((cls[k] + pos[k] - mean) / std::sqrt(var + kLayerNormEps)).epsilon(1e-12));
}

TEST_CASE("swapping two images swaps the output rows") {
    const ViTConfig cfg = small_cfg();
    Rng rng(3);
    const EncoderParams p = init_encoder(cfg, rng);
    const ImageBatch imgs = testutil::random_images(3, cfg.channels, cfg.image_side, cfg.image_side, rng);
    const Tensor a = encode(p.backbone, cfg, patchify(imgs, cfg.patch_side));
    const Tensor b = encode(p.backbone, cfg, patchify(imgs.gather({2, 1, 0}), cfg.patch_side));
    for (std::size_t k = 0; k < cfg.token_dim; ++k) {
        CHECK(a.at(0, k) == doctest::Approx(b.at(2, k)).epsilon(1e-12));
        CHECK(a.at(1, k) == doctest::Approx(b.at(1, k)).epsilon(1e-12));
    }
}

TEST_CASE("with zero positional embeddings the class token ignores patch order") {
    const ViTConfig cfg = small_cfg();
    Rng rng(4);
    EncoderParams p = init_encoder(cfg, rng);
    for (double& v : p.backbone.get("pos_embed").values()) v = 0.0;
    const PatchBatch pb = random_patches(cfg, 2, rng);
    const Tensor a = encode(p.backbone, cfg, pb);
    const Tensor b = encode(p.backbone, cfg, shuffle(pb, sample_permutation(pb.tokens(), rng)));
    CHECK(testutil::max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("patch count mismatch is rejected") {
    const ViTConfig cfg = small_cfg();
    Rng rng(5);
    const EncoderParams p = init_encoder(cfg, rng);
    const PatchBatch wrong = patchify(testutil::random_images(1, cfg.channels, 4, 4, rng), cfg.patch_side);
    CHECK_THROWS_AS(encode(p.backbone, cfg, wrong), std::invalid_argument);
}

TEST_CASE("gradient reaches backbone, projector and predictor") {
    const ViTConfig cfg = small_cfg();
    Rng rng(6);
    EncoderParams p = init_encoder(cfg, rng);
    const PatchBatch pb = random_patches(cfg, 4, rng);
    Tape t;
    const BoundParams bb(t, p.backbone, true), g(t, p.projector, true), h(t, p.predictor, true);
    const Var rep = forward_backbone(t, bb, cfg, pb);
    const HeadOutputs out = forward_heads(t, g, h, p.buffers, BnMode::Train, rep);
    Rng crng(7);
    const Var c = t.constant(testutil::random_tensor(t.value(out.h).shape(), crng));
    t.backward(ops::sum(t, ops::mul(t, out.h, c)));
    for (const BoundParams* set : {&bb, &g, &h}) {
        double total = 0.0;
        for (const Tensor& gr : set->gradients(t))
            for (double v : gr.values()) total += std::abs(v);
        CHECK(total > 0.0);
    }
}

TEST_CASE("backbone gradient matches finite differences") {
    ViTConfig cfg = small_cfg();
    cfg.depth = 1;
    Rng rng(8);
    const EncoderParams p = init_encoder(cfg, rng);
    const PatchBatch pb = random_patches(cfg, 2, rng);
    const std::size_t idx = p.backbone.index_of("block0.attn.q.weight");
    // full forward pass rebuilt per probe with a perturbed q weight
    Tensor w = p.backbone[idx].value;
    const auto loss_at = [&](const Tensor& wv, Tensor* grad) {
        ParamSet set = p.backbone;
        set[idx].value = wv;
        Tape t;
        const BoundParams bb(t, set, true);
        const Var rep = forward_backbone(t, bb, cfg, pb);
        Rng crng(9);
        const Var c = t.constant(testutil::random_tensor(t.value(rep).shape(), crng));
        const Var l = ops::sum(t, ops::mul(t, rep, c));
        if (grad) {
            t.backward(l);
            *grad = t.grad(bb.at(idx));
        }
        return t.value(l).item();
    };
    Tensor ad;
    loss_at(w, &ad);
    double worst = 0.0;
    for (std::size_t k = 0; k < w.size(); k += 37) {
        Tensor wp = w, wm = w;
        wp[k] += 1e-5;
        wm[k] -= 1e-5;
        const double fd = (loss_at(wp, nullptr) - loss_at(wm, nullptr)) / 2e-5;
        worst = std::max(worst, std::abs(fd - ad[k]) / std::max(1e-8, std::abs(fd) + std::abs(ad[k])));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("ema update closed forms") {
    const ViTConfig cfg = small_cfg();
    Rng rng(10);
    const EncoderParams theta = init_encoder(cfg, rng);
    Rng rng2(11);
    const EncoderParams other = init_encoder(cfg, rng2);
    MomentumParams xi0 = init_momentum(other);
    CHECK(xi0.buffers.count("proj.bn0") == 1);
    CHECK(xi0.buffers.count("pred.bn0") == 0);

    SUBCASE("mu = 1 leaves xi bitwise unchanged") {
        MomentumParams xi = xi0;
        for (int k = 0; k < 3; ++k) ema_update(theta, xi, 1.0);
        CHECK(xi.backbone == xi0.backbone);
        CHECK(xi.projector == xi0.projector);
    }
    SUBCASE("mu = 0 copies theta") {
        MomentumParams xi = xi0;
        ema_update(theta, xi, 0.0);
        CHECK(xi.backbone == theta.backbone);
        CHECK(xi.projector == theta.projector);
    }
    SUBCASE("k steps against constant theta") {
        const double mu = 0.9;
        const int k = 25;
        MomentumParams xi = xi0;
        for (int s = 0; s < k; ++s) ema_update(theta, xi, mu);
        const double mk = std::pow(mu, k);
        double worst = 0.0;
        for (std::size_t i = 0; i < xi.backbone.size(); ++i)
            for (std::size_t j = 0; j < xi.backbone[i].value.size(); ++j) {
                const double want = mk * xi0.backbone[i].value[j] + (1.0 - mk) * theta.backbone[i].value[j];
                worst = std::max(worst, std::abs(xi.backbone[i].value[j] - want));
            }
        CHECK(worst <= 1e-12);
    }
    SUBCASE("mu outside [0, 1] is rejected") {
        MomentumParams xi = xi0;
        CHECK_THROWS_AS(ema_update(theta, xi, 1.5), std::invalid_argument);
        CHECK_THROWS_AS(ema_update(theta, xi, -0.1), std::invalid_argument);
    }
}

TEST_CASE("eval-mode heads use running statistics") {
    const ViTConfig cfg = small_cfg();
    Rng rng(12);
    EncoderParams p = init_encoder(cfg, rng);
    const BnBuffers before = p.buffers;
    Tape t;
    const BoundParams g(t, p.projector, false), h(t, p.predictor, false);
    const Var rep = t.constant(Tensor(Shape{3, cfg.token_dim}, 0.0));
    const HeadOutputs out = forward_heads(t, g, h, p.buffers, BnMode::Eval, rep);
    CHECK(p.buffers == before);
    // zero input, zero biases, unit stats: every layer stays at zero
    for (double v : t.value(out.z).values()) CHECK(v == 0.0);
    for (double v : t.value(out.h).values()) CHECK(v == 0.0);
    forward_heads(t, g, h, p.buffers, BnMode::Train, t.constant(testutil::random_tensor({3, cfg.token_dim}, rng)));
    CHECK_FALSE(p.buffers == before);
}

TEST_CASE("checkpoint round trip") {
    const ViTConfig cfg = small_cfg();
    Rng rng(13);
    const EncoderParams p = init_encoder(cfg, rng);
    Checkpoint ck;
    ck.cfg = cfg;
    ck.metadata = "seed=13\nnote=test";
    ck.add_params("theta/", p.backbone, CheckpointBlob::Dtype::F64);
    ck.add_params("theta32/", p.backbone, CheckpointBlob::Dtype::F32);
    ck.add_buffers("buf/", p.buffers, CheckpointBlob::Dtype::F64);
    const auto path = std::filesystem::temp_directory_path() / "patchmix_test_ckpt.bin";
    write_checkpoint(path, ck);
    const Checkpoint back = read_checkpoint(path);
    CHECK(back.cfg == cfg);
    CHECK(back.metadata == ck.metadata);
    ParamSet exact = p.backbone, rounded = p.backbone;
    for (auto& it : exact.items()) for (double& v : it.value.values()) v = 0.0;
    back.load_params("theta/", exact);
    back.load_params("theta32/", rounded);
    CHECK(exact == p.backbone);
    for (std::size_t i = 0; i < rounded.size(); ++i)
        for (std::size_t k = 0; k < rounded[i].value.size(); ++k)
            CHECK(rounded[i].value[k] == static_cast<double>(static_cast<float>(p.backbone[i].value[k])));
    BnBuffers buf = p.buffers;
    for (auto& [name, run] : buf) run.mean[0] = run.var[0] = -1.0;
    back.load_buffers("buf/", buf);
    CHECK(buf == p.buffers);
    CHECK_THROWS(back.get("missing"));

    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "NOTACKPT";
    }
    CHECK_THROWS(read_checkpoint(path));
    std::filesystem::remove(path);
}

}  // TEST_SUITE
