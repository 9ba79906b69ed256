#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "patchmix/config.hpp"
#include "patchmix/image_io.hpp"
#include "patchmix/loss_check.hpp"
#include "patchmix/oracle_check.hpp"

using namespace patchmix;
namespace fs = std::filesystem;

TEST_SUITE("config") {

TEST_CASE("settings, comments and overrides") {
    RunConfig c;
    apply_config_text(c,
                      "# training\n"
                      "seed = 7\n"
                      "mix_count=2   # inline comment\n"
                      "\n"
                      "weight_decay = 0.01, 0.1\n"
                      "loss_terms = oto\n"
                      "precision = f32\n"
                      "model.preset = micro\n",
                      "inline");
    CHECK(c.train.seed == 7);
    CHECK(c.train.mix_count == 2);
    CHECK(c.train.wd_start == 0.01);
    CHECK(c.train.wd_end == 0.1);
    CHECK(c.train.terms.oto);
    CHECK_FALSE(c.train.terms.mto);
    CHECK_FALSE(c.train.terms.mtm);
    CHECK(c.train.precision == Precision::F32);
    apply_override(c, "aug.horizontal_flip_probability=0.25");
    CHECK(c.train.aug.flip_probability == 0.25);
    apply_override(c, "aug.t2.solarization_probability=0.5");
    CHECK(c.train.aug.views[1].solarization_probability == 0.5);
}

TEST_CASE("unknown keys and bad values are rejected with the line") {
    RunConfig c;
    try {
        apply_config_text(c, "seed = 1\nno_such_key = 3\n", "cfg.txt");
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("cfg.txt") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
        CHECK(msg.find("no_such_key") != std::string::npos);
    }
    CHECK_THROWS_AS(apply_override(c, "seed=abc"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "tau"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "precision=f16"), ConfigError);
    CHECK_THROWS_AS(apply_config_file(c, "/nonexistent/patchmix.cfg"), ConfigError);
}

TEST_CASE("dump_config round-trips") {
    RunConfig c;
    apply_override(c, "seed=11");
    apply_override(c, "tau=0.15");
    apply_override(c, "synth.bumps=2");
    apply_override(c, "oracle.tokens=4,9");
    const std::string text = dump_config(c);
    RunConfig back;
    apply_config_text(back, text, "dump");
    CHECK(dump_config(back) == text);
    CHECK(back.train.tau == 0.15);
    CHECK(back.oracle_tokens == std::vector<std::size_t>{4, 9});
    CHECK(config_keys().size() > 40);
}

TEST_CASE("synthetic datasets follow the model geometry") {
    RunConfig c;
    apply_override(c, "synth.per_class=5");
    apply_override(c, "synth.val_per_class=3");
    const LabeledDataset tr = make_dataset(c, Split::Train);
    const LabeledDataset va = make_dataset(c, Split::Val);
    CHECK(tr.size() == 10);
    CHECK(va.size() == 6);
    CHECK(tr.side() == c.train.model.image_side);
}

}  // TEST_SUITE

TEST_SUITE("image_io") {

TEST_CASE("ppm and pgm round trip at 8 bits") {
    Rng rng(1);
    const ImageBatch rgb = testutil::random_images(2, 3, 5, 7, rng);
    const ImageBatch gray = testutil::random_images(1, 1, 4, 6, rng);
    const fs::path dir = fs::temp_directory_path();
    write_image(dir / "patchmix_test.ppm", rgb, 1);
    write_image(dir / "patchmix_test.pgm", gray);
    const ImageBatch a = read_image(dir / "patchmix_test.ppm");
    const ImageBatch b = read_image(dir / "patchmix_test.pgm");
    CHECK(a.count() == 1);
    CHECK(a.channels() == 3);
    CHECK(b.channels() == 1);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 5; ++y)
            for (std::size_t x = 0; x < 7; ++x)
                CHECK(std::abs(a.at(0, c, y, x) - rgb.at(1, c, y, x)) <= 0.5 / 255.0 + 1e-12);
    if (png_available()) {
        write_image(dir / "patchmix_test.png", rgb);
        const ImageBatch p = read_image(dir / "patchmix_test.png");
        CHECK(std::abs(p.at(0, 2, 4, 6) - rgb.at(0, 2, 4, 6)) <= 0.5 / 255.0 + 1e-12);
        fs::remove(dir / "patchmix_test.png");
    }
    CHECK_THROWS(write_image(dir / "patchmix_test.bmp", rgb));
    CHECK_THROWS(write_image(dir / "patchmix_test.pgm", rgb));
    fs::remove(dir / "patchmix_test.ppm");
    fs::remove(dir / "patchmix_test.pgm");
}

}  // TEST_SUITE

TEST_SUITE("verification") {

TEST_CASE("oracle check passes on the real mixer") {
    OracleCheckConfig cfg;
    cfg.tokens = {4, 9};
    cfg.random_instances = 100;
    const OracleReport r = run_oracle_check(cfg);
    CHECK(r.passed());
    CHECK(r.grid_instances > 0);
    CHECK(r.rejected > 0);
}

TEST_CASE("oracle check catches a mixer that drops the unshuffle") {
    const MixFn broken = [](const PatchBatch& pb, const MixPlan& plan) {
        MixedBatch mb = apply_mix(pb, plan);
        mb.patches = apply_mix_stages(pb, plan).smix;
        return mb;
    };
    OracleCheckConfig cfg;
    cfg.tokens = {4, 9};
    cfg.random_instances = 10;
    const OracleReport r = run_oracle_check(cfg, broken);
    REQUIRE_FALSE(r.passed());
    CHECK_FALSE(r.failure->describe().empty());
}

TEST_CASE("oracle check catches a mixer that swaps two patches") {
    const MixFn broken = [](const PatchBatch& pb, const MixPlan& plan) {
        MixedBatch mb = apply_mix(pb, plan);
        if (mb.patches.count() > 1) std::swap(mb.patches.patch(0, 0)[0], mb.patches.patch(1, 0)[0]);
        return mb;
    };
    OracleCheckConfig cfg;
    cfg.tokens = {4};
    cfg.random_instances = 0;
    CHECK_FALSE(run_oracle_check(cfg, broken).passed());
}

TEST_CASE("loss gradient check passes and the mutation is caught") {
    LossGradCheckConfig cfg;
    const LossGradReport good = run_loss_grad_check(cfg);
    CHECK(good.passed());
    CHECK(good.entries.size() == 4);
    CHECK(good.xi_grad_zero());
    cfg.stop_gradient = false;
    const LossGradReport bad = run_loss_grad_check(cfg);
    CHECK_FALSE(bad.xi_grad_zero());
    CHECK_FALSE(bad.passed());
}

}  // TEST_SUITE
