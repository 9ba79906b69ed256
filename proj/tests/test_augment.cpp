#include <doctest.h>

#include "helpers.hpp"
#include "patchmix/augment.hpp"

using namespace patchmix;

TEST_SUITE("augment") {

TEST_CASE("all steps disabled is the identity for both views") {
    Rng rng(1);
    const ImageBatch b = testutil::random_images(4, 3, 8, 8, rng);
    for (int view : {1, 2}) CHECK(augment_view(b, AugConfig::identity(), view, rng) == b);
}

TEST_CASE("fixed seed gives bit-identical output") {
    Rng data(2);
    const ImageBatch b = testutil::random_images(6, 3, 16, 16, data);
    for (int view : {1, 2}) {
        Rng r1(99), r2(99);
        CHECK(augment_view(b, AugConfig{}, view, r1) == augment_view(b, AugConfig{}, view, r2));
    }
    Rng r1(99), r2(100);
    CHECK_FALSE(augment_view(b, AugConfig{}, 1, r1) == augment_view(b, AugConfig{}, 1, r2));
}

TEST_CASE("outputs stay in [0, 1] with the shape preserved") {
    Rng rng(3);
    AugConfig cfg;
    cfg.brightness = 0.9;
    cfg.contrast = 0.9;
    cfg.saturation = 0.9;
    cfg.hue = 0.5;
    for (int trial = 0; trial < 20; ++trial) {
        const ImageBatch b = testutil::random_images(3, 3, 12, 10, rng);
        for (int view : {1, 2}) {
            const ImageBatch out = augment_view(b, cfg, view, rng);
            REQUIRE(out.pixels().shape() == b.pixels().shape());
            for (double v : out.pixels().values()) {
                REQUIRE(v >= 0.0);
                REQUIRE(v <= 1.0);
            }
        }
    }
}

TEST_CASE("solarization maps v to v below the threshold and 1 - v above") {
    AugConfig cfg = AugConfig::identity();
    cfg.views[1].solarization_probability = 1.0;
    Tensor px(Shape{1, 1, 2, 2}, {0.1, 0.49, 0.5, 0.9});
    Rng rng(4);
    const ImageBatch out = augment_view(ImageBatch(px), cfg, 2, rng);
    CHECK(out.pixels()[0] == 0.1);
    CHECK(out.pixels()[1] == 0.49);
    CHECK(out.pixels()[2] == doctest::Approx(0.5));
    CHECK(out.pixels()[3] == doctest::Approx(0.1));
    // view 1 has its own probability, still 0 here
    CHECK(augment_view(ImageBatch(px), cfg, 1, rng) == ImageBatch(px));
}

TEST_CASE("flip with probability 1 mirrors each row") {
    AugConfig cfg = AugConfig::identity();
    cfg.flip_probability = 1.0;
    Rng data(5);
    const ImageBatch b = testutil::random_images(2, 3, 4, 6, data);
    Rng rng(6);
    const ImageBatch out = augment_view(b, cfg, 1, rng);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 6; ++x) CHECK(out.at(n, c, y, x) == b.at(n, c, y, 5 - x));
}

TEST_CASE("grayscale with probability 1 equalizes channels") {
    AugConfig cfg = AugConfig::identity();
    cfg.grayscale_probability = 1.0;
    Rng data(7);
    const ImageBatch b = testutil::random_images(2, 3, 4, 4, data);
    Rng rng(8);
    const ImageBatch out = augment_view(b, cfg, 1, rng);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            CHECK(out.at(0, 0, y, x) == doctest::Approx(out.at(0, 1, y, x)));
            CHECK(out.at(0, 1, y, x) == doctest::Approx(out.at(0, 2, y, x)));
        }
    cfg.color_ops = false;
    CHECK(augment_view(b, cfg, 1, rng) == b);
}

TEST_CASE("blur of a constant image is the same constant") {
    AugConfig cfg = AugConfig::identity();
    cfg.views[0].blur_probability = 1.0;
    Rng rng(9);
    const ImageBatch flat(Tensor(Shape{1, 3, 10, 10}, 0.37));
    const ImageBatch out = augment_view(flat, cfg, 1, rng);
    for (double v : out.pixels().values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("blur kernel size") {
    CHECK(blur_kernel_size(8) == 3);
    CHECK(blur_kernel_size(32) == 3);
    CHECK(blur_kernel_size(50) == 5);
    CHECK(blur_kernel_size(224) == 23);
    CHECK(blur_kernel_size(224) % 2 == 1);
}

TEST_CASE("default settings") {
    const AugConfig c;
    CHECK(c.crop_area_min == 0.1);
    CHECK(c.crop_area_max == 1.0);
    CHECK(c.views[0].blur_probability == 1.0);
    CHECK(c.views[0].solarization_probability == 0.0);
    CHECK(c.views[1].blur_probability == 0.1);
    CHECK(c.views[1].solarization_probability == 0.2);
    CHECK(c.solarize_threshold == 0.5);
}

TEST_CASE("invalid settings are rejected") {
    AugConfig c;
    c.flip_probability = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = AugConfig{};
    c.crop_area_min = 0.8;
    c.crop_area_max = 0.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    Rng rng(1);
    CHECK_THROWS(augment_view(ImageBatch(Tensor(Shape{1, 1, 2, 2}, 0.5)), AugConfig{}, 3, rng));
}

}  // TEST_SUITE
