#include "patchmix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchmix {

AugConfig AugConfig::identity() {
    AugConfig c;
    c.crop_area_min = c.crop_area_max = 1.0;
    c.crop_aspect_min = c.crop_aspect_max = 1.0;
    c.flip_probability = 0.0;
    c.jitter_probability = 0.0;
    c.grayscale_probability = 0.0;
    c.views = {{{0.0, 0.0}, {0.0, 0.0}}};
    return c;
}

void AugConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw std::invalid_argument(std::string("augment: ") + name + " = " + std::to_string(p) +
                                        " is not a probability");
        }
    };
    auto range = [](double lo, double hi, const char* name) {
        if (!(lo <= hi)) throw std::invalid_argument(std::string("augment: empty range for ") + name);
    };
    prob(flip_probability, "flip probability");
    prob(jitter_probability, "jitter probability");
    prob(grayscale_probability, "grayscale probability");
    for (const auto& v : views) {
        prob(v.blur_probability, "blur probability");
        prob(v.solarization_probability, "solarization probability");
    }
    range(crop_area_min, crop_area_max, "crop area");
    range(crop_aspect_min, crop_aspect_max, "crop aspect");
    range(blur_sigma_min, blur_sigma_max, "blur sigma");
    if (!(crop_area_min > 0.0 && crop_area_max <= 1.0)) throw std::invalid_argument("augment: crop area must lie in (0, 1]");
    if (!(crop_aspect_min > 0.0)) throw std::invalid_argument("augment: crop aspect must be positive");
    if (!(blur_sigma_min > 0.0)) throw std::invalid_argument("augment: blur sigma must be positive");
    if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5) {
        throw std::invalid_argument("augment: jitter intensities must be >= 0 (hue <= 0.5)");
    }
}

std::size_t blur_kernel_size(std::size_t image_side) {
    auto k = static_cast<std::size_t>(std::lround(static_cast<double>(image_side) / 10.0));
    if (k % 2 == 0) ++k;
    return std::max<std::size_t>(k, 3);
}

namespace {

// One image as planar [C][H][W].
struct Image {
    std::size_t c, h, w;
    std::vector<double> v;
    double& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
    double at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
};

void clamp01(Image& img) {
    for (auto& x : img.v) x = std::clamp(x, 0.0, 1.0);
}

Image resized_crop(const Image& src, std::size_t top, std::size_t left, std::size_t ch, std::size_t cw) {
    Image out{src.c, src.h, src.w, std::vector<double>(src.v.size())};
    const double sy = static_cast<double>(ch) / static_cast<double>(src.h);
    const double sx = static_cast<double>(cw) / static_cast<double>(src.w);
    for (std::size_t y = 0; y < src.h; ++y) {
        const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
        const auto y0 = std::min(static_cast<std::size_t>(fy), ch - 1);
        const std::size_t y1 = std::min(y0 + 1, ch - 1);
        const double ay = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < src.w; ++x) {
            const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
            const auto x0 = std::min(static_cast<std::size_t>(fx), cw - 1);
            const std::size_t x1 = std::min(x0 + 1, cw - 1);
            const double ax = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < src.c; ++c) {
                const double a = src.at(c, top + y0, left + x0), b = src.at(c, top + y0, left + x1);
                const double d = src.at(c, top + y1, left + x0), e = src.at(c, top + y1, left + x1);
                const double top_row = ax == 0.0 ? a : a * (1.0 - ax) + b * ax;
                const double bot_row = ax == 0.0 ? d : d * (1.0 - ax) + e * ax;
                out.at(c, y, x) = ay == 0.0 ? top_row : top_row * (1.0 - ay) + bot_row * ay;
            }
        }
    }
    return out;
}

Image random_resized_crop(const Image& img, const AugConfig& cfg, Rng& rng) {
    const double area = static_cast<double>(img.h * img.w);
    const double log_lo = std::log(cfg.crop_aspect_min), log_hi = std::log(cfg.crop_aspect_max);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * rng.uniform(cfg.crop_area_min, cfg.crop_area_max);
        const double aspect = std::exp(rng.uniform(log_lo, log_hi));
        const auto cw = static_cast<long>(std::lround(std::sqrt(target * aspect)));
        const auto ch = static_cast<long>(std::lround(std::sqrt(target / aspect)));
        if (cw > 0 && ch > 0 && cw <= static_cast<long>(img.w) && ch <= static_cast<long>(img.h)) {
            const auto top = static_cast<std::size_t>(rng.below(img.h - static_cast<std::size_t>(ch) + 1));
            const auto left = static_cast<std::size_t>(rng.below(img.w - static_cast<std::size_t>(cw) + 1));
            return resized_crop(img, top, left, static_cast<std::size_t>(ch), static_cast<std::size_t>(cw));
        }
    }
    return img;  // fallback: whole image
}

double luma(const Image& img, std::size_t y, std::size_t x) {
    if (img.c < 3) return img.at(0, y, x);
    return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

void to_grayscale(Image& img) {
    if (img.c < 3) return;
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x) {
            const double g = luma(img, y, x);
            for (std::size_t c = 0; c < img.c; ++c) img.at(c, y, x) = g;
        }
}

void adjust_brightness(Image& img, double f) {
    for (auto& x : img.v) x *= f;
    clamp01(img);
}

void adjust_contrast(Image& img, double f) {
    double m = 0.0;
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x) m += luma(img, y, x);
    m /= static_cast<double>(img.h * img.w);
    for (auto& x : img.v) x = f * x + (1.0 - f) * m;
    clamp01(img);
}

void adjust_saturation(Image& img, double f) {
    if (img.c < 3) return;
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x) {
            const double g = luma(img, y, x);
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = f * img.at(c, y, x) + (1.0 - f) * g;
        }
    clamp01(img);
}

void adjust_hue(Image& img, double shift) {
    if (img.c < 3) return;
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x) {
            const double r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
            const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), delta = mx - mn;
            double h = 0.0;
            if (delta > 0.0) {
                if (mx == r) h = std::fmod((g - b) / delta, 6.0);
                else if (mx == g) h = (b - r) / delta + 2.0;
                else h = (r - g) / delta + 4.0;
                h /= 6.0;
            }
            const double s = mx > 0.0 ? delta / mx : 0.0, v = mx;
            h = h + shift;
            h -= std::floor(h);
            // HSV -> RGB
            const double hh = h * 6.0;
            const auto sector = static_cast<int>(std::floor(hh)) % 6;
            const double f = hh - std::floor(hh);
            const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
            double rr = v, gg = t, bb = p;
            switch (sector) {
                case 0: rr = v; gg = t; bb = p; break;
                case 1: rr = q; gg = v; bb = p; break;
                case 2: rr = p; gg = v; bb = t; break;
                case 3: rr = p; gg = q; bb = v; break;
                case 4: rr = t; gg = p; bb = v; break;
                default: rr = v; gg = p; bb = q; break;
            }
            img.at(0, y, x) = rr;
            img.at(1, y, x) = gg;
            img.at(2, y, x) = bb;
        }
}

void color_jitter(Image& img, const AugConfig& cfg, Rng& rng) {
    const double b = rng.uniform(std::max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness);
    const double c = rng.uniform(std::max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast);
    const double s = rng.uniform(std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation);
    const double h = rng.uniform(-cfg.hue, cfg.hue);
    int order[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    for (int op : order) {
        switch (op) {
            case 0: adjust_brightness(img, b); break;
            case 1: adjust_contrast(img, c); break;
            case 2: adjust_saturation(img, s); break;
            default: adjust_hue(img, h); break;
        }
    }
}

std::size_t reflect(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (static_cast<long>(n) - 1);
    i = ((i % period) + period) % period;
    return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

void gaussian_blur(Image& img, double sigma, std::size_t ksize) {
    const long r = static_cast<long>(ksize / 2);
    std::vector<double> k(ksize);
    double total = 0.0;
    for (long i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        total += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : k) v /= total;
    Image tmp = img;
    for (std::size_t c = 0; c < img.c; ++c)
        for (std::size_t y = 0; y < img.h; ++y)
            for (std::size_t x = 0; x < img.w; ++x) {
                double acc = 0.0;
                for (long i = -r; i <= r; ++i)
                    acc += k[static_cast<std::size_t>(i + r)] * img.at(c, y, reflect(static_cast<long>(x) + i, img.w));
                tmp.at(c, y, x) = acc;
            }
    for (std::size_t c = 0; c < img.c; ++c)
        for (std::size_t y = 0; y < img.h; ++y)
            for (std::size_t x = 0; x < img.w; ++x) {
                double acc = 0.0;
                for (long i = -r; i <= r; ++i)
                    acc += k[static_cast<std::size_t>(i + r)] * tmp.at(c, reflect(static_cast<long>(y) + i, img.h), x);
                img.at(c, y, x) = acc;
            }
}

void solarize(Image& img, double threshold) {
    for (auto& x : img.v) x = x < threshold ? x : 1.0 - x;
}

}  // namespace

ImageBatch augment_view(const ImageBatch& batch, const AugConfig& cfg, int view, Rng& rng) {
    if (view != 1 && view != 2) throw std::invalid_argument("augment_view: view must be 1 or 2");
    cfg.validate();
    const ViewAugConfig& vc = cfg.views[static_cast<std::size_t>(view - 1)];
    const std::size_t sz = batch.image_size();
    const std::size_t ksize = blur_kernel_size(std::max(batch.height(), batch.width()));
    Tensor out(batch.pixels().shape());
    for (std::size_t n = 0; n < batch.count(); ++n) {
        Image img{batch.channels(), batch.height(), batch.width(),
                  std::vector<double>(batch.pixels().data() + n * sz, batch.pixels().data() + (n + 1) * sz)};
        img = random_resized_crop(img, cfg, rng);
        if (rng.bernoulli(cfg.flip_probability)) {
            for (std::size_t c = 0; c < img.c; ++c)
                for (std::size_t y = 0; y < img.h; ++y)
                    for (std::size_t x = 0; x < img.w / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.w - 1 - x));
        }
        if (cfg.color_ops && rng.bernoulli(cfg.jitter_probability)) color_jitter(img, cfg, rng);
        if (cfg.color_ops && rng.bernoulli(cfg.grayscale_probability)) to_grayscale(img);
        if (rng.bernoulli(vc.blur_probability)) {
            gaussian_blur(img, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max), ksize);
        }
        if (rng.bernoulli(vc.solarization_probability)) solarize(img, cfg.solarize_threshold);
        clamp01(img);
        std::copy(img.v.begin(), img.v.end(), out.data() + n * sz);
    }
    return ImageBatch(std::move(out));
}

}  // namespace patchmix
