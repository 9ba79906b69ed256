#include "patchmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "patchmix/rng.hpp"

namespace patchmix {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::size_t label_bytes(CifarVariant v) { return v == CifarVariant::Cifar10 ? 1 : 2; }
std::size_t class_count(CifarVariant v) { return v == CifarVariant::Cifar10 ? 10 : 100; }

}  // namespace

LabeledDataset LabeledDataset::from_bytes(std::vector<std::uint8_t> pixels, std::vector<std::size_t> labels,
                                          std::size_t classes, std::size_t channels, std::size_t side,
                                          Split split) {
    LabeledDataset d;
    d.bytes_ = std::move(pixels);
    d.labels_ = std::move(labels);
    d.classes_ = classes;
    d.channels_ = channels;
    d.side_ = side;
    d.split_ = split;
    d.validate();
    return d;
}

LabeledDataset LabeledDataset::from_images(const ImageBatch& images, std::vector<std::size_t> labels,
                                           std::size_t classes, Split split) {
    if (images.height() != images.width()) throw std::invalid_argument("dataset: images must be square");
    LabeledDataset d;
    d.reals_ = images.pixels().storage();
    d.labels_ = std::move(labels);
    d.classes_ = classes;
    d.channels_ = images.channels();
    d.side_ = images.height();
    d.split_ = split;
    d.validate();
    return d;
}

void LabeledDataset::validate() const {
    const std::size_t per = channels_ * side_ * side_;
    const std::size_t stored = quantized() ? bytes_.size() : reals_.size();
    if (per == 0 || stored != labels_.size() * per) {
        throw std::invalid_argument("dataset: pixel count does not match " + std::to_string(labels_.size()) +
                                    " images");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] >= classes_) {
            throw std::invalid_argument("dataset: label " + std::to_string(labels_[i]) + " at index " +
                                        std::to_string(i) + " outside [0, " + std::to_string(classes_) + ")");
        }
    }
    for (double v : reals_) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dataset: pixel outside [0, 1]");
    }
}

double LabeledDataset::pixel(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const std::size_t k = ((n * channels_ + c) * side_ + y) * side_ + x;
    return quantized() ? bytes_[k] / 255.0 : reals_[k];
}

ImageBatch LabeledDataset::batch(const std::vector<std::size_t>& indices) const {
    const std::size_t per = channels_ * side_ * side_;
    Tensor out(Shape{indices.size(), channels_, side_, side_});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= size()) {
            throw std::out_of_range("dataset: index " + std::to_string(i) + " >= " + std::to_string(size()));
        }
        double* dst = out.data() + k * per;
        if (quantized()) {
            for (std::size_t p = 0; p < per; ++p) dst[p] = bytes_[i * per + p] / 255.0;
        } else {
            std::copy_n(reals_.data() + i * per, per, dst);
        }
    }
    return ImageBatch(std::move(out));
}

ImageBatch LabeledDataset::all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(idx);
}

std::vector<std::size_t> LabeledDataset::labels_of(const std::vector<std::size_t>& indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels_.at(i));
    return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
    const std::size_t per = channels_ * side_ * side_;
    LabeledDataset d = *this;
    d.bytes_.clear();
    d.reals_.clear();
    d.labels_ = labels_of(indices);
    for (auto i : indices) {
        if (quantized()) {
            d.bytes_.insert(d.bytes_.end(), bytes_.begin() + i * per, bytes_.begin() + (i + 1) * per);
        } else {
            d.reals_.insert(d.reals_.end(), reals_.begin() + i * per, reals_.begin() + (i + 1) * per);
        }
    }
    return d;
}

std::size_t cifar_record_bytes(CifarVariant variant) { return label_bytes(variant) + kCifarPixels; }

LabeledDataset load_cifar_binary(const fs::path& path, CifarVariant variant, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t rec = cifar_record_bytes(variant);
    if (raw.empty() || raw.size() % rec != 0) {
        const std::size_t whole = raw.size() / rec;
        throw std::runtime_error(path.string() + ": expected a positive multiple of " + std::to_string(rec) +
                                 " bytes, got " + std::to_string(raw.size()) + " (" + std::to_string(whole) +
                                 " whole records, then " + std::to_string(raw.size() - whole * rec) +
                                 " bytes of a truncated record " + std::to_string(whole) + ")");
    }
    const std::size_t n = raw.size() / rec;
    const std::size_t classes = class_count(variant);
    std::vector<std::uint8_t> pixels(n * kCifarPixels);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* r = raw.data() + i * rec;
        labels[i] = r[label_bytes(variant) - 1];
        if (labels[i] >= classes) {
            throw std::runtime_error(path.string() + ": record " + std::to_string(i) + " has label " +
                                     std::to_string(labels[i]) + ", expected < " + std::to_string(classes));
        }
        std::copy_n(r + label_bytes(variant), kCifarPixels, pixels.data() + i * kCifarPixels);
    }
    return LabeledDataset::from_bytes(std::move(pixels), std::move(labels), classes, 3, kCifarSide, split);
}

std::vector<fs::path> cifar_split_files(const fs::path& dir, CifarVariant variant, Split split) {
    if (variant == CifarVariant::Cifar100) return {dir / (split == Split::Train ? "train.bin" : "test.bin")};
    if (split == Split::Val) return {dir / "test_batch.bin"};
    std::vector<fs::path> out;
    for (int b = 1; b <= 5; ++b) out.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    return out;
}

LabeledDataset load_cifar_split(const fs::path& dir, CifarVariant variant, Split split) {
    std::vector<std::uint8_t> pixels;
    std::vector<std::size_t> labels;
    for (const auto& f : cifar_split_files(dir, variant, split)) {
        const LabeledDataset part = load_cifar_binary(f, variant, split);
        for (std::size_t i = 0; i < part.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < kCifarSide; ++y)
                    for (std::size_t x = 0; x < kCifarSide; ++x)
                        pixels.push_back(static_cast<std::uint8_t>(std::lround(part.pixel(i, c, y, x) * 255.0)));
        }
        labels.insert(labels.end(), part.labels().begin(), part.labels().end());
    }
    return LabeledDataset::from_bytes(std::move(pixels), std::move(labels), class_count(variant), 3, kCifarSide,
                                      split);
}

void write_cifar_binary(const fs::path& path, const LabeledDataset& data, CifarVariant variant) {
    if (data.channels() != 3 || data.side() != kCifarSide) {
        throw std::invalid_argument("write_cifar_binary: CIFAR layout needs 3x32x32 images");
    }
    if (data.classes() > class_count(variant)) {
        throw std::invalid_argument("write_cifar_binary: too many classes for the variant");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    std::vector<char> rec(cifar_record_bytes(variant));
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t k = 0;
        if (variant == CifarVariant::Cifar100) rec[k++] = 0;
        rec[k++] = static_cast<char>(data.labels()[i]);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < kCifarSide; ++y)
                for (std::size_t x = 0; x < kCifarSide; ++x)
                    rec[k++] = static_cast<char>(static_cast<std::uint8_t>(std::lround(data.pixel(i, c, y, x) * 255.0)));
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

constexpr std::size_t kMinCodeDistance = 4;

// Codes over 4 quadrants x C channels (bit q * C + c, quadrants TL TR BL BR).
// The first two are "top bright" and its complement; both are symmetric
// under horizontal flips, so flipping never turns one class into another.
// The rest are added greedily in increasing order subject to the minimum
// Hamming distance.
std::vector<std::uint32_t> quadrant_codes(std::size_t classes, std::size_t channels) {
    const std::size_t bits = 4 * channels;
    std::uint32_t top = 0;
    for (std::size_t q : {0u, 1u})
        for (std::size_t c = 0; c < channels; ++c) top |= 1u << (q * channels + c);
    const std::uint32_t all = (bits >= 32) ? ~0u : ((1u << bits) - 1);
    std::vector<std::uint32_t> codes{top, all ^ top};
    auto far = [&](std::uint32_t x) {
        for (auto c : codes)
            if (static_cast<std::size_t>(__builtin_popcount(c ^ x)) < kMinCodeDistance) return false;
        return true;
    };
    for (std::uint64_t x = 0; codes.size() < classes && x <= all; ++x) {
        if (far(static_cast<std::uint32_t>(x))) codes.push_back(static_cast<std::uint32_t>(x));
    }
    if (codes.size() < classes) {
        throw std::invalid_argument("synth_blobs: at most " + std::to_string(codes.size()) + " classes with " +
                                    std::to_string(channels) + " channels");
    }
    codes.resize(classes);
    return codes;
}

std::size_t split_line(const SynthConfig& cfg) {
    return cfg.image_side / 2 + (cfg.patch_structured ? 0 : 1);
}

}  // namespace

Tensor synth_templates(const SynthConfig& cfg) {
    if (cfg.classes == 0 || cfg.channels == 0) throw std::invalid_argument("synth_blobs: empty configuration");
    if (cfg.image_side < 4 || cfg.image_side % 2 != 0) {
        throw std::invalid_argument("synth_blobs: image_side must be even and >= 4");
    }
    if (!(cfg.contrast > 0.0 && cfg.contrast <= 1.0)) throw std::invalid_argument("synth_blobs: contrast must lie in (0, 1]");
    const auto codes = quadrant_codes(cfg.classes, cfg.channels);
    const std::size_t s = cfg.image_side, mid = split_line(cfg);
    const double bright = 0.5 + 0.5 * cfg.contrast, dark = 0.5 - 0.5 * cfg.contrast;
    Tensor t(Shape{cfg.classes, cfg.channels, s, s});
    for (std::size_t k = 0; k < cfg.classes; ++k)
        for (std::size_t c = 0; c < cfg.channels; ++c)
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    const std::size_t q = (y < mid ? 0 : 2) + (x < mid ? 0 : 1);
                    const bool on = (codes[k] >> (q * cfg.channels + c)) & 1u;
                    t[((k * cfg.channels + c) * s + y) * s + x] = on ? bright : dark;
                }
    return t;
}

double synth_template_margin(const SynthConfig& cfg) {
    // Smallest quadrant times the minimum number of differing cells.
    const double smallest = static_cast<double>(cfg.image_side - split_line(cfg));
    return cfg.contrast * std::sqrt(static_cast<double>(kMinCodeDistance)) * smallest;
}

LabeledDataset synth_blobs(const SynthConfig& cfg) {
    if (cfg.noise < 0.0 || cfg.nuisance < 0.0 || cfg.bump_amplitude < 0.0) throw std::invalid_argument("synth_blobs: negative noise");
    const Tensor tpl = synth_templates(cfg);
    const std::size_t s = cfg.image_side, per = cfg.channels * s * s;
    const std::size_t n = cfg.classes * cfg.per_class;
    Tensor px(Shape{n, cfg.channels, s, s});
    std::vector<std::size_t> labels(n);
    Rng rng = Rng::derive(cfg.seed, {0x5e7b10b5ULL, cfg.split == Split::Train ? 0u : 1u});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % cfg.classes;  // classes interleaved
        labels[i] = k;
        double gain = 1.0;
        std::vector<double> cast(cfg.channels, 0.0);
        if (cfg.nuisance > 0.0) {
            gain = rng.uniform(1.0 - cfg.nuisance, 1.0 + cfg.nuisance);
            for (auto& c : cast) c = rng.uniform(-0.5 * cfg.nuisance, 0.5 * cfg.nuisance);
        }
        std::vector<double> bump(s * s, 0.0);
        for (std::size_t b = 0; b < cfg.bumps; ++b) {
            const double cy = rng.uniform(0.0, double(s)), cx = rng.uniform(0.0, double(s));
            const double w = rng.uniform(0.08, 0.2) * double(s);
            const double a = rng.uniform(-cfg.bump_amplitude, cfg.bump_amplitude);
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
                    bump[y * s + x] += a * std::exp(-(dy * dy + dx * dx) / (2.0 * w * w));
                }
        }
        for (std::size_t p = 0; p < per; ++p) {
            double v = tpl[k * per + p] * gain + cast[p / (s * s)] + bump[p % (s * s)];
            if (cfg.noise > 0.0) v += rng.normal(0.0, cfg.noise);
            px[i * per + p] = std::clamp(v, 0.0, 1.0);
        }
    }
    return LabeledDataset::from_images(ImageBatch(std::move(px)), std::move(labels), cfg.classes, cfg.split);
}

DatasetSpec DatasetSpec::parse(const std::string& text) {
    DatasetSpec d;
    if (text == "synth") return d;
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    if (kind == "imagenet" || kind == "imagenet1k" || kind == "in1k") {
        throw std::invalid_argument("dataset '" + text + "': ImageNet ingestion is out of scope");
    }
    if (colon == std::string::npos || colon + 1 == text.size()) {
        throw std::invalid_argument("dataset '" + text + "': expected synth, cifar10:DIR or cifar100:DIR");
    }
    if (kind == "cifar10") {
        d.kind = Kind::Cifar10;
    } else if (kind == "cifar100") {
        d.kind = Kind::Cifar100;
    } else {
        throw std::invalid_argument("dataset '" + text + "': unknown kind '" + kind + "'");
    }
    d.dir = text.substr(colon + 1);
    return d;
}

std::string DatasetSpec::str() const {
    switch (kind) {
        case Kind::Synth: return "synth";
        case Kind::Cifar10: return "cifar10:" + dir.string();
        case Kind::Cifar100: return "cifar100:" + dir.string();
    }
    return "synth";
}

}  // namespace patchmix
