#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchmix/patch_ops.hpp"

namespace patchmix {

enum class Split { Train, Val };
enum class CifarVariant { Cifar10, Cifar100 };

/// Labeled images. Pixels are stored either as bytes (scaled by 1/255 on
/// access) or as reals in [0, 1], whichever the source produced; the byte form
/// keeps a full CIFAR split at 150 MB instead of 1.2 GB.
class LabeledDataset {
public:
    LabeledDataset() = default;
    static LabeledDataset from_bytes(std::vector<std::uint8_t> pixels, std::vector<std::size_t> labels,
                                     std::size_t classes, std::size_t channels, std::size_t side, Split split);
    static LabeledDataset from_images(const ImageBatch& images, std::vector<std::size_t> labels,
                                      std::size_t classes, Split split);

    std::size_t size() const { return labels_.size(); }
    std::size_t classes() const { return classes_; }
    std::size_t channels() const { return channels_; }
    std::size_t side() const { return side_; }
    Split split() const { return split_; }
    const std::vector<std::size_t>& labels() const { return labels_; }
    bool quantized() const { return !bytes_.empty(); }
    double pixel(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;

    ImageBatch batch(const std::vector<std::size_t>& indices) const;
    ImageBatch all() const;
    std::vector<std::size_t> labels_of(const std::vector<std::size_t>& indices) const;
    LabeledDataset subset(const std::vector<std::size_t>& indices) const;

    bool operator==(const LabeledDataset&) const = default;

private:
    void validate() const;

    std::vector<std::uint8_t> bytes_;
    std::vector<double> reals_;
    std::vector<std::size_t> labels_;
    std::size_t classes_ = 0;
    std::size_t channels_ = 0;
    std::size_t side_ = 0;
    Split split_ = Split::Train;
};

/// Bytes per record: 1 (or 2 for CIFAR-100) label bytes + 3072 pixel bytes.
std::size_t cifar_record_bytes(CifarVariant variant);

/// One CIFAR binary file. Pixels are the R, G and B planes of a row-major
/// 32x32 image; CIFAR-100 records carry (coarse, fine) labels and the fine
/// label is used.
LabeledDataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant,
                                 Split split = Split::Train);

/// The standard files of a split inside `dir`: data_batch_1..5.bin and
/// test_batch.bin for CIFAR-10, train.bin and test.bin for CIFAR-100.
LabeledDataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, Split split);
std::vector<std::filesystem::path> cifar_split_files(const std::filesystem::path& dir,
                                                     CifarVariant variant, Split split);

/// Writes the dataset in CIFAR binary layout. Requires 3x32x32 images;
/// real-valued pixels are rounded to the nearest byte. CIFAR-100 records get
/// coarse label 0.
void write_cifar_binary(const std::filesystem::path& path, const LabeledDataset& data,
                        CifarVariant variant);

/// Synthetic blobs: each class is a fixed template of bright (0.5 + c/2) and
/// dark (0.5 - c/2) quadrants per channel, c = contrast. Quadrant codes differ in at least 4
/// (quadrant, channel) cells, so two templates are at least
/// synth_template_margin(cfg) apart in pixel L2 distance.
struct SynthConfig {
    std::size_t classes = 2;
    std::size_t per_class = 128;
    std::size_t image_side = 8;
    std::size_t channels = 3;
    /// Quadrant edges on the image midline (aligned to any even patch size);
    /// otherwise the split is moved one pixel off the midline.
    bool patch_structured = true;
    double contrast = 0.6;
    double noise = 0.1;  // Gaussian pixel noise sigma
    /// Per-image brightness factor in [1 - n, 1 + n] and per-channel color
    /// cast in [-n/2, n/2]; 0 disables.
    double nuisance = 0.0;
    /// Class-independent Gaussian bumps per image (random centre, width in
    /// [0.08, 0.2] * side, amplitude in [-a, a], same in every channel).
    std::size_t bumps = 0;
    double bump_amplitude = 0.3;
    std::uint64_t seed = 0;
    Split split = Split::Train;
};

/// Class templates [classes, channels, side, side] before noise.
Tensor synth_templates(const SynthConfig& cfg);
double synth_template_margin(const SynthConfig& cfg);
LabeledDataset synth_blobs(const SynthConfig& cfg);

/// Parses "synth", "cifar10:DIR" or "cifar100:DIR".
struct DatasetSpec {
    enum class Kind { Synth, Cifar10, Cifar100 } kind = Kind::Synth;
    std::filesystem::path dir;
    static DatasetSpec parse(const std::string& text);
    std::string str() const;
};

}  // namespace patchmix
