#include "patchmix/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef PATCHMIX_HAVE_PNG
#include <png.h>
#endif

namespace patchmix {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

// Interleaved 8-bit samples of image n.
std::vector<unsigned char> interleave(const ImageBatch& b, std::size_t n) {
    const std::size_t c = b.channels(), h = b.height(), w = b.width();
    std::vector<unsigned char> out(c * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) {
                const double v = std::clamp(b.at(n, k, y, x), 0.0, 1.0);
                out[(y * w + x) * c + k] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
    return out;
}

ImageBatch deinterleave(const std::vector<unsigned char>& px, std::size_t c, std::size_t h, std::size_t w) {
    Tensor t(Shape{1, c, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) t[(k * h + y) * w + x] = px[(y * w + x) * c + k] / 255.0;
    return ImageBatch(std::move(t));
}

void write_pnm(const fs::path& path, const ImageBatch& b, std::size_t n, bool color) {
    if (b.channels() != (color ? 3u : 1u)) {
        throw std::invalid_argument(path.string() + ": " + (color ? "PPM needs 3 channels" : "PGM needs 1 channel") +
                                    ", image has " + std::to_string(b.channels()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << (color ? "P6" : "P5") << "\n" << b.width() << " " << b.height() << "\n255\n";
    const auto px = interleave(b, n);
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

ImageBatch read_pnm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if ((magic != "P6" && magic != "P5") || maxval != 255 || w == 0 || h == 0) {
        throw std::runtime_error(path.string() + ": unsupported PNM header");
    }
    const std::size_t c = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> px(c * w * h);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (static_cast<std::size_t>(in.gcount()) != px.size()) throw std::runtime_error(path.string() + ": truncated");
    return deinterleave(px, c, h, w);
}

#ifdef PATCHMIX_HAVE_PNG
void write_png(const fs::path& path, const ImageBatch& b, std::size_t n) {
    const std::size_t c = b.channels();
    if (c != 1 && c != 3) throw std::invalid_argument(path.string() + ": PNG output needs 1 or 3 channels");
    const auto px = interleave(b, n);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(b.width());
    img.height = static_cast<png_uint_32>(b.height());
    img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, px.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write " + path.string() + ": " + img.message);
    }
}

ImageBatch read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw std::runtime_error(path.string() + ": " + img.message);
    }
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> px(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
        throw std::runtime_error(path.string() + ": " + img.message);
    }
    return deinterleave(px, gray ? 1 : 3, img.height, img.width);
}
#endif

}  // namespace

bool png_available() {
#ifdef PATCHMIX_HAVE_PNG
    return true;
#else
    return false;
#endif
}

const char* default_image_extension(std::size_t channels) {
    if (png_available()) return ".png";
    return channels == 1 ? ".pgm" : ".ppm";
}

void write_image(const fs::path& path, const ImageBatch& batch, std::size_t n) {
    if (n >= batch.count()) throw std::out_of_range("write_image: image index out of range");
    const std::string e = lower_ext(path);
    if (e == ".ppm") return write_pnm(path, batch, n, true);
    if (e == ".pgm") return write_pnm(path, batch, n, false);
    if (e == ".png") {
#ifdef PATCHMIX_HAVE_PNG
        return write_png(path, batch, n);
#else
        throw std::invalid_argument(path.string() + ": built without PNG support; use .ppm or .pgm");
#endif
    }
    throw std::invalid_argument(path.string() + ": unknown image extension (use .png, .ppm or .pgm)");
}

ImageBatch read_image(const fs::path& path) {
    const std::string e = lower_ext(path);
    if (e == ".ppm" || e == ".pgm") return read_pnm(path);
#ifdef PATCHMIX_HAVE_PNG
    if (e == ".png") return read_png(path);
#endif
    throw std::invalid_argument(path.string() + ": unsupported image format");
}

}  // namespace patchmix
