#include "patchmix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace patchmix {

namespace {

constexpr char kMagic[8] = {'P', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}
    void u8(std::uint8_t v) { os_.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    void le(std::uint64_t v, int bytes) {
        char buf[8];
        for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        os_.write(buf, bytes);
    }
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        if (!is_.read(s.data(), n)) truncated();
        return s;
    }
    void bytes(char* dst, std::size_t n) {
        if (!is_.read(dst, static_cast<std::streamsize>(n))) truncated();
    }

private:
    std::uint64_t le(int bytes) {
        unsigned char buf[8];
        if (!is_.read(reinterpret_cast<char*>(buf), bytes)) truncated();
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }
    [[noreturn]] void truncated() { throw std::runtime_error("checkpoint " + path_ + ": truncated file"); }
    std::istream& is_;
    std::string path_;
};

}  // namespace

void Checkpoint::add(std::string name, const Tensor& value, CheckpointBlob::Dtype dtype) {
    if (has(name)) throw std::logic_error("checkpoint: duplicate blob " + name);
    blobs.push_back(CheckpointBlob{std::move(name), dtype, value});
}

void Checkpoint::add_params(const std::string& prefix, const ParamSet& set, CheckpointBlob::Dtype dtype) {
    for (const auto& p : set.items()) add(prefix + p.name, p.value, dtype);
}

void Checkpoint::add_buffers(const std::string& prefix, const BnBuffers& buffers,
                             CheckpointBlob::Dtype dtype) {
    for (const auto& [name, run] : buffers) {
        add(prefix + name + ".running_mean", run.mean, dtype);
        add(prefix + name + ".running_var", run.var, dtype);
    }
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& b : blobs)
        if (b.name == name) return true;
    return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& b : blobs)
        if (b.name == name) return b.value;
    throw std::out_of_range("checkpoint: missing blob " + name);
}

void Checkpoint::load_params(const std::string& prefix, ParamSet& set) const {
    for (auto& p : set.items()) {
        const Tensor& v = get(prefix + p.name);
        require_same_shape(v.shape(), p.value.shape(), ("checkpoint blob " + prefix + p.name).c_str());
        p.value = v;
    }
}

void Checkpoint::load_buffers(const std::string& prefix, BnBuffers& buffers) const {
    for (auto& [name, run] : buffers) {
        run.mean = get(prefix + name + ".running_mean");
        run.var = get(prefix + name + ".running_var");
    }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    Writer w(os);
    os.write(kMagic, sizeof kMagic);
    w.u32(Checkpoint::kVersion);
    const ViTConfig& c = ckpt.cfg;
    for (std::size_t v : {c.patch_side, c.depth, c.heads, c.token_dim, c.mlp_ratio, c.image_side,
                          c.channels, c.proj_hidden, c.pred_hidden, c.out_dim}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.str(ckpt.metadata);
    w.u32(static_cast<std::uint32_t>(ckpt.blobs.size()));
    for (const auto& b : ckpt.blobs) {
        w.str(b.name);
        w.u8(static_cast<std::uint8_t>(b.dtype));
        w.u32(static_cast<std::uint32_t>(b.value.rank()));
        for (auto d : b.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : b.value.values()) {
            if (b.dtype == CheckpointBlob::Dtype::F32) w.f32(static_cast<float>(v));
            else w.f64(v);
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    Reader r(is, path.string());
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    }
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion) {
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " +
                                 std::to_string(version));
    }
    Checkpoint ckpt;
    ViTConfig& c = ckpt.cfg;
    for (std::size_t* f : {&c.patch_side, &c.depth, &c.heads, &c.token_dim, &c.mlp_ratio, &c.image_side,
                           &c.channels, &c.proj_hidden, &c.pred_hidden, &c.out_dim}) {
        *f = r.u32();
    }
    ckpt.metadata = r.str();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointBlob b;
        b.name = r.str();
        const std::uint8_t dt = r.u8();
        if (dt > 1) throw std::runtime_error("checkpoint " + path.string() + ": bad dtype in " + b.name);
        b.dtype = static_cast<CheckpointBlob::Dtype>(dt);
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        Tensor v(shape);
        for (auto& x : v.values()) x = b.dtype == CheckpointBlob::Dtype::F32 ? r.f32() : r.f64();
        b.value = std::move(v);
        ckpt.blobs.push_back(std::move(b));
    }
    return ckpt;
}

}  // namespace patchmix
