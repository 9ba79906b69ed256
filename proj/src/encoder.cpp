#include "patchmix/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "patchmix/ops.hpp"

namespace patchmix {

ViTConfig ViTConfig::tiny() {
    ViTConfig c;
    c.patch_side = 2;
    c.depth = 12;
    c.heads = 3;
    c.token_dim = 192;
    c.image_side = 32;
    return c;
}

ViTConfig ViTConfig::micro() {
    ViTConfig c;
    c.patch_side = 2;
    c.depth = 2;
    c.heads = 2;
    c.token_dim = 32;
    c.image_side = 8;
    c.proj_hidden = 256;
    c.pred_hidden = 256;
    return c;
}

void ViTConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("vit config: ") + name + " must be positive");
    };
    positive(patch_side, "patch_side");
    positive(heads, "heads");
    positive(token_dim, "token_dim");
    positive(mlp_ratio, "mlp_ratio");
    positive(image_side, "image_side");
    positive(channels, "channels");
    positive(proj_hidden, "proj_hidden");
    positive(pred_hidden, "pred_hidden");
    positive(out_dim, "out_dim");
    if (token_dim % heads != 0) {
        throw std::invalid_argument("vit config: token_dim " + std::to_string(token_dim) +
                                    " is not divisible by heads " + std::to_string(heads));
    }
    if (image_side % patch_side != 0) {
        throw std::invalid_argument("vit config: image_side " + std::to_string(image_side) +
                                    " is not divisible by patch_side " + std::to_string(patch_side));
    }
}

void ParamSet::add(std::string name, Tensor value, bool decay) {
    if (index_.count(name)) throw std::logic_error("param set: duplicate name " + name);
    index_.emplace(name, items_.size());
    items_.push_back(Param{std::move(name), std::move(value), decay});
}

std::size_t ParamSet::numel() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
}

std::size_t ParamSet::index_of(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("param set: no parameter named " + std::string(name));
    return it->second;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].name != other.items_[i].name ||
            items_[i].value.shape() != other.items_[i].value.shape()) {
            return false;
        }
    }
    return true;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].value != other.items_[i].value || items_[i].decay != other.items_[i].decay) return false;
    }
    return true;
}

namespace {

Tensor trunc_normal(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.truncated_normal(0.02);
    return t;
}

void add_linear(ParamSet& set, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    set.add(name + ".weight", trunc_normal({in, out}, rng), true);
    set.add(name + ".bias", Tensor(Shape{out}, 0.0), false);
}

void add_norm(ParamSet& set, const std::string& name, std::size_t dim) {
    set.add(name + ".gamma", Tensor(Shape{dim}, 1.0), false);
    set.add(name + ".beta", Tensor(Shape{dim}, 0.0), false);
}

void add_bn_buffer(BnBuffers& buffers, const std::string& name, std::size_t dim) {
    buffers[name] = BnRunning{Tensor(Shape{dim}, 0.0), Tensor(Shape{dim}, 1.0)};
}

// x [rows, in] -> x W + b
Var linear(Tape& t, const BoundParams& p, const std::string& name, Var x) {
    return ops::add(t, ops::matmul(t, x, p[name + ".weight"]), p[name + ".bias"]);
}

Var batch_norm(Tape& t, const BoundParams* p, const std::string& param_name,
               BnBuffers& buffers, const std::string& buffer_name, BnMode mode, Var x) {
    const Var gamma = p ? (*p)[param_name + ".gamma"] : Var{};
    const Var beta = p ? (*p)[param_name + ".beta"] : Var{};
    BnRunning& run = buffers.at(buffer_name);
    if (mode == BnMode::Eval) {
        return ops::batch_norm_eval(t, x, gamma, beta, run.mean, run.var, kBatchNormEps);
    }
    ops::BatchStats stats;
    const Var y = ops::batch_norm_train(t, x, gamma, beta, kBatchNormEps, &stats);
    const std::size_t n = t.value(x).dim(0);
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    for (std::size_t j = 0; j < run.mean.size(); ++j) {
        run.mean[j] = kBatchNormMomentum * run.mean[j] + (1.0 - kBatchNormMomentum) * stats.mean[j];
        run.var[j] = kBatchNormMomentum * run.var[j] + (1.0 - kBatchNormMomentum) * stats.var[j] * unbias;
    }
    return y;
}

}  // namespace

EncoderParams init_encoder(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    const std::size_t d = cfg.token_dim, t1 = cfg.tokens() + 1;
    ParamSet& bb = p.backbone;
    add_linear(bb, "patch_embed", cfg.patch_dim(), d, rng);
    bb.add("cls_token", trunc_normal({1, d}, rng), false);
    bb.add("pos_embed", trunc_normal({t1, d}, rng), true);
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::string pre = "block" + std::to_string(b);
        add_norm(bb, pre + ".norm1", d);
        add_linear(bb, pre + ".attn.q", d, d, rng);
        add_linear(bb, pre + ".attn.k", d, d, rng);
        add_linear(bb, pre + ".attn.v", d, d, rng);
        add_linear(bb, pre + ".attn.proj", d, d, rng);
        add_norm(bb, pre + ".norm2", d);
        add_linear(bb, pre + ".mlp.fc1", d, d * cfg.mlp_ratio, rng);
        add_linear(bb, pre + ".mlp.fc2", d * cfg.mlp_ratio, d, rng);
    }
    add_norm(bb, "norm", d);

    ParamSet& g = p.projector;
    add_linear(g, "proj.fc0", d, cfg.proj_hidden, rng);
    add_norm(g, "proj.bn0", cfg.proj_hidden);
    add_linear(g, "proj.fc1", cfg.proj_hidden, cfg.proj_hidden, rng);
    add_norm(g, "proj.bn1", cfg.proj_hidden);
    add_linear(g, "proj.fc2", cfg.proj_hidden, cfg.out_dim, rng);

    ParamSet& h = p.predictor;
    add_linear(h, "pred.fc0", cfg.out_dim, cfg.pred_hidden, rng);
    add_norm(h, "pred.bn0", cfg.pred_hidden);
    add_linear(h, "pred.fc1", cfg.pred_hidden, cfg.out_dim, rng);

    add_bn_buffer(p.buffers, "proj.bn0", cfg.proj_hidden);
    add_bn_buffer(p.buffers, "proj.bn1", cfg.proj_hidden);
    add_bn_buffer(p.buffers, "proj.bn2", cfg.out_dim);
    add_bn_buffer(p.buffers, "pred.bn0", cfg.pred_hidden);
    add_bn_buffer(p.buffers, "pred.bn1", cfg.out_dim);
    return p;
}

MomentumParams init_momentum(const EncoderParams& theta) {
    MomentumParams xi{theta.backbone, theta.projector, {}};
    for (const auto& [name, run] : theta.buffers) {
        if (name.rfind("proj.", 0) == 0) xi.buffers[name] = run;
    }
    return xi;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& set, bool requires_grad) : set_(&set) {
    vars_.reserve(set.size());
    for (const auto& p : set.items()) vars_.push_back(tape.leaf(p.value, requires_grad));
}

std::vector<Tensor> BoundParams::gradients(const Tape& tape) const {
    std::vector<Tensor> g;
    g.reserve(vars_.size());
    for (Var v : vars_) g.push_back(tape.grad(v));
    return g;
}

Var forward_backbone(Tape& t, const BoundParams& p, const ViTConfig& cfg, const PatchBatch& pb,
                     AttentionCapture* capture) {
    if (pb.tokens() != cfg.tokens() || pb.patch_dim() != cfg.patch_dim()) {
        throw std::invalid_argument("forward_backbone: patch batch " + shape_str(pb.patches.shape()) +
                                    " does not match config (T = " + std::to_string(cfg.tokens()) +
                                    ", D = " + std::to_string(cfg.patch_dim()) + ")");
    }
    const std::size_t n = pb.count(), tk = pb.tokens(), t1 = tk + 1, d = cfg.token_dim;
    const std::size_t heads = cfg.heads, hd = cfg.head_dim();

    const Var patches = t.constant(pb.patches.reshaped({n * tk, cfg.patch_dim()}));
    Var tokens = ops::reshape(t, linear(t, p, "patch_embed", patches), {n, tk, d});
    const Var cls = ops::broadcast_leading(t, p["cls_token"], n);  // [n, 1, d]
    const Var parts[] = {cls, tokens};
    Var x = ops::add(t, ops::concat(t, parts, 1), p["pos_embed"]);  // [n, t1, d]

    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    auto split_heads = [&](Var v) {  // [n*t1, d] -> [n*heads, t1, hd]
        const Var r = ops::reshape(t, v, {n, t1, heads, hd});
        return ops::reshape(t, ops::permute(t, r, {0, 2, 1, 3}), {n * heads, t1, hd});
    };
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::string pre = "block" + std::to_string(b);
        const Var h = ops::reshape(
            t, ops::layer_norm(t, x, p[pre + ".norm1.gamma"], p[pre + ".norm1.beta"], kLayerNormEps),
            {n * t1, d});
        const Var q = split_heads(linear(t, p, pre + ".attn.q", h));
        const Var k = split_heads(linear(t, p, pre + ".attn.k", h));
        const Var v = split_heads(linear(t, p, pre + ".attn.v", h));
        const Var att = ops::softmax(t, ops::scale(t, ops::matmul(t, q, k, false, true), attn_scale));
        if (capture && b + 1 == cfg.depth) capture->probs = t.value(att);
        Var o = ops::matmul(t, att, v);  // [n*heads, t1, hd]
        o = ops::permute(t, ops::reshape(t, o, {n, heads, t1, hd}), {0, 2, 1, 3});
        o = linear(t, p, pre + ".attn.proj", ops::reshape(t, o, {n * t1, d}));
        x = ops::add(t, x, ops::reshape(t, o, {n, t1, d}));

        Var m = ops::layer_norm(t, x, p[pre + ".norm2.gamma"], p[pre + ".norm2.beta"], kLayerNormEps);
        m = ops::gelu(t, linear(t, p, pre + ".mlp.fc1", ops::reshape(t, m, {n * t1, d})));
        m = linear(t, p, pre + ".mlp.fc2", m);
        x = ops::add(t, x, ops::reshape(t, m, {n, t1, d}));
    }
    x = ops::layer_norm(t, x, p["norm.gamma"], p["norm.beta"], kLayerNormEps);
    return ops::reshape(t, ops::slice(t, x, 1, 0, 1), {n, d});
}

Var forward_projector(Tape& t, const BoundParams& p, BnBuffers& buffers, BnMode mode, Var rep) {
    Var x = linear(t, p, "proj.fc0", rep);
    x = ops::relu(t, batch_norm(t, &p, "proj.bn0", buffers, "proj.bn0", mode, x));
    x = linear(t, p, "proj.fc1", x);
    x = ops::relu(t, batch_norm(t, &p, "proj.bn1", buffers, "proj.bn1", mode, x));
    x = linear(t, p, "proj.fc2", x);
    return batch_norm(t, nullptr, "", buffers, "proj.bn2", mode, x);
}

Var forward_predictor(Tape& t, const BoundParams& p, BnBuffers& buffers, BnMode mode, Var z) {
    Var x = linear(t, p, "pred.fc0", z);
    x = ops::relu(t, batch_norm(t, &p, "pred.bn0", buffers, "pred.bn0", mode, x));
    x = linear(t, p, "pred.fc1", x);
    return batch_norm(t, nullptr, "", buffers, "pred.bn1", mode, x);
}

HeadOutputs forward_heads(Tape& t, const BoundParams& projector, const BoundParams& predictor,
                          BnBuffers& buffers, BnMode mode, Var rep) {
    const Var z = forward_projector(t, projector, buffers, mode, rep);
    return HeadOutputs{z, forward_predictor(t, predictor, buffers, mode, z)};
}

Tensor encode(const ParamSet& backbone, const ViTConfig& cfg, const PatchBatch& pb) {
    Tape t;
    const BoundParams p(t, backbone, false);
    return t.value(forward_backbone(t, p, cfg, pb));
}

namespace {

void ema_set(const ParamSet& theta, ParamSet& xi, double mu) {
    if (!theta.same_layout(xi)) throw std::invalid_argument("ema_update: parameter layouts differ");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const Tensor& src = theta[i].value;
        Tensor& dst = xi[i].value;
        if (mu == 0.0) {
            dst = src;
            continue;
        }
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = mu * dst[k] + (1.0 - mu) * src[k];
    }
}

}  // namespace

void ema_update(const EncoderParams& theta, MomentumParams& xi, double mu) {
    if (!(mu >= 0.0 && mu <= 1.0)) {
        throw std::invalid_argument("ema_update: mu = " + std::to_string(mu) + " outside [0, 1]");
    }
    if (mu == 1.0) return;
    ema_set(theta.backbone, xi.backbone, mu);
    ema_set(theta.projector, xi.projector, mu);
}

}  // namespace patchmix
