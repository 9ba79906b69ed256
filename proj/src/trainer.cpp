#include "patchmix/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "patchmix/mixing.hpp"
#include "patchmix/ops.hpp"
#include "patchmix/schedule.hpp"

namespace patchmix {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kStepTag = 0x57e9;
constexpr std::uint64_t kEpochTag = 0xe90c;

void round_to_float(ParamSet& set) {
    for (auto& p : set.items())
        for (double& x : p.value.values()) x = static_cast<double>(static_cast<float>(x));
}

bool all_finite(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (!t.all_finite()) return false;
    return true;
}

void scale_all(std::vector<Tensor>& ts, double s) {
    for (auto& t : ts)
        for (double& x : t.values()) x *= s;
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    aug.validate();
    if (batch < 2) throw std::invalid_argument("train: batch must be at least 2");
    MixConfig{mix_count, batch, model.tokens()}.validate();
    if (!(tau > 0.0)) throw std::invalid_argument("train: tau must be positive");
    if (!(base_lr >= 0.0)) throw std::invalid_argument("train: base_lr must be >= 0");
    if (steps == 0) {
        if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
        if (warmup_epochs >= epochs) throw std::invalid_argument("train: warmup_epochs must be < epochs");
    } else if (warmup_steps >= steps) {
        throw std::invalid_argument("train: warmup_steps must be < steps");
    }
    if (!(wd_start >= 0.0 && wd_end >= 0.0)) throw std::invalid_argument("train: weight decay must be >= 0");
    if (!(mu_start >= 0.0 && mu_start <= 1.0 && mu_end >= 0.0 && mu_end <= 1.0)) {
        throw std::invalid_argument("train: momentum range must lie in [0, 1]");
    }
    if (!(clip_grad >= 0.0)) throw std::invalid_argument("train: clip_grad must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
        throw std::invalid_argument("train: invalid AdamW constants");
    }
}

std::size_t TrainConfig::steps_per_epoch(std::size_t dataset_size) const {
    const std::size_t spe = dataset_size / batch;
    if (spe == 0) {
        throw std::invalid_argument("train: dataset of " + std::to_string(dataset_size) +
                                    " images is smaller than one batch of " + std::to_string(batch));
    }
    return spe;
}

std::size_t TrainConfig::total_steps(std::size_t dataset_size) const {
    return steps ? steps : epochs * steps_per_epoch(dataset_size);
}

std::size_t TrainConfig::total_warmup(std::size_t dataset_size) const {
    return steps ? warmup_steps : warmup_epochs * steps_per_epoch(dataset_size);
}

TrainState TrainState::init(const TrainConfig& cfg) {
    TrainState s;
    s.seed = cfg.seed;
    Rng rng = Rng::derive(cfg.seed, {kInitTag});
    s.theta = init_encoder(cfg.model, rng);
    s.xi = init_momentum(s.theta);
    s.m_backbone = AdamMoments::zeros_like(s.theta.backbone);
    s.m_projector = AdamMoments::zeros_like(s.theta.projector);
    s.m_predictor = AdamMoments::zeros_like(s.theta.predictor);
    if (cfg.precision == Precision::F32) {
        round_to_float(s.theta.backbone);
        round_to_float(s.theta.projector);
        round_to_float(s.theta.predictor);
        s.xi = init_momentum(s.theta);
    }
    return s;
}

StepHyper hyper_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t warmup_steps) {
    StepHyper h;
    h.lr = schedule(step, total_steps, warmup_steps, cfg.base_lr, 0.0, ScheduleKind::WarmupCosine);
    h.wd = schedule(step, total_steps, 0, cfg.wd_start, cfg.wd_end, ScheduleKind::Cosine);
    h.mu = schedule(step, total_steps, 0, cfg.mu_start, cfg.mu_end, ScheduleKind::Cosine);
    return h;
}

StepResult train_step(TrainState& state, const TrainConfig& cfg, const ImageBatch& batch, const StepHyper& hyper,
                      const StepObserver& observer) {
    auto emit = [&](std::string_view e) {
        if (observer) observer(e);
    };
    const std::size_t n = batch.count();
    if (n != cfg.batch) {
        throw std::invalid_argument("train_step: batch of " + std::to_string(n) + ", configured N = " +
                                    std::to_string(cfg.batch));
    }
    const ViTConfig& mc = state.theta.cfg;
    const std::uint64_t step = state.step;
    Rng aug1 = Rng::derive(state.seed, {kStepTag, step, 1});
    Rng aug2 = Rng::derive(state.seed, {kStepTag, step, 2});
    Rng perm1 = Rng::derive(state.seed, {kStepTag, step, 3});
    Rng perm2 = Rng::derive(state.seed, {kStepTag, step, 4});

    const PatchBatch v1 = patchify(augment_view(batch, cfg.aug, 1, aug1), mc.patch_side);
    const PatchBatch v2 = patchify(augment_view(batch, cfg.aug, 2, aug2), mc.patch_side);
    const MixConfig mix_cfg{cfg.mix_count, n, v1.tokens()};
    const MixPlan plan1 = plan_mix(mix_cfg, sample_permutation(v1.tokens(), perm1));
    const MixPlan plan2 = plan_mix(mix_cfg, sample_permutation(v2.tokens(), perm2));
    const PatchBatch mix1 = apply_mix(v1, plan1).patches;
    const PatchBatch mix2 = apply_mix(v2, plan2).patches;

    // Buffers are updated on copies and committed only if the step succeeds.
    BnBuffers theta_buffers = state.theta.buffers;
    BnBuffers xi_buffers = state.xi.buffers;

    Tape tape;
    const BoundParams fb(tape, state.theta.backbone, true);
    const BoundParams gp(tape, state.theta.projector, true);
    const BoundParams hp(tape, state.theta.predictor, true);
    emit("theta_forward");
    const Var h_mix1 =
        forward_heads(tape, gp, hp, theta_buffers, BnMode::Train, forward_backbone(tape, fb, mc, mix1)).h;
    const Var h_view2 =
        forward_heads(tape, gp, hp, theta_buffers, BnMode::Train, forward_backbone(tape, fb, mc, v2)).h;

    emit("xi_read");
    Tensor z_view1, z_view2, z_mix2;
    {
        Tape xt;
        const BoundParams xb(xt, state.xi.backbone, false);
        const BoundParams xg(xt, state.xi.projector, false);
        auto z_of = [&](const PatchBatch& pb) {
            return xt.value(
                forward_projector(xt, xg, xi_buffers, BnMode::Train, forward_backbone(xt, xb, mc, pb)));
        };
        z_view1 = z_of(v1);
        z_view2 = z_of(v2);
        z_mix2 = z_of(mix2);
    }

    StepResult res;
    res.hyper = hyper;
    emit("loss");
    TotalLoss loss;
    try {
        const ContrastVars vars{h_mix1, h_view2, tape.constant(z_view1), tape.constant(z_view2),
                                tape.constant(z_mix2)};
        loss = loss_total(tape, vars, plan1, cfg.tau, cfg.terms);
    } catch (const std::domain_error& e) {
        res.diagnostic = "step " + std::to_string(step) + ": " + e.what() + "; step skipped";
        return res;
    }
    res.report = loss.report;
    if (!std::isfinite(res.report.l_total)) {
        res.diagnostic = "step " + std::to_string(step) + ": non-finite loss; step skipped";
        return res;
    }
    tape.backward(loss.total);
    std::vector<Tensor> g_b = fb.gradients(tape), g_p = gp.gradients(tape), g_h = hp.gradients(tape);
    if (!all_finite(g_b) || !all_finite(g_p) || !all_finite(g_h)) {
        res.diagnostic = "step " + std::to_string(step) + ": non-finite gradient; step skipped";
        return res;
    }
    if (cfg.clip_grad > 0.0) {
        const double norm = global_grad_norm({&g_b, &g_p, &g_h});
        if (norm > cfg.clip_grad) {
            const double s = cfg.clip_grad / norm;
            scale_all(g_b, s);
            scale_all(g_p, s);
            scale_all(g_h, s);
        }
    }

    emit("optimizer_update");
    state.theta.buffers = std::move(theta_buffers);
    state.xi.buffers = std::move(xi_buffers);
    optimizer_update(state.theta.backbone, g_b, hyper.lr, hyper.wd, state.m_backbone, cfg.adam);
    optimizer_update(state.theta.projector, g_p, hyper.lr, hyper.wd, state.m_projector, cfg.adam);
    optimizer_update(state.theta.predictor, g_h, hyper.lr, hyper.wd, state.m_predictor, cfg.adam);
    if (cfg.precision == Precision::F32) {
        round_to_float(state.theta.backbone);
        round_to_float(state.theta.projector);
        round_to_float(state.theta.predictor);
    }

    emit("ema_update");
    ema_update(state.theta, state.xi, hyper.mu);
    if (cfg.precision == Precision::F32) {
        round_to_float(state.xi.backbone);
        round_to_float(state.xi.projector);
    }

    state.step += 1;
    state.history.push_back(res.report);
    res.ok = true;
    return res;
}

std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::uint64_t seed, std::size_t step,
                                       std::size_t dataset_size) {
    const std::size_t spe = cfg.steps_per_epoch(dataset_size);
    const std::size_t epoch = step / spe, b = step % spe;
    Rng rng = Rng::derive(seed, {kEpochTag, epoch});
    std::vector<std::size_t> order(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
    for (std::size_t i = dataset_size; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return {order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch),
            order.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.batch)};
}

namespace {

using D = CheckpointBlob::Dtype;

void add_moments(Checkpoint& c, const std::string& prefix, const ParamSet& set, const AdamMoments& m) {
    for (std::size_t k = 0; k < set.size(); ++k) {
        c.add(prefix + "m/" + set[k].name, m.m[k], D::F64);
        c.add(prefix + "v/" + set[k].name, m.v[k], D::F64);
    }
    c.add(prefix + "t", Tensor::scalar(static_cast<double>(m.t)), D::F64);
}

AdamMoments load_moments(const Checkpoint& c, const std::string& prefix, const ParamSet& set) {
    AdamMoments m;
    for (const auto& p : set.items()) {
        m.m.push_back(c.get(prefix + "m/" + p.name));
        m.v.push_back(c.get(prefix + "v/" + p.name));
        require_same_shape(m.m.back().shape(), p.value.shape(), p.name.c_str());
        require_same_shape(m.v.back().shape(), p.value.shape(), p.name.c_str());
    }
    m.t = static_cast<std::uint64_t>(c.get(prefix + "t").item());
    return m;
}

}  // namespace

Checkpoint state_to_checkpoint(const TrainState& s, const std::string& metadata) {
    Checkpoint c;
    c.cfg = s.theta.cfg;
    c.metadata = metadata;
    // Single-precision weights for consumers, plus an exact copy of
    // everything needed to continue the run bit-for-bit.
    c.add_params("theta/backbone/", s.theta.backbone, D::F32);
    c.add_params("theta/projector/", s.theta.projector, D::F32);
    c.add_params("theta/predictor/", s.theta.predictor, D::F32);
    c.add_buffers("theta/buffers/", s.theta.buffers, D::F32);
    c.add_params("xi/backbone/", s.xi.backbone, D::F32);
    c.add_params("xi/projector/", s.xi.projector, D::F32);
    c.add_buffers("xi/buffers/", s.xi.buffers, D::F32);
    c.add_params("exact/theta/backbone/", s.theta.backbone, D::F64);
    c.add_params("exact/theta/projector/", s.theta.projector, D::F64);
    c.add_params("exact/theta/predictor/", s.theta.predictor, D::F64);
    c.add_buffers("exact/theta/buffers/", s.theta.buffers, D::F64);
    c.add_params("exact/xi/backbone/", s.xi.backbone, D::F64);
    c.add_params("exact/xi/projector/", s.xi.projector, D::F64);
    c.add_buffers("exact/xi/buffers/", s.xi.buffers, D::F64);
    add_moments(c, "exact/adam/backbone/", s.theta.backbone, s.m_backbone);
    add_moments(c, "exact/adam/projector/", s.theta.projector, s.m_projector);
    add_moments(c, "exact/adam/predictor/", s.theta.predictor, s.m_predictor);
    c.add("state/step", Tensor::scalar(static_cast<double>(s.step)), D::F64);
    // The seed is split in two 32-bit halves so it survives the f64 blob.
    c.add("state/seed", Tensor(Shape{2}, {static_cast<double>(s.seed >> 32), static_cast<double>(s.seed & 0xffffffffu)}),
          D::F64);
    Tensor hist(Shape{s.history.size(), 4});
    for (std::size_t i = 0; i < s.history.size(); ++i) {
        hist[i * 4 + 0] = s.history[i].l_mto;
        hist[i * 4 + 1] = s.history[i].l_mtm;
        hist[i * 4 + 2] = s.history[i].l_oto;
        hist[i * 4 + 3] = s.history[i].l_total;
    }
    c.add("state/history", hist, D::F64);
    return c;
}

EncoderParams encoder_from_checkpoint(const Checkpoint& c) {
    Rng rng(0);
    EncoderParams p = init_encoder(c.cfg, rng);
    const std::string pre = c.has("exact/theta/backbone/cls_token") ? "exact/theta/" : "theta/";
    c.load_params(pre + "backbone/", p.backbone);
    c.load_params(pre + "projector/", p.projector);
    c.load_params(pre + "predictor/", p.predictor);
    c.load_buffers(pre + "buffers/", p.buffers);
    return p;
}

TrainState state_from_checkpoint(const Checkpoint& c) {
    if (!c.has("state/step") || !c.has("exact/theta/backbone/cls_token")) {
        throw std::runtime_error("checkpoint has no resumable training state");
    }
    TrainState s;
    s.theta = encoder_from_checkpoint(c);
    s.xi = init_momentum(s.theta);
    c.load_params("exact/xi/backbone/", s.xi.backbone);
    c.load_params("exact/xi/projector/", s.xi.projector);
    c.load_buffers("exact/xi/buffers/", s.xi.buffers);
    s.m_backbone = load_moments(c, "exact/adam/backbone/", s.theta.backbone);
    s.m_projector = load_moments(c, "exact/adam/projector/", s.theta.projector);
    s.m_predictor = load_moments(c, "exact/adam/predictor/", s.theta.predictor);
    s.step = static_cast<std::size_t>(c.get("state/step").item());
    const Tensor& seed = c.get("state/seed");
    s.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
    const Tensor& hist = c.get("state/history");
    const std::size_t rows = hist.rank() == 2 ? hist.dim(0) : 0;
    for (std::size_t i = 0; i < rows; ++i) {
        s.history.push_back({hist[i * 4 + 0], hist[i * 4 + 1], hist[i * 4 + 2], hist[i * 4 + 3]});
    }
    if (s.history.size() != s.step) throw std::runtime_error("checkpoint: loss history does not match step");
    return s;
}

void write_train_log(const fs::path& path, const TrainConfig& cfg, const TrainState& state,
                     std::size_t total_steps, std::size_t warmup_steps) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path.string());
    std::fprintf(f, "step,l_mto,l_mtm,l_oto,l_total,lr,mu,wd\n");
    for (std::size_t i = 0; i < state.history.size(); ++i) {
        const auto& r = state.history[i];
        const StepHyper h = hyper_at(cfg, i, total_steps, warmup_steps);
        std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, r.l_mto, r.l_mtm, r.l_oto,
                     r.l_total, h.lr, h.mu, h.wd);
    }
    const bool failed = std::ferror(f) != 0;
    if (std::fclose(f) != 0 || failed) throw std::runtime_error("write failed: " + path.string());
}

PretrainResult pretrain(const TrainConfig& cfg, const LabeledDataset& data, const PretrainOptions& opts) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("pretrain: empty dataset");
    if (data.side() != cfg.model.image_side || data.channels() != cfg.model.channels) {
        throw std::invalid_argument("pretrain: dataset images are " + std::to_string(data.channels()) + "x" +
                                    std::to_string(data.side()) + "x" + std::to_string(data.side()) +
                                    ", model expects " + std::to_string(cfg.model.channels) + "x" +
                                    std::to_string(cfg.model.image_side) + "x" +
                                    std::to_string(cfg.model.image_side));
    }
    const std::size_t total = cfg.total_steps(data.size());
    const std::size_t warmup = cfg.total_warmup(data.size());
    if (warmup >= total) throw std::invalid_argument("pretrain: warmup must be shorter than the run");
    if (opts.log && cfg.batch <= 2 * cfg.mix_count - 2) {
        opts.log("warning: batch " + std::to_string(cfg.batch) + " <= 2*mix_count-2, mtm targets repeat an image");
    }

    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + opts.out_dir.string() + ": " + ec.message());

    PretrainResult res;
    if (opts.resume_from.empty()) {
        res.state = TrainState::init(cfg);
    } else {
        const Checkpoint ck = read_checkpoint(opts.resume_from);
        if (!(ck.cfg == cfg.model)) throw std::invalid_argument("resume: checkpoint model differs from config");
        res.state = state_from_checkpoint(ck);
        if (res.state.seed != cfg.seed) throw std::invalid_argument("resume: checkpoint seed differs from config");
        if (res.state.step > total) throw std::invalid_argument("resume: checkpoint is past the configured budget");
    }
    res.csv_log = opts.out_dir / "train_log.csv";
    const std::size_t end = opts.stop_at_step ? std::min(opts.stop_at_step, total) : total;

    while (res.state.step < end) {
        const std::size_t step = res.state.step;
        const ImageBatch batch = data.batch(batch_indices(cfg, cfg.seed, step, data.size()));
        const StepResult r = train_step(res.state, cfg, batch, hyper_at(cfg, step, total, warmup), opts.observer);
        if (!r.ok) {
            if (opts.log) opts.log(r.diagnostic);
            write_train_log(res.csv_log, cfg, res.state, total, warmup);
            throw std::runtime_error(r.diagnostic);
        }
        if (opts.log && (step % 10 == 0 || step + 1 == end)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "step %zu/%zu l_total=%.6f lr=%.3g mu=%.6f", step + 1, total,
                          r.report.l_total, r.hyper.lr, r.hyper.mu);
            opts.log(buf);
        }
        if (cfg.checkpoint_every && res.state.step % cfg.checkpoint_every == 0 && res.state.step < end) {
            write_checkpoint(opts.out_dir / ("ckpt_step" + std::to_string(res.state.step) + ".bin"),
                             state_to_checkpoint(res.state, opts.metadata));
        }
    }
    write_train_log(res.csv_log, cfg, res.state, total, warmup);
    res.final_checkpoint = opts.out_dir / (end == total ? "final.bin" : "ckpt_step" + std::to_string(end) + ".bin");
    write_checkpoint(res.final_checkpoint, state_to_checkpoint(res.state, opts.metadata));
    return res;
}

}  // namespace patchmix
