// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// gating criterion fails.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "patchmix/config.hpp"
#include "patchmix/data.hpp"
#include "patchmix/evaluation.hpp"
#include "patchmix/loss_check.hpp"
#include "patchmix/mixing.hpp"
#include "patchmix/objectives.hpp"
#include "patchmix/oracle_check.hpp"
#include "patchmix/trainer.hpp"

using namespace patchmix;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("patchmix_acceptance_" + name);
    fs::remove_all(p);
    return p;
}

// 1 ------------------------------------------------------------------------
Outcome index_algebra_oracle() {
    OracleCheckConfig cfg;  // N 2..6, M 1..min(N,4), T {4,8,9,16,196}, 5 permutations
    cfg.random_instances = 0;
    const auto t0 = Clock::now();
    const OracleReport r = run_oracle_check(cfg);
    const double secs = seconds_since(t0);
    if (!r.passed()) return {false, r.failure->describe()};
    return {secs < 10.0, fmt("%zu grid instances bit-exact, %zu refused (T < M), %.2f s (limit 10 s)",
                             r.grid_instances, r.rejected, secs)};
}

// 2 ------------------------------------------------------------------------
Outcome worked_examples() {
    const MixPlan p = plan_mix(MixConfig{3, 9, 9}, Permutation::identity(9));
    const std::vector<std::size_t> y_want = {7, 8, 0, 1, 2};
    const double w_want[] = {1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0 / 3.0};
    bool ok = p.y_mtm[0] == y_want && p.w_mtm[0].size() == 5;
    double werr = 0.0;
    for (std::size_t j = 0; ok && j < 5; ++j) werr = std::max(werr, std::abs(p.w_mtm[0][j] - w_want[j]));
    ok = ok && werr <= 1e-12;
    const std::vector<std::size_t> q_want = {0, 5, 10, 3, 4, 9, 2, 7, 8, 1, 6, 11};
    const bool q_ok = flat_mix_index(3, 4) == q_want;
    return {ok && q_ok, fmt("N=9 M=3 row 0: y_mtm %s, max weight error %.1e; N=3 M=4 q %s", ok ? "ok" : "wrong",
                            werr, q_ok ? "ok" : "wrong")};
}

// 3 ------------------------------------------------------------------------
// Patch (i, j) carries the value 1000 i + j, so every output patch names its
// origin image and position.
Outcome conservation_and_position() {
    Rng rng = Rng::derive(3, {0xacce});
    std::size_t uneven = 0;
    for (std::size_t inst = 0; inst < 1000; ++inst) {
        const std::size_t n = 1 + rng.below(8), m = 1 + rng.below(n), t = m + rng.below(40);
        if (t % m) ++uneven;
        PatchBatch pb;
        pb.patches = Tensor(Shape{n, t, 2});
        pb.patch_side = 1;
        pb.grid_h = 1;
        pb.grid_w = t;
        pb.channels = 2;
        std::multiset<double> in;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                pb.patch(i, j)[0] = 1000.0 * i + j;
                pb.patch(i, j)[1] = -(1000.0 * i + j);
                in.insert(1000.0 * i + j);
            }
        const MixedBatch mb = apply_mix(pb, plan_mix(MixConfig{m, n, t}, sample_permutation(t, rng)));
        std::multiset<double> out;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                const double v = mb.patches.patch(i, j)[0];
                out.insert(v);
                const auto src = static_cast<std::size_t>(v) / 1000, pos = static_cast<std::size_t>(v) % 1000;
                if (pos != j || src != mb.plan.source_map[i][j] || mb.patches.patch(i, j)[1] != -v) {
                    return {false, fmt("instance %zu (N=%zu M=%zu T=%zu): mixed (%zu, %zu) holds patch (%zu, %zu)",
                                       inst, n, m, t, i, j, src, pos)};
                }
            }
        if (in != out) return {false, fmt("instance %zu (N=%zu M=%zu T=%zu): patch multiset changed", inst, n, m, t)};
    }
    return {uneven > 0, fmt("1000 instances, %zu with T mod M != 0", uneven)};
}

// 4 ------------------------------------------------------------------------
Outcome degenerate_closed_forms() {
    Rng rng(4);
    Tensor row(Shape{1, 256});
    for (double& v : row.values()) v = rng.normal();
    double worst = 0.0;
    for (auto [n, m] : {std::pair<std::size_t, std::size_t>{4, 2}, {9, 3}, {16, 3}}) {
        Tensor same(Shape{n, 256});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < 256; ++k) same.at(i, k) = row[k];
        ContrastBatch cb;
        cb.h_mix1 = cb.h_view2 = cb.z_view1 = cb.z_view2 = cb.z_mix2 = same;
        cb.plan = plan_mix(MixConfig{m, n, 16}, sample_permutation(16, rng));
        const LossReport r = loss_total(cb);
        const double ln = std::log(static_cast<double>(n));
        worst = std::max({worst, std::abs(r.l_oto - ln), std::abs(r.l_mto - ln),
                          std::abs(r.l_mtm - static_cast<double>(m) * ln),
                          std::abs(r.l_total - static_cast<double>(m + 2) * ln)});
    }
    return {worst <= 1e-9, fmt("(N,M) in {(4,2),(9,3),(16,3)}: max deviation %.2e (limit 1e-9)", worst)};
}

// 5 ------------------------------------------------------------------------
Outcome gradient_correctness() {
    LossGradCheckConfig cfg;
    cfg.batch = 4;
    cfg.dim = 8;
    cfg.step = 1e-3;
    cfg.tolerance = 1e-4;
    const LossGradReport r = run_loss_grad_check(cfg);
    double total_err = -1.0;
    for (const auto& e : r.entries)
        if (e.name == "l_total") total_err = e.result.max_rel_error;
    const bool total_ok = total_err >= 0.0 && total_err <= 1e-4;
    return {total_ok && r.xi_grad_zero(),
            fmt("l_total max rel err %.2e (limit 1e-4); max |grad| on momentum inputs %.1e", total_err,
                r.xi_grad_max_abs)};
}

// 6 ------------------------------------------------------------------------
Outcome ema_closed_form() {
    const ViTConfig cfg = ViTConfig::micro();
    Rng r1(61), r2(62);
    const EncoderParams theta = init_encoder(cfg, r1);
    const MomentumParams xi0 = init_momentum(init_encoder(cfg, r2));
    MomentumParams xi = xi0;
    const double mu = 0.99;
    for (int k = 0; k < 100; ++k) ema_update(theta, xi, mu);
    const double mk = std::pow(mu, 100);
    double worst = 0.0;
    auto compare = [&](const ParamSet& got, const ParamSet& start, const ParamSet& target) {
        for (std::size_t i = 0; i < got.size(); ++i)
            for (std::size_t j = 0; j < got[i].value.size(); ++j)
                worst = std::max(worst, std::abs(got[i].value[j] - (mk * start[i].value[j] +
                                                                    (1.0 - mk) * target[i].value[j])));
    };
    compare(xi.backbone, xi0.backbone, theta.backbone);
    compare(xi.projector, xi0.projector, theta.projector);
    MomentumParams fixed = xi0;
    ema_update(theta, fixed, 1.0);
    const bool fix_ok = fixed.backbone == xi0.backbone && fixed.projector == xi0.projector;
    return {worst <= 1e-12 && fix_ok,
            fmt("mu=0.99, 100 steps: max error %.2e (limit 1e-12); mu=1 fixpoint %s", worst,
                fix_ok ? "bitwise" : "broken")};
}

// 7 ------------------------------------------------------------------------
Outcome schedule_endpoints() {
    TrainConfig c;
    c.base_lr = 1.5e-3;
    const std::size_t total = 300, warm = 30;
    const StepHyper h0 = hyper_at(c, 0, total, warm);
    const StepHyper hw = hyper_at(c, warm, total, warm);
    const StepHyper he = hyper_at(c, total, total, warm);
    const bool ok = h0.lr == 0.0 && hw.lr == c.base_lr && he.lr == 0.0 && h0.wd == 0.04 && he.wd == 0.4 &&
                    h0.mu == 0.996 && he.mu == 1.0;
    return {ok, fmt("lr %.17g/%.17g/%.17g, wd %.17g->%.17g, mu %.17g->%.17g", h0.lr, hw.lr, he.lr, h0.wd, he.wd,
                    h0.mu, he.mu)};
}

// 8 and 9 -------------------------------------------------------------------
// Desk-scale protocol shared by the smoke and ablation runs.
const char* const kSmokeSettings[] = {
    "model.preset=micro",
    "steps=300",
    "warmup_steps=30",
    "lr=1e-3",
    "batch=32",
    "mix_count=2",
    "synth.classes=2",
    "synth.per_class=128",
    "synth.val_per_class=64",
    "synth.contrast=0.3",
    "synth.nuisance=0.6",
    "tau=0.1",
    "aug.area_of_the_crop=0.3,1",
    "aug.color_ops=false",
    "knn.k=5",
};

RunConfig smoke_config(std::uint64_t seed) {
    RunConfig rc;
    for (const char* s : kSmokeSettings) apply_override(rc, s);
    rc.train.seed = seed;
    rc.train.synth.seed = seed;
    return rc;
}

struct SmokeRun {
    double first10 = 0.0, last10 = 0.0;
    double knn_trained = 0.0, knn_random = 0.0;
    double drop() const { return (first10 - last10) / first10; }
};

double knn_accuracy(const ParamSet& backbone, const ViTConfig& model, const LabeledDataset& train,
                    const LabeledDataset& val, std::size_t k) {
    const FeatureBank bank =
        FeatureBank::build(extract_features(backbone, model, train), train.labels(), train.classes());
    return knn_classify(bank, extract_features(backbone, model, val), val.labels(), k, kKnnDefaultTau).accuracy;
}

SmokeRun smoke_run(const RunConfig& rc) {
    const TrainConfig& c = rc.train;
    const LabeledDataset train = make_dataset(rc, Split::Train);
    const LabeledDataset val = make_dataset(rc, Split::Val);
    const std::size_t total = c.total_steps(train.size()), warm = c.total_warmup(train.size());
    TrainState s = TrainState::init(c);
    SmokeRun out;
    out.knn_random = knn_accuracy(s.theta.backbone, c.model, train, val, rc.knn_k);
    for (std::size_t k = 0; k < total; ++k) {
        const StepResult r = train_step(s, c, train.batch(batch_indices(c, c.seed, k, train.size())),
                                        hyper_at(c, k, total, warm));
        if (!r.ok) throw std::runtime_error(r.diagnostic);
    }
    for (std::size_t k = 0; k < 10; ++k) {
        out.first10 += s.history[k].l_total / 10.0;
        out.last10 += s.history[total - 10 + k].l_total / 10.0;
    }
    out.knn_trained = knn_accuracy(s.theta.backbone, c.model, train, val, rc.knn_k);
    return out;
}

std::vector<SmokeRun> g_smoke_m2;  // reused by the ablation

Outcome smoke_learning() {
    const auto t0 = Clock::now();
    std::size_t passing = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SmokeRun r = smoke_run(smoke_config(seed));
        g_smoke_m2.push_back(r);
        const bool a = r.drop() >= 0.20;
        const bool b = r.knn_trained >= 0.80 && r.knn_trained - r.knn_random >= 0.15;
        if (a && b) ++passing;
        std::printf("  seed %llu: l_total %.3f -> %.3f (drop %.1f%%), kNN trained %.3f vs random %.3f  %s\n",
                    static_cast<unsigned long long>(seed), r.first10, r.last10, 100.0 * r.drop(), r.knn_trained,
                    r.knn_random, a && b ? "ok" : "miss");
        std::fflush(stdout);
    }
    const double secs = seconds_since(t0);
    return {passing >= 8 && secs <= 300.0,
            fmt("%zu/10 seeds pass (need 8), %.0f s (limit 300 s)", passing, secs)};
}

Outcome ablation_direction() {
    std::size_t m2_ok = 0, m3_ok = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RunConfig oto = smoke_config(seed);
        apply_override(oto, "loss_terms=oto");
        RunConfig m3 = smoke_config(seed);
        apply_override(m3, "mix_count=3");
        const double base = smoke_run(oto).knn_trained;
        const double a2 = g_smoke_m2.at(seed).knn_trained;
        const double a3 = smoke_run(m3).knn_trained;
        if (a2 >= base) ++m2_ok;
        if (a3 >= base) ++m3_ok;
        std::printf("  seed %llu: kNN oto-only %.3f, M=2 %.3f, M=3 %.3f\n", static_cast<unsigned long long>(seed),
                    base, a2, a3);
        std::fflush(stdout);
    }
    return {m2_ok >= 7 && m3_ok >= 7,
            fmt("M=2 >= oto-only in %zu/10 seeds, M=3 in %zu/10 (need 7 each; informational)", m2_ok, m3_ok)};
}

// 10 -----------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Outcome determinism_and_resume() {
    RunConfig rc;
    apply_override(rc, "steps=12");
    apply_override(rc, "warmup_steps=3");
    apply_override(rc, "batch=16");
    apply_override(rc, "synth.per_class=32");
    rc.train.seed = 10;
    const LabeledDataset data = make_dataset(rc, Split::Train);

    auto run = [&](const fs::path& dir, const fs::path& resume, std::size_t stop) {
        PretrainOptions o;
        o.out_dir = dir;
        o.resume_from = resume;
        o.stop_at_step = stop;
        return pretrain(rc.train, data, o);
    };
    const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("resume");
    const PretrainResult ra = run(a, {}, 0);
    const PretrainResult rb = run(b, {}, 0);
    const bool same_log = slurp(ra.csv_log) == slurp(rb.csv_log);
    const PretrainResult half = run(c, {}, 5);
    const PretrainResult rest = run(c, half.final_checkpoint, 0);
    const bool resume_log = slurp(rest.csv_log) == slurp(ra.csv_log);
    const bool resume_params = rest.state.theta.backbone == ra.state.theta.backbone &&
                               rest.state.theta.predictor == ra.state.theta.predictor &&
                               rest.state.xi.backbone == ra.state.xi.backbone &&
                               rest.state.xi.projector == ra.state.xi.projector;
    for (const auto& d : {a, b, c}) fs::remove_all(d);
    return {same_log && resume_log && resume_params,
            fmt("repeat run CSV %s; resume at step 5 of 12: CSV %s, parameters %s", same_log ? "identical" : "differs",
                resume_log ? "identical" : "differs", resume_params ? "identical" : "differ")};
}

// 11 -----------------------------------------------------------------------
Outcome cifar_loader() {
    const fs::path dir = scratch("cifar");
    fs::create_directories(dir);
    // Record 0: label 7, all 255. Record 1: label 2, pixel (c, y, x) = (c * 64 + y + x) mod 256.
    std::string bytes;
    bytes.push_back(7);
    bytes.append(3072, static_cast<char>(255));
    bytes.push_back(2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) bytes.push_back(static_cast<char>((c * 64 + y + x) % 256));
    std::ofstream(dir / "golden10.bin", std::ios::binary) << bytes;
    std::string b100;
    b100.push_back(11);  // coarse
    b100.push_back(42);  // fine
    for (int k = 0; k < 3072; ++k) b100.push_back(static_cast<char>(k % 256));
    std::ofstream(dir / "golden100.bin", std::ios::binary) << b100;

    bool ok = true;
    const LabeledDataset g = load_cifar_binary(dir / "golden10.bin", CifarVariant::Cifar10);
    ok = ok && g.size() == 2 && g.labels()[0] == 7 && g.labels()[1] == 2;
    for (std::size_t c = 0; ok && c < 3; ++c)
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) {
                ok = ok && g.pixel(0, c, y, x) == 1.0;
                ok = ok && g.pixel(1, c, y, x) == static_cast<double>((c * 64 + y + x) % 256) / 255.0;
            }
    const LabeledDataset h = load_cifar_binary(dir / "golden100.bin", CifarVariant::Cifar100);
    ok = ok && h.size() == 1 && h.labels()[0] == 42 && h.pixel(0, 2, 31, 31) == static_cast<double>(3071 % 256) / 255.0;
    bool truncated_rejected = false;
    std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, 3073 + 10);
    try {
        load_cifar_binary(dir / "short.bin", CifarVariant::Cifar10);
    } catch (const std::exception&) {
        truncated_rejected = true;
    }
    fs::remove_all(dir);
    ok = ok && truncated_rejected;
    std::string detail = fmt("golden records %s", ok ? "bit-exact" : "wrong");

    struct Full {
        const char* name;
        const char* dir;
        CifarVariant variant;
    };
    for (const Full& f : {Full{"CIFAR-10", PATCHMIX_CIFAR10_DIR, CifarVariant::Cifar10},
                          Full{"CIFAR-100", PATCHMIX_CIFAR100_DIR, CifarVariant::Cifar100}}) {
        if (std::string(f.dir).empty() || !fs::is_directory(f.dir)) {
            detail += fmt("; %s full split skipped (no data directory configured)", f.name);
            continue;
        }
        const std::size_t ntr = load_cifar_split(f.dir, f.variant, Split::Train).size();
        const std::size_t nte = load_cifar_split(f.dir, f.variant, Split::Val).size();
        const bool counts = ntr == 50000 && nte == 10000;
        ok = ok && counts;
        detail += fmt("; %s train %zu / test %zu", f.name, ntr, nte);
    }
    return {ok, detail};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
        bool gating;
    };
    const std::vector<Criterion> all = {
        {1, "index-algebra oracle", index_algebra_oracle, true},
        {2, "worked examples", worked_examples, true},
        {3, "multiset conservation and position preservation", conservation_and_position, true},
        {4, "degenerate loss closed forms", degenerate_closed_forms, true},
        {5, "gradient correctness", gradient_correctness, true},
        {6, "EMA closed form", ema_closed_form, true},
        {7, "schedule endpoints", schedule_endpoints, true},
        {8, "end-to-end smoke learning", smoke_learning, true},
        {9, "ablation direction", ablation_direction, false},
        {10, "determinism and persistence", determinism_and_resume, true},
        {11, "CIFAR loader", cifar_loader, true},
    };
    int failures = 0;
    for (const Criterion& c : all) {
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
        if (!o.pass && c.gating) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
