// patchmix command-line driver.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "patchmix/config.hpp"
#include "patchmix/evaluation.hpp"
#include "patchmix/image_io.hpp"
#include "patchmix/loss_check.hpp"
#include "patchmix/mixing.hpp"
#include "patchmix/oracle_check.hpp"
#include "patchmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace patchmix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "patchmix_out";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs& a) {
    sub->add_option("--config", a.config, "Config file (key = value lines)");
    sub->add_option("--seed", a.seed, "Seed; overrides the config value");
    sub->add_option("--out", a.out, "Output directory")->capture_default_str();
    sub->add_option("--override", a.overrides, "key=value setting applied after the config file (repeatable)")
        ->allow_extra_args(false);
}

RunConfig resolve(const CommonArgs& a) {
    RunConfig cfg;
    if (!a.config.empty()) apply_config_file(cfg, a.config);
    for (const auto& o : a.overrides) apply_override(cfg, o);
    if (a.seed) cfg.train.seed = *a.seed;
    return cfg;
}

void print_config(std::ostream& os, const RunConfig& cfg) {
    os << "# resolved config\n" << dump_config(cfg) << "# end config\n";
    os.flush();
}

void make_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

// Backbone from eval.checkpoint, or the training initialization when unset.
EncoderParams load_model(const RunConfig& cfg, std::string& source) {
    if (cfg.checkpoint.empty()) {
        source = "random-init(seed=" + std::to_string(cfg.train.seed) + ")";
        return TrainState::init(cfg.train).theta;
    }
    source = cfg.checkpoint;
    return encoder_from_checkpoint(read_checkpoint(cfg.checkpoint));
}

int cmd_pretrain(const CommonArgs& args) {
    RunConfig cfg = resolve(args);
    print_config(std::cout, cfg);
    cfg.train.validate();
    const LabeledDataset data = make_dataset(cfg, Split::Train);
    PretrainOptions opts;
    opts.out_dir = args.out;
    opts.metadata = dump_config(cfg);
    opts.resume_from = cfg.resume;
    opts.stop_at_step = cfg.stop_at_step;
    opts.log = [](const std::string& m) { std::cerr << m << "\n"; };
    const PretrainResult res = pretrain(cfg.train, data, opts);
    std::cout << "steps=" << res.state.step << "\n";
    std::cout << "csv_log=" << res.csv_log.string() << "\n";
    std::cout << "final_checkpoint=" << res.final_checkpoint.string() << "\n";
    return kExitOk;
}

int cmd_eval_knn(const CommonArgs& args) {
    const RunConfig cfg = resolve(args);
    print_config(std::cerr, cfg);
    std::string source;
    const EncoderParams enc = load_model(cfg, source);
    const LabeledDataset train = make_dataset(cfg, Split::Train);
    const LabeledDataset val = make_dataset(cfg, Split::Val);
    const FeatureBank bank =
        FeatureBank::build(extract_features(enc.backbone, enc.cfg, train), train.labels(), train.classes());
    const KnnResult r = knn_classify(bank, extract_features(enc.backbone, enc.cfg, val), val.labels(), cfg.knn_k,
                                     cfg.knn_tau);
    std::fprintf(stderr, "# knn k=%zu tau=%g vote=exp(sim/tau) train=%zu val=%zu model=%s\n", r.k, r.tau,
                 train.size(), val.size(), source.c_str());
    if (!cfg.per_class_csv.empty()) {
        std::ofstream csv(cfg.per_class_csv);
        if (!csv) throw std::runtime_error("cannot write " + cfg.per_class_csv);
        csv << "class,accuracy\n";
        for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%zu,%.6f\n", c, r.per_class_accuracy[c]);
            csv << buf;
        }
    }
    std::printf("knn_accuracy=%.6f\n", r.accuracy);
    return kExitOk;
}

int cmd_eval_linear(const CommonArgs& args) {
    RunConfig cfg = resolve(args);
    print_config(std::cerr, cfg);
    std::string source;
    const EncoderParams enc = load_model(cfg, source);
    const LabeledDataset train = make_dataset(cfg, Split::Train);
    const LabeledDataset val = make_dataset(cfg, Split::Val);
    ProbeConfig probe = cfg.probe;
    probe.seed = cfg.train.seed;
    const ProbeResult r = linear_probe(enc.backbone, enc.cfg, train, val, probe);
    std::fprintf(stderr, "# probe=%s epochs=%zu lr=%g train_accuracy=%.6f model=%s\n",
                 probe.finetune ? "finetune" : "linear", probe.epochs, probe.lr, r.train_accuracy, source.c_str());
    std::printf("%s_accuracy=%.6f\n", probe.finetune ? "finetune" : "linear", r.val_accuracy);
    return kExitOk;
}

int cmd_mix_demo(const CommonArgs& args) {
    const RunConfig cfg = resolve(args);
    print_config(std::cout, cfg);
    const LabeledDataset data = make_dataset(cfg, Split::Train);
    const std::size_t n = cfg.demo_batch, m = cfg.demo_mix_count;
    if (n > data.size()) throw std::invalid_argument("mix-demo: demo.batch exceeds the dataset size");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const ImageBatch images = data.batch(idx);
    const PatchBatch pb = patchify(images, cfg.train.model.patch_side);
    Rng rng = Rng::derive(cfg.train.seed, {0xde70});
    const MixPlan plan = plan_mix(MixConfig{m, n, pb.tokens()}, sample_permutation(pb.tokens(), rng));
    const MixStages st = apply_mix_stages(pb, plan);

    const fs::path out = args.out;
    make_out_dir(out);
    const std::string ext = default_image_extension(images.channels());
    const std::pair<const char*, ImageBatch> stages[] = {
        {"original", images},
        {"shuffled", unpatchify(st.shuffled)},
        {"smix", unpatchify(st.smix)},
        {"mixed", unpatchify(st.mixed)},
    };
    for (const auto& [name, batch] : stages)
        for (std::size_t i = 0; i < n; ++i) write_image(out / (std::string(name) + "_" + std::to_string(i) + ext), batch, i);
    {
        std::ofstream f(out / "plan.txt");
        if (!f) throw std::runtime_error("cannot write " + (out / "plan.txt").string());
        write_plan_text(f, plan);
    }
    // Group routing: G<image><group> feeds mixed image i.
    for (std::size_t i = 0; i < n; ++i) {
        std::cout << "mixed " << i << " <-";
        for (std::size_t g = 0; g < m; ++g) std::cout << " G" << plan.y_mto[i][g] << g;
        std::cout << "\n";
    }
    std::cout << "wrote " << 4 * n << " images and plan.txt to " << out.string() << "\n";
    return kExitOk;
}

int cmd_oracle_check(const CommonArgs& args) {
    const RunConfig cfg = resolve(args);
    print_config(std::cout, cfg);
    OracleCheckConfig oc;
    oc.tokens = cfg.oracle_tokens;
    oc.permutations = cfg.oracle_permutations;
    oc.random_instances = cfg.oracle_random_instances;
    oc.seed = cfg.train.seed;
    const OracleReport r = run_oracle_check(oc);
    std::printf("grid_instances=%zu random_instances=%zu rejected_invalid=%zu seconds=%.3f\n", r.grid_instances,
                r.random_instances, r.rejected, r.seconds);
    if (!r.passed()) {
        std::printf("FAIL %s\n", r.failure->describe().c_str());
        return kExitFailure;
    }
    std::printf("PASS oracle-check\n");
    return kExitOk;
}

int cmd_grad_check(const CommonArgs& args) {
    const RunConfig cfg = resolve(args);
    print_config(std::cout, cfg);
    if (cfg.train.precision == Precision::F32) {
        std::cerr << "warning: precision=f32: finite-difference tolerances are not guaranteed in single precision\n";
    }
    LossGradCheckConfig gc;
    gc.batch = cfg.gradcheck_batch;
    gc.dim = cfg.gradcheck_dim;
    gc.mix_count = cfg.gradcheck_mix_count;
    gc.tau = cfg.train.tau;
    gc.step = cfg.gradcheck_step;
    gc.tolerance = cfg.gradcheck_tolerance;
    gc.stop_gradient = cfg.gradcheck_stop_gradient;
    gc.seed = cfg.train.seed;
    const LossGradReport r = run_loss_grad_check(gc);
    for (const auto& e : r.entries) {
        std::printf("%s %s max_rel_err=%.3e compared=%zu\n", e.passed ? "PASS" : "FAIL", e.name.c_str(),
                    e.result.max_rel_error, e.result.compared);
    }
    std::printf("%s xi_branch_zero_grad max_abs=%.3e\n", r.xi_grad_zero() ? "PASS" : "FAIL", r.xi_grad_max_abs);
    return r.passed() ? kExitOk : kExitFailure;
}

int cmd_attn_dump(const CommonArgs& args) {
    const RunConfig cfg = resolve(args);
    print_config(std::cout, cfg);
    std::string source;
    const EncoderParams enc = load_model(cfg, source);
    const LabeledDataset val = make_dataset(cfg, Split::Val);
    const ImageBatch image = val.batch({cfg.attn_image_index});
    const Tensor maps = attention_maps(enc.backbone, enc.cfg, image);
    const fs::path out = args.out;
    make_out_dir(out);
    write_image(out / (std::string("attn_input") + default_image_extension(image.channels())), image);
    write_image(out / (std::string("attn_maps") + default_image_extension(1)),
                tile_attention_maps(maps, cfg.attn_scale));
    std::ofstream csv(out / "attn_maps.csv");
    if (!csv) throw std::runtime_error("cannot write " + (out / "attn_maps.csv").string());
    csv << "head,row,col,attention\n";
    const std::size_t g = maps.dim(1);
    for (std::size_t h = 0; h < maps.dim(0); ++h)
        for (std::size_t y = 0; y < g; ++y)
            for (std::size_t x = 0; x < g; ++x) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g\n", h, y, x, maps[(h * g + y) * g + x]);
                csv << buf;
            }
    std::printf("attention maps [%zu, %zu, %zu] from %s written to %s\n", maps.dim(0), maps.dim(1), maps.dim(2),
                source.c_str(), out.string().c_str());
    return kExitOk;
}

int apply_thread_env() {
    const char* env = std::getenv("PATCHMIX_THREADS");
    if (!env || !*env) return kExitOk;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) {
        std::cerr << "error: PATCHMIX_THREADS must be a positive integer, got '" << env << "'\n";
        return kExitUsage;
    }
    Eigen::setNbThreads(static_cast<int>(n));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PatchMix contrastive pretraining: train, evaluate and verify"};
    app.require_subcommand(1, 1);
    CommonArgs args;
    struct Command {
        const char* name;
        const char* help;
        int (*run)(const CommonArgs&);
    };
    const Command commands[] = {
        {"pretrain", "Pretrain an encoder; writes train_log.csv and checkpoints", cmd_pretrain},
        {"eval-knn", "kNN accuracy of a checkpoint (or random init) backbone", cmd_eval_knn},
        {"eval-linear", "Linear-probe (or finetune preset) accuracy", cmd_eval_linear},
        {"mix-demo", "Write original/shuffled/smix/mixed images and the mix plan", cmd_mix_demo},
        {"oracle-check", "Compare the mixing implementation with the loop-level oracle", cmd_oracle_check},
        {"grad-check", "Finite-difference check of every loss", cmd_grad_check},
        {"attn-dump", "Write last-block class-token attention maps", cmd_attn_dump},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        add_common(sub, args);
        subs.emplace_back(sub, &c);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    if (const int rc = apply_thread_env(); rc != kExitOk) return rc;

    for (const auto& [sub, cmd] : subs) {
        if (!sub->parsed()) continue;
        try {
            return cmd->run(args);
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitUsage;
        } catch (const std::invalid_argument& e) {
            std::cerr << "invalid configuration: " << e.what() << "\n";
            return kExitUsage;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitFailure;
        }
    }
    return kExitUsage;
}
