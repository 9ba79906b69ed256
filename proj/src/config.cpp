#include "patchmix/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace patchmix {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned 64-bit integer");
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a real number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::pair<double, double> parse_range(const std::string& key, const std::string& v) {
    const auto parts = split_list(v);
    if (parts.size() != 2) bad_value(key, v, "a range 'lo,hi'");
    return {parse_real(key, parts[0]), parse_real(key, parts[1])};
}

std::string fmt(double x) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, p);
}
std::string fmt(std::size_t x) { return std::to_string(x); }
std::string fmt_u64(std::uint64_t x) { return std::to_string(x); }
std::string fmt(bool b) { return b ? "true" : "false"; }

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field size_field(std::string key, M member) {
    return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_size(key, v); },
            [member](const RunConfig& c) { return fmt(member(c)); }};
}
template <class M>
Field real_field(std::string key, M member) {
    return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); },
            [member](const RunConfig& c) { return fmt(member(c)); }};
}
template <class M>
Field bool_field(std::string key, M member) {
    return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); },
            [member](const RunConfig& c) { return fmt(member(c)); }};
}
template <class M>
Field string_field(std::string key, M member) {
    return {key, [member](RunConfig& c, const std::string& v) { member(c) = v; },
            [member](const RunConfig& c) { return member(c); }};
}
template <class Lo, class Hi>
Field range_field(std::string key, Lo lo, Hi hi) {
    return {key,
            [key, lo, hi](RunConfig& c, const std::string& v) {
                const auto r = parse_range(key, v);
                lo(c) = r.first;
                hi(c) = r.second;
            },
            [lo, hi](const RunConfig& c) {
                return fmt(lo(c)) + "," + fmt(hi(c));
            }};
}

#define PMX_REF(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"model.preset",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "micro") {
                             c.train.model = ViTConfig::micro();
                         } else if (v == "tiny") {
                             c.train.model = ViTConfig::tiny();
                         } else {
                             throw ConfigError("config key 'model.preset': expected micro or tiny, got '" + v + "'");
                         }
                     },
                     [](const RunConfig& c) -> std::string {
                         if (c.train.model == ViTConfig::micro()) return "micro";
                         if (c.train.model == ViTConfig::tiny()) return "tiny";
                         return "custom";
                     }});
        f.push_back(size_field("model.patch_side", PMX_REF(c.train.model.patch_side)));
        f.push_back(size_field("model.depth", PMX_REF(c.train.model.depth)));
        f.push_back(size_field("model.heads", PMX_REF(c.train.model.heads)));
        f.push_back(size_field("model.token_dim", PMX_REF(c.train.model.token_dim)));
        f.push_back(size_field("model.mlp_ratio", PMX_REF(c.train.model.mlp_ratio)));
        f.push_back(size_field("model.image_side", PMX_REF(c.train.model.image_side)));
        f.push_back(size_field("model.channels", PMX_REF(c.train.model.channels)));
        f.push_back(size_field("model.proj_hidden", PMX_REF(c.train.model.proj_hidden)));
        f.push_back(size_field("model.pred_hidden", PMX_REF(c.train.model.pred_hidden)));
        f.push_back(size_field("model.out_dim", PMX_REF(c.train.model.out_dim)));

        f.push_back(string_field("dataset", PMX_REF(c.train.dataset)));
        f.push_back({"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64("seed", v); },
                     [](const RunConfig& c) { return fmt_u64(c.train.seed); }});
        f.push_back(size_field("epochs", PMX_REF(c.train.epochs)));
        f.push_back(size_field("warmup_epochs", PMX_REF(c.train.warmup_epochs)));
        f.push_back(size_field("steps", PMX_REF(c.train.steps)));
        f.push_back(size_field("warmup_steps", PMX_REF(c.train.warmup_steps)));
        f.push_back(real_field("lr", PMX_REF(c.train.base_lr)));
        f.push_back(size_field("batch", PMX_REF(c.train.batch)));
        f.push_back(size_field("mix_count", PMX_REF(c.train.mix_count)));
        f.push_back(real_field("tau", PMX_REF(c.train.tau)));
        f.push_back(range_field("weight_decay", PMX_REF(c.train.wd_start), PMX_REF(c.train.wd_end)));
        f.push_back(range_field("momentum", PMX_REF(c.train.mu_start), PMX_REF(c.train.mu_end)));
        f.push_back(real_field("clip_grad", PMX_REF(c.train.clip_grad)));
        f.push_back(real_field("adam_beta1", PMX_REF(c.train.adam.beta1)));
        f.push_back(real_field("adam_beta2", PMX_REF(c.train.adam.beta2)));
        f.push_back(real_field("adam_eps", PMX_REF(c.train.adam.eps)));
        f.push_back({"precision",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "f64") {
                             c.train.precision = Precision::F64;
                         } else if (v == "f32") {
                             c.train.precision = Precision::F32;
                         } else {
                             throw ConfigError("config key 'precision': expected f64 or f32, got '" + v + "'");
                         }
                     },
                     [](const RunConfig& c) -> std::string {
                         return c.train.precision == Precision::F64 ? "f64" : "f32";
                     }});
        f.push_back({"loss_terms",
                     [](RunConfig& c, const std::string& v) {
                         LossTerms t = c.train.terms;
                         t.mto = t.mtm = t.oto = false;
                         for (const auto& item : split_list(v)) {
                             if (item == "mto") {
                                 t.mto = true;
                             } else if (item == "mtm") {
                                 t.mtm = true;
                             } else if (item == "oto") {
                                 t.oto = true;
                             } else {
                                 throw ConfigError("config key 'loss_terms': unknown term '" + item +
                                                   "' (expected mto, mtm, oto)");
                             }
                         }
                         if (!t.mto && !t.mtm && !t.oto) throw ConfigError("config key 'loss_terms': no terms given");
                         c.train.terms = t;
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         auto add = [&](bool on, const char* n) {
                             if (on) out += (out.empty() ? "" : ",") + std::string(n);
                         };
                         add(c.train.terms.mto, "mto");
                         add(c.train.terms.mtm, "mtm");
                         add(c.train.terms.oto, "oto");
                         return out;
                     }});
        f.push_back(bool_field("normalize_mtm_weights", PMX_REF(c.train.terms.normalize_mtm_weights)));
        f.push_back(size_field("checkpoint_every", PMX_REF(c.train.checkpoint_every)));
        f.push_back(string_field("resume", PMX_REF(c.resume)));
        f.push_back(size_field("stop_at_step", PMX_REF(c.stop_at_step)));

        f.push_back(size_field("synth.classes", PMX_REF(c.train.synth.classes)));
        f.push_back(size_field("synth.per_class", PMX_REF(c.train.synth.per_class)));
        f.push_back(size_field("synth.val_per_class", PMX_REF(c.synth_val_per_class)));
        f.push_back(bool_field("synth.patch_structured", PMX_REF(c.train.synth.patch_structured)));
        f.push_back(real_field("synth.contrast", PMX_REF(c.train.synth.contrast)));
        f.push_back(real_field("synth.noise", PMX_REF(c.train.synth.noise)));
        f.push_back(real_field("synth.nuisance", PMX_REF(c.train.synth.nuisance)));
        f.push_back(size_field("synth.bumps", PMX_REF(c.train.synth.bumps)));
        f.push_back(real_field("synth.bump_amplitude", PMX_REF(c.train.synth.bump_amplitude)));
        f.push_back({"synth.seed",
                     [](RunConfig& c, const std::string& v) { c.train.synth.seed = parse_u64("synth.seed", v); },
                     [](const RunConfig& c) { return fmt_u64(c.train.synth.seed); }});

        f.push_back(range_field("aug.area_of_the_crop", PMX_REF(c.train.aug.crop_area_min),
                                PMX_REF(c.train.aug.crop_area_max)));
        f.push_back(range_field("aug.aspect_ratio_of_the_crop", PMX_REF(c.train.aug.crop_aspect_min),
                                PMX_REF(c.train.aug.crop_aspect_max)));
        f.push_back(real_field("aug.horizontal_flip_probability", PMX_REF(c.train.aug.flip_probability)));
        f.push_back(real_field("aug.color_jittering_probability", PMX_REF(c.train.aug.jitter_probability)));
        f.push_back(real_field("aug.max_brightness_adjustment_intensity", PMX_REF(c.train.aug.brightness)));
        f.push_back(real_field("aug.max_contrast_adjustment_intensity", PMX_REF(c.train.aug.contrast)));
        f.push_back(real_field("aug.max_saturation_adjustment_intensity", PMX_REF(c.train.aug.saturation)));
        f.push_back(real_field("aug.max_hue_adjustment_intensity", PMX_REF(c.train.aug.hue)));
        f.push_back(real_field("aug.color_dropping_probability", PMX_REF(c.train.aug.grayscale_probability)));
        f.push_back(range_field("aug.sigma_of_gaussian_blurring", PMX_REF(c.train.aug.blur_sigma_min),
                                PMX_REF(c.train.aug.blur_sigma_max)));
        f.push_back(real_field("aug.t1.gaussian_blurring_probability", PMX_REF(c.train.aug.views[0].blur_probability)));
        f.push_back(real_field("aug.t2.gaussian_blurring_probability", PMX_REF(c.train.aug.views[1].blur_probability)));
        f.push_back(real_field("aug.t1.solarization_probability", PMX_REF(c.train.aug.views[0].solarization_probability)));
        f.push_back(real_field("aug.t2.solarization_probability", PMX_REF(c.train.aug.views[1].solarization_probability)));
        f.push_back(bool_field("aug.color_ops", PMX_REF(c.train.aug.color_ops)));

        f.push_back(string_field("eval.checkpoint", PMX_REF(c.checkpoint)));
        f.push_back(size_field("knn.k", PMX_REF(c.knn_k)));
        f.push_back(real_field("knn.tau", PMX_REF(c.knn_tau)));
        f.push_back(string_field("eval.per_class_csv", PMX_REF(c.per_class_csv)));
        f.push_back({"probe.preset",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "linear") {
                             c.probe = ProbeConfig{};
                         } else if (v == "finetune") {
                             c.probe = ProbeConfig::finetune_preset();
                         } else {
                             throw ConfigError("config key 'probe.preset': expected linear or finetune, got '" + v + "'");
                         }
                     },
                     [](const RunConfig& c) -> std::string { return c.probe.finetune ? "finetune" : "linear"; }});
        f.push_back(size_field("probe.epochs", PMX_REF(c.probe.epochs)));
        f.push_back(real_field("probe.lr", PMX_REF(c.probe.lr)));
        f.push_back(real_field("probe.weight_decay", PMX_REF(c.probe.weight_decay)));
        f.push_back(size_field("probe.batch", PMX_REF(c.probe.batch)));
        f.push_back(real_field("probe.backbone_lr", PMX_REF(c.probe.backbone_lr)));

        f.push_back(size_field("demo.batch", PMX_REF(c.demo_batch)));
        f.push_back(size_field("demo.mix_count", PMX_REF(c.demo_mix_count)));

        f.push_back(size_field("oracle.permutations", PMX_REF(c.oracle_permutations)));
        f.push_back(size_field("oracle.random_instances", PMX_REF(c.oracle_random_instances)));
        f.push_back({"oracle.tokens",
                     [](RunConfig& c, const std::string& v) {
                         std::vector<std::size_t> t;
                         for (const auto& item : split_list(v)) t.push_back(parse_size("oracle.tokens", item));
                         if (t.empty()) throw ConfigError("config key 'oracle.tokens': empty list");
                         c.oracle_tokens = t;
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (auto t : c.oracle_tokens) out += (out.empty() ? "" : ",") + std::to_string(t);
                         return out;
                     }});

        f.push_back(size_field("gradcheck.batch", PMX_REF(c.gradcheck_batch)));
        f.push_back(size_field("gradcheck.dim", PMX_REF(c.gradcheck_dim)));
        f.push_back(size_field("gradcheck.mix_count", PMX_REF(c.gradcheck_mix_count)));
        f.push_back(real_field("gradcheck.step", PMX_REF(c.gradcheck_step)));
        f.push_back(real_field("gradcheck.tolerance", PMX_REF(c.gradcheck_tolerance)));
        f.push_back(bool_field("gradcheck.stop_gradient", PMX_REF(c.gradcheck_stop_gradient)));

        f.push_back(size_field("attn.image_index", PMX_REF(c.attn_image_index)));
        f.push_back(size_field("attn.scale", PMX_REF(c.attn_scale)));
        return f;
    }();
    return table;
}

#undef PMX_REF

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value'");
        }
        try {
            apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(no) + ": " + e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
}

std::string dump_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        if (f.key == "model.preset" || f.key == "probe.preset") continue;  // shorthand only
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

LabeledDataset make_dataset(const RunConfig& cfg, Split split) {
    const DatasetSpec spec = DatasetSpec::parse(cfg.train.dataset);
    switch (spec.kind) {
        case DatasetSpec::Kind::Cifar10: return load_cifar_split(spec.dir, CifarVariant::Cifar10, split);
        case DatasetSpec::Kind::Cifar100: return load_cifar_split(spec.dir, CifarVariant::Cifar100, split);
        case DatasetSpec::Kind::Synth: break;
    }
    SynthConfig s = cfg.train.synth;
    s.image_side = cfg.train.model.image_side;
    s.channels = cfg.train.model.channels;
    s.split = split;
    if (split == Split::Val) s.per_class = cfg.synth_val_per_class;
    return synth_blobs(s);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

}  // namespace patchmix
