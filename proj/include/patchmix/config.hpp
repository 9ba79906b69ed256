#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchmix/evaluation.hpp"
#include "patchmix/trainer.hpp"

namespace patchmix {

/// Bad key, value or syntax in a config file or override.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Everything a command can be configured with. Training keys live in
/// `train`; the rest select evaluation, demo and verification behavior.
struct RunConfig {
    TrainConfig train;
    std::size_t synth_val_per_class = 64;
    std::string resume;             // checkpoint to continue from
    std::size_t stop_at_step = 0;   // 0: run the whole budget

    std::string checkpoint;  // eval-*, attn-dump; empty = random init
    std::size_t knn_k = kKnnDefaultK;
    double knn_tau = kKnnDefaultTau;
    std::string per_class_csv;
    ProbeConfig probe;

    std::size_t demo_batch = 3;
    std::size_t demo_mix_count = 3;

    std::size_t oracle_permutations = 5;
    std::size_t oracle_random_instances = 1000;
    std::vector<std::size_t> oracle_tokens{4, 8, 9, 16, 196};

    std::size_t gradcheck_batch = 4;
    std::size_t gradcheck_dim = 8;
    std::size_t gradcheck_mix_count = 2;
    double gradcheck_step = 1e-3;
    double gradcheck_tolerance = 1e-4;
    /// false removes the stop-gradient on the momentum-branch inputs (mutation check).
    bool gradcheck_stop_gradient = true;

    std::size_t attn_image_index = 0;
    std::size_t attn_scale = 8;
};

/// Applies one key = value setting. Throws ConfigError on an unknown key or
/// an unparsable value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// "key=value" form used by --override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Parses key = value lines; '#' starts a comment, blank lines are ignored.
/// Errors name `source` and the line number.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Every key with its current value, one "key = value" line each, in a
/// form apply_config_text accepts.
std::string dump_config(const RunConfig& cfg);

/// The configured dataset split. Synthetic data takes image side and
/// channels from the model; validation uses synth.val_per_class.
LabeledDataset make_dataset(const RunConfig& cfg, Split split);

/// All recognized keys.
std::vector<std::string> config_keys();

}  // namespace patchmix
