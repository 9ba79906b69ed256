#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "patchmix/augment.hpp"
#include "patchmix/checkpoint.hpp"
#include "patchmix/data.hpp"
#include "patchmix/encoder.hpp"
#include "patchmix/objectives.hpp"
#include "patchmix/optimizer.hpp"

namespace patchmix {

enum class Precision { F64, F32 };

struct TrainConfig {
    ViTConfig model = ViTConfig::micro();
    AugConfig aug;
    LossTerms terms;
    AdamWConfig adam;
    std::size_t epochs = 1;
    std::size_t warmup_epochs = 0;
    /// Nonzero switches to step budgeting: `steps` total, `warmup_steps` warmup.
    std::size_t steps = 0;
    std::size_t warmup_steps = 0;
    double base_lr = 1e-3;
    std::size_t batch = 32;      // N
    std::size_t mix_count = 3;   // M
    double tau = 0.2;
    double wd_start = 0.04;
    double wd_end = 0.4;
    double mu_start = 0.996;
    double mu_end = 1.0;
    double clip_grad = 0.0;  // global-norm clipping threshold; 0 disables
    std::uint64_t seed = 0;
    /// F32 rounds every parameter to single precision after each update.
    Precision precision = Precision::F64;
    std::string dataset = "synth";
    SynthConfig synth;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only

    void validate() const;
    /// floor(dataset_size / N); throws when zero.
    std::size_t steps_per_epoch(std::size_t dataset_size) const;
    std::size_t total_steps(std::size_t dataset_size) const;
    std::size_t total_warmup(std::size_t dataset_size) const;
};

struct TrainState {
    std::uint64_t seed = 0;
    std::size_t step = 0;
    EncoderParams theta;
    MomentumParams xi;
    AdamMoments m_backbone;
    AdamMoments m_projector;
    AdamMoments m_predictor;
    std::vector<LossReport> history;

    /// Fresh Theta from the seed, Xi = Theta, zero moments.
    static TrainState init(const TrainConfig& cfg);
};

/// Scheduled hyper-parameters at one step.
struct StepHyper {
    double lr = 0.0;
    double wd = 0.0;
    double mu = 0.0;
};
StepHyper hyper_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t warmup_steps);

/// Receives "theta_forward", "xi_read", "loss", "optimizer_update",
/// "ema_update" in execution order.
using StepObserver = std::function<void(std::string_view event)>;

struct StepResult {
    bool ok = false;
    LossReport report;
    StepHyper hyper;
    std::string diagnostic;
};

/// One iteration: two augmented views, independent PatchMix of each view,
/// Theta branch (backbone + both heads) on mix1 and view2, Xi branch
/// (backbone + projector, no gradient) on view1, view2 and mix2, total loss,
/// AdamW on Theta, then EMA of Xi. On a non-finite loss or gradient the state
/// is left untouched and ok = false.
StepResult train_step(TrainState& state, const TrainConfig& cfg, const ImageBatch& batch, const StepHyper& hyper,
                      const StepObserver& observer = {});

/// Image indices for a step: epoch-wise shuffling without replacement,
/// seeded per epoch.
std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::uint64_t seed, std::size_t step,
                                       std::size_t dataset_size);

Checkpoint state_to_checkpoint(const TrainState& state, const std::string& metadata);
TrainState state_from_checkpoint(const Checkpoint& ckpt);
/// Theta from a checkpoint, preferring the exact f64 copy when present.
EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt);

struct PretrainOptions {
    std::filesystem::path out_dir;
    std::string metadata;             // stored in checkpoints (resolved config)
    std::filesystem::path resume_from;  // empty: fresh start
    std::size_t stop_at_step = 0;     // 0: run to the end
    StepObserver observer;
    std::function<void(const std::string&)> log;  // progress messages
};

struct PretrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path csv_log;
    TrainState state;
};

/// Runs train steps until the budget (or stop_at_step) is reached, writing
/// train_log.csv, periodic ckpt_step<k>.bin and final.bin under out_dir.
/// A non-finite step throws std::runtime_error after the diagnostic.
PretrainResult pretrain(const TrainConfig& cfg, const LabeledDataset& data, const PretrainOptions& opts);

/// CSV columns step,l_mto,l_mtm,l_oto,l_total,lr,mu,wd with 17 significant digits.
void write_train_log(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState& state,
                     std::size_t total_steps, std::size_t warmup_steps);

}  // namespace patchmix
