#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "patchmix/patch_ops.hpp"

namespace patchmix {

/// Shape of one mixing problem: M images per mix, batch N, T patches.
struct MixConfig {
    std::size_t mix_count = 3;  // M
    std::size_t batch = 0;      // N
    std::size_t tokens = 0;     // T

    /// Throws std::invalid_argument unless 1 <= M <= N and T >= M.
    void validate() const;
    bool operator==(const MixConfig&) const = default;
};

template <class T>
using Table = std::vector<std::vector<T>>;

/// Full record of one mixing application.
struct MixPlan {
    MixConfig cfg;
    Permutation perm;
    /// M + 1 offsets into the shuffled sequence; the first T mod M groups hold
    /// one extra patch so that every patch is routed.
    std::vector<std::size_t> group_bounds;
    /// Flattened group sources, length L = N*M: smix group l takes shuffled group q[l].
    std::vector<std::size_t> q;
    /// [N][T]: source image of the patch at spatial position j of mixed image i.
    Table<std::size_t> source_map;
    Table<std::size_t> y_mto;  // [N][M]
    Table<std::size_t> y_mtm;  // [N][2M-1]
    Table<double> w_mtm;       // [N][2M-1]
    /// True when N <= 2M-2, so a y_mtm row repeats an index.
    bool mtm_window_wraps = false;

    std::size_t group_of(std::size_t shuffled_pos) const;
    bool operator==(const MixPlan&) const = default;
};

struct MixedBatch {
    PatchBatch patches;
    MixPlan plan;
};

/// Intermediate results of a mix, for inspection and demos.
struct MixStages {
    PatchBatch shuffled;
    PatchBatch smix;
    PatchBatch mixed;
};

/// q = (l + (l mod M) * M) mod L over l = 0..L-1 with L = N*M. Defined for
/// any N, M >= 1, including M > N where plan_mix refuses to build a plan.
std::vector<std::size_t> flat_mix_index(std::size_t batch, std::size_t mix_count);

/// Group bounds for T patches split into M groups, leftovers to the first groups.
std::vector<std::size_t> group_bounds(std::size_t tokens, std::size_t mix_count);

/// Row of mix-to-mix weights 1 - |M-1-j|/M for j in [0, 2M-1).
std::vector<double> mix_weight_row(std::size_t mix_count);
/// The weight row repeated for all N images.
Table<double> mix_weights(const MixConfig& cfg);

MixPlan plan_mix(const MixConfig& cfg, const Permutation& perm);

/// Shuffle, flat group gather by q, unshuffle.
MixStages apply_mix_stages(const PatchBatch& pb, const MixPlan& plan);
MixedBatch apply_mix(const PatchBatch& pb, const MixPlan& plan);

/// Loop-level reference built from u(i, m) = (i + m) mod N; never uses q.
MixedBatch naive_mix_oracle(const PatchBatch& pb, const MixConfig& cfg, const Permutation& perm);

/// Line-oriented text form: one line per array row, "name values...".
void write_plan_text(std::ostream& os, const MixPlan& plan);
MixPlan read_plan_text(std::istream& is);

}  // namespace patchmix
