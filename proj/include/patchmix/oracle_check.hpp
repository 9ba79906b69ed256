#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patchmix/mixing.hpp"

namespace patchmix {

/// Mixing implementation under test.
using MixFn = std::function<MixedBatch(const PatchBatch&, const MixPlan&)>;

struct OracleCheckConfig {
    std::vector<std::size_t> batches{2, 3, 4, 5, 6};
    std::size_t max_mix_count = 4;
    std::vector<std::size_t> tokens{4, 8, 9, 16, 196};
    std::size_t permutations = 5;
    /// Extra instances with random N, M, T (including T mod M != 0).
    std::size_t random_instances = 1000;
    std::uint64_t seed = 0;
};

struct OracleFailure {
    std::string check;
    std::size_t batch = 0, mix_count = 0, tokens = 0;
    std::vector<std::size_t> permutation;
    std::string detail;

    std::string describe() const;
};

struct OracleReport {
    std::size_t grid_instances = 0;
    std::size_t random_instances = 0;
    std::size_t rejected = 0;  // M > N or T < M, refused by plan_mix as required
    std::optional<OracleFailure> failure;
    double seconds = 0.0;

    bool passed() const { return !failure.has_value(); }
};

/// Compares `mix` with naive_mix_oracle bit-exactly over the grid and the
/// random instances, and checks permutation inverses, multiset conservation,
/// position preservation and the target/weight closed forms. Stops at the
/// first failure.
OracleReport run_oracle_check(const OracleCheckConfig& cfg, const MixFn& mix = apply_mix);

/// Checks of one instance; returns the first violation.
std::optional<OracleFailure> check_mix_instance(const MixConfig& cfg, const Permutation& perm, const MixFn& mix);

}  // namespace patchmix
