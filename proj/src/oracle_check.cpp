#include "patchmix/oracle_check.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <type_traits>
#include <stdexcept>

namespace patchmix {

std::string OracleFailure::describe() const {
    std::string out = check + " failed for N=" + std::to_string(batch) + " M=" + std::to_string(mix_count) +
                      " T=" + std::to_string(tokens) + " perm=[";
    for (std::size_t i = 0; i < permutation.size(); ++i) out += (i ? "," : "") + std::to_string(permutation[i]);
    return out + "]: " + detail;
}

namespace {

// Two channels per patch holding +id and -id, id = i * T + j + 1, so every
// patch is distinguishable and traceable to its origin.
PatchBatch labeled_patches(std::size_t n, std::size_t t) {
    PatchBatch pb;
    pb.patches = Tensor(Shape{n, t, 2});
    pb.patch_side = 1;
    pb.grid_h = 1;
    pb.grid_w = t;
    pb.channels = 2;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j) {
            const auto id = static_cast<double>(i * t + j + 1);
            pb.patch(i, j)[0] = id;
            pb.patch(i, j)[1] = -id;
        }
    return pb;
}

template <class T>
std::string row_str(const std::vector<T>& v) {
    std::string out = "(";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", v[i]);
            out += buf;
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out + ")";
}

}  // namespace

std::optional<OracleFailure> check_mix_instance(const MixConfig& cfg, const Permutation& perm, const MixFn& mix) {
    const std::size_t n = cfg.batch, m = cfg.mix_count, t = cfg.tokens;
    auto fail = [&](std::string check, std::string detail) {
        return OracleFailure{std::move(check), n, m, t, perm.forward(), std::move(detail)};
    };

    for (std::size_t j = 0; j < t; ++j) {
        if (perm.forward()[perm.inverse()[j]] != j || perm.inverse()[perm.forward()[j]] != j) {
            return fail("permutation inverse", "k(r(" + std::to_string(j) + ")) != " + std::to_string(j));
        }
    }

    const PatchBatch pb = labeled_patches(n, t);
    const MixPlan plan = plan_mix(cfg, perm);
    MixedBatch got;
    try {
        got = mix(pb, plan);
    } catch (const std::exception& e) {
        return fail("mix", std::string("threw: ") + e.what());
    }
    const MixedBatch want = naive_mix_oracle(pb, cfg, perm);

    if (!(got.patches.patches.shape() == want.patches.patches.shape())) {
        return fail("oracle equality", "output shape " + shape_str(got.patches.patches.shape()) + " vs " +
                                           shape_str(want.patches.patches.shape()));
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j)
            if (got.patches.patch(i, j)[0] != want.patches.patch(i, j)[0] ||
                got.patches.patch(i, j)[1] != want.patches.patch(i, j)[1]) {
                return fail("oracle equality", "mixed[" + std::to_string(i) + "][" + std::to_string(j) + "] holds patch id " +
                                                   std::to_string(got.patches.patch(i, j)[0]) + ", oracle has " +
                                                   std::to_string(want.patches.patch(i, j)[0]));
            }
    const MixPlan& gp = got.plan;
    if (gp.q != want.plan.q) return fail("plan q", row_str(gp.q) + " vs " + row_str(want.plan.q));
    if (gp.group_bounds != want.plan.group_bounds) {
        return fail("group bounds", row_str(gp.group_bounds) + " vs " + row_str(want.plan.group_bounds));
    }
    if (gp.source_map != want.plan.source_map) return fail("source map", "differs from the oracle");
    if (gp.y_mto != want.plan.y_mto) return fail("y_mto", "differs from the oracle");
    if (gp.y_mtm != want.plan.y_mtm) return fail("y_mtm", "differs from the oracle");
    if (gp.w_mtm != want.plan.w_mtm) return fail("w_mtm", "differs from the oracle");
    if (gp.mtm_window_wraps != want.plan.mtm_window_wraps) return fail("mtm_window_wraps", "differs from the oracle");

    // Every input patch appears exactly once, at its original position.
    std::vector<std::size_t> seen(n * t, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j) {
            const double idv = got.patches.patch(i, j)[0];
            const auto id = static_cast<std::size_t>(idv) - 1;
            if (idv < 1.0 || id >= n * t || got.patches.patch(i, j)[1] != -idv) {
                return fail("multiset conservation", "foreign patch value " + std::to_string(idv));
            }
            seen[id] += 1;
            if (id % t != j) {
                return fail("position preservation", "patch from position " + std::to_string(id % t) +
                                                         " landed at position " + std::to_string(j));
            }
            if (id / t != gp.source_map[i][j]) {
                return fail("source map", "mixed[" + std::to_string(i) + "][" + std::to_string(j) +
                                              "] comes from image " + std::to_string(id / t) + ", map says " +
                                              std::to_string(gp.source_map[i][j]));
            }
        }
    for (std::size_t id = 0; id < n * t; ++id)
        if (seen[id] != 1) {
            return fail("multiset conservation", "patch id " + std::to_string(id + 1) + " appears " +
                                                     std::to_string(seen[id]) + " times");
        }

    // Closed forms of the targets and weights.
    const auto w = mix_weight_row(m);
    double wsum = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        wsum += w[j];
        if (w[j] != w[w.size() - 1 - j]) return fail("weight symmetry", row_str(w));
    }
    if (w[m - 1] != 1.0 || std::abs(wsum - static_cast<double>(m)) > 1e-12) {
        return fail("weight closed form", row_str(w) + " should peak at 1 and sum to M");
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < m; ++g)
            if (gp.y_mto[i][g] != (i + g) % n) return fail("y_mto closed form", row_str(gp.y_mto[i]));
        for (std::size_t j = 0; j < 2 * m - 1; ++j)
            if (gp.y_mtm[i][j] != (i + n + j - (m - 1)) % n) return fail("y_mtm closed form", row_str(gp.y_mtm[i]));
    }
    // Image sizes per group: the first T mod M groups hold one extra patch.
    for (std::size_t g = 0; g < m; ++g) {
        const std::size_t len = gp.group_bounds[g + 1] - gp.group_bounds[g];
        if (len != t / m + (g < t % m ? 1 : 0)) return fail("leftover rule", row_str(gp.group_bounds));
    }
    return std::nullopt;
}

OracleReport run_oracle_check(const OracleCheckConfig& cfg, const MixFn& mix) {
    const auto start = std::chrono::steady_clock::now();
    OracleReport rep;
    auto finish = [&]() {
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return rep;
    };
    auto run = [&](const MixConfig& mc, Rng& rng) -> bool {
        const Permutation perm = sample_permutation(mc.tokens, rng);
        bool refused = false;
        try {
            mc.validate();
        } catch (const std::invalid_argument&) {
            refused = true;
        }
        if (refused) {
            // plan_mix must refuse the instance as well.
            try {
                plan_mix(mc, perm);
            } catch (const std::invalid_argument&) {
                rep.rejected += 1;
                return true;
            }
            rep.failure = OracleFailure{"precondition", mc.batch, mc.mix_count, mc.tokens, perm.forward(),
                                        "plan_mix accepted an invalid instance"};
            return false;
        }
        rep.failure = check_mix_instance(mc, perm, mix);
        return !rep.failure;
    };

    Rng rng = Rng::derive(cfg.seed, {0x0c4ec});
    for (std::size_t n : cfg.batches)
        for (std::size_t m = 1; m <= cfg.max_mix_count; ++m)
            for (std::size_t t : cfg.tokens) {
                const MixConfig mc{m, n, t};
                const bool invalid = m > n || t < m;
                for (std::size_t p = 0; p < (invalid ? 1 : cfg.permutations); ++p) {
                    if (!run(mc, rng)) return finish();
                    if (!invalid) rep.grid_instances += 1;
                }
            }
    for (std::size_t k = 0; k < cfg.random_instances; ++k) {
        const std::size_t n = 1 + rng.below(12);
        const std::size_t m = 1 + rng.below(std::min<std::size_t>(n, 6));
        const std::size_t t = m + rng.below(64);
        if (!run(MixConfig{m, n, t}, rng)) return finish();
        rep.random_instances += 1;
    }
    return finish();
}

}  // namespace patchmix
