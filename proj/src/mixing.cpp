#include "patchmix/mixing.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace patchmix {

void MixConfig::validate() const {
    if (mix_count < 1) throw std::invalid_argument("mix config: M must be >= 1");
    if (batch < 1) throw std::invalid_argument("mix config: N must be >= 1");
    if (mix_count > batch) {
        throw std::invalid_argument("mix config: M = " + std::to_string(mix_count) + " exceeds N = " +
                                    std::to_string(batch) +
                                    " (a mixed image would take two groups from one source)");
    }
    if (tokens < mix_count) {
        throw std::invalid_argument("mix config: T = " + std::to_string(tokens) +
                                    " is smaller than M = " + std::to_string(mix_count));
    }
}

std::size_t MixPlan::group_of(std::size_t shuffled_pos) const {
    const auto it = std::upper_bound(group_bounds.begin(), group_bounds.end(), shuffled_pos);
    return static_cast<std::size_t>(it - group_bounds.begin()) - 1;
}

std::vector<std::size_t> flat_mix_index(std::size_t batch, std::size_t mix_count) {
    if (batch == 0 || mix_count == 0) throw std::invalid_argument("flat_mix_index: N and M must be >= 1");
    const std::size_t total = batch * mix_count;
    std::vector<std::size_t> q(total);
    for (std::size_t l = 0; l < total; ++l) q[l] = (l + (l % mix_count) * mix_count) % total;
    return q;
}

std::vector<std::size_t> group_bounds(std::size_t tokens, std::size_t mix_count) {
    const std::size_t s = tokens / mix_count, extra = tokens % mix_count;
    std::vector<std::size_t> b(mix_count + 1);
    for (std::size_t m = 0; m <= mix_count; ++m) b[m] = m * s + std::min(m, extra);
    return b;
}

std::vector<double> mix_weight_row(std::size_t mix_count) {
    const auto m = static_cast<double>(mix_count);
    std::vector<double> row(2 * mix_count - 1);
    for (std::size_t j = 0; j < row.size(); ++j) {
        const auto offset = static_cast<double>(j > mix_count - 1 ? j - (mix_count - 1) : mix_count - 1 - j);
        // (M - d) / M rounds once; 1 - d/M would round twice.
        row[j] = (m - offset) / m;
    }
    return row;
}

Table<double> mix_weights(const MixConfig& cfg) {
    cfg.validate();
    return Table<double>(cfg.batch, mix_weight_row(cfg.mix_count));
}

MixPlan plan_mix(const MixConfig& cfg, const Permutation& perm) {
    cfg.validate();
    if (perm.size() != cfg.tokens) {
        throw std::invalid_argument("plan_mix: permutation length " + std::to_string(perm.size()) +
                                    " != T = " + std::to_string(cfg.tokens));
    }
    const std::size_t n = cfg.batch, m = cfg.mix_count, t = cfg.tokens;
    MixPlan plan;
    plan.cfg = cfg;
    plan.perm = perm;
    plan.group_bounds = group_bounds(t, m);
    plan.q = flat_mix_index(n, m);

    plan.y_mto.assign(n, std::vector<std::size_t>(m));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t g = 0; g < m; ++g) plan.y_mto[i][g] = plan.q[i * m + g] / m;

    plan.source_map.assign(n, std::vector<std::size_t>(t));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j)
            plan.source_map[i][j] = plan.y_mto[i][plan.group_of(perm.inverse()[j])];

    plan.y_mtm.assign(n, std::vector<std::size_t>(2 * m - 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2 * m - 1; ++j) plan.y_mtm[i][j] = (i + n + j + 1 - m) % n;
    plan.w_mtm = mix_weights(cfg);
    plan.mtm_window_wraps = n <= 2 * m - 2;
    return plan;
}

MixStages apply_mix_stages(const PatchBatch& pb, const MixPlan& plan) {
    const MixConfig& cfg = plan.cfg;
    if (pb.count() != cfg.batch || pb.tokens() != cfg.tokens) {
        throw std::invalid_argument("apply_mix: patch batch " + shape_str(pb.patches.shape()) +
                                    " does not match plan (N = " + std::to_string(cfg.batch) +
                                    ", T = " + std::to_string(cfg.tokens) + ")");
    }
    MixStages st;
    st.shuffled = shuffle(pb, plan.perm);
    st.smix = st.shuffled;
    const std::size_t m = cfg.mix_count, d = pb.patch_dim();
    for (std::size_t l = 0; l < plan.q.size(); ++l) {
        const std::size_t dst_img = l / m, src_img = plan.q[l] / m, g = l % m;
        const std::size_t begin = plan.group_bounds[g], end = plan.group_bounds[g + 1];
        std::copy_n(st.shuffled.patch(src_img, begin), (end - begin) * d, st.smix.patch(dst_img, begin));
    }
    st.mixed = unshuffle(st.smix, plan.perm);
    return st;
}

MixedBatch apply_mix(const PatchBatch& pb, const MixPlan& plan) {
    return MixedBatch{apply_mix_stages(pb, plan).mixed, plan};
}

MixedBatch naive_mix_oracle(const PatchBatch& pb, const MixConfig& cfg, const Permutation& perm) {
    cfg.validate();
    if (pb.count() != cfg.batch || pb.tokens() != cfg.tokens || perm.size() != cfg.tokens) {
        throw std::invalid_argument("naive_mix_oracle: shapes do not match config");
    }
    const std::size_t n = cfg.batch, m = cfg.mix_count, t = cfg.tokens, d = pb.patch_dim();
    const std::size_t s = t / m, extra = t % m;
    // smix[i] = concat over groups of G_{u(i,g), g}; element p of that
    // sequence is patch k(p) of the source image.
    PatchBatch smix = pb;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t pos = 0;
        for (std::size_t g = 0; g < m; ++g) {
            const std::size_t src = (i + g) % n;
            const std::size_t len = s + (g < extra ? 1 : 0);
            for (std::size_t w = 0; w < len; ++w, ++pos) {
                const double* from = pb.patch(src, perm.forward()[pos]);
                std::copy(from, from + d, smix.patch(i, pos));
            }
        }
    }
    // Undo the shuffle: position k(p) of the output receives element p.
    PatchBatch mixed = pb;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < t; ++p)
            std::copy(smix.patch(i, p), smix.patch(i, p) + d, mixed.patch(i, perm.forward()[p]));

    // Plan fields from the 2-d index form.
    MixPlan plan;
    plan.cfg = cfg;
    plan.perm = perm;
    plan.group_bounds.push_back(0);
    for (std::size_t g = 0; g < m; ++g) plan.group_bounds.push_back(plan.group_bounds.back() + s + (g < extra ? 1 : 0));
    plan.q.resize(n * m);
    plan.y_mto.assign(n, std::vector<std::size_t>(m));
    plan.source_map.assign(n, std::vector<std::size_t>(t));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t pos = 0;
        for (std::size_t g = 0; g < m; ++g) {
            const std::size_t src = (i + g) % n;
            plan.q[i * m + g] = src * m + g;
            plan.y_mto[i][g] = src;
            for (std::size_t w = 0; w < s + (g < extra ? 1 : 0); ++w, ++pos) {
                plan.source_map[i][perm.forward()[pos]] = src;
            }
        }
    }
    plan.y_mtm.assign(n, {});
    plan.w_mtm.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
        for (long off = -static_cast<long>(m) + 1; off <= static_cast<long>(m) - 1; ++off) {
            const long j = (static_cast<long>(i) + off + static_cast<long>(n)) % static_cast<long>(n);
            plan.y_mtm[i].push_back(static_cast<std::size_t>(j));
            plan.w_mtm[i].push_back(static_cast<double>(static_cast<long>(m) - std::labs(off)) /
                                    static_cast<double>(m));
        }
    }
    plan.mtm_window_wraps = n <= 2 * m - 2;
    return MixedBatch{mixed, plan};
}

}  // namespace patchmix
