#include "patchmix/loss_check.hpp"

#include <algorithm>
#include <cmath>

#include "patchmix/objectives.hpp"
#include "patchmix/ops.hpp"

namespace patchmix {

bool LossGradReport::passed() const {
    if (!xi_grad_zero() || entries.empty()) return false;
    return std::all_of(entries.begin(), entries.end(), [](const LossGradEntry& e) { return e.passed; });
}

LossGradReport run_loss_grad_check(const LossGradCheckConfig& cfg) {
    const std::size_t n = cfg.batch, d = cfg.dim;
    Rng rng = Rng::derive(cfg.seed, {0x67c4});
    auto random = [&](Shape s) {
        Tensor t(std::move(s));
        for (double& x : t.values()) x = rng.normal();
        return t;
    };
    const MixPlan plan = plan_mix(MixConfig{cfg.mix_count, n, cfg.mix_count}, Permutation::identity(cfg.mix_count));
    const Tensor h_point = random({2 * n * d});  // h_mix1 then h_view2
    const Tensor z_view1 = random({n, d}), z_view2 = random({n, d}), z_mix2 = random({n, d});

    auto h_parts = [n, d](Tape& t, Var x) {
        const Var hm = ops::reshape(t, ops::slice(t, x, 0, 0, n * d), {n, d});
        const Var hv = ops::reshape(t, ops::slice(t, x, 0, n * d, 2 * n * d), {n, d});
        return std::pair{hm, hv};
    };
    const std::vector<std::pair<std::string, ScalarFn>> losses = {
        {"l_mto",
         [&](Tape& t, Var x) { return loss_mto(t, h_parts(t, x).first, t.constant(z_view2), plan.y_mto, cfg.tau); }},
        {"l_mtm",
         [&](Tape& t, Var x) {
             return loss_mtm(t, h_parts(t, x).first, t.constant(z_mix2), plan.y_mtm, plan.w_mtm, cfg.tau);
         }},
        {"l_oto", [&](Tape& t, Var x) { return loss_oto(t, h_parts(t, x).second, t.constant(z_view1), cfg.tau); }},
        {"l_total",
         [&](Tape& t, Var x) {
             const auto [hm, hv] = h_parts(t, x);
             const ContrastVars v{hm, hv, t.constant(z_view1), t.constant(z_view2), t.constant(z_mix2)};
             return loss_total(t, v, plan, cfg.tau, {}, cfg.stop_gradient).total;
         }},
    };
    LossGradReport rep;
    for (const auto& [name, f] : losses) {
        LossGradEntry e{name, check_gradients(f, h_point, cfg.step), false};
        e.passed = e.result.passed(cfg.tolerance);
        rep.entries.push_back(e);
    }

    Tape t;
    const Var x = t.constant(h_point);
    const auto [hm, hv] = h_parts(t, x);
    const Var zv1 = t.leaf(z_view1), zv2 = t.leaf(z_view2), zm2 = t.leaf(z_mix2);
    const Var hm_leaf = t.leaf(t.value(hm)), hv_leaf = t.leaf(t.value(hv));
    const Var total = loss_total(t, ContrastVars{hm_leaf, hv_leaf, zv1, zv2, zm2}, plan, cfg.tau, {}, cfg.stop_gradient).total;
    t.backward(total);
    for (Var z : {zv1, zv2, zm2}) {
        const Tensor g = t.grad(z);
        for (double x : g.values()) rep.xi_grad_max_abs = std::max(rep.xi_grad_max_abs, std::abs(x));
    }
    return rep;
}

}  // namespace patchmix
