#include "patchmix/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "patchmix/ops.hpp"

namespace patchmix {

namespace {

void require_finite(const Tape& t, Var v, const char* what) {
    if (!t.value(v).all_finite()) throw std::domain_error(std::string(what) + ": non-finite value");
}

Var normalized_rows(Tape& t, Var a, const char* which) {
    try {
        return ops::l2_normalize(t, a);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("cosine_sim_matrix: operand ") + which + ": " + e.what());
    }
}

// log softmax over keys of sim(query, keys) / tau.
Var log_probs(Tape& t, Var query, Var keys, double tau, const char* what) {
    if (!(tau > 0.0)) throw std::invalid_argument(std::string(what) + ": temperature must be positive");
    const Tensor& qv = t.value(query);
    const Tensor& kv = t.value(keys);
    if (qv.rank() != 2 || kv.rank() != 2 || qv.dim(0) != kv.dim(0)) {
        throw std::invalid_argument(std::string(what) + ": expected two [N, d] operands, got " +
                                    shape_str(qv.shape()) + " and " + shape_str(kv.shape()));
    }
    const Var lp = ops::log_softmax(t, ops::scale(t, cosine_sim_matrix(t, query, keys), 1.0 / tau));
    require_finite(t, lp, what);
    return lp;
}

Var weighted_targets(Tape& t, Var lp, const Table<std::size_t>& targets, const Table<double>* weights,
                     double norm, const char* what) {
    const std::size_t n = t.value(lp).dim(0);
    if (targets.size() != n) {
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(targets.size()) +
                                    " target rows for N = " + std::to_string(n));
    }
    std::vector<std::size_t> rows, cols;
    std::vector<double> w;
    for (std::size_t i = 0; i < n; ++i) {
        if (weights && (*weights)[i].size() != targets[i].size()) {
            throw std::invalid_argument(std::string(what) + ": weight/target row lengths differ");
        }
        for (std::size_t j = 0; j < targets[i].size(); ++j) {
            rows.push_back(i);
            cols.push_back(targets[i][j]);
            w.push_back(-(weights ? (*weights)[i][j] : 1.0) * norm);
        }
    }
    const Var out = ops::weighted_pick_sum(t, lp, rows, cols, w);
    require_finite(t, out, what);
    return out;
}

}  // namespace

Var cosine_sim_matrix(Tape& t, Var a, Var b) {
    const Var an = normalized_rows(t, a, "a");
    const Var bn = normalized_rows(t, b, "b");
    return ops::matmul(t, an, bn, false, true);
}

Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b) {
    Tape t;
    return t.value(cosine_sim_matrix(t, t.constant(a), t.constant(b)));
}

Var loss_mto(Tape& t, Var h_mix1, Var z_view2, const Table<std::size_t>& y_mto, double tau) {
    const Var lp = log_probs(t, h_mix1, z_view2, tau, "loss_mto");
    const std::size_t n = y_mto.size(), m = n ? y_mto.front().size() : 0;
    if (m == 0) throw std::invalid_argument("loss_mto: empty targets");
    return weighted_targets(t, lp, y_mto, nullptr, 1.0 / static_cast<double>(n * m), "loss_mto");
}

Var loss_mtm(Tape& t, Var h_mix1, Var z_mix2, const Table<std::size_t>& y_mtm,
             const Table<double>& w_mtm, double tau) {
    const Var lp = log_probs(t, h_mix1, z_mix2, tau, "loss_mtm");
    return weighted_targets(t, lp, y_mtm, &w_mtm, 1.0 / static_cast<double>(y_mtm.size()), "loss_mtm");
}

Var loss_oto(Tape& t, Var h_view2, Var z_view1, double tau) {
    const Var lp = log_probs(t, h_view2, z_view1, tau, "loss_oto");
    const std::size_t n = t.value(lp).dim(0);
    Table<std::size_t> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = {i};
    return weighted_targets(t, lp, diag, nullptr, 1.0 / static_cast<double>(n), "loss_oto");
}

TotalLoss loss_total(Tape& t, const ContrastVars& v, const MixPlan& plan, double tau,
                     const LossTerms& terms, bool detach_targets) {
    if (!terms.mto && !terms.mtm && !terms.oto) throw std::invalid_argument("loss_total: no terms enabled");
    auto target = [&](Var z) { return detach_targets ? ops::stop_gradient(t, z) : z; };
    TotalLoss out;
    Var total;
    auto accumulate = [&](Var term) { total = total.valid() ? ops::add(t, total, term) : term; };
    if (terms.mto) {
        const Var l = loss_mto(t, v.h_mix1, target(v.z_view2), plan.y_mto, tau);
        out.report.l_mto = t.value(l).item();
        accumulate(l);
    }
    if (terms.mtm) {
        Table<double> w = plan.w_mtm;
        if (terms.normalize_mtm_weights) {
            for (auto& row : w)
                for (auto& x : row) x /= static_cast<double>(plan.cfg.mix_count);
        }
        const Var l = loss_mtm(t, v.h_mix1, target(v.z_mix2), plan.y_mtm, w, tau);
        out.report.l_mtm = t.value(l).item();
        accumulate(l);
    }
    if (terms.oto) {
        const Var l = loss_oto(t, v.h_view2, target(v.z_view1), tau);
        out.report.l_oto = t.value(l).item();
        accumulate(l);
    }
    out.total = total;
    out.report.l_total = t.value(total).item();
    return out;
}

LossReport loss_total(const ContrastBatch& cb, const LossTerms& terms) {
    Tape t;
    const ContrastVars v{t.constant(cb.h_mix1), t.constant(cb.h_view2), t.constant(cb.z_view1),
                         t.constant(cb.z_view2), t.constant(cb.z_mix2)};
    return loss_total(t, v, cb.plan, cb.tau, terms).report;
}

}  // namespace patchmix
