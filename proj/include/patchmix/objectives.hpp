#pragma once

#include "patchmix/autodiff.hpp"
#include "patchmix/mixing.hpp"

namespace patchmix {

/// Which contrastive terms enter the total.
struct LossTerms {
    bool mto = true;
    bool mtm = true;
    bool oto = true;
    /// Divide mix-to-mix weights by M so each row sums to 1 (ablation only).
    bool normalize_mtm_weights = false;
};

struct LossReport {
    double l_mto = 0.0;
    double l_mtm = 0.0;
    double l_oto = 0.0;
    double l_total = 0.0;
};

/// Embeddings for one step. h_* come from the online branch (with
/// prediction head), z_* from the momentum branch (projection only).
struct ContrastBatch {
    Tensor h_mix1;
    Tensor h_view2;
    Tensor z_view1;
    Tensor z_view2;
    Tensor z_mix2;
    MixPlan plan;
    double tau = 0.2;
};

/// Cosine similarities out[i][t] = <a_i, b_t> / (|a_i| |b_t|).
Var cosine_sim_matrix(Tape& t, Var a, Var b);
Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b);

/// -(1/(N*M)) sum_i sum_m log softmax_i(sim / tau)[y_mto[i][m]].
Var loss_mto(Tape& t, Var h_mix1, Var z_view2, const Table<std::size_t>& y_mto, double tau);
/// -(1/N) sum_i sum_j w[i][j] log softmax_i(sim / tau)[y_mtm[i][j]].
Var loss_mtm(Tape& t, Var h_mix1, Var z_mix2, const Table<std::size_t>& y_mtm,
             const Table<double>& w_mtm, double tau);
/// InfoNCE with diagonal positives.
Var loss_oto(Tape& t, Var h_view2, Var z_view1, double tau);

struct ContrastVars {
    Var h_mix1, h_view2, z_view1, z_view2, z_mix2;
};

struct TotalLoss {
    Var total;
    LossReport report;
};

/// L_mto(h_mix1, sg(z_view2)) + L_mtm(h_mix1, sg(z_mix2)) + L_oto(h_view2, sg(z_view1)).
/// `detach_targets` = false drops the stop-gradient (mutation testing only).
TotalLoss loss_total(Tape& t, const ContrastVars& v, const MixPlan& plan, double tau,
                     const LossTerms& terms = {}, bool detach_targets = true);

LossReport loss_total(const ContrastBatch& cb, const LossTerms& terms = {});

}  // namespace patchmix
