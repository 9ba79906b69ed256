#include "patchmix/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace patchmix::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

// C (+)= op(A) op(B); A is stored [ar, ac], B is stored [br, bc].
void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta, const double* b,
          std::size_t br, std::size_t bc, bool tb, double* c, bool accumulate) {
    ConstMap am(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    ConstMap bm(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    const Eigen::Index m = static_cast<Eigen::Index>(ta ? ac : ar);
    const Eigen::Index n = static_cast<Eigen::Index>(tb ? br : bc);
    MutMap cm(c, m, n);
    if (!accumulate) cm.setZero();
    if (!ta && !tb) cm.noalias() += am * bm;
    else if (ta && !tb) cm.noalias() += am.transpose() * bm;
    else if (!ta && tb) cm.noalias() += am * bm.transpose();
    else cm.noalias() += am.transpose() * bm.transpose();
}

// Splits a shape around an axis into (outer, extent, inner) element counts.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

std::size_t last_dim(const Tensor& x, const char* op) {
    if (x.rank() == 0) fail(std::string(op) + ": expected rank >= 1, got a scalar");
    return x.shape().back();
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return y;
}

}  // namespace

Var matmul(Tape& t, Var a, Var b, bool trans_a, bool trans_b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const bool batched = av.rank() == 3;
    if (!((av.rank() == 2 && bv.rank() == 2) || (batched && bv.rank() == 3))) {
        fail("matmul: unsupported ranks " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t batch = batched ? av.dim(0) : 1;
    if (batched && bv.dim(0) != batch) {
        fail("matmul: batch mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t o = batched ? 1 : 0;
    const std::size_t ar = av.dim(o), ac = av.dim(o + 1);
    const std::size_t br = bv.dim(o), bc = bv.dim(o + 1);
    const std::size_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
    const std::size_t k2 = trans_b ? bc : br, n = trans_b ? br : bc;
    if (k != k2) {
        fail("matmul: inner dimensions differ " + shape_str(av.shape()) +
             (trans_a ? "^T" : "") + " x " + shape_str(bv.shape()) + (trans_b ? "^T" : ""));
    }
    Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
    Tensor out(out_shape);
    for (std::size_t i = 0; i < batch; ++i) {
        gemm(av.data() + i * ar * ac, ar, ac, trans_a, bv.data() + i * br * bc, br, bc, trans_b,
             out.data() + i * m * n, false);
    }
    return t.record(std::move(out), {a, b},
                    [=](Tape& tp, const Tensor& g) {
                        const Tensor& A = tp.value(a);
                        const Tensor& B = tp.value(b);
                        if (tp.requires_grad(a)) {
                            Tensor& ga = tp.grad_slot(a);
                            for (std::size_t i = 0; i < batch; ++i) {
                                const double* gi = g.data() + i * m * n;
                                const double* bi = B.data() + i * br * bc;
                                double* out_i = ga.data() + i * ar * ac;
                                if (!trans_a) gemm(gi, m, n, false, bi, br, bc, !trans_b, out_i, true);
                                else gemm(bi, br, bc, trans_b, gi, m, n, true, out_i, true);
                            }
                        }
                        if (tp.requires_grad(b)) {
                            Tensor& gb = tp.grad_slot(b);
                            for (std::size_t i = 0; i < batch; ++i) {
                                const double* gi = g.data() + i * m * n;
                                const double* ai = A.data() + i * ar * ac;
                                double* out_i = gb.data() + i * br * bc;
                                if (!trans_b) gemm(ai, ar, ac, !trans_a, gi, m, n, false, out_i, true);
                                else gemm(gi, m, n, true, ai, ar, ac, trans_a, out_i, true);
                            }
                        }
                    });
}

namespace {

// Number of times b repeats inside a (b's shape must be a suffix of a's).
std::size_t broadcast_repeats(const Shape& a, const Shape& b, const char* op) {
    if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
        fail(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
    }
    return shape_numel(a) / std::max<std::size_t>(1, shape_numel(b));
}

Var add_signed(Tape& t, Var a, Var b, double sign, const char* op) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t reps = broadcast_repeats(av.shape(), bv.shape(), op);
    const std::size_t bn = bv.size();
    Tensor out = av;
    for (std::size_t r = 0; r < reps; ++r) {
        double* o = out.data() + r * bn;
        for (std::size_t j = 0; j < bn; ++j) o[j] += sign * bv[j];
    }
    return t.record(std::move(out), {a, b}, [=](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_slot(b);
            for (std::size_t r = 0; r < reps; ++r) {
                const double* gr = g.data() + r * bn;
                for (std::size_t j = 0; j < bn; ++j) gb[j] += sign * gr[j];
            }
        }
    });
}

}  // namespace

Var add(Tape& t, Var a, Var b) { return add_signed(t, a, b, 1.0, "add"); }
Var sub(Tape& t, Var a, Var b) { return add_signed(t, a, b, -1.0, "sub"); }

Var mul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape(av.shape(), bv.shape(), "mul");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return t.record(std::move(out), {a, b}, [=](Tape& tp, const Tensor& g) {
        const Tensor& A = tp.value(a);
        const Tensor& B = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_slot(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_slot(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    Tensor out = map_values(t.value(a), [s](double v) { return v * s; });
    return t.record(std::move(out), {a}, [=](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var softmax(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    const std::size_t d = last_dim(x, "softmax");
    const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d;
        double* yr = y.data() + r * d;
        const double mx = *std::max_element(xr, xr + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
    }
    Tensor saved = y;
    return t.record(std::move(y), {a}, [=, saved = std::move(saved)](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = saved.data() + r * d;
            const double* gr = g.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += yr[j] * gr[j];
            double* o = ga.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) o[j] += yr[j] * (gr[j] - dot);
        }
    });
}

Var log_softmax(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    const std::size_t d = last_dim(x, "log_softmax");
    const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
    Tensor y(x.shape());
    Tensor probs(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d;
        double* yr = y.data() + r * d;
        const double mx = *std::max_element(xr, xr + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(xr[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = xr[j] - lz;
            probs[r * d + j] = std::exp(yr[j]);
        }
    }
    return t.record(std::move(y), {a}, [=, probs = std::move(probs)](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * d;
            double total = 0.0;
            for (std::size_t j = 0; j < d; ++j) total += gr[j];
            for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += gr[j] - probs[r * d + j] * total;
        }
    });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = t.value(x);
    const std::size_t d = last_dim(xv, "layer_norm");
    require_same_shape(t.value(gamma).shape(), Shape{d}, "layer_norm gamma");
    require_same_shape(t.value(beta).shape(), Shape{d}, "layer_norm beta");
    const std::size_t rows = xv.size() / d;
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * inv_std[r];
            xhat[r * d + j] = h;
            y[r * d + j] = gv[j] * h + bv[j];
        }
    }
    return t.record(std::move(y), {x, gamma, beta},
                    [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                              const Tensor& g) {
                        const Tensor& G = tp.value(gamma);
                        if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
                            Tensor dg(Shape{d}), db(Shape{d});
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < d; ++j) {
                                    dg[j] += g[r * d + j] * xhat[r * d + j];
                                    db[j] += g[r * d + j];
                                }
                            }
                            tp.accumulate(gamma, dg);
                            tp.accumulate(beta, db);
                        }
                        if (!tp.requires_grad(x)) return;
                        Tensor& gx = tp.grad_slot(x);
                        const double inv_d = 1.0 / static_cast<double>(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double dh = g[r * d + j] * G[j];
                                m1 += dh;
                                m2 += dh * xhat[r * d + j];
                            }
                            m1 *= inv_d;
                            m2 *= inv_d;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double dh = g[r * d + j] * G[j];
                                gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                            }
                        }
                    });
}

namespace {

void check_bn_affine(const Tape& t, Var p, std::size_t d, const char* what) {
    if (p.valid()) require_same_shape(t.value(p).shape(), Shape{d}, what);
}

}  // namespace

Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2) fail("batch_norm: expected [N, D], got " + shape_str(xv.shape()));
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    check_bn_affine(t, gamma, d, "batch_norm gamma");
    check_bn_affine(t, beta, d, "batch_norm beta");
    Tensor mean(Shape{d}), var(Shape{d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += xv.at(i, j);
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xv.at(i, j) - mean[j];
            var[j] += c * c;
        }
    for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(n);
    std::vector<double> inv_std(d);
    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    Tensor xhat(xv.shape()), y(xv.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xv.at(i, j) - mean[j]) * inv_std[j];
            xhat.at(i, j) = h;
            const double gj = gamma.valid() ? t.value(gamma)[j] : 1.0;
            const double bj = beta.valid() ? t.value(beta)[j] : 0.0;
            y.at(i, j) = gj * h + bj;
        }
    if (stats) *stats = BatchStats{mean, var};
    return t.record(
        std::move(y), {x, gamma, beta},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Tensor& g) {
            if (gamma.valid() && tp.requires_grad(gamma)) {
                Tensor dg(Shape{d});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * xhat[i * d + j];
                tp.accumulate(gamma, dg);
            }
            if (beta.valid() && tp.requires_grad(beta)) {
                Tensor db(Shape{d});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
                tp.accumulate(beta, db);
            }
            if (!tp.requires_grad(x)) return;
            Tensor& gx = tp.grad_slot(x);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j) {
                const double gj = gamma.valid() ? tp.value(gamma)[j] : 1.0;
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dh = g[i * d + j] * gj;
                    m1 += dh;
                    m2 += dh * xhat[i * d + j];
                }
                m1 *= inv_n;
                m2 *= inv_n;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dh = g[i * d + j] * gj;
                    gx[i * d + j] += inv_std[j] * (dh - m1 - xhat[i * d + j] * m2);
                }
            }
        });
}

Var batch_norm_eval(Tape& t, Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                    double eps) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2) fail("batch_norm: expected [N, D], got " + shape_str(xv.shape()));
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    check_bn_affine(t, gamma, d, "batch_norm gamma");
    check_bn_affine(t, beta, d, "batch_norm beta");
    require_same_shape(mean.shape(), Shape{d}, "batch_norm running mean");
    require_same_shape(var.shape(), Shape{d}, "batch_norm running var");
    std::vector<double> inv_std(d);
    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    Tensor xhat(xv.shape()), y(xv.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xv.at(i, j) - mean[j]) * inv_std[j];
            xhat.at(i, j) = h;
            const double gj = gamma.valid() ? t.value(gamma)[j] : 1.0;
            const double bj = beta.valid() ? t.value(beta)[j] : 0.0;
            y.at(i, j) = gj * h + bj;
        }
    return t.record(
        std::move(y), {x, gamma, beta},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Tensor& g) {
            if (gamma.valid() && tp.requires_grad(gamma)) {
                Tensor dg(Shape{d});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * xhat[i * d + j];
                tp.accumulate(gamma, dg);
            }
            if (beta.valid() && tp.requires_grad(beta)) {
                Tensor db(Shape{d});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
                tp.accumulate(beta, db);
            }
            if (!tp.requires_grad(x)) return;
            Tensor& gx = tp.grad_slot(x);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    const double gj = gamma.valid() ? tp.value(gamma)[j] : 1.0;
                    gx[i * d + j] += g[i * d + j] * gj * inv_std[j];
                }
        });
}

Var gelu(Tape& t, Var a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    Tensor y = map_values(t.value(a),
                          [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        const Tensor& X = tp.value(a);
        Tensor& ga = tp.grad_slot(a);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = X[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            ga[i] += g[i] * (cdf + v * pdf);
        }
    });
}

Var relu(Tape& t, Var a) {
    Tensor y = map_values(t.value(a), [](double v) { return v < 0.0 ? 0.0 : v; });
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        const Tensor& X = tp.value(a);
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (X[i] > 0.0) ga[i] += g[i];
    });
}

Var exp(Tape& t, Var a) {
    Tensor y = map_values(t.value(a), [](double v) { return std::exp(v); });
    Tensor saved = y;
    return t.record(std::move(y), {a}, [=, saved = std::move(saved)](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * saved[i];
    });
}

Var log(Tape& t, Var a) {
    Tensor y = map_values(t.value(a), [](double v) { return std::log(v); });
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        const Tensor& X = tp.value(a);
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / X[i];
    });
}

Var abs(Tape& t, Var a) {
    Tensor y = map_values(t.value(a), [](double v) { return std::fabs(v); });
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        const Tensor& X = tp.value(a);
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (X[i] > 0.0 ? 1.0 : (X[i] < 0.0 ? -1.0 : 0.0));
    });
}

Var transpose(Tape& t, Var a) {
    if (t.value(a).rank() != 2) fail("transpose: expected rank 2, got " + shape_str(t.value(a).shape()));
    return permute(t, a, {1, 0});
}

Var permute(Tape& t, Var a, const std::vector<std::size_t>& axes) {
    const Tensor& x = t.value(a);
    const std::size_t r = x.rank();
    if (axes.size() != r) fail("permute: " + std::to_string(axes.size()) + " axes for " + shape_str(x.shape()));
    std::vector<bool> seen(r, false);
    for (auto ax : axes) {
        if (ax >= r || seen[ax]) fail("permute: invalid axis order for " + shape_str(x.shape()));
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    // src_index[k] = flat input position of output element k.
    std::vector<std::size_t> src_index(x.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t k = 0; k < x.size(); ++k) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
        src_index[k] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    Tensor y(out_shape);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[src_index[k]];
    return t.record(std::move(y), {a}, [=, src_index = std::move(src_index)](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t k = 0; k < g.size(); ++k) ga[src_index[k]] += g[k];
    });
}

Var reshape(Tape& t, Var a, Shape shape) {
    Tensor y = t.value(a).reshaped(std::move(shape));
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var concat(Tape& t, std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) fail("concat: no operands");
    const Shape& s0 = t.value(parts[0]).shape();
    if (axis >= s0.size()) fail("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (Var p : parts) {
        const Shape& s = t.value(p).shape();
        Shape a = s, b = s0;
        if (s.size() != s0.size()) fail("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        a[axis] = b[axis] = 0;
        if (a != b) fail("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
        out_shape[axis] += s[axis];
    }
    const AxisSplit os = split_at(out_shape, axis);
    Tensor y(out_shape);
    std::vector<Var> ps(parts.begin(), parts.end());
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (Var p : ps) {
        const Tensor& v = t.value(p);
        const AxisSplit s = split_at(v.shape(), axis);
        offsets.push_back(off);
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(v.data() + o * s.extent * s.inner, s.extent * s.inner,
                        y.data() + (o * os.extent + off) * os.inner);
        off += s.extent;
    }
    return t.record(std::move(y), std::span<const Var>(ps),
                    [=](Tape& tp, const Tensor& g) {
                        for (std::size_t k = 0; k < ps.size(); ++k) {
                            if (!tp.requires_grad(ps[k])) continue;
                            Tensor& gp = tp.grad_slot(ps[k]);
                            const AxisSplit s = split_at(gp.shape(), axis);
                            for (std::size_t o = 0; o < s.outer; ++o) {
                                const double* src = g.data() + (o * os.extent + offsets[k]) * os.inner;
                                double* dst = gp.data() + o * s.extent * s.inner;
                                for (std::size_t i = 0; i < s.extent * s.inner; ++i) dst[i] += src[i];
                            }
                        }
                    });
}

Var slice(Tape& t, Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Tensor& x = t.value(a);
    if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
        fail("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
             std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    }
    const AxisSplit s = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    const std::size_t len = end - begin;
    Tensor y(out_shape);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(x.data() + (o * s.extent + begin) * s.inner, len * s.inner,
                    y.data() + o * len * s.inner);
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data() + o * len * s.inner;
            double* dst = ga.data() + (o * s.extent + begin) * s.inner;
            for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
    });
}

Var broadcast_leading(Tape& t, Var a, std::size_t n) {
    const Tensor& x = t.value(a);
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    Tensor y(out_shape);
    const std::size_t m = x.size();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(x.data(), m, y.data() + r * m);
    return t.record(std::move(y), {a}, [=](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t i = 0; i < m; ++i) ga[i] += g[r * m + i];
    });
}

Var sum(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    double s = 0.0;
    for (double v : x.values()) s += v;
    return t.record(Tensor::scalar(s), {a}, [=](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
}

Var mean(Tape& t, Var a) {
    const std::size_t n = t.value(a).size();
    if (n == 0) fail("mean: empty operand");
    return scale(t, sum(t, a), 1.0 / static_cast<double>(n));
}

Var l2_normalize(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    const std::size_t d = last_dim(x, "l2_normalize");
    const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
    std::vector<double> norms(rows);
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
        norms[r] = std::sqrt(s);
        if (std::isnan(norms[r]) || std::isinf(norms[r]))
            throw std::domain_error("l2_normalize: row " + std::to_string(r) + " is not finite");
        if (!(norms[r] > 0.0)) fail("l2_normalize: row " + std::to_string(r) + " has zero norm");
        for (std::size_t j = 0; j < d; ++j) y[r * d + j] = x[r * d + j] / norms[r];
    }
    Tensor saved = y;
    return t.record(std::move(y), {a},
                    [=, saved = std::move(saved), norms = std::move(norms)](Tape& tp, const Tensor& g) {
                        Tensor& ga = tp.grad_slot(a);
                        for (std::size_t r = 0; r < rows; ++r) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < d; ++j) dot += saved[r * d + j] * g[r * d + j];
                            for (std::size_t j = 0; j < d; ++j)
                                ga[r * d + j] += (g[r * d + j] - saved[r * d + j] * dot) / norms[r];
                        }
                    });
}

Var stop_gradient(Tape& t, Var a) { return t.constant(t.value(a)); }

Var weighted_pick_sum(Tape& t, Var a, std::span<const std::size_t> rows,
                      std::span<const std::size_t> cols, std::span<const double> weights) {
    const Tensor& x = t.value(a);
    if (x.rank() != 2) fail("weighted_pick_sum: expected rank 2, got " + shape_str(x.shape()));
    if (rows.size() != cols.size() || rows.size() != weights.size()) {
        fail("weighted_pick_sum: index/weight lengths differ");
    }
    double s = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= x.dim(0) || cols[k] >= x.dim(1)) {
            fail("weighted_pick_sum: index (" + std::to_string(rows[k]) + ", " +
                 std::to_string(cols[k]) + ") outside " + shape_str(x.shape()));
        }
        s += weights[k] * x.at(rows[k], cols[k]);
    }
    std::vector<std::size_t> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
    std::vector<double> w(weights.begin(), weights.end());
    return t.record(Tensor::scalar(s), {a}, [=](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_slot(a);
        for (std::size_t k = 0; k < r.size(); ++k) ga.at(r[k], c[k]) += w[k] * g[0];
    });
}

}  // namespace patchmix::ops
