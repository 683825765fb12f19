#pragma once

// Collapsed variational lower bound for the latent-autoregressive deep GP.
//
// Per layer l with targets t (observed y at the top, latent means below),
// beta = 1 / sigma_l^2, n = N - L likelihood rows and A = Kz + beta Psi2:
//
//   F_l = -n/2 log(2 pi sigma_l^2)
//         - beta/2 (t't + sum_i lambda_i [hidden only] + psi0)
//         + beta/2 Tr(Kz^-1 Psi2)
//         + 1/2 log|Kz| - 1/2 log|A|
//         + beta^2/2 t' Psi1 A^-1 Psi1' t
//
// plus, per hidden layer, the Gaussian entropies of q(x_i) and the
// cross-entropies E_q[log p(x_i)] of the first L latents under their priors.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/errors.hpp"
#include "rgp/kernel.hpp"
#include "rgp/model.hpp"
#include "rgp/psi_stats.hpp"

namespace rgp {

struct LayerTerms {
    double constant = 0.0;   // -n/2 log 2 pi sigma^2
    double fit = 0.0;        // -beta/2 (t't + sum lambda + psi0)
    double trace = 0.0;      // +beta/2 Tr(Kz^-1 Psi2)
    double logdet = 0.0;     // 1/2 log|Kz| - 1/2 log|Kz + beta Psi2|
    double quadratic = 0.0;  // beta^2/2 t' Psi1 A^-1 Psi1' t

    double sum() const { return constant + fit + trace + logdet + quadratic; }
};

struct BoundBreakdown {
    std::vector<LayerTerms> layers;     // H + 1
    std::vector<double> entropy;        // H, sum over all latents of the layer
    std::vector<double> cross_entropy;  // H, first L latents against their priors
    double total = 0.0;

    double sum_components() const {
        double s = 0.0;
        for (const auto& l : layers) s += l.sum();
        for (double e : entropy) s += e;
        for (double c : cross_entropy) s += c;
        return s;
    }
};

inline double gaussian_entropy(double variance) {
    return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * variance);
}

/// E_{N(m, v)}[log N(x | m0, v0)]
inline double gaussian_cross_entropy(double m, double v, double m0, double v0) {
    const double diff = m - m0;
    return -0.5 * std::log(2.0 * std::numbers::pi * v0) - (v + diff * diff) / (2.0 * v0);
}

namespace detail {

struct LayerSolve {
    UncertainInputSet q;
    VectorXd targets;
    double target_variance_sum = 0.0;
    MatrixXd Kz;
    double rel_jitter = 0.0;
    Eigen::LLT<MatrixXd> chol_kz;  // Kz = Lk Lk'
    PsiStats psi;
    MatrixXd whitened_psi2;        // Lk^-1 Psi2 Lk^-T
    Eigen::LLT<MatrixXd> chol_w;   // I + beta Lk^-1 Psi2 Lk^-T, so A = Lk (.) Lk'
    VectorXd c;                    // Psi1' t
    VectorXd v;                    // A^-1 c
    double beta = 0.0;

    /// A^-1 X without forming A.
    MatrixXd a_solve(const MatrixXd& X) const {
        const auto Lk = chol_kz.matrixL();
        MatrixXd Y = Lk.solve(X);
        Y = chol_w.solve(Y);
        return Lk.transpose().solve(Y);
    }
};

inline VectorXd layer_targets(const ModelState& s, int l, const VectorXd& y) {
    const auto L = s.config.lag;
    const auto n = s.length() - L;
    if (l == s.config.hidden_layers) return y.segment(L, n);
    return s.latents[static_cast<std::size_t>(l)].mean.segment(L, n);
}

inline LayerSolve solve_layer(const ModelState& s, int l, const VectorXd& u, const VectorXd& y) {
    const auto& lp = s.layers[static_cast<std::size_t>(l)];
    const double sf2 = lp.kernel.signal_variance;
    LayerSolve ls;
    ls.q = assemble_regressors(s, l, u);
    ls.targets = layer_targets(s, l, y);
    if (l < s.config.hidden_layers)
        ls.target_variance_sum = s.latents[static_cast<std::size_t>(l)].variance.segment(s.config.lag, ls.targets.size()).sum();
    ls.beta = 1.0 / lp.noise_variance;

    const MatrixXd base = gram_raw(lp.inducing, lp.kernel, 0.0);
    auto factor = factor_with_jitter(base, s.config.jitter * sf2, kJitterMax * sf2, "Kz", l);
    ls.rel_jitter = factor.jitter / sf2;
    ls.Kz = base;
    ls.Kz.diagonal().array() += factor.jitter;
    ls.chol_kz = std::move(factor.llt);

    ls.psi = compute_psi(ls.q, lp.inducing, lp.kernel);
    const auto M = lp.inducing.rows();
    const auto Lk = ls.chol_kz.matrixL();
    MatrixXd half = Lk.solve(ls.psi.psi2);
    ls.whitened_psi2 = Lk.solve(half.transpose());
    ls.whitened_psi2 = 0.5 * (ls.whitened_psi2 + ls.whitened_psi2.transpose()).eval();
    MatrixXd W = MatrixXd::Identity(M, M) + ls.beta * ls.whitened_psi2;
    ls.chol_w.compute(W);
    if (ls.chol_w.info() != Eigen::Success || !ls.chol_w.matrixLLT().allFinite() ||
        !(ls.chol_w.matrixLLT().diagonal().minCoeff() > 0.0))
        throw NumericalError("Cholesky of Kz + Psi2/sigma^2 failed in layer " + std::to_string(l + 1), "Kz+Psi2", l,
                             factor.jitter);
    ls.c = ls.psi.psi1.transpose() * ls.targets;
    ls.v = ls.a_solve(ls.c);
    return ls;
}

inline LayerTerms layer_terms(const LayerSolve& ls) {
    const double n = static_cast<double>(ls.targets.size());
    const double beta = ls.beta;
    LayerTerms t;
    t.constant = -0.5 * n * std::log(2.0 * std::numbers::pi / beta);
    t.fit = -0.5 * beta * (ls.targets.squaredNorm() + ls.target_variance_sum + ls.psi.psi0);
    t.trace = 0.5 * beta * ls.whitened_psi2.trace();
    // 1/2 log|Kz| - 1/2 log|A| = -1/2 log|I + beta Lk^-1 Psi2 Lk^-T|
    t.logdet = -ls.chol_w.matrixLLT().diagonal().array().log().sum();
    const VectorXd r = ls.chol_w.matrixL().solve(ls.chol_kz.matrixL().solve(ls.c));
    t.quadratic = 0.5 * beta * beta * r.squaredNorm();
    return t;
}

inline void check_data(const ModelState& s, const VectorXd& u, const VectorXd& y) {
    s.validate();
    if (u.size() != s.length() || y.size() != s.length())
        throw StructuralError("bound: data length differs from the latent sequence length");
    if (s.length() <= s.config.lag) throw StructuralError("bound: sequence length must exceed the lag");
}

}  // namespace detail

inline BoundBreakdown lower_bound(const ModelState& s, const VectorXd& u, const VectorXd& y) {
    detail::check_data(s, u, y);
    BoundBreakdown out;
    for (int l = 0; l < s.config.num_layers(); ++l) out.layers.push_back(detail::layer_terms(detail::solve_layer(s, l, u, y)));
    const int L = s.config.lag;
    for (const auto& lat : s.latents) {
        double ent = 0.0, cross = 0.0;
        for (Eigen::Index i = 0; i < lat.variance.size(); ++i) ent += gaussian_entropy(lat.variance[i]);
        for (int i = 0; i < L; ++i)
            cross += gaussian_cross_entropy(lat.mean[i], lat.variance[i], lat.prior_mean[i], lat.prior_variance[i]);
        out.entropy.push_back(ent);
        out.cross_entropy.push_back(cross);
    }
    out.total = out.sum_components();
    return out;
}

struct BoundGradient {
    double value = 0.0;
    ModelState grad;  // derivatives w.r.t. the natural (not log) parameters
    VectorXd packed;  // derivatives w.r.t. the packed coordinates
};

inline BoundGradient bound_grads(const ModelState& s, const VectorXd& u, const VectorXd& y) {
    detail::check_data(s, u, y);
    const auto& cfg = s.config;
    const int L = cfg.lag;
    BoundGradient out;
    out.grad = zeros_like(s);
    double total = 0.0;

    for (int l = 0; l < cfg.num_layers(); ++l) {
        const auto ls = detail::solve_layer(s, l, u, y);
        total += detail::layer_terms(ls).sum();
        const auto& lp = s.layers[static_cast<std::size_t>(l)];
        auto& g = out.grad.layers[static_cast<std::size_t>(l)];
        const auto M = lp.inducing.rows();
        const double beta = ls.beta, n = static_cast<double>(ls.targets.size());

        const MatrixXd I = MatrixXd::Identity(M, M);
        const MatrixXd Kzinv = ls.chol_kz.solve(I);
        const MatrixXd Ainv = ls.a_solve(I);
        const MatrixXd vvT = ls.v * ls.v.transpose();
        const MatrixXd KinvPsi2 = Kzinv * ls.psi.psi2;

        const MatrixXd g_psi2 = 0.5 * beta * (Kzinv - Ainv - beta * beta * vvT);
        const MatrixXd g_psi1 = beta * beta * ls.targets * ls.v.transpose();
        const double g_psi0 = -0.5 * beta;
        const MatrixXd g_kz = 0.5 * Kzinv - 0.5 * beta * KinvPsi2 * Kzinv - 0.5 * Ainv - 0.5 * beta * beta * vvT;
        const double g_beta = 0.5 * n / beta -
                              0.5 * (ls.targets.squaredNorm() + ls.target_variance_sum + ls.psi.psi0) +
                              0.5 * KinvPsi2.trace() - 0.5 * (Ainv * ls.psi.psi2).trace() -
                              0.5 * beta * beta * ls.v.dot(ls.psi.psi2 * ls.v) + beta * ls.c.dot(ls.v);
        g.noise_variance += -beta * beta * g_beta;

        const auto adj = psi_grads(ls.q, lp.inducing, lp.kernel, g_psi0, g_psi1, g_psi2);
        KernelAdjoint kadj = adj.kernel;
        MatrixXd dZ = adj.d_inducing;
        gram_backward(lp.inducing, lp.kernel, ls.rel_jitter, ls.Kz, g_kz, kadj, dZ);
        g.kernel.signal_variance += kadj.signal_variance;
        g.kernel.ard_weights += kadj.ard;
        g.inducing += dZ;

        // Scatter regressor adjoints back onto the latents they were read from.
        for (Eigen::Index r = 0; r < ls.q.rows(); ++r) {
            const auto t = r + L;
            for (int d = 0; d < cfg.input_dim(l); ++d) {
                const Source src = regressor_source(cfg, l, t, d);
                if (src.kind != Source::Kind::Latent) continue;
                auto& lat = out.grad.latents[static_cast<std::size_t>(src.layer)];
                lat.mean[src.index] += adj.d_means(r, d);
                lat.variance[src.index] += adj.d_variances(r, d);
            }
        }
        if (l < cfg.hidden_layers) {
            const VectorXd g_t = -beta * ls.targets + beta * beta * (ls.psi.psi1 * ls.v);
            auto& lat = out.grad.latents[static_cast<std::size_t>(l)];
            lat.mean.segment(L, ls.targets.size()) += g_t;
            lat.variance.segment(L, ls.targets.size()).array() += -0.5 * beta;
        }
    }

    for (std::size_t h = 0; h < s.latents.size(); ++h) {
        const auto& lat = s.latents[h];
        auto& g = out.grad.latents[h];
        for (Eigen::Index i = 0; i < lat.variance.size(); ++i) {
            total += gaussian_entropy(lat.variance[i]);
            g.variance[i] += 0.5 / lat.variance[i];
        }
        for (int i = 0; i < L; ++i) {
            const double m = lat.mean[i], v = lat.variance[i], m0 = lat.prior_mean[i], v0 = lat.prior_variance[i];
            total += gaussian_cross_entropy(m, v, m0, v0);
            const double diff = m - m0;
            g.mean[i] += -diff / v0;
            g.prior_mean[i] += diff / v0;
            g.variance[i] += -0.5 / v0;
            g.prior_variance[i] += -0.5 / v0 + (v + diff * diff) / (2.0 * v0 * v0);
        }
    }
    out.value = total;
    out.packed = pack_gradient(s, out.grad);
    return out;
}

/// Optimal q(z) of one layer, plus what prediction needs from it.
struct LayerQz {
    VectorXd B;                  // beta A^-1 Psi1' t
    VectorXd mean;               // Kz B
    MatrixXd covariance;         // Kz A^-1 Kz
    MatrixXd Kz;                 // jittered
    MatrixXd inverse_difference; // Kz^-1 - A^-1
};

struct OptimalQz {
    std::vector<LayerQz> layers;
};

inline OptimalQz recover_qz(const ModelState& s, const VectorXd& u, const VectorXd& y) {
    detail::check_data(s, u, y);
    OptimalQz out;
    for (int l = 0; l < s.config.num_layers(); ++l) {
        const auto ls = detail::solve_layer(s, l, u, y);
        const auto M = ls.Kz.rows();
        const MatrixXd I = MatrixXd::Identity(M, M);
        LayerQz lq;
        lq.B = ls.beta * ls.v;
        lq.mean = ls.Kz * lq.B;
        const auto Lk = ls.chol_kz.matrixL();
        const MatrixXd LkT = Lk.transpose();
        lq.covariance = Lk * ls.chol_w.solve(LkT);
        lq.covariance = 0.5 * (lq.covariance + lq.covariance.transpose()).eval();
        lq.Kz = ls.Kz;
        lq.inverse_difference = ls.chol_kz.solve(I) - ls.a_solve(I);
        lq.inverse_difference = 0.5 * (lq.inverse_difference + lq.inverse_difference.transpose()).eval();
        out.layers.push_back(std::move(lq));
    }
    return out;
}

}  // namespace rgp
