#pragma once

// ARD exponentiated quadratic covariance:
//   k(x, x') = sf2 * exp(-1/2 * sum_d w_d (x_d - x'_d)^2)
// where w_d is stored directly (the squared inverse lengthscale).

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/errors.hpp"

namespace rgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct KernelParams {
    double signal_variance = 1.0;
    VectorXd ard_weights;

    KernelParams() = default;
    KernelParams(double sf2, VectorXd weights) : signal_variance(sf2), ard_weights(std::move(weights)) {}

    Eigen::Index dim() const { return ard_weights.size(); }

    void validate(Eigen::Index expected_dim) const {
        if (ard_weights.size() != expected_dim)
            throw StructuralError("kernel: ARD weight count " + std::to_string(ard_weights.size()) +
                                  " does not match input dimension " + std::to_string(expected_dim));
        if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
            throw StructuralError("kernel: signal variance must be positive and finite");
        for (Eigen::Index d = 0; d < ard_weights.size(); ++d)
            if (!(ard_weights[d] > 0.0) || !std::isfinite(ard_weights[d]))
                throw StructuralError("kernel: ARD weights must be positive and finite");
    }
};

inline constexpr double kJitterStart = 1e-6;
inline constexpr double kJitterMax = 1e-2;

inline double kern(const VectorXd& x, const VectorXd& x2, const KernelParams& params) {
    if (x.size() != x2.size() || x.size() != params.dim())
        throw StructuralError("kern: dimension mismatch");
    const double r2 = (params.ard_weights.array() * (x - x2).array().square()).sum();
    return params.signal_variance * std::exp(-0.5 * r2);
}

inline MatrixXd cross_gram(const MatrixXd& X, const MatrixXd& Z, const KernelParams& params) {
    if (X.cols() != Z.cols() || X.cols() != params.dim())
        throw StructuralError("cross_gram: column counts of X, Z and ARD weights must agree");
    const auto& w = params.ard_weights;
    MatrixXd K(X.rows(), Z.rows());
    for (Eigen::Index m = 0; m < Z.rows(); ++m) {
        for (Eigen::Index n = 0; n < X.rows(); ++n) {
            double r2 = 0.0;
            for (Eigen::Index d = 0; d < X.cols(); ++d) {
                const double diff = X(n, d) - Z(m, d);
                r2 += w[d] * diff * diff;
            }
            K(n, m) = params.signal_variance * std::exp(-0.5 * r2);
        }
    }
    return K;
}

/// Symmetric kernel matrix of the rows of X with `jitter` added to the diagonal.
/// No factorization is attempted.
inline MatrixXd gram_raw(const MatrixXd& X, const KernelParams& params, double jitter = 0.0) {
    if (X.rows() < 1) throw StructuralError("gram: need at least one row");
    MatrixXd K = cross_gram(X, X, params);
    // Exact symmetry regardless of summation order.
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
        K(i, i) = params.signal_variance + jitter;
        for (Eigen::Index j = i + 1; j < K.cols(); ++j) K(j, i) = K(i, j);
    }
    return K;
}

struct GramMatrix {
    MatrixXd values;
    double jitter_applied = 0.0;
    Eigen::LLT<MatrixXd> cholesky;
};

/// Cholesky of `base + jitter*I`, escalating the jitter by 10x from `start`
/// until it succeeds or exceeds `max_jitter`.
struct JitteredFactor {
    Eigen::LLT<MatrixXd> llt;
    double jitter = 0.0;
};

inline JitteredFactor factor_with_jitter(const MatrixXd& base, double start, double max_jitter,
                                         const std::string& name = "K", int layer = -1) {
    JitteredFactor out;
    if (!base.allFinite())
        throw NumericalError("non-finite entries in " + name +
                                 (layer >= 0 ? " of layer " + std::to_string(layer + 1) : std::string()),
                             name, layer, start);
    double jitter = start;
    for (;;) {
        MatrixXd K = base;
        K.diagonal().array() += jitter;
        out.llt.compute(K);
        if (out.llt.info() == Eigen::Success && out.llt.matrixLLT().diagonal().minCoeff() > 0.0) {
            out.jitter = jitter;
            return out;
        }
        const double next = jitter > 0.0 ? jitter * 10.0 : max_jitter * 1e-4;
        if (next > max_jitter * (1.0 + 1e-12))
            throw NumericalError("Cholesky of " + name + " failed" +
                                     (layer >= 0 ? " in layer " + std::to_string(layer + 1) : std::string()) +
                                     " with jitter " + std::to_string(jitter),
                                 name, layer, jitter);
        jitter = next;
    }
}

inline GramMatrix gram(const MatrixXd& X, const KernelParams& params, double jitter) {
    if (jitter < 0.0) throw StructuralError("gram: jitter must be nonnegative");
    params.validate(X.cols());
    const double sf2 = params.signal_variance;
    MatrixXd base = gram_raw(X, params, 0.0);
    if (!base.allFinite()) throw NumericalError("gram: non-finite entries", "gram", -1, jitter);
    GramMatrix g;
    auto try_factor = [&](double j) {
        MatrixXd K = base;
        K.diagonal().array() += j;
        g.cholesky.compute(K);
        if (g.cholesky.info() == Eigen::Success && g.cholesky.matrixLLT().diagonal().minCoeff() > 0.0) {
            g.values = std::move(K);
            g.jitter_applied = j;
            return true;
        }
        return false;
    };
    if (try_factor(jitter)) return g;
    double j = std::max(jitter * 10.0, kJitterStart * sf2);
    while (j <= kJitterMax * sf2 * (1.0 + 1e-12)) {
        if (try_factor(j)) return g;
        j *= 10.0;
    }
    throw NumericalError("gram: Cholesky failed after jitter escalation", "gram", -1, j / 10.0);
}

/// Entry-wise derivatives of cross_gram(X, Z).
///   d_signal_variance(n, m) = dK(n,m)/d sf2
///   d_ard[d](n, m)          = dK(n,m)/d w_d
///   d_inducing[d](n, m)     = dK(n,m)/d Z(m,d)   (only column m of K depends on row m of Z)
struct KernelGradients {
    MatrixXd d_signal_variance;
    std::vector<MatrixXd> d_ard;
    std::vector<MatrixXd> d_inducing;
};

inline KernelGradients kernel_grads(const MatrixXd& X, const MatrixXd& Z, const KernelParams& params) {
    params.validate(X.cols());
    const MatrixXd K = cross_gram(X, Z, params);
    KernelGradients g;
    g.d_signal_variance = K / params.signal_variance;
    const auto D = X.cols();
    g.d_ard.assign(D, MatrixXd(X.rows(), Z.rows()));
    g.d_inducing.assign(D, MatrixXd(X.rows(), Z.rows()));
    for (Eigen::Index d = 0; d < D; ++d) {
        for (Eigen::Index m = 0; m < Z.rows(); ++m) {
            for (Eigen::Index n = 0; n < X.rows(); ++n) {
                const double diff = X(n, d) - Z(m, d);
                g.d_ard[d](n, m) = -0.5 * diff * diff * K(n, m);
                g.d_inducing[d](n, m) = params.ard_weights[d] * diff * K(n, m);
            }
        }
    }
    return g;
}

/// Parameter adjoints accumulated by the backward passes.
struct KernelAdjoint {
    double signal_variance = 0.0;
    VectorXd ard;
    explicit KernelAdjoint(Eigen::Index D = 0) : ard(VectorXd::Zero(D)) {}
};

/// Given K = cross_gram(X, Z) and G = dF/dK, accumulates dF/d(sf2, w) and dF/dZ.
inline void cross_gram_backward(const MatrixXd& X, const MatrixXd& Z, const KernelParams& params,
                                const MatrixXd& K, const MatrixXd& G, KernelAdjoint& adj, MatrixXd& dZ) {
    const auto& w = params.ard_weights;
    for (Eigen::Index m = 0; m < Z.rows(); ++m) {
        for (Eigen::Index n = 0; n < X.rows(); ++n) {
            const double gk = G(n, m) * K(n, m);
            if (gk == 0.0) continue;
            adj.signal_variance += gk / params.signal_variance;
            for (Eigen::Index d = 0; d < X.cols(); ++d) {
                const double diff = X(n, d) - Z(m, d);
                adj.ard[d] += -0.5 * diff * diff * gk;
                dZ(m, d) += w[d] * diff * gk;
            }
        }
    }
}

/// Backward pass for Kz = gram_raw(Z) + rel_jitter*sf2*I with G = dF/dKz (any
/// square matrix; only its symmetric part matters).
inline void gram_backward(const MatrixXd& Z, const KernelParams& params, double rel_jitter, const MatrixXd& Kz,
                          const MatrixXd& G, KernelAdjoint& adj, MatrixXd& dZ) {
    const auto& w = params.ard_weights;
    const double sf2 = params.signal_variance;
    const auto M = Z.rows();
    for (Eigen::Index m = 0; m < M; ++m) {
        adj.signal_variance += G(m, m) * (1.0 + rel_jitter);
        for (Eigen::Index mp = m + 1; mp < M; ++mp) {
            const double gk = (G(m, mp) + G(mp, m)) * Kz(m, mp);
            adj.signal_variance += gk / sf2;
            for (Eigen::Index d = 0; d < Z.cols(); ++d) {
                const double diff = Z(m, d) - Z(mp, d);
                adj.ard[d] += -0.5 * diff * diff * gk;
                dZ(m, d) += -w[d] * diff * gk;
                dZ(mp, d) += w[d] * diff * gk;
            }
        }
    }
}

}  // namespace rgp
