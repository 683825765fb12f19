#pragma once

// Expectations of exponentiated quadratic kernel quantities under
// independent diagonal-Gaussian inputs x_i ~ N(means_i, diag(variances_i)):
//
//   psi0         = sum_i <k(x_i, x_i)>                     = N sf2
//   psi1(i, m)   = <k(x_i, z_m)>
//                = sf2 prod_d (w_d S_id + 1)^(-1/2) exp(-w_d (mu_id - z_md)^2 / (2 (w_d S_id + 1)))
//   psi2(m, m')  = sum_i <k(x_i, z_m) k(x_i, z_m')>
//                = sum_i sf2^2 prod_d (2 w_d S_id + 1)^(-1/2)
//                        exp(-w_d (z_md - z_m'd)^2 / 4 - w_d (mu_id - zbar_d)^2 / (2 w_d S_id + 1))
//   with zbar = (z_m + z_m') / 2.
//
// Zero-variance columns are deterministic inputs; the formulas reduce to
// plain kernel evaluations there.

#include <cmath>

#include <Eigen/Dense>

#include "rgp/errors.hpp"
#include "rgp/kernel.hpp"

namespace rgp {

struct UncertainInputSet {
    MatrixXd means;
    MatrixXd variances;

    Eigen::Index rows() const { return means.rows(); }
    Eigen::Index cols() const { return means.cols(); }

    void validate() const {
        if (means.rows() != variances.rows() || means.cols() != variances.cols())
            throw StructuralError("uncertain inputs: means and variances must have the same shape");
        if ((variances.array() < 0.0).any())
            throw StructuralError("uncertain inputs: variances must be nonnegative");
    }
};

struct PsiStats {
    double psi0 = 0.0;
    MatrixXd psi1;
    MatrixXd psi2;
};

namespace detail {

inline void check_psi_inputs(const UncertainInputSet& q, const MatrixXd& Z, const KernelParams& params) {
    q.validate();
    if (Z.cols() != q.cols())
        throw StructuralError("psi: inducing inputs have " + std::to_string(Z.cols()) + " columns, inputs have " +
                              std::to_string(q.cols()));
    params.validate(q.cols());
}

// Pair index for m <= m' in a packed upper triangle.
struct PairTable {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    MatrixXd zbar;           // pairs x D
    VectorXd log_separation; // -1/4 sum_d w_d (z_m - z_m')^2
};

inline PairTable make_pairs(const MatrixXd& Z, const VectorXd& w) {
    PairTable t;
    const auto M = Z.rows();
    t.pairs.reserve(M * (M + 1) / 2);
    for (Eigen::Index m = 0; m < M; ++m)
        for (Eigen::Index mp = m; mp < M; ++mp) t.pairs.emplace_back(m, mp);
    t.zbar.resize(static_cast<Eigen::Index>(t.pairs.size()), Z.cols());
    t.log_separation.resize(static_cast<Eigen::Index>(t.pairs.size()));
    for (std::size_t p = 0; p < t.pairs.size(); ++p) {
        const auto [m, mp] = t.pairs[p];
        const auto P = static_cast<Eigen::Index>(p);
        t.zbar.row(P) = 0.5 * (Z.row(m) + Z.row(mp));
        t.log_separation[P] = -0.25 * (w.array() * (Z.row(m) - Z.row(mp)).transpose().array().square()).sum();
    }
    return t;
}

}  // namespace detail

inline PsiStats compute_psi(const UncertainInputSet& q, const MatrixXd& Z, const KernelParams& params) {
    detail::check_psi_inputs(q, Z, params);
    const auto N = q.rows(), M = Z.rows(), D = q.cols();
    const double sf2 = params.signal_variance;
    const auto& w = params.ard_weights;

    PsiStats out;
    out.psi0 = static_cast<double>(N) * sf2;
    out.psi1.resize(N, M);
    out.psi2 = MatrixXd::Zero(M, M);

    const auto table = detail::make_pairs(Z, w);
    const auto P = static_cast<Eigen::Index>(table.pairs.size());
    VectorXd a(D), b(D);
    for (Eigen::Index i = 0; i < N; ++i) {
        double log_norm1 = 0.0, log_norm2 = 0.0;
        for (Eigen::Index d = 0; d < D; ++d) {
            a[d] = w[d] * q.variances(i, d) + 1.0;
            b[d] = 2.0 * w[d] * q.variances(i, d) + 1.0;
            log_norm1 -= 0.5 * std::log(a[d]);
            log_norm2 -= 0.5 * std::log(b[d]);
        }
        for (Eigen::Index m = 0; m < M; ++m) {
            double s = log_norm1;
            for (Eigen::Index d = 0; d < D; ++d) {
                const double diff = q.means(i, d) - Z(m, d);
                s -= 0.5 * w[d] * diff * diff / a[d];
            }
            out.psi1(i, m) = sf2 * std::exp(s);
        }
        for (Eigen::Index p = 0; p < P; ++p) {
            double s = log_norm2 + table.log_separation[p];
            for (Eigen::Index d = 0; d < D; ++d) {
                const double e = q.means(i, d) - table.zbar(p, d);
                s -= w[d] * e * e / b[d];
            }
            const auto [m, mp] = table.pairs[static_cast<std::size_t>(p)];
            out.psi2(m, mp) += sf2 * sf2 * std::exp(s);
        }
    }
    for (Eigen::Index m = 0; m < M; ++m)
        for (Eigen::Index mp = m + 1; mp < M; ++mp) out.psi2(mp, m) = out.psi2(m, mp);
    return out;
}

/// Vector-Jacobian product of the Psi statistics: given adjoints
/// dF/dpsi0, dF/dpsi1 (N x M) and dF/dpsi2 (M x M), returns dF with respect to
/// the input means, input variances, inducing inputs and kernel parameters.
struct PsiAdjoint {
    KernelAdjoint kernel;
    MatrixXd d_means;
    MatrixXd d_variances;
    MatrixXd d_inducing;
};

inline PsiAdjoint psi_grads(const UncertainInputSet& q, const MatrixXd& Z, const KernelParams& params,
                            double g_psi0, const MatrixXd& g_psi1, const MatrixXd& g_psi2) {
    detail::check_psi_inputs(q, Z, params);
    const auto N = q.rows(), M = Z.rows(), D = q.cols();
    if (g_psi1.rows() != N || g_psi1.cols() != M || g_psi2.rows() != M || g_psi2.cols() != M)
        throw StructuralError("psi_grads: adjoint shapes do not match the statistics");
    const double sf2 = params.signal_variance;
    const auto& w = params.ard_weights;

    PsiAdjoint out{KernelAdjoint(D), MatrixXd::Zero(N, D), MatrixXd::Zero(N, D), MatrixXd::Zero(M, D)};
    out.kernel.signal_variance += g_psi0 * static_cast<double>(N);

    const auto table = detail::make_pairs(Z, w);
    const auto P = static_cast<Eigen::Index>(table.pairs.size());
    // Symmetrized pair weights; off-diagonal pairs stand for both (m,m') and (m',m).
    VectorXd pair_weight(P);
    for (Eigen::Index p = 0; p < P; ++p) {
        const auto [m, mp] = table.pairs[static_cast<std::size_t>(p)];
        pair_weight[p] = m == mp ? g_psi2(m, m) : g_psi2(m, mp) + g_psi2(mp, m);
    }

    VectorXd a(D), b(D);
    for (Eigen::Index i = 0; i < N; ++i) {
        double log_norm1 = 0.0, log_norm2 = 0.0;
        for (Eigen::Index d = 0; d < D; ++d) {
            a[d] = w[d] * q.variances(i, d) + 1.0;
            b[d] = 2.0 * w[d] * q.variances(i, d) + 1.0;
            log_norm1 -= 0.5 * std::log(a[d]);
            log_norm2 -= 0.5 * std::log(b[d]);
        }
        for (Eigen::Index m = 0; m < M; ++m) {
            if (g_psi1(i, m) == 0.0) continue;
            double s = log_norm1;
            for (Eigen::Index d = 0; d < D; ++d) {
                const double diff = q.means(i, d) - Z(m, d);
                s -= 0.5 * w[d] * diff * diff / a[d];
            }
            const double c = g_psi1(i, m) * sf2 * std::exp(s);
            out.kernel.signal_variance += c / sf2;
            for (Eigen::Index d = 0; d < D; ++d) {
                const double diff = q.means(i, d) - Z(m, d);
                const double S = q.variances(i, d);
                const double wd = w[d], ad = a[d];
                out.d_means(i, d) += c * (-wd * diff / ad);
                out.d_inducing(m, d) += c * (wd * diff / ad);
                out.d_variances(i, d) += c * (-0.5 * wd / ad + 0.5 * wd * wd * diff * diff / (ad * ad));
                out.kernel.ard[d] += c * (-0.5 * S / ad - 0.5 * diff * diff / (ad * ad));
            }
        }
        for (Eigen::Index p = 0; p < P; ++p) {
            if (pair_weight[p] == 0.0) continue;
            double s = log_norm2 + table.log_separation[p];
            for (Eigen::Index d = 0; d < D; ++d) {
                const double e = q.means(i, d) - table.zbar(p, d);
                s -= w[d] * e * e / b[d];
            }
            const double c = pair_weight[p] * sf2 * sf2 * std::exp(s);
            const auto [m, mp] = table.pairs[static_cast<std::size_t>(p)];
            out.kernel.signal_variance += 2.0 * c / sf2;
            for (Eigen::Index d = 0; d < D; ++d) {
                const double e = q.means(i, d) - table.zbar(p, d);
                const double dz = Z(m, d) - Z(mp, d);
                const double S = q.variances(i, d);
                const double wd = w[d], bd = b[d];
                const double pull = wd * e / bd;
                out.d_means(i, d) += c * (-2.0 * pull);
                out.d_inducing(m, d) += c * (-0.5 * wd * dz + pull);
                out.d_inducing(mp, d) += c * (0.5 * wd * dz + pull);
                out.d_variances(i, d) += c * (-wd / bd + 2.0 * pull * pull);
                out.kernel.ard[d] += c * (-S / bd - 0.25 * dz * dz - e * e / (bd * bd));
            }
        }
    }
    return out;
}

}  // namespace rgp
