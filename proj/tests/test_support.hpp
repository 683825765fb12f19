#pragma once

// Test-only oracles: finite differences, Monte Carlo and quadrature
// evaluations of the Psi expectations, and a naive dense transcription of
// the lower bound. None of this reuses the library's evaluation paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rgp/model.hpp"

namespace rgp::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd central_differences(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                                    double step = 1e-5) {
    VectorXd g(x.size());
    VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + step;
        const double fp = f(xp);
        xp[i] = orig - step;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const VectorXd& a, const VectorXd& b, double floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
    return worst;
}

/// A smooth random SISO sequence in roughly normalized units.
inline std::pair<VectorXd, VectorXd> random_sequence(Eigen::Index N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd u(N), y(N);
    double prev = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
        u[i] = nd(rng);
        prev = 0.7 * prev + 0.5 * std::tanh(i > 0 ? u[i - 1] : 0.0) + 0.1 * nd(rng);
        y[i] = prev;
    }
    return {u, y};
}

/// init_model followed by a random perturbation of every block. Inducing
/// inputs are redrawn i.i.d. N(0, I) so that Kz stays well conditioned;
/// finite-difference noise grows with cond(Kz).
inline ModelState random_state(const ModelConfig& cfg, const VectorXd& u, const VectorXd& y, std::uint64_t seed) {
    InitOptions init;
    init.seed = seed;
    ModelState s = init_model(cfg, u, y, init);
    std::mt19937_64 rng(seed + 17);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& lp : s.layers)
        for (Eigen::Index i = 0; i < lp.inducing.size(); ++i) lp.inducing.data()[i] = nd(rng);
    VectorXd p = pack(s);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.2 * nd(rng);
    return unpack(p, cfg, y.size());
}

// Gauss-Hermite nodes/weights for E_{N(0,1)}[f(t)] via Golub-Welsch.
struct GaussHermite {
    VectorXd nodes, weights;
    explicit GaussHermite(int n) {
        MatrixXd J = MatrixXd::Zero(n, n);
        for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
        nodes = es.eigenvalues();
        weights = es.eigenvectors().row(0).transpose().array().square();
    }
    template <typename F>
    double expect(double mean, double var, F&& f) const {
        if (var == 0.0) return f(mean);
        const double sd = std::sqrt(var);
        double acc = 0.0;
        for (Eigen::Index k = 0; k < nodes.size(); ++k) acc += weights[k] * f(mean + sd * nodes[k]);
        return acc;
    }
};

struct DensePsi {
    double psi0 = 0.0;
    MatrixXd psi1, psi2;
};

/// Psi statistics via per-dimension Gauss-Hermite quadrature of the
/// defining expectations (the integrands factorize over dimensions).
inline DensePsi quadrature_psi(const MatrixXd& mu, const MatrixXd& S, const MatrixXd& Z, double sf2,
                               const VectorXd& w, int nodes = 120) {
    GaussHermite gh(nodes);
    const auto N = mu.rows(), M = Z.rows(), D = mu.cols();
    DensePsi out;
    out.psi0 = static_cast<double>(N) * sf2;
    out.psi1 = MatrixXd::Zero(N, M);
    out.psi2 = MatrixXd::Zero(M, M);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index m = 0; m < M; ++m) {
            double prod = sf2;
            for (Eigen::Index d = 0; d < D; ++d)
                prod *= gh.expect(mu(i, d), S(i, d), [&](double x) {
                    return std::exp(-0.5 * w[d] * (x - Z(m, d)) * (x - Z(m, d)));
                });
            out.psi1(i, m) = prod;
        }
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index mp = 0; mp < M; ++mp) {
                double prod = sf2 * sf2;
                for (Eigen::Index d = 0; d < D; ++d)
                    prod *= gh.expect(mu(i, d), S(i, d), [&](double x) {
                        return std::exp(-0.5 * w[d] * ((x - Z(m, d)) * (x - Z(m, d)) + (x - Z(mp, d)) * (x - Z(mp, d))));
                    });
                out.psi2(m, mp) += prod;
            }
    }
    return out;
}

inline double naive_kern(const VectorXd& a, const VectorXd& b, double sf2, const VectorXd& w) {
    double r = 0.0;
    for (Eigen::Index d = 0; d < a.size(); ++d) r += w[d] * (a[d] - b[d]) * (a[d] - b[d]);
    return sf2 * std::exp(-0.5 * r);
}

/// Monte-Carlo estimate of the Psi expectations with standard errors. psi1
/// entries are per-row means; psi2 entries sum independent per-row means, so
/// their variances add.
struct McPsi {
    MatrixXd psi1, psi1_se, psi2, psi2_se;
};

inline McPsi mc_psi(const MatrixXd& mu, const MatrixXd& S, const MatrixXd& Z, double sf2, const VectorXd& w,
                    long samples, std::uint64_t seed) {
    const auto N = mu.rows(), M = Z.rows(), D = mu.cols();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    McPsi out;
    out.psi1 = MatrixXd::Zero(N, M);
    out.psi1_se = MatrixXd::Zero(N, M);
    out.psi2 = MatrixXd::Zero(M, M);
    out.psi2_se = MatrixXd::Zero(M, M);
    VectorXd x(D), k(M);
    for (Eigen::Index i = 0; i < N; ++i) {
        VectorXd s1 = VectorXd::Zero(M), q1 = VectorXd::Zero(M);
        MatrixXd s2 = MatrixXd::Zero(M, M), q2 = MatrixXd::Zero(M, M);
        for (long n = 0; n < samples; ++n) {
            for (Eigen::Index d = 0; d < D; ++d) x[d] = mu(i, d) + std::sqrt(S(i, d)) * nd(rng);
            for (Eigen::Index m = 0; m < M; ++m) k[m] = naive_kern(x, Z.row(m).transpose(), sf2, w);
            s1 += k;
            q1 += k.cwiseProduct(k);
            const MatrixXd kk = k * k.transpose();
            s2 += kk;
            q2 += kk.cwiseProduct(kk);
        }
        const double n = static_cast<double>(samples);
        const VectorXd m1 = s1 / n;
        const MatrixXd m2 = s2 / n;
        out.psi1.row(i) = m1.transpose();
        out.psi1_se.row(i) = ((q1 / n - m1.cwiseProduct(m1)) / n).cwiseMax(0.0).cwiseSqrt().transpose();
        out.psi2 += m2;
        out.psi2_se += ((q2 / n - m2.cwiseProduct(m2)) / n).cwiseMax(0.0);
    }
    out.psi2_se = out.psi2_se.cwiseSqrt();
    return out;
}

/// Dense, explicit-inverse transcription of the bound. Regressor windows are
/// written out directly from the index definitions rather than through the
/// library's source map.
inline double naive_bound(const ModelState& s, const VectorXd& u, const VectorXd& y) {
    const int H = s.config.hidden_layers, L = s.config.lag, Lu = s.config.input_lag;
    const auto N = y.size();
    const auto n = N - L;
    auto lat_m = [&](int h, Eigen::Index i) { return i < 0 ? 0.0 : s.latents[h].mean[i]; };
    auto lat_v = [&](int h, Eigen::Index i) { return i < 0 ? 0.0 : s.latents[h].variance[i]; };
    double total = 0.0;
    for (int l = 0; l <= H; ++l) {
        const auto& lp = s.layers[l];
        const int D = static_cast<int>(lp.inducing.cols());
        MatrixXd mu(n, D), S(n, D);
        for (Eigen::Index r = 0; r < n; ++r) {
            const Eigen::Index i = r + L;
            std::vector<double> m, v;
            if (l == 0) {
                for (int k = 1; k <= L; ++k) m.push_back(lat_m(0, i - k)), v.push_back(lat_v(0, i - k));
                for (int k = 1; k <= Lu; ++k) m.push_back(i - k >= 0 ? u[i - k] : 0.0), v.push_back(0.0);
            } else if (l < H) {
                for (int k = 1; k <= L; ++k) m.push_back(lat_m(l, i - k)), v.push_back(lat_v(l, i - k));
                for (int k = 0; k < L; ++k) m.push_back(lat_m(l - 1, i - k)), v.push_back(lat_v(l - 1, i - k));
            } else {
                for (int k = 0; k < L; ++k) m.push_back(lat_m(H - 1, i - k)), v.push_back(lat_v(H - 1, i - k));
            }
            for (int d = 0; d < D; ++d) mu(r, d) = m[d], S(r, d) = v[d];
        }
        const double sf2 = lp.kernel.signal_variance;
        const auto psi = quadrature_psi(mu, S, lp.inducing, sf2, lp.kernel.ard_weights);
        const auto M = lp.inducing.rows();
        // Same jitter the library starts from; tests pick well-conditioned Z.
        MatrixXd Kz(M, M);
        for (Eigen::Index a = 0; a < M; ++a)
            for (Eigen::Index b = 0; b < M; ++b)
                Kz(a, b) = naive_kern(lp.inducing.row(a).transpose(), lp.inducing.row(b).transpose(), sf2,
                                      lp.kernel.ard_weights);
        Kz.diagonal().array() += s.config.jitter * sf2;
        const double sigma2 = lp.noise_variance;
        VectorXd t(n);
        double lam = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            t[r] = l == H ? y[r + L] : s.latents[l].mean[r + L];
            if (l < H) lam += s.latents[l].variance[r + L];
        }
        const MatrixXd A = Kz + psi.psi2 / sigma2;
        const MatrixXd Kinv = Kz.inverse(), Ainv = A.inverse();
        total += -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * sigma2);
        total += -1.0 / (2.0 * sigma2) * (lam + t.dot(t) + psi.psi0 - (Kinv * psi.psi2).trace());
        total += 0.5 * std::log(Kz.determinant()) - 0.5 * std::log(A.determinant());
        total += 1.0 / (2.0 * sigma2 * sigma2) * (t.transpose() * psi.psi1 * Ainv * psi.psi1.transpose() * t)(0, 0);
    }
    for (int h = 0; h < H; ++h) {
        const auto& lat = s.latents[h];
        for (Eigen::Index i = 0; i < N; ++i)
            total += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * lat.variance[i]);
        for (int i = 0; i < L; ++i) {
            const double v0 = lat.prior_variance[i];
            total += -0.5 * std::log(2.0 * std::numbers::pi * v0) -
                     (lat.variance[i] + (lat.mean[i] - lat.prior_mean[i]) * (lat.mean[i] - lat.prior_mean[i])) / (2.0 * v0);
        }
    }
    return total;
}

}  // namespace rgp::testing
