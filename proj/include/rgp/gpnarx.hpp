#pragma once

// Full-GP NARX baseline. Regressors are built from the observed outputs:
//   x_t = [y_{t-1}, ..., y_{t-L}, u_{t-1}, ..., u_{t-Lu}],  t = max(L, Lu) .. N-1
// Hyperparameters maximize the log evidence; simulation feeds back the
// predicted means.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <tuple>
#include <utility>

#include <Eigen/Dense>

#include "rgp/errors.hpp"
#include "rgp/kernel.hpp"
#include "rgp/optimizer.hpp"

namespace rgp {

struct GpNarxModel {
    int lag = 1;
    int input_lag = 1;
    KernelParams kernel;
    double noise_variance = 0.1;
    MatrixXd X;
    VectorXd targets;
    Eigen::LLT<MatrixXd> chol;  // of K + noise I
    VectorXd alpha;             // (K + noise I)^-1 targets

    int start() const { return std::max(lag, input_lag); }
    int input_dim() const { return lag + input_lag; }

    /// Recompute the cached factorization after changing hyperparameters.
    void refresh() {
        MatrixXd K = gram_raw(X, kernel, 0.0);
        K.diagonal().array() += noise_variance;
        chol.compute(K);
        if (chol.info() != Eigen::Success || !(chol.matrixLLT().diagonal().minCoeff() > 0.0))
            throw NumericalError("GP-NARX: Cholesky of K + noise I failed", "K+noise");
        alpha = chol.solve(targets);
    }
};

inline VectorXd narx_regressor(const VectorXd& y_hist, const VectorXd& u, Eigen::Index t, int L, int Lu) {
    VectorXd x(L + Lu);
    for (int k = 1; k <= L; ++k) x[k - 1] = t - k >= 0 ? y_hist[t - k] : 0.0;
    for (int k = 1; k <= Lu; ++k) x[L + k - 1] = t - k >= 0 ? u[t - k] : 0.0;
    return x;
}

inline std::pair<MatrixXd, VectorXd> narx_dataset(const VectorXd& u, const VectorXd& y, int L, int Lu) {
    if (L < 1 || Lu < 1) throw StructuralError("GP-NARX: lags must be positive");
    if (u.size() != y.size()) throw StructuralError("GP-NARX: u and y lengths differ");
    const Eigen::Index s = std::max(L, Lu);
    if (y.size() <= s + 1) throw StructuralError("GP-NARX: sequence too short for the lags");
    const Eigen::Index n = y.size() - s;
    MatrixXd X(n, L + Lu);
    VectorXd t(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        X.row(r) = narx_regressor(y, u, r + s, L, Lu).transpose();
        t[r] = y[r + s];
    }
    return {X, t};
}

struct EvidenceGradient {
    double value = 0.0;
    VectorXd grad;  // d/d[log sf2, log w_1..w_D, log noise]
};

inline EvidenceGradient log_evidence(const MatrixXd& X, const VectorXd& t, const KernelParams& kp, double noise) {
    kp.validate(X.cols());
    const auto n = X.rows();
    const auto D = X.cols();
    const MatrixXd Kf = gram_raw(X, kp, 0.0);
    MatrixXd K = Kf;
    K.diagonal().array() += noise;
    Eigen::LLT<MatrixXd> llt(K);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
        throw NumericalError("GP-NARX: Cholesky of K + noise I failed", "K+noise");
    const VectorXd alpha = llt.solve(t);
    EvidenceGradient out;
    out.value = -0.5 * t.dot(alpha) - llt.matrixLLT().diagonal().array().log().sum() -
                0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    // dlogp/dK = 1/2 (alpha alpha' - K^-1)
    const MatrixXd G = 0.5 * (alpha * alpha.transpose() - llt.solve(MatrixXd::Identity(n, n)));
    out.grad.resize(D + 2);
    out.grad[0] = G.cwiseProduct(Kf).sum();
    for (Eigen::Index d = 0; d < D; ++d) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i) {
                const double diff = X(i, d) - X(j, d);
                acc += G(i, j) * Kf(i, j) * diff * diff;
            }
        out.grad[d + 1] = -0.5 * kp.ard_weights[d] * acc;
    }
    out.grad[D + 1] = noise * G.trace();
    return out;
}

struct GpNarxOptions {
    long max_evals = 500;
    double convergence_tol = 1e-4;
    int restarts = 1;
    std::uint64_t seed = 0;
    double restart_spread = 0.5;
};

inline GpNarxModel fit_gpnarx(const VectorXd& u, const VectorXd& y, int L, int Lu, const GpNarxOptions& opts = {}) {
    auto [X, t] = narx_dataset(u, y, L, Lu);
    const auto D = X.cols();
    auto unpack_theta = [D](const VectorXd& th) {
        KernelParams kp(std::exp(th[0]), th.segment(1, D).array().exp().matrix());
        return std::make_pair(kp, std::exp(th[D + 1]));
    };
    Objective f = [&](const VectorXd& th, VectorXd& g) {
        auto [kp, noise] = unpack_theta(th);
        auto ev = log_evidence(X, t, kp, noise);
        g = ev.grad;
        return ev.value;
    };
    OptimizerOptions oo;
    oo.max_evals = opts.max_evals;
    oo.grad_tol = opts.convergence_tol;

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> nd(0.0, opts.restart_spread);
    VectorXd best_theta;
    double best = -std::numeric_limits<double>::infinity();
    std::string last_error;
    for (int r = 0; r < opts.restarts; ++r) {
        VectorXd th(D + 2);
        th[0] = 0.0;
        th.segment(1, D).setConstant(std::log(1.0 / static_cast<double>(D)));
        th[D + 1] = std::log(0.1);
        if (r > 0)
            for (Eigen::Index i = 0; i < th.size(); ++i) th[i] += nd(rng);
        try {
            auto res = maximize(f, th, oo);
            if (res.value > best) best = res.value, best_theta = res.x;
        } catch (const std::runtime_error& e) {
            last_error = e.what();
        }
    }
    if (best_theta.size() == 0) throw TrainingError("GP-NARX: every restart failed: " + last_error);
    GpNarxModel m;
    m.lag = L;
    m.input_lag = Lu;
    std::tie(m.kernel, m.noise_variance) = unpack_theta(best_theta);
    m.X = std::move(X);
    m.targets = std::move(t);
    m.refresh();
    return m;
}

struct GpNarxPrediction {
    double mean = 0.0;
    double variance = 0.0;           // latent function
    double observed_variance = 0.0;  // + noise
};

inline GpNarxPrediction predict_gpnarx(const GpNarxModel& m, const VectorXd& x) {
    if (x.size() != m.input_dim()) throw StructuralError("predict_gpnarx: regressor dimension mismatch");
    const VectorXd ks = cross_gram(x.transpose(), m.X, m.kernel).row(0).transpose();
    GpNarxPrediction p;
    p.mean = ks.dot(m.alpha);
    const VectorXd v = m.chol.matrixL().solve(ks);
    p.variance = std::max(0.0, m.kernel.signal_variance - v.squaredNorm());
    p.observed_variance = p.variance + m.noise_variance;
    return p;
}

/// Mean-feedback free simulation. `seed` holds the true outputs of the first
/// max(L, Lu) steps; the result covers steps max(L, Lu) .. len(u) - 1.
inline VectorXd simulate_gpnarx(const GpNarxModel& m, const VectorXd& u, const VectorXd& seed) {
    const Eigen::Index s = m.start();
    if (seed.size() != s) throw StructuralError("simulate_gpnarx: seed window must hold max(L, Lu) outputs");
    if (u.size() <= s) throw StructuralError("simulate_gpnarx: input shorter than the seed window");
    VectorXd hist = VectorXd::Zero(u.size());
    hist.head(s) = seed;
    for (Eigen::Index t = s; t < u.size(); ++t)
        hist[t] = predict_gpnarx(m, narx_regressor(hist, u, t, m.lag, m.input_lag)).mean;
    return hist.tail(u.size() - s);
}

}  // namespace rgp
