#pragma once

// Free simulation with moment propagation. Each step turns the Gaussian
// regressor of every layer into Psi statistics and reads off
//
//   mean = B' psi1*'
//   var  = B' (psi2* - psi1*' psi1*) B + psi0* - Tr((Kz^-1 - A^-1) psi2*)
//
// where A = Kz + Psi2 / sigma^2 from training. The resulting N(mean, var)
// becomes the uncertain latent input of later windows.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/bound.hpp"
#include "rgp/errors.hpp"
#include "rgp/model.hpp"
#include "rgp/psi_stats.hpp"

namespace rgp {

struct Predictor {
    ModelState state;
    OptimalQz qz;

    static Predictor build(const ModelState& s, const VectorXd& u, const VectorXd& y) {
        return {s, recover_qz(s, u, y)};
    }
};

struct Moment {
    double mean = 0.0;
    double variance = 0.0;
};

/// Per-step, per-layer moments; layers 0..H-1 are latent, layer H is the
/// observation function. output_variance adds the observation noise.
struct PredictiveMoments {
    Eigen::Index step = 0;
    std::vector<Moment> layers;
    double output_variance = 0.0;

    double output_mean() const { return layers.back().mean; }
};

struct SimulationResult {
    std::vector<PredictiveMoments> steps;
    long clip_count = 0;

    VectorXd output_means() const {
        VectorXd v(static_cast<Eigen::Index>(steps.size()));
        for (std::size_t i = 0; i < steps.size(); ++i) v[static_cast<Eigen::Index>(i)] = steps[i].output_mean();
        return v;
    }
    VectorXd output_variances() const {
        VectorXd v(static_cast<Eigen::Index>(steps.size()));
        for (std::size_t i = 0; i < steps.size(); ++i) v[static_cast<Eigen::Index>(i)] = steps[i].output_variance;
        return v;
    }
};

/// Prediction of layer l for one Gaussian regressor row.
inline Moment predict_layer(const Predictor& p, int l, const VectorXd& mean_row, const VectorXd& var_row,
                            long* clip_count = nullptr) {
    const auto& lp = p.state.layers.at(static_cast<std::size_t>(l));
    const auto& lq = p.qz.layers.at(static_cast<std::size_t>(l));
    if (mean_row.size() != lp.inducing.cols() || var_row.size() != mean_row.size())
        throw StructuralError("predict_layer: regressor dimension mismatch in layer " + std::to_string(l + 1));
    UncertainInputSet q{mean_row.transpose(), var_row.transpose()};
    const PsiStats psi = compute_psi(q, lp.inducing, lp.kernel);
    const VectorXd psi1 = psi.psi1.row(0).transpose();
    Moment m;
    m.mean = lq.B.dot(psi1);
    const double spread = lq.B.dot(psi.psi2 * lq.B) - m.mean * m.mean;
    m.variance = spread + psi.psi0 - (lq.inverse_difference.cwiseProduct(psi.psi2)).sum();
    if (!std::isfinite(m.mean) || !std::isfinite(m.variance))
        throw NumericalError("prediction produced a non-finite moment in layer " + std::to_string(l + 1), "psi*",
                             l);
    if (m.variance < 0.0) {
        m.variance = 0.0;
        if (clip_count) ++*clip_count;
    }
    return m;
}

/// Explicit initial windows: L (mean, variance) values per hidden layer for
/// the steps before the first prediction.
struct SimulationInit {
    std::vector<VectorXd> means;
    std::vector<VectorXd> variances;
};

struct SimulationOptions {
    std::optional<SimulationInit> init;  // default: the trained mu0 / lambda0
    bool propagate_variance = true;      // false: all latent variances forced to zero
};

namespace detail {

// Fills row (means, variances) of layer l at time t from running moments.
inline void step_row(const ModelConfig& cfg, int l, Eigen::Index t, const std::vector<VectorXd>& m,
                     const std::vector<VectorXd>& v, const VectorXd& u, VectorXd& mean_row, VectorXd& var_row) {
    const int D = cfg.input_dim(l);
    mean_row.setZero(D);
    var_row.setZero(D);
    for (int d = 0; d < D; ++d) {
        const Source s = regressor_source(cfg, l, t, d);
        if (s.kind == Source::Kind::Latent) {
            mean_row[d] = m[static_cast<std::size_t>(s.layer)][s.index];
            var_row[d] = v[static_cast<std::size_t>(s.layer)][s.index];
        } else if (s.kind == Source::Kind::Input) {
            mean_row[d] = u[s.index];
        }
    }
}

}  // namespace detail

/// First reported step of a free simulation.
inline Eigen::Index simulation_start(const ModelConfig& cfg) { return std::max(cfg.lag, cfg.input_lag); }

inline SimulationResult free_simulate(const Predictor& p, const VectorXd& u_test, const SimulationOptions& opts = {}) {
    const auto& cfg = p.state.config;
    const int H = cfg.hidden_layers, L = cfg.lag;
    const auto T = u_test.size();
    if (T <= simulation_start(cfg))
        throw StructuralError("free_simulate: test input must be longer than max(L, Lu)");
    if (opts.init && (opts.init->means.size() != static_cast<std::size_t>(H) ||
                      opts.init->variances.size() != static_cast<std::size_t>(H)))
        throw StructuralError("free_simulate: init needs one window per hidden layer");
    std::vector<VectorXd> m(static_cast<std::size_t>(H), VectorXd::Zero(T)), v = m;
    for (int h = 0; h < H; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        if (opts.init) {
            if (opts.init->means[hs].size() != L || opts.init->variances[hs].size() != L)
                throw StructuralError("free_simulate: init windows must have L entries");
            m[hs].head(L) = opts.init->means[hs];
            v[hs].head(L) = opts.init->variances[hs];
        } else {
            m[hs].head(L) = p.state.latents[hs].prior_mean;
            v[hs].head(L) = p.state.latents[hs].prior_variance;
        }
        if (!opts.propagate_variance) v[hs].setZero();
    }

    SimulationResult out;
    const double obs_noise = p.state.layers.back().noise_variance;
    VectorXd mr, vr;
    for (Eigen::Index t = L; t < T; ++t) {
        PredictiveMoments pm;
        pm.step = t;
        for (int h = 0; h < H; ++h) {
            detail::step_row(cfg, h, t, m, v, u_test, mr, vr);
            Moment mo = predict_layer(p, h, mr, vr, &out.clip_count);
            if (!opts.propagate_variance) mo.variance = 0.0;
            m[static_cast<std::size_t>(h)][t] = mo.mean;
            v[static_cast<std::size_t>(h)][t] = mo.variance;
            pm.layers.push_back(mo);
        }
        detail::step_row(cfg, H, t, m, v, u_test, mr, vr);
        const Moment mo = predict_layer(p, H, mr, vr, &out.clip_count);
        pm.layers.push_back(mo);
        pm.output_variance = mo.variance + obs_noise;
        if (t >= simulation_start(cfg)) out.steps.push_back(std::move(pm));
    }
    return out;
}

/// One-step-ahead prediction with every latent window taken from the
/// training posterior q(x); only meaningful on the training sequence.
inline SimulationResult teacher_forced(const Predictor& p, const VectorXd& u) {
    const auto& cfg = p.state.config;
    const int H = cfg.hidden_layers;
    const auto T = p.state.length();
    if (u.size() != T) throw StructuralError("teacher_forced: input length must match the training sequence");
    std::vector<VectorXd> m, v;
    for (const auto& lat : p.state.latents) m.push_back(lat.mean), v.push_back(lat.variance);
    SimulationResult out;
    const double obs_noise = p.state.layers.back().noise_variance;
    VectorXd mr, vr;
    for (Eigen::Index t = simulation_start(cfg); t < T; ++t) {
        PredictiveMoments pm;
        pm.step = t;
        for (int l = 0; l <= H; ++l) {
            detail::step_row(cfg, l, t, m, v, u, mr, vr);
            pm.layers.push_back(predict_layer(p, l, mr, vr, &out.clip_count));
        }
        pm.output_variance = pm.layers.back().variance + obs_noise;
        out.steps.push_back(std::move(pm));
    }
    return out;
}

inline double rmse(const VectorXd& predicted, const VectorXd& truth) {
    if (predicted.size() != truth.size()) throw StructuralError("rmse: length mismatch");
    if (predicted.size() == 0) throw StructuralError("rmse: empty sequences");
    return std::sqrt((predicted - truth).squaredNorm() / static_cast<double>(predicted.size()));
}

/// step, predicted mean, predicted variance, true output
inline void write_predictions_csv(const std::string& path, const std::vector<Eigen::Index>& steps,
                                  const VectorXd& mean, const VectorXd& variance, const VectorXd& truth) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions to " + path);
    out << "step,mean,variance,truth\n";
    char buf[128];
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", static_cast<long>(steps[i]), mean[k], variance[k],
                      truth[k]);
        out << buf;
    }
}

}  // namespace rgp
