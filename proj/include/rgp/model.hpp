#pragma once

// Deep recurrent GP with latent autoregressive states.
//
// Layers are 0-indexed: layers 0..H-1 are hidden transition layers, layer H
// is the observation layer. Time is 0-indexed: the training rows that enter
// the likelihood are t = L..N-1.
//
// Regressor of layer l at time t:
//   l = 0      : [x0_{t-1}, ..., x0_{t-L},  u_{t-1}, ..., u_{t-Lu}]
//   0 < l < H  : [xl_{t-1}, ..., xl_{t-L},  x(l-1)_t, ..., x(l-1)_{t-L+1}]
//   l = H      : [x(H-1)_t, ..., x(H-1)_{t-L+1}]
// Inputs before the start of the sequence read as zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/errors.hpp"
#include "rgp/kernel.hpp"
#include "rgp/psi_stats.hpp"

namespace rgp {

struct ModelConfig {
    int hidden_layers = 2;  // H
    int lag = 5;            // L
    int input_lag = 5;      // Lu
    int num_inducing = 30;  // M
    double jitter = kJitterStart;  // relative to the layer's signal variance

    void validate() const {
        if (hidden_layers < 1) throw StructuralError("config: hidden_layers must be >= 1");
        if (lag < 1) throw StructuralError("config: lag must be >= 1");
        if (input_lag < 1) throw StructuralError("config: input_lag must be >= 1");
        if (num_inducing < 1) throw StructuralError("config: num_inducing must be >= 1");
        if (!(jitter > 0.0) || jitter > kJitterMax) throw StructuralError("config: jitter must lie in (0, 1e-2]");
    }

    int num_layers() const { return hidden_layers + 1; }

    /// Regressor dimension of layer l.
    int input_dim(int l) const {
        if (l == 0) return lag + input_lag;
        if (l < hidden_layers) return 2 * lag;
        return lag;
    }

    bool operator==(const ModelConfig&) const = default;
};

struct LatentLayer {
    VectorXd mean;            // mu, length N
    VectorXd variance;        // lambda, length N
    VectorXd prior_mean;      // mu0, length L
    VectorXd prior_variance;  // lambda0, length L
};

struct LayerParams {
    KernelParams kernel;
    double noise_variance = 0.1;
    MatrixXd inducing;  // M x D_l
};

struct ModelState {
    ModelConfig config;
    std::vector<LatentLayer> latents;  // H entries
    std::vector<LayerParams> layers;   // H + 1 entries

    Eigen::Index length() const { return latents.empty() ? 0 : latents.front().mean.size(); }

    void validate() const {
        config.validate();
        const auto N = length();
        if (static_cast<int>(latents.size()) != config.hidden_layers ||
            static_cast<int>(layers.size()) != config.num_layers())
            throw StructuralError("state: layer counts do not match the configuration");
        for (const auto& lat : latents) {
            if (lat.mean.size() != N || lat.variance.size() != N || lat.prior_mean.size() != config.lag ||
                lat.prior_variance.size() != config.lag)
                throw StructuralError("state: latent vector lengths are inconsistent");
            if ((lat.variance.array() <= 0.0).any() || (lat.prior_variance.array() <= 0.0).any())
                throw StructuralError("state: latent variances must be positive");
        }
        for (int l = 0; l < config.num_layers(); ++l) {
            const auto& lp = layers[static_cast<std::size_t>(l)];
            lp.kernel.validate(config.input_dim(l));
            if (lp.inducing.rows() != config.num_inducing || lp.inducing.cols() != config.input_dim(l))
                throw StructuralError("state: inducing inputs of layer " + std::to_string(l + 1) +
                                      " have the wrong shape");
            if (!(lp.noise_variance > 0.0)) throw StructuralError("state: noise variances must be positive");
        }
    }
};

/// Where a regressor entry comes from.
struct Source {
    enum class Kind { Latent, Input, Zero };
    Kind kind = Kind::Zero;
    int layer = 0;          // latent layer for Kind::Latent
    Eigen::Index index = 0; // time index
};

inline Source regressor_source(const ModelConfig& cfg, int l, Eigen::Index t, int d) {
    const int L = cfg.lag, H = cfg.hidden_layers;
    Source s;
    auto latent = [&](int layer, Eigen::Index idx) {
        if (idx < 0) return;
        s = Source{Source::Kind::Latent, layer, idx};
    };
    if (l == 0) {
        if (d < L) {
            latent(0, t - 1 - d);
        } else {
            const Eigen::Index idx = t - 1 - (d - L);
            if (idx >= 0) s = Source{Source::Kind::Input, 0, idx};
        }
    } else if (l < H) {
        if (d < L)
            latent(l, t - 1 - d);
        else
            latent(l - 1, t - (d - L));
    } else {
        latent(H - 1, t - d);
    }
    return s;
}

/// Builds the uncertain regressors of layer l for rows t in [t_begin, t_end).
/// `moments(layer, index)` returns {mean, variance} of a latent.
template <typename LatentMoments>
UncertainInputSet assemble_rows(const ModelConfig& cfg, int l, Eigen::Index t_begin, Eigen::Index t_end,
                                const VectorXd& u, LatentMoments&& moments) {
    const int D = cfg.input_dim(l);
    UncertainInputSet q{MatrixXd::Zero(t_end - t_begin, D), MatrixXd::Zero(t_end - t_begin, D)};
    for (Eigen::Index t = t_begin; t < t_end; ++t) {
        for (int d = 0; d < D; ++d) {
            const Source s = regressor_source(cfg, l, t, d);
            const auto r = t - t_begin;
            switch (s.kind) {
                case Source::Kind::Latent: {
                    const auto [m, v] = moments(s.layer, s.index);
                    q.means(r, d) = m;
                    q.variances(r, d) = v;
                    break;
                }
                case Source::Kind::Input:
                    q.means(r, d) = u[s.index];
                    break;
                case Source::Kind::Zero:
                    break;
            }
        }
    }
    return q;
}

/// Regressors of layer l for the likelihood rows t = L..N-1.
inline UncertainInputSet assemble_regressors(const ModelState& state, int l, const VectorXd& u) {
    const auto& cfg = state.config;
    const auto N = state.length();
    if (N <= cfg.lag) throw StructuralError("assemble_regressors: sequence length must exceed the lag");
    if (u.size() != N) throw StructuralError("assemble_regressors: input length differs from latent length");
    if (l < 0 || l > cfg.hidden_layers) throw StructuralError("assemble_regressors: layer index out of range");
    return assemble_rows(cfg, l, cfg.lag, N, u, [&](int layer, Eigen::Index idx) {
        const auto& lat = state.latents[static_cast<std::size_t>(layer)];
        return std::pair{lat.mean[idx], lat.variance[idx]};
    });
}

struct InitOptions {
    double latent_variance = 0.01;
    double prior_variance = 1.0;
    double noise_variance = 0.1;
    double signal_variance = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline MatrixXd pick_inducing(const MatrixXd& rows, int M, std::mt19937_64& rng) {
    const auto n = rows.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    MatrixXd Z(M, rows.cols());
    std::normal_distribution<double> nudge(0.0, 0.01);
    for (int m = 0; m < M; ++m) {
        Z.row(m) = rows.row(order[static_cast<std::size_t>(m % n)]);
        if (m >= n)
            for (Eigen::Index d = 0; d < Z.cols(); ++d) Z(m, d) += nudge(rng);
    }
    return Z;
}

}  // namespace detail

/// Initial parameter state. Latent means copy the (normalized) outputs, and
/// inducing inputs are a seeded random subset of the initial regressor rows.
inline ModelState init_model(const ModelConfig& cfg, const VectorXd& u, const VectorXd& y,
                             const InitOptions& opts = {}) {
    cfg.validate();
    const auto N = y.size();
    if (u.size() != N) throw StructuralError("init_model: u and y lengths differ");
    if (N <= cfg.lag) throw StructuralError("init_model: sequence length must exceed the lag");

    ModelState s;
    s.config = cfg;
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        LatentLayer lat;
        lat.mean = y;
        lat.variance = VectorXd::Constant(N, opts.latent_variance);
        lat.prior_mean = y.head(cfg.lag);
        lat.prior_variance = VectorXd::Constant(cfg.lag, opts.prior_variance);
        s.latents.push_back(std::move(lat));
    }
    std::mt19937_64 rng(opts.seed);
    for (int l = 0; l < cfg.num_layers(); ++l) {
        const int D = cfg.input_dim(l);
        LayerParams lp;
        lp.kernel = KernelParams(opts.signal_variance, VectorXd::Constant(D, 1.0 / D));
        lp.noise_variance = opts.noise_variance;
        s.layers.push_back(std::move(lp));
    }
    for (int l = 0; l < cfg.num_layers(); ++l) {
        const auto rows = assemble_regressors(s, l, u);
        s.layers[static_cast<std::size_t>(l)].inducing = detail::pick_inducing(rows.means, cfg.num_inducing, rng);
    }
    return s;
}

// Flat parameter vector. Positive quantities are stored as logs.
//   per hidden layer: mean[N], log variance[N], prior mean[L], log prior variance[L]
//   per layer:        log sf2, log w[D], log noise, inducing[M*D] (row-major)

struct ParamBlock {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

inline std::vector<ParamBlock> param_layout(const ModelConfig& cfg, Eigen::Index N) {
    std::vector<ParamBlock> blocks;
    Eigen::Index off = 0;
    auto add = [&](std::string name, Eigen::Index n) {
        blocks.push_back({std::move(name), off, n});
        off += n;
    };
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        const auto tag = "latent" + std::to_string(h + 1);
        add(tag + "/mean", N);
        add(tag + "/log_variance", N);
        add(tag + "/prior_mean", cfg.lag);
        add(tag + "/log_prior_variance", cfg.lag);
    }
    for (int l = 0; l < cfg.num_layers(); ++l) {
        const auto tag = "layer" + std::to_string(l + 1);
        const int D = cfg.input_dim(l);
        add(tag + "/log_signal_variance", 1);
        add(tag + "/log_ard", D);
        add(tag + "/log_noise_variance", 1);
        add(tag + "/inducing", static_cast<Eigen::Index>(cfg.num_inducing) * D);
    }
    return blocks;
}

inline Eigen::Index param_count(const ModelConfig& cfg, Eigen::Index N) {
    const auto blocks = param_layout(cfg, N);
    return blocks.back().offset + blocks.back().size;
}

namespace detail {

struct Cursor {
    Eigen::Index pos = 0;
};

inline void write_layer(VectorXd& v, Cursor& c, const LayerParams& lp) {
    v[c.pos++] = std::log(lp.kernel.signal_variance);
    for (Eigen::Index d = 0; d < lp.kernel.dim(); ++d) v[c.pos++] = std::log(lp.kernel.ard_weights[d]);
    v[c.pos++] = std::log(lp.noise_variance);
    for (Eigen::Index m = 0; m < lp.inducing.rows(); ++m)
        for (Eigen::Index d = 0; d < lp.inducing.cols(); ++d) v[c.pos++] = lp.inducing(m, d);
}

}  // namespace detail

inline VectorXd pack(const ModelState& s) {
    const auto N = s.length();
    VectorXd v(param_count(s.config, N));
    detail::Cursor c;
    for (const auto& lat : s.latents) {
        v.segment(c.pos, N) = lat.mean;
        c.pos += N;
        v.segment(c.pos, N) = lat.variance.array().log().matrix();
        c.pos += N;
        v.segment(c.pos, s.config.lag) = lat.prior_mean;
        c.pos += s.config.lag;
        v.segment(c.pos, s.config.lag) = lat.prior_variance.array().log().matrix();
        c.pos += s.config.lag;
    }
    for (const auto& lp : s.layers) detail::write_layer(v, c, lp);
    return v;
}

inline ModelState unpack(const VectorXd& v, const ModelConfig& cfg, Eigen::Index N) {
    cfg.validate();
    if (v.size() != param_count(cfg, N))
        throw StructuralError("unpack: vector length " + std::to_string(v.size()) + " does not match layout length " +
                              std::to_string(param_count(cfg, N)));
    ModelState s;
    s.config = cfg;
    Eigen::Index p = 0;
    const int L = cfg.lag;
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        LatentLayer lat;
        lat.mean = v.segment(p, N);
        p += N;
        lat.variance = v.segment(p, N).array().exp().matrix();
        p += N;
        lat.prior_mean = v.segment(p, L);
        p += L;
        lat.prior_variance = v.segment(p, L).array().exp().matrix();
        p += L;
        s.latents.push_back(std::move(lat));
    }
    for (int l = 0; l < cfg.num_layers(); ++l) {
        const int D = cfg.input_dim(l);
        LayerParams lp;
        lp.kernel.signal_variance = std::exp(v[p++]);
        lp.kernel.ard_weights = v.segment(p, D).array().exp().matrix();
        p += D;
        lp.noise_variance = std::exp(v[p++]);
        lp.inducing.resize(cfg.num_inducing, D);
        for (int m = 0; m < cfg.num_inducing; ++m)
            for (int d = 0; d < D; ++d) lp.inducing(m, d) = v[p++];
        s.layers.push_back(std::move(lp));
    }
    return s;
}

/// Chain rule into the packed coordinates: `grad` holds derivatives with
/// respect to the natural (positive) quantities of `s`.
inline VectorXd pack_gradient(const ModelState& s, const ModelState& grad) {
    const auto N = s.length();
    VectorXd v(param_count(s.config, N));
    Eigen::Index p = 0;
    const int L = s.config.lag;
    for (std::size_t h = 0; h < s.latents.size(); ++h) {
        const auto& lat = s.latents[h];
        const auto& g = grad.latents[h];
        v.segment(p, N) = g.mean;
        p += N;
        v.segment(p, N) = g.variance.cwiseProduct(lat.variance);
        p += N;
        v.segment(p, L) = g.prior_mean;
        p += L;
        v.segment(p, L) = g.prior_variance.cwiseProduct(lat.prior_variance);
        p += L;
    }
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
        const auto& lp = s.layers[l];
        const auto& g = grad.layers[l];
        v[p++] = g.kernel.signal_variance * lp.kernel.signal_variance;
        for (Eigen::Index d = 0; d < lp.kernel.dim(); ++d)
            v[p++] = g.kernel.ard_weights[d] * lp.kernel.ard_weights[d];
        v[p++] = g.noise_variance * lp.noise_variance;
        for (Eigen::Index m = 0; m < lp.inducing.rows(); ++m)
            for (Eigen::Index d = 0; d < lp.inducing.cols(); ++d) v[p++] = g.inducing(m, d);
    }
    return v;
}

/// A state-shaped container of zeros, used to accumulate gradients.
inline ModelState zeros_like(const ModelState& s) {
    ModelState z;
    z.config = s.config;
    for (const auto& lat : s.latents)
        z.latents.push_back({VectorXd::Zero(lat.mean.size()), VectorXd::Zero(lat.variance.size()),
                             VectorXd::Zero(lat.prior_mean.size()), VectorXd::Zero(lat.prior_variance.size())});
    for (const auto& lp : s.layers) {
        LayerParams g;
        g.kernel.signal_variance = 0.0;
        g.kernel.ard_weights = VectorXd::Zero(lp.kernel.dim());
        g.noise_variance = 0.0;
        g.inducing = MatrixXd::Zero(lp.inducing.rows(), lp.inducing.cols());
        z.layers.push_back(std::move(g));
    }
    return z;
}

}  // namespace rgp
