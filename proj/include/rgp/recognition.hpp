#pragma once

// Sequential recognition model: the variational means of hidden layer h are
// produced by a tanh network applied to that layer's own (mean) regressor
// window, computed recurrently in time:
//
//   mu_t = g(xhat_{t-1})  (WindowMode::Previous, the default)
//   mu_t = g(xhat_t)      (WindowMode::Current)
//   g(x) = v' tanh(W_K ... tanh(W_1 x))
//
// For t < L the means are tied to the trainable prior means mu0.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/bound.hpp"
#include "rgp/errors.hpp"
#include "rgp/model.hpp"

namespace rgp {

enum class WindowMode { Previous, Current };

struct RecognitionNet {
    std::vector<MatrixXd> hidden;  // hidden[0]: H1 x D, hidden[k]: H_{k+1} x H_k
    VectorXd output;               // H_K

    int input_dim() const { return hidden.empty() ? 0 : static_cast<int>(hidden.front().cols()); }
    int depth() const { return static_cast<int>(hidden.size()); }

    Eigen::Index weight_count() const {
        Eigen::Index n = output.size();
        for (const auto& W : hidden) n += W.size();
        return n;
    }

    void validate() const {
        if (hidden.empty()) throw StructuralError("recognition: network needs at least one hidden layer");
        for (std::size_t k = 1; k < hidden.size(); ++k)
            if (hidden[k].cols() != hidden[k - 1].rows())
                throw StructuralError("recognition: hidden layer dimensions do not chain");
        if (output.size() != hidden.back().rows())
            throw StructuralError("recognition: output map does not match the last hidden layer");
    }

    /// Forward pass; `activations`, when given, receives tanh outputs per layer.
    double forward(const VectorXd& x, std::vector<VectorXd>* activations = nullptr) const {
        if (x.size() != input_dim()) throw StructuralError("recognition: window dimension mismatch");
        VectorXd a = x;
        if (activations) activations->clear();
        for (const auto& W : hidden) {
            a = (W * a).array().tanh().matrix();
            if (activations) activations->push_back(a);
        }
        return output.dot(a);
    }

    static RecognitionNet random(int input_dim, const std::vector<int>& sizes, double scale, std::mt19937_64& rng) {
        if (sizes.empty()) throw StructuralError("recognition: need at least one hidden layer size");
        std::normal_distribution<double> nd(0.0, scale);
        RecognitionNet net;
        int prev = input_dim;
        for (int h : sizes) {
            if (h < 1) throw StructuralError("recognition: hidden sizes must be positive");
            MatrixXd W(h, prev);
            for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = nd(rng);
            net.hidden.push_back(std::move(W));
            prev = h;
        }
        net.output.resize(prev);
        for (Eigen::Index i = 0; i < net.output.size(); ++i) net.output[i] = nd(rng);
        return net;
    }
};

struct RecognitionOptions {
    std::vector<int> hidden_sizes{20};
    WindowMode window = WindowMode::Previous;
    double init_scale = 0.1;
};

/// Recognition-constrained model: the latent means inside `state` are
/// derived from `nets`; everything else in `state` is free.
struct RecognitionModel {
    ModelState state;
    std::vector<RecognitionNet> nets;  // one per hidden layer
    WindowMode window = WindowMode::Previous;
};

inline RecognitionModel init_recognition(const ModelState& base, const RecognitionOptions& opts, std::uint64_t seed) {
    RecognitionModel rm;
    rm.state = base;
    rm.window = opts.window;
    std::mt19937_64 rng(seed);
    for (int h = 0; h < base.config.hidden_layers; ++h)
        rm.nets.push_back(RecognitionNet::random(base.config.input_dim(h), opts.hidden_sizes, opts.init_scale, rng));
    return rm;
}

namespace detail {

inline Eigen::Index window_time(WindowMode mode, Eigen::Index t) { return mode == WindowMode::Previous ? t - 1 : t; }

inline VectorXd mean_window(const ModelConfig& cfg, int h, Eigen::Index tw, const std::vector<VectorXd>& means,
                            const VectorXd& u) {
    const int D = cfg.input_dim(h);
    VectorXd x = VectorXd::Zero(D);
    for (int d = 0; d < D; ++d) {
        const Source s = regressor_source(cfg, h, tw, d);
        if (s.kind == Source::Kind::Latent)
            x[d] = means[static_cast<std::size_t>(s.layer)][s.index];
        else if (s.kind == Source::Kind::Input)
            x[d] = u[s.index];
    }
    return x;
}

inline void check_recognition(const RecognitionModel& rm, const VectorXd& u) {
    const auto& cfg = rm.state.config;
    if (static_cast<int>(rm.nets.size()) != cfg.hidden_layers)
        throw StructuralError("recognition: need one network per hidden layer");
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        rm.nets[static_cast<std::size_t>(h)].validate();
        if (rm.nets[static_cast<std::size_t>(h)].input_dim() != cfg.input_dim(h))
            throw StructuralError("recognition: network " + std::to_string(h + 1) + " input dimension mismatch");
    }
    if (u.size() != rm.state.length()) throw StructuralError("recognition: input length mismatch");
}

}  // namespace detail

/// Latent means of every hidden layer, computed recurrently from the nets.
inline std::vector<VectorXd> recognition_forward(const RecognitionModel& rm, const VectorXd& u) {
    detail::check_recognition(rm, u);
    const auto& cfg = rm.state.config;
    const auto N = rm.state.length();
    std::vector<VectorXd> means(static_cast<std::size_t>(cfg.hidden_layers), VectorXd::Zero(N));
    for (Eigen::Index t = 0; t < N; ++t) {
        for (int h = 0; h < cfg.hidden_layers; ++h) {
            auto& mh = means[static_cast<std::size_t>(h)];
            if (t < cfg.lag) {
                mh[t] = rm.state.latents[static_cast<std::size_t>(h)].prior_mean[t];
                continue;
            }
            const VectorXd x = detail::mean_window(cfg, h, detail::window_time(rm.window, t), means, u);
            mh[t] = rm.nets[static_cast<std::size_t>(h)].forward(x);
        }
    }
    return means;
}

/// The full variational state implied by the recognition model.
inline ModelState materialize(const RecognitionModel& rm, const VectorXd& u) {
    ModelState s = rm.state;
    const auto means = recognition_forward(rm, u);
    for (std::size_t h = 0; h < s.latents.size(); ++h) s.latents[h].mean = means[h];
    return s;
}

inline double bound_with_recognition(const RecognitionModel& rm, const VectorXd& u, const VectorXd& y) {
    return lower_bound(materialize(rm, u), u, y).total;
}

// Flat layout: per hidden layer [net weights, log variance[N], prior mean[L],
// log prior variance[L]], then the per-layer kernel/noise/inducing blocks as
// in param_layout.

inline std::vector<ParamBlock> recognition_layout(const RecognitionModel& rm) {
    const auto& cfg = rm.state.config;
    const auto N = rm.state.length();
    std::vector<ParamBlock> blocks;
    Eigen::Index off = 0;
    auto add = [&](std::string name, Eigen::Index n) {
        blocks.push_back({std::move(name), off, n});
        off += n;
    };
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        const auto tag = "latent" + std::to_string(h + 1);
        add(tag + "/recognition_weights", rm.nets[static_cast<std::size_t>(h)].weight_count());
        add(tag + "/log_variance", N);
        add(tag + "/prior_mean", cfg.lag);
        add(tag + "/log_prior_variance", cfg.lag);
    }
    for (const auto& b : param_layout(cfg, N))
        if (b.name.rfind("layer", 0) == 0) add(b.name, b.size);
    return blocks;
}

namespace detail {

inline Eigen::Index latent_block_size(const ModelConfig& cfg, Eigen::Index N) { return 2 * (N + cfg.lag); }

inline void put_net(VectorXd& v, Eigen::Index& p, const RecognitionNet& net) {
    for (const auto& W : net.hidden)
        for (Eigen::Index i = 0; i < W.size(); ++i) v[p++] = W.data()[i];
    for (Eigen::Index i = 0; i < net.output.size(); ++i) v[p++] = net.output[i];
}

inline void take_net(const VectorXd& v, Eigen::Index& p, RecognitionNet& net) {
    for (auto& W : net.hidden)
        for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = v[p++];
    for (Eigen::Index i = 0; i < net.output.size(); ++i) net.output[i] = v[p++];
}

}  // namespace detail

inline VectorXd pack_recognition(const RecognitionModel& rm) {
    const auto& cfg = rm.state.config;
    const auto N = rm.state.length();
    const auto blocks = recognition_layout(rm);
    VectorXd v(blocks.back().offset + blocks.back().size);
    const VectorXd base = pack(rm.state);
    Eigen::Index p = 0;
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        detail::put_net(v, p, rm.nets[static_cast<std::size_t>(h)]);
        // Skip the mean segment of the unconstrained layout.
        const Eigen::Index src = h * detail::latent_block_size(cfg, N) + N;
        v.segment(p, N + 2 * cfg.lag) = base.segment(src, N + 2 * cfg.lag);
        p += N + 2 * cfg.lag;
    }
    const Eigen::Index tail = cfg.hidden_layers * detail::latent_block_size(cfg, N);
    v.segment(p, base.size() - tail) = base.tail(base.size() - tail);
    return v;
}

/// `like` supplies shapes (network sizes, N, config).
inline RecognitionModel unpack_recognition(const VectorXd& v, const RecognitionModel& like) {
    const auto& cfg = like.state.config;
    const auto N = like.state.length();
    const auto blocks = recognition_layout(like);
    if (v.size() != blocks.back().offset + blocks.back().size)
        throw StructuralError("unpack_recognition: vector length does not match the layout");
    RecognitionModel rm = like;
    VectorXd base = pack(like.state);
    Eigen::Index p = 0;
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        detail::take_net(v, p, rm.nets[static_cast<std::size_t>(h)]);
        const Eigen::Index dst = h * detail::latent_block_size(cfg, N) + N;
        base.segment(dst, N + 2 * cfg.lag) = v.segment(p, N + 2 * cfg.lag);
        p += N + 2 * cfg.lag;
    }
    const Eigen::Index tail = cfg.hidden_layers * detail::latent_block_size(cfg, N);
    base.tail(base.size() - tail) = v.tail(base.size() - tail);
    rm.state = unpack(base, cfg, N);
    return rm;
}

struct RecognitionGradient {
    double value = 0.0;
    VectorXd packed;
};

/// Bound value and gradient in the recognition layout; the mean gradients are
/// back-propagated through the recurrent unrolling.
inline RecognitionGradient bound_with_recognition_grads(const RecognitionModel& rm, const VectorXd& u,
                                                        const VectorXd& y) {
    detail::check_recognition(rm, u);
    const auto& cfg = rm.state.config;
    const auto N = rm.state.length();
    const int H = cfg.hidden_layers;

    // Forward with caches.
    std::vector<VectorXd> means(static_cast<std::size_t>(H), VectorXd::Zero(N));
    std::vector<std::vector<VectorXd>> windows(static_cast<std::size_t>(H), std::vector<VectorXd>(N));
    std::vector<std::vector<std::vector<VectorXd>>> acts(static_cast<std::size_t>(H),
                                                         std::vector<std::vector<VectorXd>>(N));
    for (Eigen::Index t = 0; t < N; ++t) {
        for (int h = 0; h < H; ++h) {
            const auto hs = static_cast<std::size_t>(h);
            if (t < cfg.lag) {
                means[hs][t] = rm.state.latents[hs].prior_mean[t];
                continue;
            }
            windows[hs][t] = detail::mean_window(cfg, h, detail::window_time(rm.window, t), means, u);
            means[hs][t] = rm.nets[hs].forward(windows[hs][t], &acts[hs][t]);
        }
    }
    ModelState full = rm.state;
    for (int h = 0; h < H; ++h) full.latents[static_cast<std::size_t>(h)].mean = means[static_cast<std::size_t>(h)];
    BoundGradient bg = bound_grads(full, u, y);

    // Backward through time; layer h at time t feeds later times and layer
    // h+1 at the same or later times, so walk t downwards and h downwards.
    std::vector<RecognitionNet> dnets = rm.nets;
    for (auto& n : dnets) {
        for (auto& W : n.hidden) W.setZero();
        n.output.setZero();
    }
    std::vector<VectorXd> gmean(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) gmean[static_cast<std::size_t>(h)] = bg.grad.latents[static_cast<std::size_t>(h)].mean;
    for (Eigen::Index t = N - 1; t >= cfg.lag; --t) {
        for (int h = H - 1; h >= 0; --h) {
            const auto hs = static_cast<std::size_t>(h);
            const double gy = gmean[hs][t];
            if (gy == 0.0) continue;
            const auto& net = rm.nets[hs];
            const auto& a = acts[hs][t];
            auto& dn = dnets[hs];
            dn.output += gy * a.back();
            VectorXd delta = gy * net.output;
            for (int k = net.depth() - 1; k >= 0; --k) {
                const auto ks = static_cast<std::size_t>(k);
                delta = delta.cwiseProduct((1.0 - a[ks].array().square()).matrix());
                const VectorXd& below = k == 0 ? windows[hs][t] : a[ks - 1];
                dn.hidden[ks] += delta * below.transpose();
                delta = net.hidden[ks].transpose() * delta;
            }
            const Eigen::Index tw = detail::window_time(rm.window, t);
            for (int d = 0; d < cfg.input_dim(h); ++d) {
                const Source s = regressor_source(cfg, h, tw, d);
                if (s.kind == Source::Kind::Latent) gmean[static_cast<std::size_t>(s.layer)][s.index] += delta[d];
            }
        }
    }
    for (int h = 0; h < H; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        bg.grad.latents[hs].prior_mean += gmean[hs].head(cfg.lag);
    }

    const VectorXd base = pack_gradient(full, bg.grad);
    RecognitionGradient out;
    out.value = bg.value;
    const auto blocks = recognition_layout(rm);
    out.packed.resize(blocks.back().offset + blocks.back().size);
    Eigen::Index p = 0;
    for (int h = 0; h < H; ++h) {
        detail::put_net(out.packed, p, dnets[static_cast<std::size_t>(h)]);
        const Eigen::Index src = h * detail::latent_block_size(cfg, N) + N;
        out.packed.segment(p, N + 2 * cfg.lag) = base.segment(src, N + 2 * cfg.lag);
        p += N + 2 * cfg.lag;
    }
    const Eigen::Index tail = H * detail::latent_block_size(cfg, N);
    out.packed.tail(base.size() - tail) = base.tail(base.size() - tail);
    return out;
}

}  // namespace rgp
