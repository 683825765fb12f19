#pragma once

// Bound maximization: two phases (variational variances frozen, then joint),
// seeded restarts, and a finite-difference gradient audit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/bound.hpp"
#include "rgp/errors.hpp"
#include "rgp/model.hpp"
#include "rgp/optimizer.hpp"
#include "rgp/recognition.hpp"

namespace rgp {

struct TrainOptions {
    long max_evals = 2000;
    double convergence_tol = 1e-3;
    int restarts = 1;
    std::uint64_t seed = 0;
    long fixed_variances_phase = -1;  // < 0: 10% of max_evals
    double restart_spread = 0.5;      // std of log-hyperparameter perturbations
    int history = 10;

    void validate() const {
        if (max_evals < 1) throw StructuralError("train options: max_evals must be positive");
        if (restarts < 1) throw StructuralError("train options: restarts must be >= 1");
        if (!(convergence_tol > 0.0)) throw StructuralError("train options: convergence_tol must be positive");
        if (fixed_variances_phase > max_evals)
            throw StructuralError("train options: fixed_variances_phase exceeds max_evals");
    }

    long frozen_budget() const { return fixed_variances_phase >= 0 ? fixed_variances_phase : max_evals / 10; }
};

struct TrainTrace {
    std::vector<TracePoint> points;

    bool monotone() const {
        for (std::size_t i = 1; i < points.size(); ++i)
            if (points[i].bound < points[i - 1].bound) return false;
        return true;
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write trace to " + path);
        out << "evaluation,bound,grad_norm\n";
        char buf[96];
        for (const auto& p : points) {
            std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", p.evaluation, p.bound, p.grad_norm);
            out << buf;
        }
    }
};

struct RestartOutcome {
    bool ok = false;
    double bound = -std::numeric_limits<double>::infinity();
    std::string message;
};

struct FitResult {
    ModelState state;
    TrainTrace trace;
    double bound = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
    std::string stop_reason;
    int best_restart = 0;
    std::vector<RestartOutcome> restarts;
};

struct RecognitionFitResult {
    RecognitionModel model;
    TrainTrace trace;
    double bound = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
    std::string stop_reason;
    int best_restart = 0;
    std::vector<RestartOutcome> restarts;
};

namespace detail {

inline std::uint64_t restart_seed(std::uint64_t seed, int restart) {
    // splitmix64 step so neighbouring seeds decorrelate
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(restart + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline VectorXd variance_mask(const std::vector<ParamBlock>& layout, Eigen::Index n) {
    VectorXd mask = VectorXd::Ones(n);
    for (const auto& b : layout) {
        const std::string tail = "/log_variance";
        if (b.name.size() >= tail.size() && b.name.compare(b.name.size() - tail.size(), tail.size(), tail) == 0)
            mask.segment(b.offset, b.size).setZero();
    }
    return mask;
}

struct PhasedResult {
    OptimizeResult final;
    std::vector<TracePoint> trace;
};

inline PhasedResult run_phases(const Objective& f, const VectorXd& x0, const std::vector<ParamBlock>& layout,
                               const TrainOptions& opts) {
    OptimizerOptions oo;
    oo.grad_tol = opts.convergence_tol;
    oo.history = opts.history;
    PhasedResult out;
    VectorXd x = x0;
    long used = 0;
    const long frozen = std::min(opts.frozen_budget(), opts.max_evals - 1);
    if (frozen > 0) {
        oo.max_evals = frozen;
        auto r = maximize(f, x, oo, variance_mask(layout, x.size()), 0);
        used = r.evals;
        x = r.x;
        out.trace = r.trace;
    }
    oo.max_evals = std::max(1L, opts.max_evals - used);
    out.final = maximize(f, x, oo, VectorXd(), used);
    out.trace.insert(out.trace.end(), out.final.trace.begin(), out.final.trace.end());
    out.final.evals += used;
    return out;
}

inline void perturb_kernels(ModelState& s, double spread, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, spread);
    for (auto& lp : s.layers) {
        lp.kernel.signal_variance *= std::exp(nd(rng));
        for (Eigen::Index d = 0; d < lp.kernel.dim(); ++d) lp.kernel.ard_weights[d] *= std::exp(nd(rng));
    }
}

/// Restart r's starting state: restart 0 is the plain initialization.
inline ModelState restart_state(const ModelConfig& cfg, const VectorXd& u, const VectorXd& y,
                                const TrainOptions& opts, int r) {
    InitOptions init;
    init.seed = restart_seed(opts.seed, r);
    ModelState s = init_model(cfg, u, y, init);
    if (r > 0) {
        std::mt19937_64 rng(init.seed ^ 0x5bd1e995ull);
        perturb_kernels(s, opts.restart_spread, rng);
    }
    return s;
}

}  // namespace detail

inline FitResult fit(const ModelConfig& cfg, const VectorXd& u, const VectorXd& y, const TrainOptions& opts = {}) {
    opts.validate();
    cfg.validate();
    const auto N = y.size();
    const auto layout = param_layout(cfg, N);
    FitResult best;
    bool have = false;
    for (int r = 0; r < opts.restarts; ++r) {
        RestartOutcome outcome;
        try {
            const ModelState s0 = detail::restart_state(cfg, u, y, opts, r);
            Objective f = [&](const VectorXd& x, VectorXd& g) {
                const ModelState s = unpack(x, cfg, N);
                auto bg = bound_grads(s, u, y);
                g = bg.packed;
                return bg.value;
            };
            auto pr = detail::run_phases(f, pack(s0), layout, opts);
            outcome.ok = true;
            outcome.bound = pr.final.value;
            outcome.message = pr.final.stop_reason;
            if (!have || pr.final.value > best.bound) {
                have = true;
                best.state = unpack(pr.final.x, cfg, N);
                best.trace.points = std::move(pr.trace);
                best.bound = pr.final.value;
                best.grad_norm = pr.final.grad.norm();
                best.converged = pr.final.converged;
                best.stop_reason = pr.final.stop_reason;
                best.best_restart = r;
            }
        } catch (const NumericalError& e) {
            outcome.message = e.what();
        } catch (const TrainingError& e) {
            outcome.message = e.what();
        }
        best.restarts.push_back(outcome);
    }
    if (!have) {
        std::string msg = "training failed in every restart:";
        for (std::size_t r = 0; r < best.restarts.size(); ++r)
            msg += " [" + std::to_string(r) + "] " + best.restarts[r].message;
        throw TrainingError(msg);
    }
    return best;
}

inline RecognitionFitResult fit_recognition(const ModelConfig& cfg, const VectorXd& u, const VectorXd& y,
                                            const RecognitionOptions& ropts, const TrainOptions& opts = {}) {
    opts.validate();
    cfg.validate();
    RecognitionFitResult best;
    bool have = false;
    for (int r = 0; r < opts.restarts; ++r) {
        RestartOutcome outcome;
        try {
            const ModelState s0 = detail::restart_state(cfg, u, y, opts, r);
            const RecognitionModel rm0 = init_recognition(s0, ropts, detail::restart_seed(opts.seed, r) + 1);
            const auto layout = recognition_layout(rm0);
            Objective f = [&](const VectorXd& x, VectorXd& g) {
                const RecognitionModel rm = unpack_recognition(x, rm0);
                auto rg = bound_with_recognition_grads(rm, u, y);
                g = rg.packed;
                return rg.value;
            };
            auto pr = detail::run_phases(f, pack_recognition(rm0), layout, opts);
            outcome.ok = true;
            outcome.bound = pr.final.value;
            outcome.message = pr.final.stop_reason;
            if (!have || pr.final.value > best.bound) {
                have = true;
                best.model = unpack_recognition(pr.final.x, rm0);
                best.trace.points = std::move(pr.trace);
                best.bound = pr.final.value;
                best.grad_norm = pr.final.grad.norm();
                best.converged = pr.final.converged;
                best.stop_reason = pr.final.stop_reason;
                best.best_restart = r;
            }
        } catch (const NumericalError& e) {
            outcome.message = e.what();
        } catch (const TrainingError& e) {
            outcome.message = e.what();
        }
        best.restarts.push_back(outcome);
    }
    if (!have) {
        std::string msg = "recognition training failed in every restart:";
        for (std::size_t r = 0; r < best.restarts.size(); ++r)
            msg += " [" + std::to_string(r) + "] " + best.restarts[r].message;
        throw TrainingError(msg);
    }
    best.model.state = materialize(best.model, u);
    return best;
}

struct BlockCheck {
    std::string name;
    double worst_error = 0.0;
    Eigen::Index worst_index = 0;  // offset within the block
    double analytic = 0.0;         // values at the worst index
    double numeric = 0.0;
    bool flagged = false;
};

struct GradCheckReport {
    std::vector<BlockCheck> blocks;
    double tolerance = 0.0;

    double worst() const {
        double w = 0.0;
        for (const auto& b : blocks) w = std::max(w, b.worst_error);
        return w;
    }
    std::vector<std::string> flagged() const {
        std::vector<std::string> out;
        for (const auto& b : blocks)
            if (b.flagged) out.push_back(b.name);
        return out;
    }
};

namespace detail {

inline GradCheckReport check_blocks(const std::function<double(const VectorXd&)>& f, const VectorXd& analytic,
                                    const VectorXd& x, const std::vector<ParamBlock>& layout, double step,
                                    double tol) {
    GradCheckReport rep;
    rep.tolerance = tol;
    VectorXd xp = x;
    for (const auto& b : layout) {
        BlockCheck bc;
        bc.name = b.name;
        for (Eigen::Index k = 0; k < b.size; ++k) {
            const Eigen::Index i = b.offset + k;
            const double orig = xp[i];
            xp[i] = orig + step;
            const double fp = f(xp);
            xp[i] = orig - step;
            const double fm = f(xp);
            xp[i] = orig;
            const double num = (fp - fm) / (2.0 * step);
            const double err =
                std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), 1e-6});
            if (err > bc.worst_error || k == 0) {
                bc.worst_error = err;
                bc.worst_index = k;
                bc.analytic = analytic[i];
                bc.numeric = num;
            }
        }
        bc.flagged = bc.worst_error > tol;
        rep.blocks.push_back(std::move(bc));
    }
    return rep;
}

}  // namespace detail

/// Compares bound_grads against central differences in the packed
/// (log-transformed) coordinates.
inline GradCheckReport grad_check(const ModelState& s, const VectorXd& u, const VectorXd& y, double step = 1e-5,
                                  double tolerance = 1e-4) {
    const auto N = s.length();
    const auto bg = bound_grads(s, u, y);
    auto f = [&](const VectorXd& x) { return lower_bound(unpack(x, s.config, N), u, y).total; };
    return detail::check_blocks(f, bg.packed, pack(s), param_layout(s.config, N), step, tolerance);
}

inline GradCheckReport grad_check(const RecognitionModel& rm, const VectorXd& u, const VectorXd& y,
                                  double step = 1e-5, double tolerance = 1e-4) {
    const auto rg = bound_with_recognition_grads(rm, u, y);
    auto f = [&](const VectorXd& x) { return bound_with_recognition(unpack_recognition(x, rm), u, y); };
    return detail::check_blocks(f, rg.packed, pack_recognition(rm), recognition_layout(rm), step, tolerance);
}

}  // namespace rgp
