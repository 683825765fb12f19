#pragma once

// Limited-memory BFGS maximizer with backtracking (Armijo) line search.
// Accepted iterates never decrease the objective. Coordinates with a zero
// mask entry are held fixed.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rgp/errors.hpp"

namespace rgp {

using Eigen::VectorXd;

/// Returns f(x) and writes df/dx into `grad`. May throw NumericalError, which
/// the line search treats like a non-finite value.
using Objective = std::function<double(const VectorXd& x, VectorXd& grad)>;

struct TracePoint {
    long evaluation = 0;
    double bound = 0.0;
    double grad_norm = 0.0;

    bool operator==(const TracePoint&) const = default;
};

struct OptimizerOptions {
    long max_evals = 1000;
    double grad_tol = 1e-3;
    int history = 10;
    double max_step = 2.0;  // max |dx_i| of a trial step
    double armijo = 1e-4;
    int max_backtracks = 30;
};

struct OptimizeResult {
    VectorXd x;
    double value = -std::numeric_limits<double>::infinity();
    VectorXd grad;
    long evals = 0;
    std::vector<TracePoint> trace;
    std::string stop_reason;
    bool converged = false;
};

namespace detail {

inline bool finite_all(const VectorXd& v) { return v.allFinite(); }

}  // namespace detail

/// `mask` may be empty (all free). `eval_offset` shifts the evaluation
/// indices written to the trace so that consecutive phases share a counter.
inline OptimizeResult maximize(const Objective& f, const VectorXd& x0, const OptimizerOptions& opts,
                               const VectorXd& mask = VectorXd(), long eval_offset = 0) {
    if (opts.max_evals < 1) throw StructuralError("optimizer: max_evals must be positive");
    const auto n = x0.size();
    const bool masked = mask.size() == n;
    if (mask.size() != 0 && !masked) throw StructuralError("optimizer: mask length mismatch");
    auto apply_mask = [&](VectorXd g) {
        if (masked) g = g.cwiseProduct(mask);
        return g;
    };

    OptimizeResult r;
    r.x = x0;
    VectorXd g(n);
    r.value = f(r.x, g);
    r.evals = 1;
    if (!std::isfinite(r.value) || !detail::finite_all(g))
        throw TrainingError("optimizer: objective is not finite at the starting point");
    g = apply_mask(g);
    r.grad = g;
    r.trace.push_back({eval_offset + r.evals, r.value, g.norm()});

    // Minimization view: phi = -f, gradient -g.
    std::deque<VectorXd> S, Y;
    std::deque<double> rho;

    while (true) {
        const double gnorm = g.norm();
        if (gnorm < opts.grad_tol) {
            r.stop_reason = "gradient norm below tolerance";
            r.converged = true;
            break;
        }
        if (r.evals >= opts.max_evals) {
            r.stop_reason = "evaluation budget exhausted";
            break;
        }

        // Two-loop recursion on -g gives a descent direction for phi; d is
        // an ascent direction for f.
        VectorXd q = -g;
        std::vector<double> alpha(S.size());
        for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
            alpha[static_cast<std::size_t>(i)] = rho[static_cast<std::size_t>(i)] * S[static_cast<std::size_t>(i)].dot(q);
            q -= alpha[static_cast<std::size_t>(i)] * Y[static_cast<std::size_t>(i)];
        }
        double gamma = 1.0;
        if (!S.empty()) gamma = S.back().dot(Y.back()) / Y.back().squaredNorm();
        else gamma = 1.0 / std::max(1.0, gnorm);
        q *= gamma;
        for (std::size_t i = 0; i < S.size(); ++i) {
            const double b = rho[i] * Y[i].dot(q);
            q += (alpha[i] - b) * S[i];
        }
        VectorXd d = apply_mask(-q);
        double slope = g.dot(d);
        if (!(slope > 0.0)) {
            // Curvature pairs went stale; fall back to the gradient.
            S.clear(), Y.clear(), rho.clear();
            d = g / std::max(1.0, gnorm);
            slope = g.dot(d);
        }
        const double biggest = d.cwiseAbs().maxCoeff();
        if (biggest > opts.max_step) {
            d *= opts.max_step / biggest;
            slope = g.dot(d);
        }

        double step = 1.0;
        bool accepted = false;
        VectorXd x_new, g_new(n);
        double f_new = 0.0;
        for (int bt = 0; bt <= opts.max_backtracks && r.evals < opts.max_evals; ++bt) {
            x_new = r.x + step * d;
            bool ok = true;
            try {
                f_new = f(x_new, g_new);
            } catch (const NumericalError&) {
                ok = false;
            }
            ++r.evals;
            ok = ok && std::isfinite(f_new) && detail::finite_all(g_new);
            if (ok && f_new >= r.value + opts.armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!S.empty()) {
                S.clear(), Y.clear(), rho.clear();
                continue;
            }
            r.stop_reason = r.evals >= opts.max_evals ? "evaluation budget exhausted" : "line search failed";
            break;
        }

        g_new = apply_mask(g_new);
        const VectorXd s = x_new - r.x;
        const VectorXd yv = g - g_new;  // gradient change of phi = -f
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            S.push_back(s), Y.push_back(yv), rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > opts.history) S.pop_front(), Y.pop_front(), rho.pop_front();
        }
        r.x = std::move(x_new);
        r.value = f_new;
        g = g_new;
        r.grad = g;
        r.trace.push_back({eval_offset + r.evals, r.value, g.norm()});
    }
    return r;
}

}  // namespace rgp
