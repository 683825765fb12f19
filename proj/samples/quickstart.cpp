// Fits a small one-layer REVARB model to the synthetic system and prints a
// few free-simulation steps with their predictive intervals.

#include <cmath>
#include <cstdio>

#include "rgp/rgp.hpp"

int main() {
    auto [train, test] = rgp::generate_synthetic(rgp::SyntheticSpec{}, 7, 150, 150);
    const auto data = rgp::normalize(train, test);

    rgp::ModelConfig cfg;
    cfg.hidden_layers = 1;
    cfg.lag = 2;
    cfg.input_lag = 2;
    cfg.num_inducing = 15;

    rgp::TrainOptions opts;
    opts.max_evals = 300;
    opts.seed = 7;
    const auto fr = rgp::fit(cfg, data.train.u, data.train.y, opts);
    std::printf("bound %.4f after %zu accepted steps (%s)\n", fr.bound, fr.trace.points.size(), fr.stop_reason.c_str());

    const auto table = rgp::simulate_revarb(fr.state, data.train.u, data.train.y, data.stats, test);
    std::printf("free-simulation rmse on the test sequence: %.4f\n", table.rmse);
    std::printf("%5s %10s %10s %10s\n", "step", "truth", "mean", "2 sd");
    for (std::size_t i = 0; i < 10; ++i)
        std::printf("%5ld %10.4f %10.4f %10.4f\n", static_cast<long>(table.steps[i]), table.truth[i], table.mean[i],
                    2.0 * std::sqrt(table.variance[i]));
}
