#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "rgp/data.hpp"
#include "rgp/gpnarx.hpp"
#include "test_support.hpp"

using namespace rgp;
using rgp::testing::naive_kern;
using rgp::testing::relative_error;

namespace {

double naive_evidence(const MatrixXd& X, const VectorXd& t, double sf2, const VectorXd& w, double noise) {
    const auto n = X.rows();
    MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            K(i, j) = naive_kern(X.row(i).transpose(), X.row(j).transpose(), sf2, w) + (i == j ? noise : 0.0);
    const double logdet = std::log(K.determinant());
    return -0.5 * t.dot(K.inverse() * t) - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

GpNarxModel manual_model(const MatrixXd& X, const VectorXd& t, const KernelParams& kp, double noise) {
    GpNarxModel m;
    m.lag = 1;
    m.input_lag = static_cast<int>(X.cols()) - 1;
    m.kernel = kp;
    m.noise_variance = noise;
    m.X = X;
    m.targets = t;
    m.refresh();
    return m;
}

}  // namespace

TEST(GpNarx, RegressorRowsFromLaggedHistory) {
    VectorXd u(5), y(5);
    u << 10, 11, 12, 13, 14;
    y << 0, 1, 2, 3, 4;
    const auto [X, t] = narx_dataset(u, y, 2, 1);
    ASSERT_EQ(X.rows(), 3);
    ASSERT_EQ(X.cols(), 3);
    EXPECT_EQ(X.row(0), (Eigen::RowVector3d() << 1, 0, 11).finished());
    EXPECT_EQ(X.row(2), (Eigen::RowVector3d() << 3, 2, 13).finished());
    EXPECT_EQ(t, (VectorXd(3) << 2, 3, 4).finished());
    EXPECT_THROW(narx_dataset(u, y, 0, 1), StructuralError);
    EXPECT_THROW(narx_dataset(u.head(4), y, 1, 1), StructuralError);
    EXPECT_THROW(narx_dataset(u.head(3), y.head(3), 2, 2), StructuralError);
}

TEST(GpNarx, EvidenceMatchesNaiveTranscription) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd X(12, 3);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
    VectorXd t(12);
    for (auto& v : t) v = nd(rng);
    const VectorXd w = (VectorXd(3) << 0.6, 1.4, 0.3).finished();
    const auto ev = log_evidence(X, t, KernelParams(1.7, w), 0.2);
    EXPECT_LT(relative_error(ev.value, naive_evidence(X, t, 1.7, w, 0.2)), 1e-8);
}

TEST(GpNarx, EvidenceGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd X(10, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
    VectorXd t(10);
    for (auto& v : t) v = nd(rng);
    VectorXd theta(4);
    theta << std::log(1.3), std::log(0.7), std::log(1.9), std::log(0.15);
    auto value = [&](const VectorXd& th) {
        return log_evidence(X, t, KernelParams(std::exp(th[0]), th.segment(1, 2).array().exp().matrix()),
                            std::exp(th[3]))
            .value;
    };
    const auto ev = log_evidence(X, t, KernelParams(1.3, (VectorXd(2) << 0.7, 1.9).finished()), 0.15);
    const VectorXd fd = rgp::testing::central_differences(value, theta, 1e-5);
    for (int i = 0; i < 4; ++i) EXPECT_LT(relative_error(ev.grad[i], fd[i]), 1e-5) << "component " << i;
}

TEST(GpNarx, EvidencePrefersTheGeneratingHyperparameters) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    const Eigen::Index n = 120;
    MatrixXd X(n, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = 2.0 * nd(rng);
    const KernelParams truth(1.5, (VectorXd(2) << 0.8, 0.4).finished());
    const double noise = 0.05;
    MatrixXd K = gram_raw(X, truth, 0.0);
    K.diagonal().array() += noise;
    Eigen::LLT<MatrixXd> llt(K);
    VectorXd z(n);
    for (auto& v : z) v = nd(rng);
    const VectorXd t = llt.matrixL() * z;
    const double at_truth = log_evidence(X, t, truth, noise).value;
    EXPECT_GT(at_truth, log_evidence(X, t, KernelParams(6.0, truth.ard_weights), noise).value);
    EXPECT_GT(at_truth, log_evidence(X, t, KernelParams(1.5, truth.ard_weights * 10.0), noise).value);
    EXPECT_GT(at_truth, log_evidence(X, t, truth, 0.5).value);
}

TEST(GpNarx, InterpolatesAtLowNoiseAndRevertsFarAway) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd X(8, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = 2.0 * nd(rng);
    VectorXd t(8);
    for (auto& v : t) v = nd(rng);
    const KernelParams kp(1.2, VectorXd::Constant(2, 1.0));
    const auto m = manual_model(X, t, kp, 1e-8);
    for (Eigen::Index i = 0; i < 8; ++i) {
        const auto p = predict_gpnarx(m, X.row(i).transpose());
        EXPECT_NEAR(p.mean, t[i], 1e-5);
        EXPECT_LT(p.variance, 1e-6);
    }
    const auto far = predict_gpnarx(m, VectorXd::Constant(2, 1e3));
    EXPECT_NEAR(far.mean, 0.0, 1e-12);
    EXPECT_NEAR(far.variance, 1.2, 1e-12);
    EXPECT_NEAR(far.observed_variance, 1.2 + 1e-8, 1e-12);
    EXPECT_THROW(predict_gpnarx(m, VectorXd::Zero(3)), StructuralError);
}

TEST(GpNarx, TwoPointHandComputation) {
    MatrixXd X(2, 2);
    X << 0.0, 0.0, 1.0, 0.0;
    const VectorXd t = (VectorXd(2) << 1.0, -1.0).finished();
    const double sf2 = 2.0, noise = 0.5;
    const auto m = manual_model(X, t, KernelParams(sf2, VectorXd::Ones(2)), noise);
    const VectorXd x = (VectorXd(2) << 0.5, 0.0).finished();
    // k(x, x_i) = 2 exp(-1/8) for both; K01 = 2 exp(-1/2).
    const double ks = sf2 * std::exp(-0.125), k01 = sf2 * std::exp(-0.5), a = sf2 + noise;
    const double det = a * a - k01 * k01;
    const double mean = ks / det * ((a - k01) * t[0] + (a - k01) * t[1]);
    const double var = sf2 - ks * ks * 2.0 * (a - k01) / det;
    const auto p = predict_gpnarx(m, x);
    EXPECT_NEAR(p.mean, mean, 1e-14);
    EXPECT_NEAR(p.mean, 0.0, 1e-14);
    EXPECT_NEAR(p.variance, var, 1e-14);
}

TEST(GpNarx, SimulationBookkeeping) {
    auto [train, test] = generate_synthetic(SyntheticSpec{}, 5, 80, 40);
    const auto d = normalize(train, test);
    GpNarxOptions o;
    o.max_evals = 100;
    const auto m = fit_gpnarx(d.train.u, d.train.y, 3, 2, o);
    const VectorXd seed = d.test.y.head(3);
    const VectorXd sim = simulate_gpnarx(m, d.test.u, seed);
    ASSERT_EQ(sim.size(), 40 - 3);
    const VectorXd x0 = (VectorXd(5) << seed[2], seed[1], seed[0], d.test.u[2], d.test.u[1]).finished();
    EXPECT_EQ(sim[0], predict_gpnarx(m, x0).mean);
    const VectorXd x1 = (VectorXd(5) << sim[0], seed[2], seed[1], d.test.u[3], d.test.u[2]).finished();
    EXPECT_EQ(sim[1], predict_gpnarx(m, x1).mean);
    EXPECT_EQ(sim, simulate_gpnarx(m, d.test.u, seed));
    EXPECT_THROW(simulate_gpnarx(m, d.test.u, seed.head(2)), StructuralError);
}

TEST(GpNarx, FitRaisesTheEvidence) {
    auto [train, test] = generate_synthetic(SyntheticSpec{}, 6, 60, 10);
    const auto d = normalize(train, test);
    GpNarxOptions o;
    o.max_evals = 150;
    o.restarts = 2;
    const auto m = fit_gpnarx(d.train.u, d.train.y, 2, 2, o);
    const auto [X, t] = narx_dataset(d.train.u, d.train.y, 2, 2);
    const double init = log_evidence(X, t, KernelParams(1.0, VectorXd::Constant(4, 0.25)), 0.1).value;
    EXPECT_GT(log_evidence(X, t, m.kernel, m.noise_variance).value, init);
    const auto again = fit_gpnarx(d.train.u, d.train.y, 2, 2, o);
    EXPECT_EQ(again.kernel.ard_weights, m.kernel.ard_weights);
    EXPECT_EQ(again.noise_variance, m.noise_variance);
}
