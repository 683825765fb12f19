#include <set>

#include <gtest/gtest.h>

#include "rgp/model.hpp"
#include "test_support.hpp"

using namespace rgp;

namespace {

ModelConfig small_config(int H, int L, int Lu, int M) {
    ModelConfig c;
    c.hidden_layers = H;
    c.lag = L;
    c.input_lag = Lu;
    c.num_inducing = M;
    return c;
}

// Distinct values so every regressor entry identifies its source.
ModelState tagged_state(const ModelConfig& cfg, Eigen::Index N, VectorXd& u) {
    auto [uu, y] = rgp::testing::random_sequence(N, 1);
    u = VectorXd::LinSpaced(N, 1000.0, 1000.0 + static_cast<double>(N - 1));
    ModelState s = init_model(cfg, u, y);
    for (int h = 0; h < cfg.hidden_layers; ++h)
        for (Eigen::Index i = 0; i < N; ++i) {
            s.latents[h].mean[i] = 100.0 * (h + 1) + static_cast<double>(i);
            s.latents[h].variance[i] = 0.001 * (100.0 * (h + 1) + static_cast<double>(i));
        }
    return s;
}

}  // namespace

TEST(Config, Validation) {
    EXPECT_NO_THROW(small_config(1, 1, 1, 1).validate());
    EXPECT_THROW(small_config(0, 2, 2, 3).validate(), StructuralError);
    EXPECT_THROW(small_config(1, 0, 2, 3).validate(), StructuralError);
    EXPECT_THROW(small_config(1, 2, 0, 3).validate(), StructuralError);
    EXPECT_THROW(small_config(1, 2, 2, 0).validate(), StructuralError);
}

TEST(Config, RegressorDimensions) {
    const auto c = small_config(3, 4, 2, 5);
    EXPECT_EQ(c.input_dim(0), 6);
    EXPECT_EQ(c.input_dim(1), 8);
    EXPECT_EQ(c.input_dim(2), 8);
    EXPECT_EQ(c.input_dim(3), 4);
}

TEST(Regressors, FirstLayerWindow) {
    // Third time step (t = 2): latents 1, 0 and inputs 1, 0.
    const auto cfg = small_config(1, 2, 2, 3);
    VectorXd u;
    const auto s = tagged_state(cfg, 6, u);
    const auto q = assemble_regressors(s, 0, u);
    ASSERT_EQ(q.rows(), 4);
    ASSERT_EQ(q.cols(), 4);
    EXPECT_EQ(q.means(0, 0), s.latents[0].mean[1]);
    EXPECT_EQ(q.means(0, 1), s.latents[0].mean[0]);
    EXPECT_EQ(q.means(0, 2), u[1]);
    EXPECT_EQ(q.means(0, 3), u[0]);
    EXPECT_EQ(q.variances(0, 0), s.latents[0].variance[1]);
    EXPECT_EQ(q.variances(0, 1), s.latents[0].variance[0]);
    EXPECT_EQ(q.variances(0, 2), 0.0);
    EXPECT_EQ(q.variances(0, 3), 0.0);
}

TEST(Regressors, OutputLayerWindow) {
    const auto cfg = small_config(1, 2, 2, 3);
    VectorXd u;
    const auto s = tagged_state(cfg, 6, u);
    const auto q = assemble_regressors(s, 1, u);
    ASSERT_EQ(q.cols(), 2);
    EXPECT_EQ(q.means(0, 0), s.latents[0].mean[2]);
    EXPECT_EQ(q.means(0, 1), s.latents[0].mean[1]);
}

TEST(Regressors, HiddenLayerWindow) {
    const auto cfg = small_config(2, 2, 2, 3);
    VectorXd u;
    const auto s = tagged_state(cfg, 6, u);
    const auto q = assemble_regressors(s, 1, u);
    ASSERT_EQ(q.cols(), 4);
    EXPECT_EQ(q.means(0, 0), s.latents[1].mean[1]);
    EXPECT_EQ(q.means(0, 1), s.latents[1].mean[0]);
    EXPECT_EQ(q.means(0, 2), s.latents[0].mean[2]);
    EXPECT_EQ(q.means(0, 3), s.latents[0].mean[1]);
}

TEST(Regressors, InputsBeforeTheStartReadAsZero) {
    const auto cfg = small_config(1, 1, 3, 2);
    VectorXd u;
    const auto s = tagged_state(cfg, 5, u);
    const auto q = assemble_regressors(s, 0, u);
    // t = 1: u_0, then two entries before the start.
    EXPECT_EQ(q.means(0, 1), u[0]);
    EXPECT_EQ(q.means(0, 2), 0.0);
    EXPECT_EQ(q.means(0, 3), 0.0);
    EXPECT_EQ(q.variances.col(3).sum(), 0.0);
}

TEST(Regressors, VarianceColumnsFollowTheLayerCaseRule) {
    const auto cfg = small_config(3, 2, 3, 3);
    VectorXd u;
    const auto s = tagged_state(cfg, 9, u);
    for (int l = 0; l <= 3; ++l) {
        const auto q = assemble_regressors(s, l, u);
        EXPECT_EQ(q.cols(), cfg.input_dim(l));
        for (int d = 0; d < q.cols(); ++d) {
            const bool deterministic = l == 0 && d >= cfg.lag;
            if (deterministic)
                EXPECT_EQ(q.variances.col(d).cwiseAbs().maxCoeff(), 0.0) << "layer " << l << " col " << d;
            else
                EXPECT_GT(q.variances.col(d).minCoeff(), 0.0) << "layer " << l << " col " << d;
        }
        // Means identify the source layer: hundreds digit.
        for (int d = 0; d < q.cols(); ++d) {
            if (l == 0 && d >= cfg.lag) continue;
            const int expect = l == 3 ? 2 : (d < cfg.lag ? l : l - 1);
            for (Eigen::Index r = 0; r < q.rows(); ++r)
                EXPECT_EQ(static_cast<int>(q.means(r, d) / 100.0) - 1, expect);
        }
    }
}

TEST(Regressors, HiddenLatentsAppearInTwoLayers) {
    const auto cfg = small_config(3, 2, 2, 3);
    const Eigen::Index N = 10;
    for (int h = 0; h < 3; ++h) {
        std::set<int> layers;
        for (int l = 0; l <= 3; ++l)
            for (Eigen::Index t = cfg.lag; t < N; ++t)
                for (int d = 0; d < cfg.input_dim(l); ++d) {
                    const auto src = regressor_source(cfg, l, t, d);
                    if (src.kind == Source::Kind::Latent && src.layer == h && src.index == 4) layers.insert(l);
                }
        EXPECT_EQ(layers, (std::set<int>{h, h + 1})) << "latent layer " << h;
    }
}

TEST(Regressors, TooShortSequenceIsStructural) {
    const auto cfg = small_config(1, 3, 2, 2);
    VectorXd u = VectorXd::Zero(3), y = VectorXd::Zero(3);
    EXPECT_THROW(init_model(cfg, u, y), StructuralError);
}

TEST(Init, PolicyValues) {
    const auto cfg = small_config(2, 2, 3, 4);
    auto [u, y] = rgp::testing::random_sequence(20, 4);
    const auto s = init_model(cfg, u, y);
    EXPECT_NO_THROW(s.validate());
    for (const auto& lat : s.latents) {
        EXPECT_EQ(lat.mean, y);
        EXPECT_TRUE((lat.variance.array() == 0.01).all());
        EXPECT_EQ(lat.prior_mean, y.head(2));
        EXPECT_TRUE((lat.prior_variance.array() == 1.0).all());
    }
    // Inducing rows are drawn from the initial regressor rows.
    for (int l = 0; l < cfg.num_layers(); ++l) {
        const auto q = assemble_regressors(s, l, u);
        const auto& Z = s.layers[l].inducing;
        for (Eigen::Index m = 0; m < Z.rows(); ++m) {
            bool found = false;
            for (Eigen::Index r = 0; r < q.rows() && !found; ++r) found = (q.means.row(r) - Z.row(m)).norm() == 0.0;
            EXPECT_TRUE(found) << "layer " << l << " inducing row " << m;
        }
    }
}

TEST(Init, SeededInducingChoice) {
    const auto cfg = small_config(1, 2, 2, 4);
    auto [u, y] = rgp::testing::random_sequence(30, 5);
    InitOptions a, b;
    a.seed = 1;
    b.seed = 2;
    EXPECT_EQ(init_model(cfg, u, y, a).layers[0].inducing, init_model(cfg, u, y, a).layers[0].inducing);
    EXPECT_NE(init_model(cfg, u, y, a).layers[0].inducing, init_model(cfg, u, y, b).layers[0].inducing);
}

TEST(Pack, LengthFormula) {
    for (const auto& cfg : {small_config(1, 2, 2, 3), small_config(2, 3, 1, 5), small_config(3, 1, 4, 2)}) {
        const Eigen::Index N = 17;
        Eigen::Index expect = cfg.hidden_layers * (2 * N + 2 * cfg.lag);
        for (int l = 0; l < cfg.num_layers(); ++l) {
            const int D = cfg.input_dim(l);
            expect += 1 + D + 1 + cfg.num_inducing * D;
        }
        EXPECT_EQ(param_count(cfg, N), expect);
        auto [u, y] = rgp::testing::random_sequence(N, 6);
        EXPECT_EQ(pack(init_model(cfg, u, y)).size(), expect);
    }
}

TEST(Pack, RoundTrip) {
    const auto cfg = small_config(2, 2, 3, 4);
    auto [u, y] = rgp::testing::random_sequence(15, 7);
    const auto s = rgp::testing::random_state(cfg, u, y, 3);
    const VectorXd v = pack(s);
    const auto back = unpack(v, cfg, 15);
    EXPECT_EQ(pack(back), v);
    for (int h = 0; h < 2; ++h) {
        EXPECT_EQ(back.latents[h].mean, s.latents[h].mean);
        EXPECT_LT((back.latents[h].variance - s.latents[h].variance).cwiseAbs().maxCoeff(),
                  1e-15 * s.latents[h].variance.maxCoeff());
    }
    for (int l = 0; l < 3; ++l) EXPECT_EQ(back.layers[l].inducing, s.layers[l].inducing);
}

TEST(Pack, NegativeEntriesGiveValidVariances) {
    const auto cfg = small_config(1, 2, 2, 3);
    const Eigen::Index N = 8;
    const VectorXd v = VectorXd::Constant(param_count(cfg, N), -3.0);
    const auto s = unpack(v, cfg, N);
    EXPECT_NO_THROW(s.validate());
    EXPECT_GT(s.latents[0].variance.minCoeff(), 0.0);
    EXPECT_GT(s.layers[1].noise_variance, 0.0);
}

TEST(Pack, LengthMismatchIsStructural) {
    const auto cfg = small_config(1, 2, 2, 3);
    EXPECT_THROW(unpack(VectorXd::Zero(param_count(cfg, 8) + 1), cfg, 8), StructuralError);
}

TEST(Pack, LayoutCoversTheVector) {
    const auto cfg = small_config(2, 2, 2, 3);
    const auto blocks = param_layout(cfg, 9);
    Eigen::Index pos = 0;
    for (const auto& b : blocks) {
        EXPECT_EQ(b.offset, pos) << b.name;
        pos += b.size;
    }
    EXPECT_EQ(pos, param_count(cfg, 9));
    EXPECT_EQ(blocks.front().name, "latent1/mean");
    EXPECT_EQ(blocks.back().name, "layer3/inducing");
}
