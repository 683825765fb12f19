#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rgp/data.hpp"

using namespace rgp;

namespace {

SequenceDataset parse(const std::string& text) {
    std::istringstream in(text);
    return parse_csv(in, "t");
}

long error_line(const std::string& text) {
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.line();
    }
    return 0;
}

}  // namespace

TEST(Csv, HeaderAndRows) {
    const auto ds = parse("u,y\n1.5,2\n-3, 4e-1\n\n+5,6\n");
    ASSERT_EQ(ds.size(), 3);
    EXPECT_EQ(ds.u, (VectorXd(3) << 1.5, -3.0, 5.0).finished());
    EXPECT_EQ(ds.y, (VectorXd(3) << 2.0, 0.4, 6.0).finished());
    EXPECT_EQ(parse("1,2\n3,4\n").size(), 2);  // no header
    EXPECT_EQ(parse("1,2\r\n3,4\r\n").y[1], 4.0);
}

TEST(Csv, ErrorsCarryOneIndexedLines) {
    EXPECT_EQ(error_line("u,y\n1,2\n3\n"), 3);
    EXPECT_EQ(error_line("u,y\n1,2\n3,abc\n"), 3);
    EXPECT_EQ(error_line("1,2,3\n"), 1);
    EXPECT_EQ(error_line("1,2\n4,nan\n"), 2);
    EXPECT_EQ(error_line("1,2\n\n5,1x\n"), 3);
    EXPECT_THROW(parse("u,y\n"), DataError);
    EXPECT_THROW(load_csv("/nonexistent/file.csv"), DataError);
}

TEST(Csv, RoundTripIsExact) {
    SequenceDataset ds;
    ds.name = "x";
    ds.u = (VectorXd(3) << 0.1, 1.0 / 3.0, -2e-300).finished();
    ds.y = (VectorXd(3) << std::exp(1.0), -7.25, 1e17).finished();
    const std::string path = ::testing::TempDir() + "roundtrip.csv";
    write_csv(path, ds);
    const auto back = load_csv(path);
    EXPECT_EQ(back.name, "roundtrip");
    EXPECT_EQ(back.u, ds.u);
    EXPECT_EQ(back.y, ds.y);
}

TEST(Synthetic, ZeroInputStaysAtZero) {
    SyntheticSpec spec;
    EXPECT_EQ(simulate_system(spec, VectorXd::Zero(20)), VectorXd::Zero(20));
}

TEST(Synthetic, ConstantInputHandValues) {
    SyntheticSpec spec;
    const VectorXd y = simulate_system(spec, VectorXd::Ones(5));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 0.0);
    EXPECT_EQ(y[2], 1.0);
    EXPECT_EQ(y[3], 1.0);
    EXPECT_NEAR(y[4], 1.0 + 3.5 / 3.0, 1e-15);
    EXPECT_NEAR(y[4], 2.1667, 1e-4);
}

TEST(Synthetic, DivergenceIsADataError) {
    SyntheticSpec spec;
    spec.recurrence = [](double y1, double) { return 10.0 * y1; };
    EXPECT_THROW(simulate_system(spec, VectorXd::Ones(30)), DataError);
    spec.recurrence = nullptr;
    EXPECT_THROW(synthetic_sequence(spec, 10, 0, "x"), StructuralError);
}

TEST(Synthetic, SeededAndIndependentSplits) {
    SyntheticSpec spec;
    const auto [a, b] = generate_synthetic(spec, 7, 100, 60);
    const auto [c, d] = generate_synthetic(spec, 7, 100, 60);
    EXPECT_EQ(a.u, c.u);
    EXPECT_EQ(a.y, c.y);
    EXPECT_EQ(b.y, d.y);
    EXPECT_EQ(a.size(), 100);
    EXPECT_EQ(b.size(), 60);
    EXPECT_NE(a.u.head(60), b.u);
    EXPECT_NE(generate_synthetic(spec, 8, 100, 60).first.u, a.u);
    EXPECT_GE(a.u.minCoeff(), spec.input_low);
    EXPECT_LT(a.u.maxCoeff(), spec.input_high);
}

TEST(Synthetic, InputHoldsRespectTheRange) {
    SyntheticSpec spec;
    spec.min_hold = 3;
    spec.max_hold = 3;
    std::mt19937_64 rng(1);
    const VectorXd u = piecewise_input(spec, 30, rng);
    for (int k = 0; k < 10; ++k) {
        EXPECT_EQ(u[3 * k], u[3 * k + 1]);
        EXPECT_EQ(u[3 * k], u[3 * k + 2]);
        if (k > 0) {
            EXPECT_NE(u[3 * k], u[3 * k - 1]);
        }
    }
}

TEST(Normalize, TrainMomentsAndRoundTrip) {
    const auto [train, test] = generate_synthetic(SyntheticSpec{}, 2, 200, 100);
    const auto n = normalize(train, test);
    EXPECT_NEAR(n.train.u.mean(), 0.0, 1e-12);
    EXPECT_NEAR(n.train.y.mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(n.train.y.array().square().mean()), 1.0, 1e-12);
    EXPECT_NEAR(std::sqrt(n.train.u.array().square().mean()), 1.0, 1e-12);
    EXPECT_LT((n.stats.denormalize_y(n.test.y) - test.y).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((n.stats.denormalize_u(n.train.u) - train.u).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_DOUBLE_EQ(n.stats.denormalize_y_variance(VectorXd::Ones(1))[0], n.stats.y_std * n.stats.y_std);
    ASSERT_TRUE(n.test.stats.has_value());
    EXPECT_EQ(n.test.stats->y_mean, n.stats.y_mean);
}

TEST(Normalize, StatisticsIgnoreTheTestSplit) {
    const auto [train, test] = generate_synthetic(SyntheticSpec{}, 3, 100, 100);
    SequenceDataset shifted = test;
    shifted.y.array() += 100.0;
    EXPECT_EQ(normalize(train, test).stats.y_mean, normalize(train, shifted).stats.y_mean);
    EXPECT_EQ(normalize(train, test).stats.y_std, normalize(train, shifted).stats.y_std);
}

TEST(Normalize, ConstantChannelIsRejected) {
    SequenceDataset ds{"flat", VectorXd::Constant(5, 2.0), VectorXd::LinSpaced(5, 0, 1), std::nullopt};
    EXPECT_THROW(fit_normalization(ds), DataError);
    ds.u = VectorXd::LinSpaced(5, 0, 1);
    ds.y = VectorXd::Constant(5, -1.0);
    EXPECT_THROW(fit_normalization(ds), DataError);
}

TEST(Split, FirstFractionTrains) {
    SequenceDataset ds{"d", VectorXd::LinSpaced(10, 0, 9), VectorXd::LinSpaced(10, 10, 19), std::nullopt};
    const auto [a, b] = split_dataset(ds);
    EXPECT_EQ(a.size(), 5);
    EXPECT_EQ(b.u[0], 5.0);
    EXPECT_EQ(a.name, "d_train");
    EXPECT_THROW(split_dataset(ds, 0.0), StructuralError);
    EXPECT_THROW(split_dataset(ds, 1.0), StructuralError);
}
