#pragma once

// SISO sequence datasets: CSV input/output, the synthetic benchmark system
// and train-split normalization.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <istream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rgp/errors.hpp"

namespace rgp {

using Eigen::VectorXd;

struct NormalizationStats {
    double u_mean = 0.0, u_std = 1.0;
    double y_mean = 0.0, y_std = 1.0;

    VectorXd normalize_u(const VectorXd& u) const { return (u.array() - u_mean) / u_std; }
    VectorXd normalize_y(const VectorXd& y) const { return (y.array() - y_mean) / y_std; }
    VectorXd denormalize_u(const VectorXd& u) const { return u.array() * u_std + u_mean; }
    VectorXd denormalize_y(const VectorXd& y) const { return y.array() * y_std + y_mean; }
    /// Variances scale with the square of the output std.
    VectorXd denormalize_y_variance(const VectorXd& v) const { return v * (y_std * y_std); }
};

struct SequenceDataset {
    std::string name;
    VectorXd u;
    VectorXd y;
    std::optional<NormalizationStats> stats;  // set once normalized

    Eigen::Index size() const { return y.size(); }

    void validate() const {
        if (u.size() != y.size()) throw DataError("dataset " + name + ": u and y lengths differ");
        if (!u.allFinite() || !y.allFinite()) throw DataError("dataset " + name + ": non-finite values");
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_number(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace detail

/// Two columns (u, y). The first line is a header when none of its fields
/// are numbers.
inline SequenceDataset parse_csv(std::istream& in, const std::string& name = "csv") {
    std::vector<double> u, y;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto tl = detail::trim(line);
        if (tl.empty()) continue;
        const auto fields = detail::split_fields(tl);
        std::vector<std::optional<double>> vals;
        for (auto f : fields) vals.push_back(detail::parse_number(f));
        const bool any_number = std::any_of(vals.begin(), vals.end(), [](const auto& v) { return v.has_value(); });
        if (lineno == 1 && !any_number && fields.size() == 2) continue;
        if (fields.size() != 2)
            throw DataError("line " + std::to_string(lineno) + ": expected 2 columns (u,y), found " +
                                std::to_string(fields.size()),
                            lineno);
        for (std::size_t k = 0; k < 2; ++k) {
            if (!vals[k])
                throw DataError("line " + std::to_string(lineno) + ": cannot parse '" + std::string(detail::trim(fields[k])) +
                                    "' as a number",
                                lineno);
            if (!std::isfinite(*vals[k]))
                throw DataError("line " + std::to_string(lineno) + ": non-finite value", lineno);
        }
        u.push_back(*vals[0]);
        y.push_back(*vals[1]);
    }
    SequenceDataset ds;
    ds.name = name;
    ds.u = Eigen::Map<VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
    ds.y = Eigen::Map<VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    if (ds.size() == 0) throw DataError("dataset " + name + " holds no rows");
    return ds;
}

inline SequenceDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    auto slash = path.find_last_of('/');
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    if (auto dot = name.rfind('.'); dot != std::string::npos && dot > 0) name.resize(dot);
    return parse_csv(in, name);
}

inline void write_csv(const std::string& path, const SequenceDataset& ds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "u,y\n";
    char buf[64];
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", ds.u[i], ds.y[i]);
        out << buf;
    }
}

/// y_i = f(y_{i-1}, y_{i-2}) + u_{i-1}; observed with additive Gaussian noise.
using Recurrence = std::function<double(double y1, double y2)>;

inline double default_recurrence(double y1, double y2) {
    return y1 * y2 * (y1 + 2.5) / (1.0 + y1 * y1 + y2 * y2);
}

struct SyntheticSpec {
    Recurrence recurrence = default_recurrence;
    double input_low = -2.0;
    double input_high = 2.0;
    int min_hold = 1;  // steps each input level is held
    int max_hold = 10;
    double noise_std = 0.1;

    void validate() const {
        if (!recurrence) throw StructuralError("synthetic spec: recurrence is empty");
        if (!(input_high > input_low)) throw StructuralError("synthetic spec: empty input range");
        if (min_hold < 1 || max_hold < min_hold) throw StructuralError("synthetic spec: invalid hold range");
        if (!(noise_std >= 0.0)) throw StructuralError("synthetic spec: noise_std must be nonnegative");
    }
};

inline constexpr double kDivergenceLimit = 1e6;

/// Noise-free trajectory for a given input, from y_0 = y_1 = 0.
inline VectorXd simulate_system(const SyntheticSpec& spec, const VectorXd& u) {
    const auto N = u.size();
    VectorXd y = VectorXd::Zero(N);
    for (Eigen::Index i = 2; i < N; ++i) {
        y[i] = spec.recurrence(y[i - 1], y[i - 2]) + u[i - 1];
        if (!std::isfinite(y[i]) || std::abs(y[i]) > kDivergenceLimit)
            throw DataError("synthetic system diverged at step " + std::to_string(i));
    }
    return y;
}

inline VectorXd piecewise_input(const SyntheticSpec& spec, Eigen::Index N, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> level(spec.input_low, spec.input_high);
    std::uniform_int_distribution<int> hold(spec.min_hold, spec.max_hold);
    VectorXd u(N);
    Eigen::Index i = 0;
    while (i < N) {
        const double v = level(rng);
        for (int k = hold(rng); k > 0 && i < N; --k) u[i++] = v;
    }
    return u;
}

inline SequenceDataset synthetic_sequence(const SyntheticSpec& spec, Eigen::Index N, std::uint64_t seed,
                                          const std::string& name) {
    spec.validate();
    std::mt19937_64 rng(seed);
    SequenceDataset ds;
    ds.name = name;
    ds.u = piecewise_input(spec, N, rng);
    ds.y = simulate_system(spec, ds.u);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (Eigen::Index i = 0; i < N; ++i) ds.y[i] += spec.noise_std * noise(rng);
    return ds;
}

/// Independent train and test sequences (different input realizations).
inline std::pair<SequenceDataset, SequenceDataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                                                                      Eigen::Index n_train, Eigen::Index n_test) {
    return {synthetic_sequence(spec, n_train, seed * 2 + 1, "synthetic_train"),
            synthetic_sequence(spec, n_test, seed * 2 + 2, "synthetic_test")};
}

/// First `fraction` of the rows for training, the rest for testing.
inline std::pair<SequenceDataset, SequenceDataset> split_dataset(const SequenceDataset& ds, double fraction = 0.5) {
    const auto n = static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(ds.size())));
    if (n < 1 || n >= ds.size()) throw StructuralError("split: both halves must be nonempty");
    SequenceDataset a{ds.name + "_train", ds.u.head(n), ds.y.head(n), std::nullopt};
    SequenceDataset b{ds.name + "_test", ds.u.tail(ds.size() - n), ds.y.tail(ds.size() - n), std::nullopt};
    return {a, b};
}

struct NormalizedPair {
    SequenceDataset train;
    SequenceDataset test;
    NormalizationStats stats;
};

inline NormalizationStats fit_normalization(const SequenceDataset& train) {
    train.validate();
    auto moments = [&](const VectorXd& x, const char* channel) {
        const double mean = x.mean();
        const double sd = std::sqrt((x.array() - mean).square().mean());
        if (!(sd > 0.0)) throw DataError(std::string("normalize: channel ") + channel + " of " + train.name +
                                         " has zero variance");
        return std::make_pair(mean, sd);
    };
    NormalizationStats s;
    std::tie(s.u_mean, s.u_std) = moments(train.u, "u");
    std::tie(s.y_mean, s.y_std) = moments(train.y, "y");
    return s;
}

inline SequenceDataset apply_normalization(const SequenceDataset& ds, const NormalizationStats& s) {
    SequenceDataset out{ds.name, s.normalize_u(ds.u), s.normalize_y(ds.y), s};
    return out;
}

/// Statistics come from the training split only.
inline NormalizedPair normalize(const SequenceDataset& train, const SequenceDataset& test) {
    const auto s = fit_normalization(train);
    return {apply_normalization(train, s), apply_normalization(test, s), s};
}

}  // namespace rgp
