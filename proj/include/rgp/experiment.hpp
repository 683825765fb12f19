#pragma once

// Experiment grid: datasets x models, each cell trained, free-simulated on
// its test split and scored by RMSE in original units.
//
// Config document (all keys optional except datasets):
//   {
//     "name": "synthetic-desk", "seed": 0,
//     "datasets": [{"name": "synthetic", "synthetic": {"n_train": 300, "n_test": 300, "noise_std": 0.1}},
//                  {"name": "actuator", "csv": "actuator.csv", "split": 0.5}],
//     "model": {"hidden_layers": 2, "lag": 5, "input_lag": 5, "num_inducing": 30},
//     "train": {"max_evals": 2000, "restarts": 3, "convergence_tol": 1e-3, "fixed_variances_phase": -1},
//     "recognition": {"hidden_sizes": [20], "window": "previous"},
//     "gpnarx": {"max_evals": 500, "restarts": 1},
//     "models": ["revarb", "gpnarx"]
//   }

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rgp/data.hpp"
#include "rgp/errors.hpp"
#include "rgp/gpnarx.hpp"
#include "rgp/model.hpp"
#include "rgp/predictor.hpp"
#include "rgp/recognition.hpp"
#include "rgp/serialization.hpp"
#include "rgp/trainer.hpp"

namespace rgp {

struct DatasetSpec {
    std::string name = "synthetic";
    std::string csv;       // empty: synthetic
    double split = 0.5;    // CSV: leading fraction used for training
    Eigen::Index n_train = 300;
    Eigen::Index n_test = 300;
    double noise_std = 0.1;

    bool synthetic() const { return csv.empty(); }
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    std::vector<DatasetSpec> datasets;
    ModelConfig model;
    TrainOptions train;
    RecognitionOptions recognition;
    GpNarxOptions gpnarx;
    std::vector<std::string> models{"revarb", "gpnarx"};

    void validate() const {
        if (datasets.empty()) throw StructuralError("experiment: no datasets");
        if (models.empty()) throw StructuralError("experiment: no models");
        for (const auto& m : models)
            if (m != "revarb" && m != "revarb+recognition" && m != "gpnarx")
                throw StructuralError("experiment: unknown model '" + m + "'");
        model.validate();
        train.validate();
    }
};

inline json experiment_to_json(const ExperimentConfig& c) {
    json ds = json::array();
    for (const auto& d : c.datasets) {
        json e{{"name", d.name}};
        if (d.synthetic())
            e["synthetic"] = {{"n_train", d.n_train}, {"n_test", d.n_test}, {"noise_std", d.noise_std}};
        else
            e["csv"] = d.csv, e["split"] = d.split;
        ds.push_back(e);
    }
    return {{"name", c.name},
            {"seed", c.seed},
            {"datasets", ds},
            {"model", config_to_json(c.model)},
            {"train",
             {{"max_evals", c.train.max_evals},
              {"restarts", c.train.restarts},
              {"convergence_tol", c.train.convergence_tol},
              {"fixed_variances_phase", c.train.fixed_variances_phase}}},
            {"recognition",
             {{"hidden_sizes", c.recognition.hidden_sizes},
              {"window", c.recognition.window == WindowMode::Previous ? "previous" : "current"}}},
            {"gpnarx", {{"max_evals", c.gpnarx.max_evals}, {"restarts", c.gpnarx.restarts}}},
            {"models", c.models}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    for (const auto& e : j.at("datasets")) {
        DatasetSpec d;
        d.name = e.value("name", d.name);
        if (e.contains("csv")) {
            d.csv = e.at("csv").get<std::string>();
            d.split = e.value("split", d.split);
        } else {
            const auto s = e.value("synthetic", json::object());
            d.n_train = s.value("n_train", d.n_train);
            d.n_test = s.value("n_test", d.n_test);
            d.noise_std = s.value("noise_std", d.noise_std);
        }
        c.datasets.push_back(d);
    }
    if (j.contains("model")) c.model = config_from_json(j.at("model"));
    const auto t = j.value("train", json::object());
    c.train.max_evals = t.value("max_evals", c.train.max_evals);
    c.train.restarts = t.value("restarts", c.train.restarts);
    c.train.convergence_tol = t.value("convergence_tol", c.train.convergence_tol);
    c.train.fixed_variances_phase = t.value("fixed_variances_phase", c.train.fixed_variances_phase);
    const auto r = j.value("recognition", json::object());
    c.recognition.hidden_sizes = r.value("hidden_sizes", c.recognition.hidden_sizes);
    c.recognition.window = r.value("window", std::string("previous")) == "current" ? WindowMode::Current
                                                                                     : WindowMode::Previous;
    const auto g = j.value("gpnarx", json::object());
    c.gpnarx.max_evals = g.value("max_evals", c.gpnarx.max_evals);
    c.gpnarx.restarts = g.value("restarts", c.gpnarx.restarts);
    c.models = j.value("models", c.models);
    c.train.seed = c.seed;
    c.gpnarx.seed = c.seed;
    c.validate();
    return c;
}

/// FNV-1a over the canonical dump (object keys are sorted by the json type).
inline std::string config_digest(const ExperimentConfig& c) {
    const std::string s = experiment_to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct ReportRow {
    std::string dataset;
    std::string model;
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double bound = std::numeric_limits<double>::quiet_NaN();  // REVARB models only
    double wall_time = 0.0;                                   // seconds
    std::string digest;
    std::string status = "ok";
    std::string error;
};

/// Simulated test predictions in original units.
struct PredictionTable {
    std::vector<Eigen::Index> steps;
    VectorXd mean, variance, truth;
    double rmse = 0.0;
    long clip_count = 0;

    void write_csv(const std::string& path) const { write_predictions_csv(path, steps, mean, variance, truth); }
};

/// Loaded/raw datasets for one grid row, plus their normalized versions.
struct PreparedData {
    SequenceDataset raw_train, raw_test;
    NormalizedPair normalized;
};

inline PreparedData prepare_dataset(const DatasetSpec& d, std::uint64_t seed) {
    PreparedData p;
    if (d.synthetic()) {
        SyntheticSpec spec;
        spec.noise_std = d.noise_std;
        std::tie(p.raw_train, p.raw_test) = generate_synthetic(spec, seed, d.n_train, d.n_test);
    } else {
        std::tie(p.raw_train, p.raw_test) = split_dataset(load_csv(d.csv), d.split);
    }
    p.raw_train.name = d.name + "_train";
    p.raw_test.name = d.name + "_test";
    p.normalized = normalize(p.raw_train, p.raw_test);
    return p;
}

/// Free simulation of a REVARB-family state on raw test data.
inline PredictionTable simulate_revarb(const ModelState& s, const VectorXd& train_u, const VectorXd& train_y,
                                       const NormalizationStats& stats, const SequenceDataset& raw_test) {
    const Predictor p = Predictor::build(s, train_u, train_y);
    const auto sim = free_simulate(p, stats.normalize_u(raw_test.u));
    PredictionTable t;
    for (const auto& st : sim.steps) t.steps.push_back(st.step);
    t.mean = stats.denormalize_y(sim.output_means());
    t.variance = stats.denormalize_y_variance(sim.output_variances());
    const auto start = simulation_start(s.config);
    t.truth = raw_test.y.tail(raw_test.size() - start);
    t.rmse = rmse(t.mean, t.truth);
    t.clip_count = sim.clip_count;
    return t;
}

inline PredictionTable simulate_narx(const GpNarxModel& g, const NormalizationStats& stats,
                                     const SequenceDataset& raw_test) {
    const VectorXd un = stats.normalize_u(raw_test.u);
    const VectorXd yn = stats.normalize_y(raw_test.y);
    const auto s = g.start();
    const VectorXd means = simulate_gpnarx(g, un, yn.head(s));
    PredictionTable t;
    for (Eigen::Index k = s; k < raw_test.size(); ++k) t.steps.push_back(k);
    t.mean = stats.denormalize_y(means);
    // Mean feedback: the reported variance is the one-step observation variance.
    t.variance.resize(means.size());
    VectorXd hist = yn;
    hist.tail(means.size()) = means;
    for (Eigen::Index k = s; k < raw_test.size(); ++k)
        t.variance[k - s] = predict_gpnarx(g, narx_regressor(hist, un, k, g.lag, g.input_lag)).observed_variance;
    t.variance = stats.denormalize_y_variance(t.variance);
    t.truth = raw_test.y.tail(means.size());
    t.rmse = rmse(t.mean, t.truth);
    return t;
}

inline PredictionTable simulate_saved(const SavedModel& m, const SequenceDataset& raw_test) {
    if (m.type == "gpnarx") return simulate_narx(*m.gpnarx, m.stats, raw_test);
    return simulate_revarb(predictive_state(m), m.train_u, m.train_y, m.stats, raw_test);
}

struct TrainedCell {
    SavedModel model;
    TrainTrace trace;
    double bound = std::numeric_limits<double>::quiet_NaN();
};

inline TrainedCell train_cell(const std::string& type, const ExperimentConfig& c, const NormalizedPair& data) {
    TrainedCell cell;
    cell.model.type = type;
    cell.model.stats = data.stats;
    cell.model.train_u = data.train.u;
    cell.model.train_y = data.train.y;
    if (type == "revarb") {
        auto fr = fit(c.model, data.train.u, data.train.y, c.train);
        cell.model.state = std::move(fr.state);
        cell.trace = std::move(fr.trace);
        cell.bound = fr.bound;
    } else if (type == "revarb+recognition") {
        auto fr = fit_recognition(c.model, data.train.u, data.train.y, c.recognition, c.train);
        cell.model.recognition = std::move(fr.model);
        cell.trace = std::move(fr.trace);
        cell.bound = fr.bound;
    } else if (type == "gpnarx") {
        cell.model.gpnarx = fit_gpnarx(data.train.u, data.train.y, c.model.lag, c.model.input_lag, c.gpnarx);
    } else {
        throw StructuralError("unknown model type " + type);
    }
    return cell;
}

inline std::string file_tag(const std::string& dataset, const std::string& model) {
    std::string t = dataset + "_" + model;
    for (auto& ch : t)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_')) ch = '_';
    return t;
}

inline void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report to " + path);
    out << "dataset,model,rmse,bound,wall_time_s,config_digest,status,error\n";
    char buf[96];
    for (const auto& r : rows) {
        out << r.dataset << ',' << r.model << ',';
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.6f", r.rmse, r.bound, r.wall_time);
        out << buf << ',' << r.digest << ',' << r.status << ',';
        std::string e = r.error;
        for (auto& ch : e)
            if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
        out << e << '\n';
    }
}

struct ExperimentResult {
    std::vector<ReportRow> rows;
    std::vector<TrainTrace> traces;  // parallel to rows (empty for GP-NARX or failures)
};

using ProgressFn = std::function<void(const ReportRow&)>;

/// Runs every (dataset, model) cell. Artifacts go to out_dir when it is not
/// empty: report.csv, trace_<cell>.csv, pred_<cell>.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const std::string& out_dir = {},
                                       const ProgressFn& progress = {}) {
    c.validate();
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    const std::string digest = config_digest(c);
    ExperimentResult res;
    for (const auto& d : c.datasets) {
        PreparedData data;
        std::string data_error;
        try {
            data = prepare_dataset(d, c.seed);
        } catch (const std::exception& e) {
            data_error = e.what();
        }
        for (const auto& m : c.models) {
            ReportRow row;
            row.dataset = d.name;
            row.model = m;
            row.digest = digest;
            TrainTrace trace;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (!data_error.empty()) throw DataError(data_error);
                TrainedCell cell = train_cell(m, c, data.normalized);
                const auto table = simulate_saved(cell.model, data.raw_test);
                row.rmse = table.rmse;
                row.bound = cell.bound;
                trace = cell.trace;
                if (!out_dir.empty()) {
                    const auto tag = file_tag(d.name, m);
                    table.write_csv(out_dir + "/pred_" + tag + ".csv");
                    if (!trace.points.empty()) trace.write_csv(out_dir + "/trace_" + tag + ".csv");
                }
            } catch (const std::exception& e) {
                row.status = "failed";
                row.error = e.what();
            }
            row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (progress) progress(row);
            res.rows.push_back(row);
            res.traces.push_back(std::move(trace));
        }
    }
    if (!out_dir.empty()) write_report_csv(out_dir + "/report.csv", res.rows);
    return res;
}

}  // namespace rgp
