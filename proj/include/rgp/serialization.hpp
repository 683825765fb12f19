#pragma once

// Versioned JSON documents for trained models.
//
// Every document carries {"format": "rgp-model", "version": 1, "type": ...}
// plus the normalization statistics. REVARB documents hold the packed
// parameter vector and the normalized training sequence, which prediction
// needs to rebuild the optimal q(z).

#include <fstream>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rgp/data.hpp"
#include "rgp/errors.hpp"
#include "rgp/gpnarx.hpp"
#include "rgp/model.hpp"
#include "rgp/recognition.hpp"

namespace rgp {

using nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

inline json to_json_vector(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline VectorXd vector_from_json(const json& j) {
    const auto vals = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline json config_to_json(const ModelConfig& c) {
    return {{"hidden_layers", c.hidden_layers},
            {"lag", c.lag},
            {"input_lag", c.input_lag},
            {"num_inducing", c.num_inducing},
            {"jitter", c.jitter}};
}

inline ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.lag = j.value("lag", c.lag);
    c.input_lag = j.value("input_lag", c.input_lag);
    c.num_inducing = j.value("num_inducing", c.num_inducing);
    c.jitter = j.value("jitter", c.jitter);
    c.validate();
    return c;
}

inline json stats_to_json(const NormalizationStats& s) {
    return {{"u_mean", s.u_mean}, {"u_std", s.u_std}, {"y_mean", s.y_mean}, {"y_std", s.y_std}};
}

inline NormalizationStats stats_from_json(const json& j) {
    NormalizationStats s;
    s.u_mean = j.at("u_mean").get<double>();
    s.u_std = j.at("u_std").get<double>();
    s.y_mean = j.at("y_mean").get<double>();
    s.y_std = j.at("y_std").get<double>();
    return s;
}

/// A trained model of any of the three kinds.
struct SavedModel {
    std::string type;  // "revarb", "revarb+recognition", "gpnarx"
    NormalizationStats stats;
    VectorXd train_u, train_y;  // normalized
    std::optional<ModelState> state;
    std::optional<RecognitionModel> recognition;
    std::optional<GpNarxModel> gpnarx;
};

inline json model_to_json(const SavedModel& m) {
    json j{{"format", "rgp-model"}, {"version", kModelFormatVersion}, {"type", m.type},
           {"normalization", stats_to_json(m.stats)}};
    if (m.type == "revarb") {
        if (!m.state) throw StructuralError("model_to_json: revarb model without state");
        j["config"] = config_to_json(m.state->config);
        j["params"] = to_json_vector(pack(*m.state));
        j["train_u"] = to_json_vector(m.train_u);
        j["train_y"] = to_json_vector(m.train_y);
    } else if (m.type == "revarb+recognition") {
        if (!m.recognition) throw StructuralError("model_to_json: recognition model missing");
        const auto& rm = *m.recognition;
        j["config"] = config_to_json(rm.state.config);
        j["window"] = rm.window == WindowMode::Previous ? "previous" : "current";
        std::vector<int> sizes;
        for (const auto& W : rm.nets.front().hidden) sizes.push_back(static_cast<int>(W.rows()));
        j["hidden_sizes"] = sizes;
        j["params"] = to_json_vector(pack_recognition(rm));
        j["train_u"] = to_json_vector(m.train_u);
        j["train_y"] = to_json_vector(m.train_y);
    } else if (m.type == "gpnarx") {
        if (!m.gpnarx) throw StructuralError("model_to_json: gpnarx model missing");
        const auto& g = *m.gpnarx;
        j["lag"] = g.lag;
        j["input_lag"] = g.input_lag;
        j["signal_variance"] = g.kernel.signal_variance;
        j["ard_weights"] = to_json_vector(g.kernel.ard_weights);
        j["noise_variance"] = g.noise_variance;
        j["train_u"] = to_json_vector(m.train_u);
        j["train_y"] = to_json_vector(m.train_y);
    } else {
        throw StructuralError("model_to_json: unknown model type " + m.type);
    }
    return j;
}

inline SavedModel model_from_json(const json& j) {
    if (j.value("format", std::string()) != "rgp-model") throw DataError("model file: not an rgp-model document");
    if (j.value("version", 0) != kModelFormatVersion)
        throw DataError("model file: unsupported version " + std::to_string(j.value("version", 0)));
    SavedModel m;
    m.type = j.at("type").get<std::string>();
    m.stats = stats_from_json(j.at("normalization"));
    m.train_u = vector_from_json(j.at("train_u"));
    m.train_y = vector_from_json(j.at("train_y"));
    const auto N = m.train_y.size();
    if (m.type == "revarb") {
        const auto cfg = config_from_json(j.at("config"));
        m.state = unpack(vector_from_json(j.at("params")), cfg, N);
    } else if (m.type == "revarb+recognition") {
        const auto cfg = config_from_json(j.at("config"));
        RecognitionOptions ro;
        ro.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
        ro.window = j.value("window", std::string("previous")) == "current" ? WindowMode::Current : WindowMode::Previous;
        const RecognitionModel shape = init_recognition(init_model(cfg, m.train_u, m.train_y), ro, 0);
        RecognitionModel rm = unpack_recognition(vector_from_json(j.at("params")), shape);
        rm.state = materialize(rm, m.train_u);
        m.recognition = std::move(rm);
    } else if (m.type == "gpnarx") {
        GpNarxModel g;
        g.lag = j.at("lag").get<int>();
        g.input_lag = j.at("input_lag").get<int>();
        g.kernel = KernelParams(j.at("signal_variance").get<double>(), vector_from_json(j.at("ard_weights")));
        g.noise_variance = j.at("noise_variance").get<double>();
        std::tie(g.X, g.targets) = narx_dataset(m.train_u, m.train_y, g.lag, g.input_lag);
        g.kernel.validate(g.input_dim());
        g.refresh();
        m.gpnarx = std::move(g);
    } else {
        throw DataError("model file: unknown model type " + m.type);
    }
    return m;
}

inline void save_model(const std::string& path, const SavedModel& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model to " + path);
    out << model_to_json(m).dump(1) << '\n';
}

inline SavedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError("model file " + path + ": " + e.what());
    }
    return model_from_json(j);
}

/// The latent state a REVARB-family model predicts with.
inline const ModelState& predictive_state(const SavedModel& m) {
    if (m.state) return *m.state;
    if (m.recognition) return m.recognition->state;
    throw StructuralError("model of type " + m.type + " has no latent state");
}

}  // namespace rgp
