// rgp: command-line front end for the deep recurrent GP library.
//
//   rgp generate  --out-dir data --seed 0
//   rgp train     --train data/synthetic_train.csv --out model.json
//   rgp simulate  --model-file model.json --data data/synthetic_test.csv --out pred.csv
//   rgp bench     --config samples/bench_synthetic.json --out-dir results
//   rgp gradcheck --layers 2 --lag 2 --inducing 5

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rgp/rgp.hpp"

namespace {

struct ModelFlags {
    int layers = 2;
    int lag = 5;
    int input_lag = 5;
    int inducing = 30;
    long max_evals = 2000;
    int restarts = 1;
    std::uint64_t seed = 0;
    std::string model = "revarb";
    bool recognition = false;
    int recognition_depth = 1;
    int recognition_width = 20;

    rgp::ModelConfig config() const {
        rgp::ModelConfig c;
        c.hidden_layers = layers;
        c.lag = lag;
        c.input_lag = input_lag;
        c.num_inducing = inducing;
        c.validate();
        return c;
    }
    rgp::RecognitionOptions recognition_options() const {
        rgp::RecognitionOptions r;
        r.hidden_sizes.assign(static_cast<std::size_t>(recognition_depth), recognition_width);
        return r;
    }
    std::string model_type() const { return recognition ? std::string("revarb+recognition") : model; }
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--layers", f.layers, "hidden layers H")->check(CLI::PositiveNumber);
    cmd->add_option("--lag", f.lag, "latent lag L")->check(CLI::PositiveNumber);
    cmd->add_option("--input-lag", f.input_lag, "input lag Lu")->check(CLI::PositiveNumber);
    cmd->add_option("--inducing", f.inducing, "inducing inputs per layer M")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "random seed");
}

void print_row(const rgp::ReportRow& r) {
    std::printf("%-14s %-20s rmse=%-12.6g bound=%-14.8g %8.1fs %s%s%s\n", r.dataset.c_str(), r.model.c_str(), r.rmse,
                r.bound, r.wall_time, r.status.c_str(), r.error.empty() ? "" : ": ", r.error.c_str());
    std::fflush(stdout);
}

int cmd_generate(const std::string& out_dir, std::uint64_t seed, long n_train, long n_test, double noise) {
    rgp::SyntheticSpec spec;
    spec.noise_std = noise;
    auto [train, test] = rgp::generate_synthetic(spec, seed, n_train, n_test);
    std::filesystem::create_directories(out_dir);
    rgp::write_csv(out_dir + "/synthetic_train.csv", train);
    rgp::write_csv(out_dir + "/synthetic_test.csv", test);
    std::printf("wrote %s/synthetic_train.csv (%ld rows) and %s/synthetic_test.csv (%ld rows)\n", out_dir.c_str(),
                n_train, out_dir.c_str(), n_test);
    return 0;
}

int cmd_train(const ModelFlags& f, const std::string& train_csv, const std::string& out, const std::string& trace) {
    const auto raw = rgp::load_csv(train_csv);
    const auto stats = rgp::fit_normalization(raw);
    const auto data = rgp::apply_normalization(raw, stats);

    rgp::ExperimentConfig c;
    c.seed = f.seed;
    c.model = f.config();
    c.train.max_evals = f.max_evals;
    c.train.restarts = f.restarts;
    c.train.seed = f.seed;
    c.gpnarx.seed = f.seed;
    c.gpnarx.restarts = f.restarts;
    c.recognition = f.recognition_options();
    const rgp::NormalizedPair pair{data, data, stats};
    const auto cell = rgp::train_cell(f.model_type(), c, pair);
    rgp::save_model(out, cell.model);
    if (!trace.empty() && !cell.trace.points.empty()) cell.trace.write_csv(trace);
    if (std::isfinite(cell.bound))
        std::printf("trained %s: bound %.10g after %zu accepted steps; saved %s\n", cell.model.type.c_str(),
                    cell.bound, cell.trace.points.size(), out.c_str());
    else
        std::printf("trained %s; saved %s\n", cell.model.type.c_str(), out.c_str());
    return 0;
}

int cmd_simulate(const std::string& model_file, const std::string& data_csv, const std::string& out) {
    const auto model = rgp::load_model(model_file);
    const auto test = rgp::load_csv(data_csv);
    const auto table = rgp::simulate_saved(model, test);
    if (!out.empty()) table.write_csv(out);
    std::printf("free simulation of %s on %s: %zu steps, rmse %.10g", model.type.c_str(), data_csv.c_str(),
                table.steps.size(), table.rmse);
    if (table.clip_count > 0) std::printf(" (%ld variance clips)", table.clip_count);
    std::printf("\n");
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& out_dir, const std::optional<std::uint64_t>& seed,
              const std::optional<long>& max_evals) {
    std::ifstream in(config_path);
    if (!in) throw rgp::DataError("cannot open config " + config_path);
    rgp::json j;
    in >> j;
    if (seed) j["seed"] = *seed;
    if (max_evals) j["train"]["max_evals"] = *max_evals;
    const auto c = rgp::experiment_from_json(j);
    std::printf("experiment %s (digest %s)\n", c.name.c_str(), rgp::config_digest(c).c_str());
    const auto res = rgp::run_experiment(c, out_dir, print_row);
    std::printf("report written to %s/report.csv\n", out_dir.c_str());
    for (const auto& r : res.rows)
        if (r.status != "ok") return 2;
    return 0;
}

int cmd_gradcheck(const ModelFlags& f, long n, double step, double tol) {
    const auto cfg = f.config();
    rgp::SyntheticSpec spec;
    auto [train, test] = rgp::generate_synthetic(spec, f.seed, n, cfg.lag + 2);
    const auto data = rgp::normalize(train, test).train;
    rgp::InitOptions init;
    init.seed = f.seed;
    const auto s = rgp::init_model(cfg, data.u, data.y, init);
    rgp::GradCheckReport rep;
    if (f.recognition) {
        const auto rm = rgp::init_recognition(s, f.recognition_options(), f.seed);
        rep = rgp::grad_check(rm, data.u, data.y, step, tol);
    } else {
        rep = rgp::grad_check(s, data.u, data.y, step, tol);
    }
    std::printf("%-34s %-14s %-14s %s\n", "block", "worst_rel_err", "analytic", "numeric");
    for (const auto& b : rep.blocks)
        std::printf("%-34s %-14.3e %-14.6g %-14.6g%s\n", b.name.c_str(), b.worst_error, b.analytic, b.numeric,
                    b.flagged ? "  FLAGGED" : "");
    const auto flagged = rep.flagged();
    std::printf("worst %.3e, %zu flagged block(s) at tolerance %.1e\n", rep.worst(), flagged.size(), tol);
    return flagged.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep recurrent Gaussian processes trained with the REVARB bound"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write the synthetic benchmark to CSV");
    std::string gen_dir = "data";
    std::uint64_t gen_seed = 0;
    long n_train = 300, n_test = 300;
    double noise = rgp::SyntheticSpec{}.noise_std;
    gen->add_option("--out-dir", gen_dir, "output directory");
    gen->add_option("--seed", gen_seed, "random seed");
    gen->add_option("--n-train", n_train, "training samples")->check(CLI::PositiveNumber);
    gen->add_option("--n-test", n_test, "test samples")->check(CLI::PositiveNumber);
    gen->add_option("--noise", noise, "observation noise std")->check(CLI::NonNegativeNumber);

    auto* train = app.add_subcommand("train", "fit a model on a (u,y) CSV and save it as JSON");
    ModelFlags tf;
    std::string train_csv, model_out = "model.json", trace_out;
    add_model_flags(train, tf);
    train->add_option("--train", train_csv, "training CSV (u,y)")->required()->check(CLI::ExistingFile);
    train->add_option("--model", tf.model, "revarb | revarb+recognition | gpnarx")
        ->check(CLI::IsMember({"revarb", "revarb+recognition", "gpnarx"}));
    train->add_option("--max-evals", tf.max_evals, "bound evaluation budget")->check(CLI::PositiveNumber);
    train->add_option("--restarts", tf.restarts, "seeded restarts")->check(CLI::PositiveNumber);
    train->add_flag("--recognition", tf.recognition, "constrain latent means with a recognition network");
    train->add_option("--recognition-depth", tf.recognition_depth, "tanh layers of the recognition network")
        ->check(CLI::PositiveNumber);
    train->add_option("--recognition-width", tf.recognition_width, "units per recognition layer")
        ->check(CLI::PositiveNumber);
    train->add_option("--out", model_out, "model JSON path");
    train->add_option("--trace", trace_out, "optional trace CSV path");

    auto* sim = app.add_subcommand("simulate", "free-run a saved model on a (u,y) CSV");
    std::string model_file, data_csv, pred_out;
    sim->add_option("--model-file", model_file, "model JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--data", data_csv, "test CSV (u,y)")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", pred_out, "prediction CSV path");

    auto* bench = app.add_subcommand("bench", "run an experiment grid from a JSON config");
    std::string config_path, bench_dir = "results";
    std::optional<std::uint64_t> bench_seed;
    std::optional<long> bench_evals;
    bench->add_option("--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
    bench->add_option("--out-dir", bench_dir, "artifact directory");
    bench->add_option("--seed", bench_seed, "override the config seed");
    bench->add_option("--max-evals", bench_evals, "override the training budget");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of the bound gradient");
    ModelFlags gf;
    gf.lag = 2;
    gf.input_lag = 2;
    gf.inducing = 5;
    long gc_n = 25;
    double gc_step = 1e-5, gc_tol = 1e-4;
    add_model_flags(gc, gf);
    gc->add_option("--length", gc_n, "sequence length N")->check(CLI::PositiveNumber);
    gc->add_option("--step", gc_step, "central difference step (log space for positive parameters)");
    gc->add_option("--tolerance", gc_tol, "relative error tolerance per block");
    gc->add_flag("--recognition", gf.recognition, "audit the recognition-constrained bound");
    gc->add_option("--recognition-depth", gf.recognition_depth, "tanh layers of the recognition network")
        ->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_generate(gen_dir, gen_seed, n_train, n_test, noise);
        if (*train) return cmd_train(tf, train_csv, model_out, trace_out);
        if (*sim) return cmd_simulate(model_file, data_csv, pred_out);
        if (*bench) return cmd_bench(config_path, bench_dir, bench_seed, bench_evals);
        if (*gc) return cmd_gradcheck(gf, gc_n, gc_step, gc_tol);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
