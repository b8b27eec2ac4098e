#include <CLI11.hpp>

#include <iostream>

#include "muqar/pipeline.hpp"

using namespace muqar;

int main(int argc, char** argv) {
    CLI::App app{"muqar: quasi-autoregressive popularity forecasting pipeline"};
    app.require_subcommand(1);

    // simulate
    std::string sim_config, sim_out;
    std::int64_t sim_seed = -1;
    auto* simulate_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
    simulate_cmd->add_option("--config", sim_config, "synthetic config JSON (defaults when omitted)");
    simulate_cmd->add_option("--out", sim_out, "output directory")->required();
    simulate_cmd->add_option("--seed", sim_seed, "override the config seed");

    // build
    std::string build_data, build_out;
    auto* build_cmd = app.add_subcommand("build", "compute popularity panels from a dataset");
    build_cmd->add_option("--data", build_data, "dataset directory")->required();
    build_cmd->add_option("--out", build_out, "output directory")->required();

    // train
    std::string train_data, train_build, train_config, train_out, train_mask, train_backbone;
    std::int64_t train_seed = -1;
    int train_k = -1, train_n = -1;
    auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--build", train_build, "build directory")->required();
    train_cmd->add_option("--config", train_config, "run config JSON");
    train_cmd->add_option("--out", train_out, "checkpoint directory")->required();
    train_cmd->add_option("--mask", train_mask, "feature families, e.g. I,C,A,X");
    train_cmd->add_option("--backbone", train_backbone, "cnn|lstm|convlstm|convlstm_x");
    train_cmd->add_option("--k", train_k, "forecast horizon");
    train_cmd->add_option("--n", train_n, "input window length");
    train_cmd->add_option("--seed", train_seed, "training/split seed");

    // evaluate
    std::string eval_ckpt, eval_data, eval_build, eval_split = "test", eval_out;
    auto* eval_cmd = app.add_subcommand("evaluate", "compute metrics for a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--build", eval_build, "build directory")->required();
    eval_cmd->add_option("--split", eval_split, "train|validation|test");
    eval_cmd->add_option("--out", eval_out, "output prefix for .json/.csv")->required();

    // predict
    std::string pred_ckpt, pred_data, pred_build, pred_split = "test", pred_out;
    auto* pred_cmd = app.add_subcommand("predict", "write per-example forecasts");
    pred_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint directory")->required();
    pred_cmd->add_option("--data", pred_data, "dataset directory")->required();
    pred_cmd->add_option("--build", pred_build, "build directory")->required();
    pred_cmd->add_option("--split", pred_split, "train|validation|test");
    pred_cmd->add_option("--out", pred_out, "forecast CSV path")->required();

    // select
    std::string sel_matrix, sel_out;
    auto* sel_cmd = app.add_subcommand("select", "rank candidates with TOPSIS");
    sel_cmd->add_option("--matrix", sel_matrix, "decision matrix CSV")->required();
    sel_cmd->add_option("--out", sel_out, "ranking CSV path")->required();

    // grid
    std::string grid_spec, grid_data, grid_build, grid_config, grid_out;
    std::int64_t grid_seed = -1;
    auto* grid_cmd = app.add_subcommand("grid", "train a backbone grid and emit a decision matrix");
    grid_cmd->add_option("--grid", grid_spec, "grid spec JSON")->required();
    grid_cmd->add_option("--data", grid_data, "dataset directory")->required();
    grid_cmd->add_option("--build", grid_build, "build directory")->required();
    grid_cmd->add_option("--config", grid_config, "base run config JSON");
    grid_cmd->add_option("--out", grid_out, "output directory")->required();
    grid_cmd->add_option("--seed", grid_seed, "training/split seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const int threads = worker_threads_from_env();
    try {
        if (simulate_cmd->parsed()) {
            SynthConfig cfg = sim_config.empty() ? SynthConfig{} : load_synth_config(sim_config);
            if (sim_seed >= 0) cfg.seed = static_cast<std::uint64_t>(sim_seed);
            run_simulate(cfg, sim_out);
            std::cout << "wrote dataset to " << sim_out << "\n";
        } else if (build_cmd->parsed()) {
            run_build(build_data, build_out);
            std::cout << "wrote panels to " << build_out << "\n";
        } else if (train_cmd->parsed()) {
            RunConfig cfg = load_run_config(train_config);
            if (!train_mask.empty()) cfg.model.mask = AblationMask::parse(train_mask);
            if (!train_backbone.empty()) {
                cfg.model.backbone.kind = backbone_kind_from_string(train_backbone);
                cfg.model.mask.exogenous = cfg.model.backbone.kind == BackboneKind::ConvLstmX;
            }
            if (train_k > 0) cfg.model.k = train_k;
            if (train_n > 0) cfg.model.n = train_n;
            if (train_seed >= 0) {
                cfg.train.seed = static_cast<std::uint64_t>(train_seed);
                cfg.model.init_seed = static_cast<std::uint64_t>(train_seed);
            }
            FitResult result = run_train(train_data, train_build, cfg, train_out, threads);
            std::cout << "checkpoint written to " << train_out << " (best epoch "
                      << result.best_epoch << ", val " << result.best_val << ")\n";
        } else if (eval_cmd->parsed()) {
            MetricReport report =
                run_evaluate(eval_ckpt, eval_data, eval_build, eval_split, eval_out, threads);
            for (const auto& [name, value] : report.values) {
                std::cout << name << " = " << value << "\n";
            }
        } else if (pred_cmd->parsed()) {
            run_predict(pred_ckpt, pred_data, pred_build, pred_split, pred_out, threads);
            std::cout << "forecasts written to " << pred_out << "\n";
        } else if (sel_cmd->parsed()) {
            TopsisResult result = run_select(sel_matrix, sel_out);
            std::cout << "ranking written to " << sel_out << " (" << result.ranking.size()
                      << " candidates)\n";
        } else if (grid_cmd->parsed()) {
            RunConfig cfg = load_run_config(grid_config);
            if (grid_seed >= 0) {
                cfg.train.seed = static_cast<std::uint64_t>(grid_seed);
                cfg.model.init_seed = static_cast<std::uint64_t>(grid_seed);
            }
            run_grid(grid_spec, grid_data, grid_build, cfg, grid_out, threads);
            std::cout << "decision matrix written to " << grid_out << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
