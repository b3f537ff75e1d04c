// planllm — synthetic procedure-planning workbench.
//
//   planllm generate-data --config cfg.json --out data.jsonl
//   planllm train         --config cfg.json [--stage all] [--mode progressive]
//   planllm eval          --config cfg.json --checkpoint ckpt [--mode ...] [--out report.jsonl]
//   planllm plan          --checkpoint ckpt --sample data.jsonl [--index 0] [--open-vocab labels.txt]
//   planllm inspect       --checkpoint ckpt

#include "planllm/cli_commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace planllm;

namespace {

RunConfig load_config_or_defaults(const std::string& path) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
    apply_env_overrides(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale video-procedure-planning workbench"};
    app.require_subcommand(1);

    std::string config_path, out_path, checkpoint, dataset, cross_vocab, sample_path, labels_path;
    std::string report_path;
    int sample_index = 0;
    std::uint64_t eval_seed = 0;
    cli::TrainOptions train_opts;
    std::vector<std::string> eval_modes;
    std::vector<int> eval_horizons;

    // flag overrides (flags win over the config file)
    std::string override_out_dir;
    std::uint64_t override_seed = 0;
    bool have_override_seed = false;

    auto* gen = app.add_subcommand("generate-data", "Generate a synthetic dataset file");
    gen->add_option("--config", config_path, "Run configuration (JSON)");
    gen->add_option("--out", out_path, "Output dataset path")->required();

    auto* train = app.add_subcommand("train", "Run the progressive training scheme");
    train->add_option("--config", config_path, "Run configuration (JSON)");
    train->add_option("--stage", train_opts.stage, "1, 2, or all (default all)");
    train->add_option("--mode", train_opts.mode, "progressive or one-stage");
    train->add_option("--resume", train_opts.resume_from, "Stage-1 checkpoint for --stage 2");
    train->add_option("--out-dir", override_out_dir, "Override io.out_dir");
    train->add_option("--seed", override_seed, "Override both stage seeds")
        ->each([&](const std::string&) { have_override_seed = true; });

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and emit metric reports");
    eval_cmd->add_option("--config", config_path, "Run configuration (JSON)");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
    eval_cmd->add_option("--dataset", dataset, "Dataset file (defaults to the config's data)");
    eval_cmd->add_option("--cross-vocab", cross_vocab,
                         "Other dataset file; runs the retrieval transfer protocol");
    eval_cmd->add_option("--mode", eval_modes, "closed_set and/or open_vocab");
    eval_cmd->add_option("--horizon", eval_horizons, "Prediction horizons to evaluate");
    eval_cmd->add_option("--out", report_path, "Report file (one JSON record per line)");
    eval_cmd->add_option("--seed", eval_seed, "Seed recorded in the reports");

    auto* plan = app.add_subcommand("plan", "Plan a single sample and print both outputs");
    plan->add_option("--checkpoint", checkpoint, "Checkpoint to load")->required();
    plan->add_option("--sample", sample_path, "Dataset file or single sample record")->required();
    plan->add_option("--index", sample_index, "Sample index within a dataset file");
    plan->add_option("--open-vocab", labels_path, "Candidate labels file (one per line)");

    auto* inspect = app.add_subcommand("inspect", "Print a checkpoint's manifest");
    inspect->add_option("--checkpoint", checkpoint, "Checkpoint to inspect")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            cli::cmd_generate_data(load_config_or_defaults(config_path), out_path, std::cout);
        } else if (train->parsed()) {
            RunConfig cfg = load_config_or_defaults(config_path);
            if (!override_out_dir.empty()) cfg.out_dir = override_out_dir;
            if (have_override_seed) {
                cfg.stage1.seed = override_seed;
                cfg.stage2.seed = override_seed;
            }
            cli::cmd_train(cfg, train_opts, std::cout);
        } else if (eval_cmd->parsed()) {
            cli::EvalOptions opts;
            opts.checkpoint = checkpoint;
            opts.dataset = dataset;
            opts.cross_vocab = cross_vocab;
            opts.modes = eval_modes;
            opts.horizons = eval_horizons;
            opts.report_path = report_path;
            opts.seed = eval_seed;
            cli::cmd_eval(load_config_or_defaults(config_path), opts, std::cout);
        } else if (plan->parsed()) {
            cli::PlanOptions opts;
            opts.checkpoint = checkpoint;
            opts.sample_path = sample_path;
            opts.sample_index = sample_index;
            opts.open_vocab_labels = labels_path;
            cli::cmd_plan(opts, std::cout);
        } else if (inspect->parsed()) {
            cli::cmd_inspect(checkpoint, std::cout);
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
