#include "planllm/cli_commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace planllm::cli {

using nlohmann::json;

namespace fs = std::filesystem;

std::pair<Dataset, StepVocabulary> resolve_dataset(const RunConfig& cfg) {
    if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
    return generate_synthetic_dataset(cfg.data);
}

void cmd_generate_data(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
    cfg.data.validate();
    auto [ds, vocab] = generate_synthetic_dataset(cfg.data);
    if (auto parent = fs::path(out_path).parent_path(); !parent.empty())
        fs::create_directories(parent);
    save_dataset(ds, vocab, out_path);
    out << "dataset: " << out_path << "\n";
    out << "samples: " << ds.samples.size() << " steps: " << vocab.size() << "\n";
    out << "fingerprint: " << dataset_fingerprint(ds, vocab) << "\n";
}

namespace {

void check_dataset_matches_model(const Dataset& ds, const ModelConfig& model) {
    if (ds.d_raw != model.d_raw)
        throw ValidationError("dataset d_raw " + std::to_string(ds.d_raw) +
                              " != model d_raw " + std::to_string(model.d_raw));
    if (ds.horizon != model.horizon)
        throw ValidationError("dataset horizon " + std::to_string(ds.horizon) +
                              " != model horizon " + std::to_string(model.horizon));
}

}  // namespace

void cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& out) {
    cfg.validate();
    if (opts.stage != "1" && opts.stage != "2" && opts.stage != "all")
        throw ValidationError("--stage must be 1, 2, or all");
    if (opts.mode != "progressive" && opts.mode != "one-stage")
        throw ValidationError("--mode must be progressive or one-stage");

    auto [ds, vocab] = resolve_dataset(cfg);
    check_dataset_matches_model(ds, cfg.model);
    auto split = split_dataset(ds, cfg.split.ratios, cfg.split.seed, cfg.split.by_task);
    std::string fingerprint = config_fingerprint(cfg);

    fs::create_directories(cfg.out_dir);
    std::ofstream loss_log(fs::path(cfg.out_dir) / "loss_log.txt", std::ios::trunc);
    if (!loss_log) throw ValidationError("cannot open loss log under " + cfg.out_dir);
    loss_log << "# stage step mim asc sd total\n";

    out << "config_fingerprint: " << fingerprint << "\n";
    out << "dataset_fingerprint: " << dataset_fingerprint(ds, vocab) << "\n";
    out << "train_samples: " << split.train.samples.size() << "\n";

    Model model(cfg.model, vocab);

    auto save = [&](const Checkpoint& ckpt, const std::string& name) {
        std::string path = (fs::path(cfg.out_dir) / name).string();
        save_checkpoint(ckpt, path);
        out << "checkpoint: " << path << "\n";
        return path;
    };

    if (opts.mode == "one-stage") {
        StageConfig one = cfg.stage2;
        one.stage = 0;
        auto result = run_stage(model, split.train, one, fingerprint, &loss_log);
        save(result.checkpoint, "ckpt_onestage.bin");
        out << "final_total_loss: "
            << (result.log.empty() ? std::string("n/a") : format_double(result.log.back().total))
            << "\n";
        return;
    }

    Checkpoint stage1_ckpt;
    bool have_stage1 = false;
    if (opts.stage == "1" || opts.stage == "all") {
        auto s1 = run_stage1(model, split.train, cfg.stage1, fingerprint, &loss_log);
        stage1_ckpt = std::move(s1.checkpoint);
        have_stage1 = true;
        save(stage1_ckpt, "ckpt_stage1.bin");
        out << "stage1_final_mim: "
            << (s1.log.empty() ? std::string("n/a") : format_double(s1.log.back().mim)) << "\n";
    }
    if (opts.stage == "2" || opts.stage == "all") {
        if (!have_stage1) {
            if (opts.resume_from.empty())
                throw ValidationError("--stage 2 requires --resume <stage1 checkpoint>");
            stage1_ckpt = load_checkpoint(opts.resume_from);
        }
        StageConfig s2cfg = cfg.stage2;
        s2cfg.stage = 2;
        auto s2 = run_stage2(model, split.train, s2cfg, stage1_ckpt, fingerprint, &loss_log);
        auto report = verify_freeze(stage1_ckpt, s2.checkpoint, 2, model.cfg.variant);
        if (!report.ok()) {
            std::string msg = "freeze manifest violation in groups:";
            for (const auto& g : report.violations) msg += " " + g;
            throw NumericError(msg);
        }
        save(s2.checkpoint, "ckpt_stage2.bin");
        out << "stage2_final_total: "
            << (s2.log.empty() ? std::string("n/a") : format_double(s2.log.back().total)) << "\n";
    }
}

void cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& out) {
    if (opts.checkpoint.empty()) throw ValidationError("--checkpoint is required");
    Model model = model_from_checkpoint(load_checkpoint(opts.checkpoint));

    Dataset ds;
    StepVocabulary vocab;
    bool cross = !opts.cross_vocab.empty();
    if (cross) {
        std::tie(ds, vocab) = load_dataset(opts.cross_vocab);
    } else if (!opts.dataset.empty()) {
        std::tie(ds, vocab) = load_dataset(opts.dataset);
    } else {
        std::tie(ds, vocab) = resolve_dataset(cfg);
    }

    std::vector<std::string> modes = opts.modes;
    if (modes.empty()) {
        if (cfg.eval.mode == "both")
            modes = {"closed_set", "open_vocab"};
        else
            modes = {cfg.eval.mode};
    }
    std::vector<int> horizons = opts.horizons.empty() ? cfg.eval.horizons : opts.horizons;

    std::ofstream report_file;
    if (!opts.report_path.empty()) {
        if (auto parent = fs::path(opts.report_path).parent_path(); !parent.empty())
            fs::create_directories(parent);
        report_file.open(opts.report_path, std::ios::trunc);
        if (!report_file) throw ValidationError("cannot open report file " + opts.report_path);
    }

    for (int horizon : horizons) {
        Dataset filtered;
        filtered.horizon = horizon;
        filtered.d_raw = ds.d_raw;
        filtered.tasks = ds.tasks;
        for (const auto& s : ds.samples)
            if (s.horizon == horizon) filtered.samples.push_back(s);
        if (filtered.samples.empty())
            throw ValidationError("no samples with horizon " + std::to_string(horizon));

        for (const auto& mode : modes) {
            MetricsReport report;
            if (cross) {
                report = cross_dataset_eval(model, filtered, vocab, opts.seed);
            } else if (mode == "closed_set") {
                report = evaluate(model, filtered, vocab, EvalMode::closed_set, opts.seed);
            } else if (mode == "open_vocab") {
                report = evaluate(model, filtered, vocab, EvalMode::open_vocab, opts.seed);
            } else {
                throw ValidationError("unknown eval mode '" + mode + "'");
            }
            std::string line = report.to_record();
            out << line << "\n";
            if (report_file) report_file << line << "\n";
            if (cross) break;  // transfer protocol has a single retrieval mode
        }
    }
}

namespace {

PlanningSample load_single_sample(const std::string& path, int index) {
    std::ifstream probe(path);
    if (!probe) throw ValidationError("cannot open sample file " + path);
    std::string first_line;
    std::getline(probe, first_line);
    probe.close();

    json first;
    try {
        first = json::parse(first_line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("sample file: malformed JSON: ") + e.what(), 1);
    }
    std::string kind = first.value("record", "");
    if (kind == "header") {
        auto [ds, vocab] = load_dataset(path);
        (void)vocab;
        if (index < 0 || index >= int(ds.samples.size()))
            throw ValidationError("sample index " + std::to_string(index) +
                                  " outside dataset of " + std::to_string(ds.samples.size()));
        return ds.samples[std::size_t(index)];
    }
    if (kind != "sample") throw ParseError("sample file: expected a sample or dataset record", 1);

    PlanningSample s;
    try {
        s.sample_id = first.at("sample_id").get<std::int64_t>();
        s.task_id = first.at("task_id").get<int>();
        auto sf = first.at("start_features").get<std::vector<double>>();
        auto gf = first.at("goal_features").get<std::vector<double>>();
        s.start_features = Eigen::Map<Vec>(sf.data(), Eigen::Index(sf.size()));
        s.goal_features = Eigen::Map<Vec>(gf.data(), Eigen::Index(gf.size()));
        s.gt_steps = first.value("gt_steps", std::vector<int>{});
        s.horizon = first.at("horizon").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("sample file: missing field: ") + e.what(), 1);
    }
    if (s.gt_steps.empty()) s.gt_steps.assign(std::size_t(s.horizon), 0);
    return s;
}

}  // namespace

void cmd_plan(const PlanOptions& opts, std::ostream& out) {
    if (opts.checkpoint.empty()) throw ValidationError("--checkpoint is required");
    Model model = model_from_checkpoint(load_checkpoint(opts.checkpoint));
    PlanningSample sample = load_single_sample(opts.sample_path, opts.sample_index);

    out << "sample " << sample.sample_id << " (task " << sample.task_id << ", horizon "
        << sample.horizon << ")\n";

    if (model.cfg.variant.use_decoder) {
        auto ids = model.infer_closed_set(sample);
        out << "closed-set plan:\n";
        for (std::size_t k = 0; k < ids.size(); ++k)
            out << "  step " << (k + 1) << ": [" << ids[k] << "] " << model.vocab.at(ids[k]).label
                << "\n";
    }

    if (model.cfg.variant.use_llm) {
        std::vector<std::string> candidates;
        if (!opts.open_vocab_labels.empty()) {
            std::ifstream in(opts.open_vocab_labels);
            if (!in) throw ValidationError("cannot open label file " + opts.open_vocab_labels);
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) candidates.push_back(line);
            if (candidates.empty())
                throw ValidationError("label file " + opts.open_vocab_labels + " is empty");
        } else {
            candidates = model.vocab.labels();
        }
        auto plan = model.infer_open_vocab(sample, candidates);
        out << "caption: " << plan.caption << "\n";
        out << "retrieved plan" << (plan.parser_fallback ? " (parser fallback)" : "") << ":\n";
        for (std::size_t k = 0; k < plan.labels.size(); ++k)
            out << "  step " << (k + 1) << ": [" << plan.indices[k] << "] " << plan.labels[k]
                << "\n";
    }
}

void cmd_inspect(const std::string& checkpoint_path, std::ostream& out) {
    auto ckpt = load_checkpoint(checkpoint_path);
    out << "stage: " << ckpt.stage << "\n";
    out << "epoch: " << ckpt.epoch << "\n";
    out << "config_fingerprint: " << ckpt.config_fingerprint << "\n";
    out << "tokenizer_vocab: " << ckpt.tokenizer_vocab.size() << " tokens\n";
    out << "step_vocabulary: " << ckpt.vocab.size() << " steps\n";
    out << "groups:\n";
    for (const auto& g : ckpt.groups) {
        std::size_t count = 0;
        std::ostringstream shapes;
        for (const auto& m : g.tensors) {
            count += std::size_t(m.size());
            shapes << " " << m.rows() << "x" << m.cols();
        }
        out << "  " << g.name << " hash=" << g.hash << " params=" << count << " shapes:"
            << shapes.str() << "\n";
    }
}

}  // namespace planllm::cli
