#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "planllm/config.hpp"
#include "planllm/eval.hpp"
#include "planllm/training.hpp"

namespace planllm::cli {

// Command bodies shared by the binary and the test suite. They throw
// (ValidationError -> exit 1, anything else -> exit 2) instead of exiting.

void cmd_generate_data(const RunConfig& cfg, const std::string& out_path, std::ostream& out);

struct TrainOptions {
    std::string stage = "all";          // "1", "2", or "all"
    std::string mode = "progressive";   // "progressive" | "one-stage"
    std::string resume_from;            // stage-1 checkpoint for --stage 2
};

void cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& out);

struct EvalOptions {
    std::string checkpoint;
    std::string dataset;             // evaluated dataset (ignored with cross_vocab)
    std::string cross_vocab;         // other dataset; triggers the transfer protocol
    std::vector<std::string> modes;  // defaults from the config when empty
    std::vector<int> horizons;       // defaults from the config when empty
    std::string report_path;         // one JSON record per line; empty = stdout only
    std::uint64_t seed = 0;
};

void cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& out);

struct PlanOptions {
    std::string checkpoint;
    std::string sample_path;  // dataset file or a single bare sample record
    int sample_index = 0;
    std::string open_vocab_labels;  // optional file, one candidate label per line
};

void cmd_plan(const PlanOptions& opts, std::ostream& out);

void cmd_inspect(const std::string& checkpoint_path, std::ostream& out);

// Resolves the dataset a config refers to (load when data.path is set,
// generate otherwise).
std::pair<Dataset, StepVocabulary> resolve_dataset(const RunConfig& cfg);

}  // namespace planllm::cli
