#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "planllm/data.hpp"
#include "planllm/model.hpp"
#include "planllm/training.hpp"

namespace planllm {

struct SplitSpec {
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    std::uint64_t seed = 7;
    bool by_task = false;
};

struct EvalSpec {
    std::string mode = "closed_set";  // closed_set | open_vocab | both
    std::vector<int> horizons{3};
};

// Declarative run configuration: one file drives data generation, training,
// and evaluation. Unknown keys are rejected; every field has a default.
struct RunConfig {
    GeneratorSpec data;
    std::string dataset_path;  // when set, load this file instead of generating
    SplitSpec split;
    ModelConfig model;
    StageConfig stage1 = StageConfig::stage1_defaults();
    StageConfig stage2 = StageConfig::stage2_defaults();
    EvalSpec eval;
    std::string out_dir = "runs/default";

    void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);

// PLANLLM_OUT_DIR and PLANLLM_SEED (training seed) only.
void apply_env_overrides(RunConfig& cfg);

// Canonical text of the effective config (defaults filled, keys sorted);
// its FNV-1a hash is the config fingerprint.
std::string canonical_config_text(const RunConfig& cfg);
std::string config_fingerprint(const RunConfig& cfg);

}  // namespace planllm
