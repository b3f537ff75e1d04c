#pragma once

// Shared desk-scale fixtures for training/eval tests: a small noiseless
// dataset and a model sized to train in seconds.

#include "planllm/config.hpp"
#include "planllm/model.hpp"
#include "planllm/training.hpp"

namespace planllm::test {

inline GeneratorSpec tiny_data_spec(std::uint64_t seed = 11, double noise = 0.0) {
    GeneratorSpec spec;
    spec.n_tasks = 3;
    spec.n_steps = 8;
    spec.horizon = 3;
    spec.samples_per_task = 12;
    spec.d_raw = 12;
    spec.noise_sigma = noise;
    spec.seed = seed;
    return spec;
}

inline ModelConfig tiny_model_config(int horizon = 3, int d_raw = 12) {
    ModelConfig cfg;
    cfg.d_raw = d_raw;
    cfg.d_back = 12;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.qformer_blocks = 1;
    cfg.d_ff = 32;
    cfg.d_lm = 16;
    cfg.lm_blocks = 1;
    cfg.lm_heads = 2;
    cfg.lm_ff = 32;
    cfg.max_seq = 64;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 4.0;
    cfg.horizon = horizon;
    cfg.text_embed_dim = 16;
    cfg.match_hidden = 16;
    cfg.init_seed = 5;
    return cfg;
}

inline StageConfig quick_stage(int stage, int epochs, std::uint64_t seed = 1234) {
    StageConfig cfg = stage == 1   ? StageConfig::stage1_defaults()
                      : stage == 2 ? StageConfig::stage2_defaults()
                                   : StageConfig::one_stage_defaults();
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = seed;
    return cfg;
}

}  // namespace planllm::test
