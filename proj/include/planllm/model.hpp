#pragma once

#include <optional>
#include <string>
#include <vector>

#include "planllm/data.hpp"
#include "planllm/decoder.hpp"
#include "planllm/encoders.hpp"
#include "planllm/lm.hpp"
#include "planllm/mim.hpp"

namespace planllm {

// Which branches exist. Ablation arms disable whole branches; parameters
// are always constructed so checkpoints stay shape-stable across variants.
struct ModelVariant {
    bool use_qformer = true;  // MIM fusion + VLC/VLM losses
    bool use_llm = true;      // caption branch: ASC loss, hidden states, knowledge fusion
    bool use_decoder = true;  // closed-set branch + SD loss
    bool train_llm = true;    // LoRA trainable in stage 2 (false = frozen-LLM arm)
};

struct ModelConfig {
    int d_raw = 64, d_back = 64, d_model = 64, heads = 4;
    int qformer_blocks = 2, d_ff = 128;
    int d_lm = 64, lm_blocks = 2, lm_heads = 4, lm_ff = 128, max_seq = 64;
    int lora_rank = 4;
    double lora_alpha = 8.0;
    int horizon = 3;
    int text_embed_dim = 64;
    int match_hidden = 64;
    double temperature = 0.07;
    bool vlc_infonce = false;
    int max_caption_len = 40;
    TextMode train_text_mode = TextMode::full;
    LossWeights loss_weights;
    ModelVariant variant;
    std::uint64_t init_seed = 1;

    void validate() const;
};

struct ParamGroup {
    std::string name;
    std::vector<Parameter*> params;
};

// The assembled PlanLLM-style model: encoders, MIM fusion, caption LM with
// adapters, and the closed-set decoder, over one step vocabulary.
class Model {
public:
    Model(ModelConfig cfg, StepVocabulary vocabulary);

    ModelConfig cfg;
    StepVocabulary vocab;
    Tokenizer tokenizer;
    Mat descriptions;  // N x d_model frozen description embeddings y_i

    VisualEncoderState visual;
    TextEncoderState text_encoder;
    AttentionParams state_inter;
    Parameter step_queries;
    QFormer qformer;
    MatchHead match_head;
    TinyLM lm;
    PrefixProjection prefix_proj;
    LoraSet lora;
    StepDecoder decoder;

    // All fifteen named groups in manifest order.
    std::vector<ParamGroup> parameter_groups();
    ParamGroup group(const std::string& name);

    struct SampleForward {
        Var visual_pair;        // 2 x d_model after state interaction
        std::optional<Var> xq;  // horizon x d_model fused step embeddings
        std::optional<Var> h;   // LLM hidden states for knowledge fusion
        std::optional<Var> prefix;  // projected LM prefix
    };

    // Encoders -> state interaction -> (Q-Former) -> (LLM encode).
    // `training` controls whether ground-truth text tokens join the
    // Q-Former self-attention stream.
    SampleForward encode_sample(Tape& t, const PlanningSample& sample, bool training);

    Var closed_set_logits(Tape& t, SampleForward& fwd);

    struct BatchLosses {
        Var mim, asc, sd, total;
        double mim_value = 0.0, asc_value = 0.0, sd_value = 0.0, total_value = 0.0;
    };

    // Stage 1: MIM loss only. Stage 2 / one-stage: the full objective.
    BatchLosses batch_loss(Tape& t, const std::vector<const PlanningSample*>& batch,
                           bool mim_only);

    // Closed-set inference over the decoder branch; ties break to lowest id.
    std::vector<int> infer_closed_set(const PlanningSample& sample);

    struct OpenVocabPlan {
        std::string caption;
        std::vector<std::string> labels;  // horizon entries
        std::vector<int> indices;         // candidate indices, horizon entries
        bool parser_fallback = false;
    };

    // Caption generation + per-segment retrieval over candidate labels.
    OpenVocabPlan infer_open_vocab(const PlanningSample& sample,
                                   const std::vector<std::string>& candidate_labels);

    // LoRA adapters participate whenever the variant has an LLM branch.
    LoraSet* active_lora() { return cfg.variant.use_llm ? &lora : nullptr; }

    std::string caption_for(const std::vector<int>& gt_steps) const;

private:
    SampleForward encode_core(Tape& t, const PlanningSample& sample, bool training,
                              bool want_prefix);
    int step_hidden_rows() const;
    Var lm_prefix_tokens(Tape& t, SampleForward& fwd);
    Mat inference_prefix(const PlanningSample& sample);
};

}  // namespace planllm
