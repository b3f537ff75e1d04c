#pragma once

#include <vector>

#include "planllm/attention.hpp"

namespace planllm {

// Closed-set branch: learnable decoder queries cross-attend over the visual
// and fused tokens, get enriched with LLM hidden states, are refined against
// the description embeddings, and end in an N-way classifier.
struct StepDecoder {
    Parameter queries;            // horizon x d_model (distinct from the MIM step queries)
    AttentionParams decode_attn;  // queries over [x'_0, x'_T, x^q]
    Parameter fusion_w, fusion_b; // d_lm -> d_model bridge for the LLM hidden states
    AttentionParams fusion_attn;  // r^SD over projected h
    AttentionParams refine_attn;  // r^KF over description embeddings Y
    Parameter cls_w, cls_b;       // d_model -> N

    StepDecoder() = default;
    StepDecoder(const std::string& name, int d_model, int d_lm, int heads, int horizon,
                int n_steps, std::mt19937_64& rng);

    int horizon() const { return static_cast<int>(queries.value.rows()); }
    int n_steps() const { return static_cast<int>(cls_w.value.cols()); }

    std::vector<Parameter*> query_group() { return {&queries}; }
    std::vector<Parameter*> decode_group() { return decode_attn.parameters(); }
    std::vector<Parameter*> fusion_group();
    std::vector<Parameter*> refine_group() { return refine_attn.parameters(); }
    std::vector<Parameter*> classifier_group() { return {&cls_w, &cls_b}; }
};

// r^SD: decoder queries attending over the (2+T)-token context.
Var step_decode(Tape& t, StepDecoder& dec, Var context);

// r^KF: fuse LLM hidden states (d_lm) into the step representations.
Var knowledge_fuse(Tape& t, StepDecoder& dec, Var step_repr, Var lm_hidden_states);

// r^SR: refine against all N description embeddings.
Var step_refine(Tape& t, StepDecoder& dec, Var step_repr, const Mat& description_embeddings);

// horizon x N logits.
Var classify(Tape& t, StepDecoder& dec, Var refined);

// Mean per-position cross-entropy against the ground-truth step ids.
Var sd_loss(Tape& t, Var logits, const std::vector<int>& gt_steps);

// Eq-style unweighted sum; any term may be a zero constant when a branch is
// disabled. Optional weights support the config override.
struct LossWeights {
    double mim = 1.0, asc = 1.0, sd = 1.0;
};

Var total_loss(Tape& t, Var mim, Var asc, Var sd, const LossWeights& w = {});

}  // namespace planllm
