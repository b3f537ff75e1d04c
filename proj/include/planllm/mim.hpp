#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "planllm/attention.hpp"

namespace planllm {

// How ground-truth step text enters the Q-Former self-attention stream.
//   none   — inference: no text tokens at all
//   full   — training: queries may attend to text tokens
//   masked — text tokens present but query->text attention weights are
//            forced to zero; must reproduce `none` exactly (guard mode)
enum class TextMode { none, full, masked };

struct QFormerBlock {
    AttentionParams self_attn;
    AttentionParams cross_attn;
    FeedForwardParams ffn;
    LayerNormParams ln_self, ln_cross, ln_ffn;

    QFormerBlock() = default;
    QFormerBlock(const std::string& name, int d_model, int heads, int d_ff, std::mt19937_64& rng);
    std::vector<Parameter*> parameters();
};

struct QFormer {
    int horizon = 0;
    std::vector<QFormerBlock> blocks;

    QFormer() = default;
    QFormer(const std::string& name, int d_model, int heads, int n_blocks, int d_ff, int horizon,
            std::mt19937_64& rng);
    std::vector<Parameter*> parameters();
};

// Self-attention over the two visual state tokens; returns (x'_0, x'_T).
std::pair<Var, Var> state_interact(Tape& t, AttentionParams& p, Var x0, Var xT);

// Fused step embeddings x^q (horizon x d_model). `visual` must carry exactly
// two tokens; `text_tokens` are the description embeddings of the ground
// truth steps and join only the self-attention stream.
Var qformer_fuse(Tape& t, QFormer& qf, Parameter& step_queries, Var visual,
                 const Mat* text_tokens, TextMode mode);

// Mean over tokens then L2 normalization; used for both modalities.
Var pool_tokens(Tape& t, Var tokens);

struct SimilarityConfig {
    double temperature = 0.07;
    bool infonce = false;  // per-anchor variant kept for comparison only

    void validate() const {
        if (!(temperature > 0.0)) throw ValidationError("SimilarityConfig: temperature must be > 0");
    }
};

// Aggregated contrastive loss over a batch of pooled embeddings:
//   -log( sum_j e^{s_jj} / sum_{j,k} e^{s_jk} ),  s = cosine / temperature.
Var vlc_loss(Tape& t, Var pooled_visual, Var pooled_queries, const SimilarityConfig& cfg);

// Pair scorer for the matching loss: concat -> hidden -> tanh -> logit.
struct MatchHead {
    Parameter w1, b1, w2, b2;

    MatchHead() = default;
    MatchHead(const std::string& name, int d_model, int hidden, std::mt19937_64& rng);
    std::vector<Parameter*> parameters();

    Var score_pairs(Tape& t, Var pairs);  // (n x 2d) -> (n x 1) logits
};

// Binary cross-entropy over all B^2 (visual, query) pairs, positives on the
// diagonal, mean reduction.
Var vlm_loss(Tape& t, Var pooled_visual, Var pooled_queries, MatchHead& head);

Var mim_loss(Tape& t, Var vlc, Var vlm);

}  // namespace planllm
