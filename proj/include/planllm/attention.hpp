#pragma once

#include <optional>
#include <random>
#include <vector>

#include "planllm/tape.hpp"

namespace planllm {

// Per-target low-rank adapter pair. `down` (d_in x r) is Gaussian at init,
// `up` (r x d_out) starts at zero so the effective weight equals the base
// exactly until training moves it.
struct LoraAdapter {
    Parameter down;
    Parameter up;
    double alpha = 8.0;
    int rank = 4;

    LoraAdapter() = default;
    LoraAdapter(const std::string& name, Eigen::Index d_in, Eigen::Index d_out, int r,
                double a, std::mt19937_64& rng)
        : down(name + ".down", gaussian_matrix(rng, d_in, r, 0.02)),
          up(name + ".up", Mat::Zero(r, d_out)),
          alpha(a),
          rank(r) {}
};

// W_eff = W + (alpha / r) * down * up; the base weight is never modified.
Var lora_apply(Tape& t, Parameter& base, LoraAdapter& adapter);

// Multi-head attention parameters. Heads keep separate projection matrices
// (width x head_dim each); the output projection maps the concatenated
// heads back to `width`.
struct AttentionParams {
    int heads = 0;
    int width = 0;
    std::vector<Parameter> wq, wk, wv;  // one per head
    Parameter wo;                       // width x width
    Parameter bo;                       // 1 x width

    AttentionParams() = default;
    AttentionParams(const std::string& name, int width, int heads, std::mt19937_64& rng);

    std::vector<Parameter*> parameters();
};

// Optional adapters for the query/value projections of each head.
struct AttentionAdapters {
    std::vector<LoraAdapter> query;  // one per head
    std::vector<LoraAdapter> value;
};

// Scaled dot-product attention over `context` for each row of `queries`,
// output projection included, no residual. `add_mask` is |queries| x |context|,
// added to the attention logits of every head.
Var attention_core(Tape& t, Var queries, Var context, AttentionParams& p,
                   const Mat* add_mask = nullptr, AttentionAdapters* adapters = nullptr);

// Residual forms; these are the public ops. Both reject non-finite inputs.
Var self_attention(Tape& t, Var tokens, AttentionParams& p, const Mat* add_mask = nullptr,
                   AttentionAdapters* adapters = nullptr);
Var cross_attention(Tape& t, Var queries, Var context, AttentionParams& p,
                    const Mat* add_mask = nullptr, AttentionAdapters* adapters = nullptr);

struct FeedForwardParams {
    Parameter w1, b1, w2, b2;

    FeedForwardParams() = default;
    FeedForwardParams(const std::string& name, int width, int hidden, std::mt19937_64& rng);

    std::vector<Parameter*> parameters();
};

// w2(gelu(w1 x + b1)) + b2, no residual.
Var feed_forward(Tape& t, Var x, FeedForwardParams& p);

struct LayerNormParams {
    Parameter gain, bias;

    LayerNormParams() = default;
    LayerNormParams(const std::string& name, int width)
        : gain(name + ".gain", Mat::Ones(1, width)), bias(name + ".bias", Mat::Zero(1, width)) {}

    std::vector<Parameter*> parameters() { return {&gain, &bias}; }
};

Var layer_norm(Tape& t, Var x, LayerNormParams& p);

// Causal mask for an n-token sequence: position i may attend to j <= i.
Mat causal_mask(Eigen::Index n);

}  // namespace planllm
