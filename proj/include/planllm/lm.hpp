#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "planllm/attention.hpp"

namespace planllm {

// Word-level tokenizer over the step-label word bank plus caption markers
// and specials. Ids are stable given the same label list.
struct Tokenizer {
    std::vector<std::string> vocab;  // index == id
    std::unordered_map<std::string, int> index;
    int pad_id = 0, bos_id = 1, eos_id = 2, unk_id = 3;

    static Tokenizer build(const std::vector<std::string>& labels, int max_horizon = 8);
    static Tokenizer from_vocab(std::vector<std::string> words);

    int size() const { return static_cast<int>(vocab.size()); }
    std::vector<int> encode(const std::string& text) const;
    std::string decode(std::span<const int> ids) const;  // drops specials
};

// "step 1: {l1} ; step 2: {l2} ; ..." — the formatted plan sentence.
std::string format_caption(const std::vector<std::string>& labels, int horizon);

struct ParsedCaption {
    std::vector<std::string> segments;  // exactly horizon entries
    bool fallback = false;              // fewer parsed segments than horizon
};

// Splits on "step k:" markers, falling back to ";" separators and finally to
// copies of the whole caption; never fails.
ParsedCaption parse_caption(const std::string& text, int horizon);

struct LmBlock {
    AttentionParams attn;
    FeedForwardParams ffn;
    LayerNormParams ln_attn, ln_ffn;

    LmBlock() = default;
    LmBlock(const std::string& name, int d_lm, int heads, int d_ff, std::mt19937_64& rng);
    std::vector<Parameter*> parameters();
};

// Small causal transformer LM; all base weights live in the lm_base group.
struct TinyLM {
    int d_lm = 0, heads = 0, max_seq = 0;
    Parameter tok_embed;  // vocab x d_lm
    Parameter pos_embed;  // max_seq x d_lm
    std::vector<LmBlock> blocks;
    LayerNormParams ln_final;
    Parameter out_w;  // d_lm x vocab
    Parameter out_b;  // 1 x vocab

    TinyLM() = default;
    TinyLM(const std::string& name, int vocab, int d_lm, int blocks, int heads, int d_ff,
           int max_seq, std::mt19937_64& rng);
    int vocab() const { return static_cast<int>(tok_embed.value.rows()); }
    std::vector<Parameter*> parameters();
};

// One adapter pair per (block, head) for query and value projections.
struct LoraSet {
    int rank = 0;
    double alpha = 0.0;
    std::vector<AttentionAdapters> per_block;

    LoraSet() = default;
    LoraSet(const std::string& name, const TinyLM& lm, int rank, double alpha,
            std::mt19937_64& rng);
    std::vector<Parameter*> parameters();
    AttentionAdapters* block_adapters(std::size_t i) { return &per_block[i]; }
};

// d_model -> d_lm map for the visual/fused prefix tokens.
struct PrefixProjection {
    Parameter w, b;

    PrefixProjection() = default;
    PrefixProjection(const std::string& name, int d_model, int d_lm, std::mt19937_64& rng);
    std::vector<Parameter*> parameters() { return {&w, &b}; }
};

Var project_prefix(Tape& t, PrefixProjection& proj, Var prefix_tokens);

// Hidden states after the final layer norm for the sequence
// [prefix rows ; embedded tokens], causal mask across everything.
// `lora` may be null (adapter-free path).
Var lm_hidden(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix, const std::vector<int>& tokens);

// Vocabulary logits for a slice of hidden states.
Var lm_logits(Tape& t, TinyLM& lm, Var hidden);

// h_{1:T}: hidden states at the fused-step prefix positions. `prefix` must
// be the projected (2+T) x d_lm prefix.
Var llm_encode(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix, int horizon);

// Teacher-forced next-token cross-entropy over the caption positions only.
Var asc_loss(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix, const std::vector<int>& caption_tokens,
             const Tokenizer& tok);

struct CaptionForward {
    Var loss;
    Var step_hidden;  // trailing `step_rows` prefix positions (causality makes
                      // these identical to a prefix-only forward)
};

// Single forward pass serving both the captioning loss and the hidden
// states consumed by knowledge fusion.
CaptionForward caption_loss_with_hidden(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix,
                                        const std::vector<int>& caption_tokens,
                                        const Tokenizer& tok, int step_rows);

// Greedy decoding from BOS; stops at EOS or max_len. Returns generated ids
// without BOS/EOS. Deterministic; ties resolve to the lowest id.
std::vector<int> llm_generate(TinyLM& lm, LoraSet* lora, const Mat& prefix, int max_len,
                              const Tokenizer& tok);

}  // namespace planllm
