#include "planllm/lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <sstream>

#include "planllm/encoders.hpp"

namespace planllm {

Tokenizer Tokenizer::from_vocab(std::vector<std::string> words) {
    Tokenizer t;
    t.vocab = std::move(words);
    for (std::size_t i = 0; i < t.vocab.size(); ++i)
        t.index.emplace(t.vocab[i], static_cast<int>(i));
    auto require = [&](const char* w) {
        auto it = t.index.find(w);
        if (it == t.index.end())
            throw ValidationError(std::string("Tokenizer: vocabulary missing special '") + w + "'");
        return it->second;
    };
    t.pad_id = require("<pad>");
    t.bos_id = require("<bos>");
    t.eos_id = require("<eos>");
    t.unk_id = require("<unk>");
    return t;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& labels, int max_horizon) {
    std::vector<std::string> words{"<pad>", "<bos>", "<eos>", "<unk>"};
    std::unordered_map<std::string, int> seen;
    auto add = [&](const std::string& w) {
        if (seen.emplace(w, 1).second) words.push_back(w);
    };
    add("step");
    add(";");
    for (int k = 1; k <= max_horizon; ++k) add(std::to_string(k) + ":");
    for (const auto& label : labels)
        for (const auto& w : tokenize_words(label)) add(w);
    return from_vocab(std::move(words));
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& w : tokenize_words(text)) {
        auto it = index.find(w);
        out.push_back(it == index.end() ? unk_id : it->second);
    }
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id == pad_id || id == bos_id || id == eos_id) continue;
        if (id < 0 || id >= size())
            throw ValidationError("Tokenizer::decode: id " + std::to_string(id) + " out of range");
        if (!out.empty()) out.push_back(' ');
        out += vocab[static_cast<std::size_t>(id)];
    }
    return out;
}

std::string format_caption(const std::vector<std::string>& labels, int horizon) {
    if (static_cast<int>(labels.size()) != horizon)
        throw ValidationError("format_caption: expected " + std::to_string(horizon) +
                              " labels, got " + std::to_string(labels.size()));
    std::ostringstream out;
    for (int k = 0; k < horizon; ++k) {
        if (labels[static_cast<std::size_t>(k)].empty())
            throw ValidationError("format_caption: empty label at position " + std::to_string(k));
        if (k > 0) out << " ; ";
        out << "step " << (k + 1) << ": " << labels[static_cast<std::size_t>(k)];
    }
    return out.str();
}

namespace {

std::string trim_segment(std::string s) {
    auto issep = [](char c) { return std::isspace(static_cast<unsigned char>(c)) || c == ';'; };
    std::size_t b = 0, e = s.size();
    while (b < e && issep(s[b])) ++b;
    while (e > b && issep(s[e - 1])) --e;
    return s.substr(b, e - b);
}

}  // namespace

ParsedCaption parse_caption(const std::string& text, int horizon) {
    if (horizon < 1) throw ValidationError("parse_caption: horizon must be >= 1");
    ParsedCaption out;

    static const std::regex marker(R"(step\s+\d+\s*:)", std::regex::icase);
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (start, end) of markers
    for (auto it = std::sregex_iterator(text.begin(), text.end(), marker);
         it != std::sregex_iterator(); ++it)
        spans.emplace_back(static_cast<std::size_t>(it->position()),
                           static_cast<std::size_t>(it->position() + it->length()));

    std::vector<std::string> segments;
    if (!spans.empty()) {
        for (std::size_t i = 0; i < spans.size(); ++i) {
            std::size_t start = spans[i].second;
            std::size_t end = (i + 1 < spans.size()) ? spans[i + 1].first : text.size();
            std::string seg = trim_segment(text.substr(start, end - start));
            if (!seg.empty()) segments.push_back(std::move(seg));
        }
    } else {
        std::size_t pos = 0;
        while (pos <= text.size()) {
            std::size_t next = text.find(';', pos);
            std::string piece = text.substr(pos, next == std::string::npos ? std::string::npos
                                                                           : next - pos);
            std::string seg = trim_segment(piece);
            if (!seg.empty()) segments.push_back(std::move(seg));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
    }

    std::string whole = trim_segment(text);
    if (static_cast<int>(segments.size()) < horizon) out.fallback = true;
    segments.resize(static_cast<std::size_t>(horizon), whole);
    out.segments = std::move(segments);
    return out;
}

LmBlock::LmBlock(const std::string& name, int d_lm, int heads, int d_ff, std::mt19937_64& rng)
    : attn(name + ".attn", d_lm, heads, rng),
      ffn(name + ".ffn", d_lm, d_ff, rng),
      ln_attn(name + ".ln_attn", d_lm),
      ln_ffn(name + ".ln_ffn", d_lm) {}

std::vector<Parameter*> LmBlock::parameters() {
    std::vector<Parameter*> out = attn.parameters();
    for (auto* p : ffn.parameters()) out.push_back(p);
    for (auto* ln : {&ln_attn, &ln_ffn})
        for (auto* p : ln->parameters()) out.push_back(p);
    return out;
}

TinyLM::TinyLM(const std::string& name, int vocab, int d_lm_, int n_blocks, int heads_, int d_ff,
               int max_seq_, std::mt19937_64& rng)
    : d_lm(d_lm_), heads(heads_), max_seq(max_seq_) {
    if (vocab < 5) throw ValidationError("TinyLM: vocabulary too small");
    tok_embed = Parameter(name + ".tok_embed", gaussian_matrix(rng, vocab, d_lm, 0.1));
    pos_embed = Parameter(name + ".pos_embed", gaussian_matrix(rng, max_seq, d_lm, 0.1));
    for (int b = 0; b < n_blocks; ++b)
        blocks.emplace_back(name + ".block" + std::to_string(b), d_lm, heads_, d_ff, rng);
    ln_final = LayerNormParams(name + ".ln_final", d_lm);
    out_w = Parameter(name + ".out_w", gaussian_matrix(rng, d_lm, vocab, 1.0 / std::sqrt(double(d_lm))));
    out_b = Parameter(name + ".out_b", Mat::Zero(1, vocab));
}

std::vector<Parameter*> TinyLM::parameters() {
    std::vector<Parameter*> out{&tok_embed, &pos_embed};
    for (auto& b : blocks)
        for (auto* p : b.parameters()) out.push_back(p);
    for (auto* p : ln_final.parameters()) out.push_back(p);
    out.push_back(&out_w);
    out.push_back(&out_b);
    return out;
}

LoraSet::LoraSet(const std::string& name, const TinyLM& lm, int rank_, double alpha_,
                 std::mt19937_64& rng)
    : rank(rank_), alpha(alpha_) {
    int d_h = lm.d_lm / lm.heads;
    for (std::size_t b = 0; b < lm.blocks.size(); ++b) {
        AttentionAdapters ad;
        for (int h = 0; h < lm.heads; ++h) {
            std::string base = name + ".block" + std::to_string(b) + ".h" + std::to_string(h);
            ad.query.emplace_back(base + ".q", lm.d_lm, d_h, rank_, alpha_, rng);
            ad.value.emplace_back(base + ".v", lm.d_lm, d_h, rank_, alpha_, rng);
        }
        per_block.push_back(std::move(ad));
    }
}

std::vector<Parameter*> LoraSet::parameters() {
    std::vector<Parameter*> out;
    for (auto& block : per_block)
        for (auto* list : {&block.query, &block.value})
            for (auto& a : *list) {
                out.push_back(&a.down);
                out.push_back(&a.up);
            }
    return out;
}

PrefixProjection::PrefixProjection(const std::string& name, int d_model, int d_lm,
                                   std::mt19937_64& rng)
    : w(name + ".w", gaussian_matrix(rng, d_model, d_lm, 1.0 / std::sqrt(double(d_model)))),
      b(name + ".b", Mat::Zero(1, d_lm)) {}

Var project_prefix(Tape& t, PrefixProjection& proj, Var prefix_tokens) {
    return t.add_rowwise(t.matmul(prefix_tokens, t.param(proj.w)), t.param(proj.b));
}

Var lm_hidden(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix, const std::vector<int>& tokens) {
    Eigen::Index n_prefix = t.value(prefix).rows();
    if (t.value(prefix).cols() != lm.d_lm)
        throw ShapeError("lm_hidden: prefix width != d_lm");
    Eigen::Index n = n_prefix + static_cast<Eigen::Index>(tokens.size());
    if (n > lm.max_seq)
        throw ShapeError("lm_hidden: sequence length " + std::to_string(n) + " exceeds max_seq " +
                         std::to_string(lm.max_seq));
    if (lora && lora->per_block.size() != lm.blocks.size())
        throw ShapeError("lm_hidden: adapter set does not match block count");

    Var x = prefix;
    if (!tokens.empty()) {
        Var emb = t.gather_rows(t.param(lm.tok_embed), tokens);
        x = t.concat_rows(std::vector<Var>{prefix, emb});
    }
    x = t.add(x, t.slice_rows(t.param(lm.pos_embed), 0, n));

    Mat mask = causal_mask(n);
    for (std::size_t b = 0; b < lm.blocks.size(); ++b) {
        auto& block = lm.blocks[b];
        AttentionAdapters* ad = lora ? lora->block_adapters(b) : nullptr;
        Var normed = layer_norm(t, x, block.ln_attn);
        x = t.add(x, attention_core(t, normed, normed, block.attn, &mask, ad));
        x = t.add(x, feed_forward(t, layer_norm(t, x, block.ln_ffn), block.ffn));
    }
    return layer_norm(t, x, lm.ln_final);
}

Var lm_logits(Tape& t, TinyLM& lm, Var hidden) {
    return t.add_rowwise(t.matmul(hidden, t.param(lm.out_w)), t.param(lm.out_b));
}

Var llm_encode(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix, int horizon) {
    Eigen::Index n_prefix = t.value(prefix).rows();
    if (n_prefix < horizon + 2)
        throw ShapeError("llm_encode: prefix must hold 2 visual tokens plus the step tokens");
    Var hidden = lm_hidden(t, lm, lora, prefix, {});
    return t.slice_rows(hidden, n_prefix - horizon, horizon);
}

CaptionForward caption_loss_with_hidden(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix,
                                        const std::vector<int>& caption_tokens,
                                        const Tokenizer& tok, int step_rows) {
    if (caption_tokens.empty()) throw ValidationError("asc_loss: empty target caption");
    Eigen::Index n_prefix = t.value(prefix).rows();
    if (step_rows < 0 || step_rows > n_prefix)
        throw ShapeError("caption_loss_with_hidden: step_rows outside prefix");

    std::vector<int> input{tok.bos_id};
    input.insert(input.end(), caption_tokens.begin(), caption_tokens.end());
    std::vector<int> targets = caption_tokens;
    targets.push_back(tok.eos_id);

    Var hidden = lm_hidden(t, lm, lora, prefix, input);
    Var predict_slice = t.slice_rows(hidden, n_prefix, static_cast<Eigen::Index>(input.size()));
    Var logits = lm_logits(t, lm, predict_slice);
    CaptionForward out;
    out.loss = t.cross_entropy_rows(logits, targets);
    out.step_hidden = t.slice_rows(hidden, n_prefix - step_rows, step_rows);
    return out;
}

Var asc_loss(Tape& t, TinyLM& lm, LoraSet* lora, Var prefix, const std::vector<int>& caption_tokens,
             const Tokenizer& tok) {
    return caption_loss_with_hidden(t, lm, lora, prefix, caption_tokens, tok,
                                    /*step_rows=*/0)
        .loss;
}

std::vector<int> llm_generate(TinyLM& lm, LoraSet* lora, const Mat& prefix, int max_len,
                              const Tokenizer& tok) {
    std::vector<int> generated;
    std::vector<int> input{tok.bos_id};
    for (int step = 0; step < max_len; ++step) {
        Tape t;
        Var hidden = lm_hidden(t, lm, lora, t.constant(prefix), input);
        Var last = t.slice_rows(hidden, t.value(hidden).rows() - 1, 1);
        const Mat logits = t.value(lm_logits(t, lm, last));
        int best = 0;
        for (Eigen::Index i = 1; i < logits.cols(); ++i)
            if (logits(0, i) > logits(0, best)) best = static_cast<int>(i);
        if (best == tok.eos_id) break;
        generated.push_back(best);
        input.push_back(best);
    }
    return generated;
}

}  // namespace planllm
