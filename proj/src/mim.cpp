#include "planllm/mim.hpp"

#include <numeric>

namespace planllm {

QFormerBlock::QFormerBlock(const std::string& name, int d_model, int heads, int d_ff,
                           std::mt19937_64& rng)
    : self_attn(name + ".self", d_model, heads, rng),
      cross_attn(name + ".cross", d_model, heads, rng),
      ffn(name + ".ffn", d_model, d_ff, rng),
      ln_self(name + ".ln_self", d_model),
      ln_cross(name + ".ln_cross", d_model),
      ln_ffn(name + ".ln_ffn", d_model) {}

std::vector<Parameter*> QFormerBlock::parameters() {
    std::vector<Parameter*> out;
    for (auto* group : {&self_attn, &cross_attn})
        for (auto* p : group->parameters()) out.push_back(p);
    for (auto* p : ffn.parameters()) out.push_back(p);
    for (auto* ln : {&ln_self, &ln_cross, &ln_ffn})
        for (auto* p : ln->parameters()) out.push_back(p);
    return out;
}

QFormer::QFormer(const std::string& name, int d_model, int heads, int n_blocks, int d_ff,
                 int horizon_, std::mt19937_64& rng)
    : horizon(horizon_) {
    if (n_blocks < 1) throw ValidationError("QFormer: need at least one block");
    for (int b = 0; b < n_blocks; ++b)
        blocks.emplace_back(name + ".block" + std::to_string(b), d_model, heads, d_ff, rng);
}

std::vector<Parameter*> QFormer::parameters() {
    std::vector<Parameter*> out;
    for (auto& b : blocks)
        for (auto* p : b.parameters()) out.push_back(p);
    return out;
}

std::pair<Var, Var> state_interact(Tape& t, AttentionParams& p, Var x0, Var xT) {
    if (t.value(x0).rows() != 1 || t.value(xT).rows() != 1 ||
        t.value(x0).cols() != p.width || t.value(xT).cols() != p.width)
        throw ShapeError("state_interact: expects two 1 x d_model tokens");
    Var both = t.concat_rows(std::vector<Var>{x0, xT});
    Var out = self_attention(t, both, p);
    return {t.slice_rows(out, 0, 1), t.slice_rows(out, 1, 1)};
}

Var qformer_fuse(Tape& t, QFormer& qf, Parameter& step_queries, Var visual,
                 const Mat* text_tokens, TextMode mode) {
    const int T = qf.horizon;
    if (t.value(visual).rows() != 2) throw ShapeError("qformer_fuse: visual must have exactly 2 tokens");
    if (step_queries.value.rows() != T)
        throw ShapeError("qformer_fuse: query count " + std::to_string(step_queries.value.rows()) +
                         " != horizon " + std::to_string(T));
    if (mode != TextMode::none && text_tokens == nullptr)
        throw ShapeError("qformer_fuse: text mode requires text tokens");

    Eigen::Index n_text = (mode == TextMode::none) ? 0 : text_tokens->rows();
    Eigen::Index n_all = T + n_text;

    std::optional<Mat> mask;
    if (mode == TextMode::masked && n_text > 0) {
        mask = Mat::Zero(n_all, n_all);
        double ninf = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < T; ++i)
            for (Eigen::Index j = T; j < n_all; ++j) (*mask)(i, j) = ninf;
    }

    Var stream = t.param(step_queries);
    if (n_text > 0) stream = t.concat_rows(std::vector<Var>{stream, t.constant(*text_tokens)});

    for (auto& block : qf.blocks) {
        Var normed = layer_norm(t, stream, block.ln_self);
        stream = t.add(stream, attention_core(t, normed, normed, block.self_attn,
                                              mask ? &*mask : nullptr));
        Var queries = (n_text > 0) ? t.slice_rows(stream, 0, T) : stream;
        Var q_norm = layer_norm(t, queries, block.ln_cross);
        queries = t.add(queries, attention_core(t, q_norm, visual, block.cross_attn));
        if (n_text > 0) {
            Var text = t.slice_rows(stream, T, n_text);
            stream = t.concat_rows(std::vector<Var>{queries, text});
        } else {
            stream = queries;
        }
        stream = t.add(stream, feed_forward(t, layer_norm(t, stream, block.ln_ffn), block.ffn));
    }
    return (n_text > 0) ? t.slice_rows(stream, 0, T) : stream;
}

Var pool_tokens(Tape& t, Var tokens) {
    return t.l2_normalize_rows(t.mean_rows(tokens));
}

Var vlc_loss(Tape& t, Var pooled_visual, Var pooled_queries, const SimilarityConfig& cfg) {
    cfg.validate();
    const Mat& Xv = t.value(pooled_visual);
    const Mat& Xq = t.value(pooled_queries);
    if (Xv.rows() != Xq.rows() || Xv.cols() != Xq.cols())
        throw ShapeError("vlc_loss: batch shapes differ");
    if (Xv.rows() < 1) throw ShapeError("vlc_loss: empty batch");
    if (!all_finite(Xv) || !all_finite(Xq)) throw NumericError("vlc_loss: non-finite input");

    Var vn = t.l2_normalize_rows(pooled_visual);
    Var qn = t.l2_normalize_rows(pooled_queries);
    Var sims = t.scale(t.matmul_nt(vn, qn), 1.0 / cfg.temperature);
    if (!cfg.infonce) {
        return t.sub(t.logsumexp_all(sims), t.logsumexp_diag(sims));
    }
    // Symmetric per-anchor InfoNCE, comparison mode only.
    std::vector<int> diag(static_cast<std::size_t>(Xv.rows()));
    std::iota(diag.begin(), diag.end(), 0);
    Var row_ce = t.cross_entropy_rows(sims, diag);
    Var sims_t = t.scale(t.matmul_nt(qn, vn), 1.0 / cfg.temperature);
    Var col_ce = t.cross_entropy_rows(sims_t, diag);
    return t.scale(t.add(row_ce, col_ce), 0.5);
}

MatchHead::MatchHead(const std::string& name, int d_model, int hidden, std::mt19937_64& rng)
    : w1(name + ".w1", gaussian_matrix(rng, 2 * d_model, hidden, 1.0 / std::sqrt(2.0 * d_model))),
      b1(name + ".b1", Mat::Zero(1, hidden)),
      w2(name + ".w2", gaussian_matrix(rng, hidden, 1, 1.0 / std::sqrt(double(hidden)))),
      b2(name + ".b2", Mat::Zero(1, 1)) {}

std::vector<Parameter*> MatchHead::parameters() { return {&w1, &b1, &w2, &b2}; }

Var MatchHead::score_pairs(Tape& t, Var pairs) {
    Var hidden = t.tanh(t.add_rowwise(t.matmul(pairs, t.param(w1)), t.param(b1)));
    return t.add_rowwise(t.matmul(hidden, t.param(w2)), t.param(b2));
}

Var vlm_loss(Tape& t, Var pooled_visual, Var pooled_queries, MatchHead& head) {
    const Mat& Xv = t.value(pooled_visual);
    const Mat& Xq = t.value(pooled_queries);
    if (Xv.rows() != Xq.rows() || Xv.cols() != Xq.cols())
        throw ShapeError("vlm_loss: batch shapes differ");
    Eigen::Index B = Xv.rows();
    if (B < 1) throw ShapeError("vlm_loss: empty batch");

    std::vector<int> vis_ids, qry_ids;
    vis_ids.reserve(static_cast<std::size_t>(B * B));
    qry_ids.reserve(static_cast<std::size_t>(B * B));
    Mat targets(B * B, 1);
    for (Eigen::Index j = 0; j < B; ++j)
        for (Eigen::Index k = 0; k < B; ++k) {
            vis_ids.push_back(static_cast<int>(j));
            qry_ids.push_back(static_cast<int>(k));
            targets(j * B + k, 0) = (j == k) ? 1.0 : 0.0;
        }
    Var pairs = t.concat_cols(std::vector<Var>{t.gather_rows(pooled_visual, vis_ids),
                                               t.gather_rows(pooled_queries, qry_ids)});
    Var logits = head.score_pairs(t, pairs);
    return t.bce_with_logits(logits, std::move(targets));
}

Var mim_loss(Tape& t, Var vlc, Var vlm) { return t.add(vlc, vlm); }

}  // namespace planllm
