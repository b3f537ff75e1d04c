#include "planllm/attention.hpp"

#include <cmath>

namespace planllm {

Var lora_apply(Tape& t, Parameter& base, LoraAdapter& adapter) {
    if (adapter.down.value.rows() != base.value.rows() ||
        adapter.up.value.cols() != base.value.cols() ||
        adapter.down.value.cols() != adapter.up.value.rows())
        throw ShapeError("lora_apply: adapter incompatible with base weight " + base.name);
    Var delta = t.matmul(t.param(adapter.down), t.param(adapter.up));
    return t.add(t.param(base), t.scale(delta, adapter.alpha / adapter.rank));
}

AttentionParams::AttentionParams(const std::string& name, int width_, int heads_,
                                 std::mt19937_64& rng) {
    if (heads_ <= 0 || width_ % heads_ != 0)
        throw ValidationError("AttentionParams: width must be divisible by head count");
    heads = heads_;
    width = width_;
    int d_h = width / heads;
    double sd = 1.0 / std::sqrt(static_cast<double>(width));
    for (int h = 0; h < heads; ++h) {
        std::string hn = name + ".h" + std::to_string(h);
        wq.emplace_back(hn + ".wq", gaussian_matrix(rng, width, d_h, sd));
        wk.emplace_back(hn + ".wk", gaussian_matrix(rng, width, d_h, sd));
        wv.emplace_back(hn + ".wv", gaussian_matrix(rng, width, d_h, sd));
    }
    wo = Parameter(name + ".wo", gaussian_matrix(rng, width, width, sd));
    bo = Parameter(name + ".bo", Mat::Zero(1, width));
}

std::vector<Parameter*> AttentionParams::parameters() {
    std::vector<Parameter*> out;
    for (int h = 0; h < heads; ++h) {
        out.push_back(&wq[h]);
        out.push_back(&wk[h]);
        out.push_back(&wv[h]);
    }
    out.push_back(&wo);
    out.push_back(&bo);
    return out;
}

Var attention_core(Tape& t, Var queries, Var context, AttentionParams& p, const Mat* add_mask,
                   AttentionAdapters* adapters) {
    const Mat& Q = t.value(queries);
    const Mat& C = t.value(context);
    if (Q.rows() == 0 || C.rows() == 0) throw ShapeError("attention: empty sequence");
    if (Q.cols() != p.width || C.cols() != p.width)
        throw ShapeError("attention: token width " + std::to_string(Q.cols()) +
                         " does not match params width " + std::to_string(p.width));
    if (!all_finite(Q) || !all_finite(C)) throw NumericError("attention: non-finite input");
    if (adapters && (static_cast<int>(adapters->query.size()) != p.heads ||
                     static_cast<int>(adapters->value.size()) != p.heads))
        throw ShapeError("attention: adapter count does not match head count");

    int d_h = p.width / p.heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_h));
    std::vector<Var> head_outputs;
    head_outputs.reserve(p.heads);
    for (int h = 0; h < p.heads; ++h) {
        Var wq = adapters ? lora_apply(t, p.wq[h], adapters->query[h]) : t.param(p.wq[h]);
        Var wv = adapters ? lora_apply(t, p.wv[h], adapters->value[h]) : t.param(p.wv[h]);
        Var q = t.matmul(queries, wq);
        Var k = t.matmul(context, t.param(p.wk[h]));
        Var v = t.matmul(context, wv);
        Var logits = t.scale(t.matmul_nt(q, k), inv_sqrt);
        Var weights = t.softmax_rows(logits, add_mask);
        head_outputs.push_back(t.matmul(weights, v));
    }
    Var concat = t.concat_cols(head_outputs);
    return t.add_rowwise(t.matmul(concat, t.param(p.wo)), t.param(p.bo));
}

Var self_attention(Tape& t, Var tokens, AttentionParams& p, const Mat* add_mask,
                   AttentionAdapters* adapters) {
    return t.add(tokens, attention_core(t, tokens, tokens, p, add_mask, adapters));
}

Var cross_attention(Tape& t, Var queries, Var context, AttentionParams& p, const Mat* add_mask,
                    AttentionAdapters* adapters) {
    return t.add(queries, attention_core(t, queries, context, p, add_mask, adapters));
}

FeedForwardParams::FeedForwardParams(const std::string& name, int width, int hidden,
                                     std::mt19937_64& rng)
    : w1(name + ".w1", gaussian_matrix(rng, width, hidden, 1.0 / std::sqrt(double(width)))),
      b1(name + ".b1", Mat::Zero(1, hidden)),
      w2(name + ".w2", gaussian_matrix(rng, hidden, width, 1.0 / std::sqrt(double(hidden)))),
      b2(name + ".b2", Mat::Zero(1, width)) {}

std::vector<Parameter*> FeedForwardParams::parameters() { return {&w1, &b1, &w2, &b2}; }

Var feed_forward(Tape& t, Var x, FeedForwardParams& p) {
    Var h = t.gelu(t.add_rowwise(t.matmul(x, t.param(p.w1)), t.param(p.b1)));
    return t.add_rowwise(t.matmul(h, t.param(p.w2)), t.param(p.b2));
}

Var layer_norm(Tape& t, Var x, LayerNormParams& p) {
    return t.layer_norm(x, t.param(p.gain), t.param(p.bias));
}

Mat causal_mask(Eigen::Index n) {
    Mat m = Mat::Zero(n, n);
    double ninf = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = ninf;
    return m;
}

}  // namespace planllm
