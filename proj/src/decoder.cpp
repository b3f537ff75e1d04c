#include "planllm/decoder.hpp"

#include <cmath>

namespace planllm {

StepDecoder::StepDecoder(const std::string& name, int d_model, int d_lm, int heads, int horizon,
                         int n_steps, std::mt19937_64& rng)
    : queries(name + ".queries", gaussian_matrix(rng, horizon, d_model, 0.5)),
      decode_attn(name + ".decode", d_model, heads, rng),
      fusion_w(name + ".fusion_proj.w", gaussian_matrix(rng, d_lm, d_model, 1.0 / std::sqrt(double(d_lm)))),
      fusion_b(name + ".fusion_proj.b", Mat::Zero(1, d_model)),
      fusion_attn(name + ".fusion", d_model, heads, rng),
      refine_attn(name + ".refine", d_model, heads, rng),
      cls_w(name + ".classifier.w", gaussian_matrix(rng, d_model, n_steps, 1.0 / std::sqrt(double(d_model)))),
      cls_b(name + ".classifier.b", Mat::Zero(1, n_steps)) {}

std::vector<Parameter*> StepDecoder::fusion_group() {
    std::vector<Parameter*> out{&fusion_w, &fusion_b};
    for (auto* p : fusion_attn.parameters()) out.push_back(p);
    return out;
}

Var step_decode(Tape& t, StepDecoder& dec, Var context) {
    return cross_attention(t, t.param(dec.queries), context, dec.decode_attn);
}

Var knowledge_fuse(Tape& t, StepDecoder& dec, Var step_repr, Var lm_hidden_states) {
    if (t.value(lm_hidden_states).cols() != dec.fusion_w.value.rows())
        throw ShapeError("knowledge_fuse: hidden state width != fusion projection input");
    Var projected = t.add_rowwise(t.matmul(lm_hidden_states, t.param(dec.fusion_w)),
                                  t.param(dec.fusion_b));
    return cross_attention(t, step_repr, projected, dec.fusion_attn);
}

Var step_refine(Tape& t, StepDecoder& dec, Var step_repr, const Mat& description_embeddings) {
    if (description_embeddings.rows() == 0)
        throw ValidationError("step_refine: empty description embedding table");
    return cross_attention(t, step_repr, t.constant(description_embeddings), dec.refine_attn);
}

Var classify(Tape& t, StepDecoder& dec, Var refined) {
    return t.add_rowwise(t.matmul(refined, t.param(dec.cls_w)), t.param(dec.cls_b));
}

Var sd_loss(Tape& t, Var logits, const std::vector<int>& gt_steps) {
    if (t.value(logits).rows() != static_cast<Eigen::Index>(gt_steps.size()))
        throw ShapeError("sd_loss: logits rows != ground-truth length");
    return t.cross_entropy_rows(logits, gt_steps);
}

Var total_loss(Tape& t, Var mim, Var asc, Var sd, const LossWeights& w) {
    Var scaled_mim = (w.mim == 1.0) ? mim : t.scale(mim, w.mim);
    Var scaled_asc = (w.asc == 1.0) ? asc : t.scale(asc, w.asc);
    Var scaled_sd = (w.sd == 1.0) ? sd : t.scale(sd, w.sd);
    return t.add(t.add(scaled_mim, scaled_asc), scaled_sd);
}

}  // namespace planllm
