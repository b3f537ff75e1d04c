#include "planllm/model.hpp"

#include <algorithm>
#include <cmath>

namespace planllm {

void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ValidationError("ModelConfig." + field + ": " + why);
    };
    if (d_raw < 1) fail("d_raw", "must be >= 1");
    if (d_back < 1) fail("d_back", "must be >= 1");
    if (d_model < 1) fail("d_model", "must be >= 1");
    if (heads < 1 || d_model % heads != 0) fail("heads", "must divide d_model");
    if (lm_heads < 1 || d_lm % lm_heads != 0) fail("lm_heads", "must divide d_lm");
    if (qformer_blocks < 1) fail("qformer_blocks", "must be >= 1");
    if (lm_blocks < 1) fail("lm_blocks", "must be >= 1");
    if (horizon < 1) fail("horizon", "must be >= 1");
    if (horizon > 8) fail("horizon", "tokenizer markers cover horizons up to 8");
    if (lora_rank < 1) fail("lora_rank", "must be >= 1");
    if (!(temperature > 0.0)) fail("temperature", "must be > 0");
    if (max_caption_len < 1) fail("max_caption_len", "must be >= 1");
    if (max_seq < 2 + horizon + max_caption_len + 2)
        fail("max_seq", "too small for prefix plus caption");
    if (!variant.use_decoder && !variant.use_llm)
        fail("variant", "at least one planning branch must be enabled");
}

Model::Model(ModelConfig cfg_, StepVocabulary vocabulary)
    : cfg(std::move(cfg_)), vocab(std::move(vocabulary)) {
    cfg.validate();
    vocab.validate();
    if (vocab.size() < 1) throw ValidationError("Model: empty step vocabulary");

    tokenizer = Tokenizer::build(vocab.labels());
    text_encoder = TextEncoderState(cfg.text_embed_dim, cfg.d_model,
                                    derive_seed(cfg.init_seed, "text_encoder"));
    descriptions = Mat(vocab.size(), cfg.d_model);
    for (int i = 0; i < vocab.size(); ++i)
        descriptions.row(i) = text_encoder.encode(vocab.at(i).description).transpose();

    visual = VisualEncoderState(cfg.d_raw, cfg.d_back, cfg.d_model,
                                derive_seed(cfg.init_seed, "visual"));
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "state_interaction"));
        state_inter = AttentionParams("state_interaction", cfg.d_model, cfg.heads, rng);
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "step_queries"));
        step_queries = Parameter("step_queries", gaussian_matrix(rng, cfg.horizon, cfg.d_model, 0.5));
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "qformer"));
        qformer = QFormer("qformer", cfg.d_model, cfg.heads, cfg.qformer_blocks, cfg.d_ff,
                          cfg.horizon, rng);
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "match_head"));
        match_head = MatchHead("match_head", cfg.d_model, cfg.match_hidden, rng);
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "lm"));
        lm = TinyLM("lm", tokenizer.size(), cfg.d_lm, cfg.lm_blocks, cfg.lm_heads, cfg.lm_ff,
                    cfg.max_seq, rng);
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "prefix_projection"));
        prefix_proj = PrefixProjection("lm_prefix_projection", cfg.d_model, cfg.d_lm, rng);
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "lora"));
        lora = LoraSet("lora", lm, cfg.lora_rank, cfg.lora_alpha, rng);
    }
    {
        std::mt19937_64 rng(derive_seed(cfg.init_seed, "decoder"));
        decoder = StepDecoder("decoder", cfg.d_model, cfg.d_lm, cfg.heads, cfg.horizon,
                              vocab.size(), rng);
    }
}

std::vector<ParamGroup> Model::parameter_groups() {
    std::vector<ParamGroup> groups;
    groups.push_back({"visual_backbone", {&visual.backbone}});
    groups.push_back({"visual_projection", {&visual.proj_w, &visual.proj_b}});
    groups.push_back({"text_encoder", {&text_encoder.fixed_map}});
    groups.push_back({"state_interaction", state_inter.parameters()});
    groups.push_back({"step_queries", {&step_queries}});
    groups.push_back({"qformer", qformer.parameters()});
    groups.push_back({"match_head", match_head.parameters()});
    groups.push_back({"lm_base", lm.parameters()});
    groups.push_back({"lm_prefix_projection", prefix_proj.parameters()});
    groups.push_back({"lora_adapters", lora.parameters()});
    groups.push_back({"decoder_queries", decoder.query_group()});
    groups.push_back({"decoder_blocks", decoder.decode_group()});
    groups.push_back({"fusion_projection", decoder.fusion_group()});
    groups.push_back({"refiner_blocks", decoder.refine_group()});
    groups.push_back({"classifier", decoder.classifier_group()});
    return groups;
}

ParamGroup Model::group(const std::string& name) {
    for (auto& g : parameter_groups())
        if (g.name == name) return g;
    throw ValidationError("unknown parameter group '" + name + "'");
}

Model::SampleForward Model::encode_core(Tape& t, const PlanningSample& sample, bool training,
                                        bool want_prefix) {
    if (sample.horizon != cfg.horizon)
        throw ValidationError("sample horizon " + std::to_string(sample.horizon) +
                              " does not match model horizon " + std::to_string(cfg.horizon));
    SampleForward fwd;
    Var x0 = visual_encode(t, visual, sample.start_features);
    Var xT = visual_encode(t, visual, sample.goal_features);
    auto [i0, iT] = state_interact(t, state_inter, x0, xT);
    fwd.visual_pair = t.concat_rows(std::vector<Var>{i0, iT});

    if (cfg.variant.use_qformer) {
        std::optional<Mat> text;
        TextMode mode = TextMode::none;
        if (training) {
            Mat rows(sample.gt_steps.size(), cfg.d_model);
            for (std::size_t i = 0; i < sample.gt_steps.size(); ++i)
                rows.row(static_cast<Eigen::Index>(i)) = descriptions.row(sample.gt_steps[i]);
            text = std::move(rows);
            mode = cfg.train_text_mode;
        }
        fwd.xq = qformer_fuse(t, qformer, step_queries, fwd.visual_pair,
                              text ? &*text : nullptr, mode);
    }
    if (want_prefix && cfg.variant.use_llm) fwd.prefix = lm_prefix_tokens(t, fwd);
    return fwd;
}

int Model::step_hidden_rows() const { return cfg.variant.use_qformer ? cfg.horizon : 2; }

Model::SampleForward Model::encode_sample(Tape& t, const PlanningSample& sample, bool training) {
    SampleForward fwd = encode_core(t, sample, training, /*want_prefix=*/true);
    if (cfg.variant.use_llm) {
        Var hidden = lm_hidden(t, lm, active_lora(), *fwd.prefix, {});
        Eigen::Index n = t.value(hidden).rows();
        fwd.h = t.slice_rows(hidden, n - step_hidden_rows(), step_hidden_rows());
    }
    return fwd;
}

Var Model::lm_prefix_tokens(Tape& t, SampleForward& fwd) {
    Var tokens = fwd.xq ? t.concat_rows(std::vector<Var>{fwd.visual_pair, *fwd.xq})
                        : fwd.visual_pair;
    return project_prefix(t, prefix_proj, tokens);
}

Var Model::closed_set_logits(Tape& t, SampleForward& fwd) {
    if (!cfg.variant.use_decoder)
        throw ValidationError("closed_set_logits: model variant has no decoder branch");
    Var context = fwd.xq ? t.concat_rows(std::vector<Var>{fwd.visual_pair, *fwd.xq})
                         : fwd.visual_pair;
    Var r = step_decode(t, decoder, context);
    if (cfg.variant.use_llm) r = knowledge_fuse(t, decoder, r, *fwd.h);
    r = step_refine(t, decoder, r, descriptions);
    return classify(t, decoder, r);
}

std::string Model::caption_for(const std::vector<int>& gt_steps) const {
    std::vector<std::string> labels;
    labels.reserve(gt_steps.size());
    for (int id : gt_steps) labels.push_back(vocab.at(id).label);
    return format_caption(labels, static_cast<int>(gt_steps.size()));
}

Model::BatchLosses Model::batch_loss(Tape& t, const std::vector<const PlanningSample*>& batch,
                                     bool mim_only) {
    if (batch.empty()) throw ValidationError("batch_loss: empty batch");
    BatchLosses out;
    Var zero = t.constant(Mat::Zero(1, 1));

    std::vector<Var> pooled_visual, pooled_queries;
    std::vector<Var> asc_terms, sd_terms;
    for (const auto* sample : batch) {
        SampleForward fwd = encode_core(t, *sample, /*training=*/true,
                                        /*want_prefix=*/!mim_only && cfg.variant.use_llm);
        if (cfg.variant.use_qformer) {
            pooled_visual.push_back(pool_tokens(t, fwd.visual_pair));
            pooled_queries.push_back(pool_tokens(t, *fwd.xq));
        }
        if (!mim_only && cfg.variant.use_llm) {
            auto caption_tokens = tokenizer.encode(caption_for(sample->gt_steps));
            auto caption = caption_loss_with_hidden(t, lm, active_lora(), *fwd.prefix,
                                                    caption_tokens, tokenizer,
                                                    step_hidden_rows());
            asc_terms.push_back(caption.loss);
            fwd.h = caption.step_hidden;
        }
        if (!mim_only && cfg.variant.use_decoder) {
            Var logits = closed_set_logits(t, fwd);
            sd_terms.push_back(sd_loss(t, logits, sample->gt_steps));
        }
    }

    auto average = [&](std::vector<Var>& terms) {
        Var sum = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) sum = t.add(sum, terms[i]);
        return terms.size() > 1 ? t.scale(sum, 1.0 / double(terms.size())) : sum;
    };

    if (cfg.variant.use_qformer) {
        Var xv = t.concat_rows(pooled_visual);
        Var xq = t.concat_rows(pooled_queries);
        SimilarityConfig sim;
        sim.temperature = cfg.temperature;
        sim.infonce = cfg.vlc_infonce;
        out.mim = mim_loss(t, vlc_loss(t, xv, xq, sim), vlm_loss(t, xv, xq, match_head));
    } else {
        out.mim = zero;
    }
    out.asc = asc_terms.empty() ? zero : average(asc_terms);
    out.sd = sd_terms.empty() ? zero : average(sd_terms);
    out.total = mim_only ? out.mim : total_loss(t, out.mim, out.asc, out.sd, cfg.loss_weights);

    out.mim_value = t.value(out.mim)(0, 0);
    out.asc_value = t.value(out.asc)(0, 0);
    out.sd_value = t.value(out.sd)(0, 0);
    out.total_value = t.value(out.total)(0, 0);
    return out;
}

std::vector<int> Model::infer_closed_set(const PlanningSample& sample) {
    Tape t;
    SampleForward fwd = encode_sample(t, sample, /*training=*/false);
    const Mat logits = t.value(closed_set_logits(t, fwd));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        int best = 0;
        for (Eigen::Index c = 1; c < logits.cols(); ++c)
            if (logits(r, c) > logits(r, best)) best = static_cast<int>(c);
        out.push_back(best);
    }
    return out;
}

Mat Model::inference_prefix(const PlanningSample& sample) {
    Tape t;
    SampleForward fwd = encode_sample(t, sample, /*training=*/false);
    if (!cfg.variant.use_llm)
        throw ValidationError("infer_open_vocab: model variant has no LLM branch");
    return t.value(*fwd.prefix);
}

Model::OpenVocabPlan Model::infer_open_vocab(const PlanningSample& sample,
                                             const std::vector<std::string>& candidate_labels) {
    if (candidate_labels.empty())
        throw ValidationError("infer_open_vocab: empty candidate label set");
    Mat prefix = inference_prefix(sample);
    auto tokens = llm_generate(lm, active_lora(), prefix, cfg.max_caption_len, tokenizer);

    OpenVocabPlan plan;
    plan.caption = tokenizer.decode(tokens);
    auto parsed = parse_caption(plan.caption, cfg.horizon);
    plan.parser_fallback = parsed.fallback;
    plan.indices = retrieve_nearest(text_encoder, parsed.segments, candidate_labels);
    for (int idx : plan.indices)
        plan.labels.push_back(candidate_labels[static_cast<std::size_t>(idx)]);
    return plan;
}

}  // namespace planllm
