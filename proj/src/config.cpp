#include "planllm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace planllm {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& section) {
    if (!j.is_object())
        throw ValidationError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ValidationError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string text_mode_to_string(TextMode mode) {
    switch (mode) {
        case TextMode::none: return "none";
        case TextMode::full: return "full";
        case TextMode::masked: return "masked";
    }
    return "full";
}

TextMode text_mode_from_string(const std::string& s) {
    if (s == "none") return TextMode::none;
    if (s == "full") return TextMode::full;
    if (s == "masked") return TextMode::masked;
    throw ValidationError("config: train_text_mode must be none|full|masked, got '" + s + "'");
}

json stage_to_json(const StageConfig& cfg) {
    json overrides = json::object();
    for (const auto& [name, lr] : cfg.lr_overrides) overrides[name] = lr;
    return json{{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"lr_default", cfg.lr_default},
                {"lr_overrides", overrides},
                {"grad_clip", cfg.optim.grad_clip},
                {"weight_decay", cfg.optim.weight_decay},
                {"seed", cfg.seed}};
}

StageConfig stage_from_json(const json& j, StageConfig base, const std::string& section) {
    reject_unknown_keys(j, {"epochs", "batch_size", "lr_default", "lr_overrides", "grad_clip",
                            "weight_decay", "seed"},
                        section);
    read_into(j, "epochs", base.epochs);
    read_into(j, "batch_size", base.batch_size);
    read_into(j, "lr_default", base.lr_default);
    if (j.contains("lr_overrides")) {
        base.lr_overrides.clear();
        for (const auto& [name, lr] : j.at("lr_overrides").items())
            base.lr_overrides[name] = lr.get<double>();
    }
    read_into(j, "grad_clip", base.optim.grad_clip);
    read_into(j, "weight_decay", base.optim.weight_decay);
    read_into(j, "seed", base.seed);
    return base;
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"d_raw", cfg.d_raw},
                {"d_back", cfg.d_back},
                {"d_model", cfg.d_model},
                {"heads", cfg.heads},
                {"qformer_blocks", cfg.qformer_blocks},
                {"d_ff", cfg.d_ff},
                {"d_lm", cfg.d_lm},
                {"lm_blocks", cfg.lm_blocks},
                {"lm_heads", cfg.lm_heads},
                {"lm_ff", cfg.lm_ff},
                {"max_seq", cfg.max_seq},
                {"lora_rank", cfg.lora_rank},
                {"lora_alpha", cfg.lora_alpha},
                {"horizon", cfg.horizon},
                {"text_embed_dim", cfg.text_embed_dim},
                {"match_hidden", cfg.match_hidden},
                {"temperature", cfg.temperature},
                {"vlc_infonce", cfg.vlc_infonce},
                {"max_caption_len", cfg.max_caption_len},
                {"train_text_mode", text_mode_to_string(cfg.train_text_mode)},
                {"loss_weights",
                 {{"mim", cfg.loss_weights.mim}, {"asc", cfg.loss_weights.asc}, {"sd", cfg.loss_weights.sd}}},
                {"variant",
                 {{"use_qformer", cfg.variant.use_qformer},
                  {"use_llm", cfg.variant.use_llm},
                  {"use_decoder", cfg.variant.use_decoder},
                  {"train_llm", cfg.variant.train_llm}}},
                {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
    reject_unknown_keys(j, {"d_raw", "d_back", "d_model", "heads", "qformer_blocks", "d_ff",
                            "d_lm", "lm_blocks", "lm_heads", "lm_ff", "max_seq", "lora_rank",
                            "lora_alpha", "horizon", "text_embed_dim", "match_hidden",
                            "temperature", "vlc_infonce", "max_caption_len", "train_text_mode",
                            "loss_weights", "variant", "init_seed"},
                        "model");
    ModelConfig cfg;
    read_into(j, "d_raw", cfg.d_raw);
    read_into(j, "d_back", cfg.d_back);
    read_into(j, "d_model", cfg.d_model);
    read_into(j, "heads", cfg.heads);
    read_into(j, "qformer_blocks", cfg.qformer_blocks);
    read_into(j, "d_ff", cfg.d_ff);
    read_into(j, "d_lm", cfg.d_lm);
    read_into(j, "lm_blocks", cfg.lm_blocks);
    read_into(j, "lm_heads", cfg.lm_heads);
    read_into(j, "lm_ff", cfg.lm_ff);
    read_into(j, "max_seq", cfg.max_seq);
    read_into(j, "lora_rank", cfg.lora_rank);
    read_into(j, "lora_alpha", cfg.lora_alpha);
    read_into(j, "horizon", cfg.horizon);
    read_into(j, "text_embed_dim", cfg.text_embed_dim);
    read_into(j, "match_hidden", cfg.match_hidden);
    read_into(j, "temperature", cfg.temperature);
    read_into(j, "vlc_infonce", cfg.vlc_infonce);
    read_into(j, "max_caption_len", cfg.max_caption_len);
    if (j.contains("train_text_mode"))
        cfg.train_text_mode = text_mode_from_string(j.at("train_text_mode").get<std::string>());
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        reject_unknown_keys(w, {"mim", "asc", "sd"}, "model.loss_weights");
        read_into(w, "mim", cfg.loss_weights.mim);
        read_into(w, "asc", cfg.loss_weights.asc);
        read_into(w, "sd", cfg.loss_weights.sd);
    }
    if (j.contains("variant")) {
        const auto& v = j.at("variant");
        reject_unknown_keys(v, {"use_qformer", "use_llm", "use_decoder", "train_llm"},
                            "model.variant");
        read_into(v, "use_qformer", cfg.variant.use_qformer);
        read_into(v, "use_llm", cfg.variant.use_llm);
        read_into(v, "use_decoder", cfg.variant.use_decoder);
        read_into(v, "train_llm", cfg.variant.train_llm);
    }
    read_into(j, "init_seed", cfg.init_seed);
    return cfg;
}

void RunConfig::validate() const {
    if (dataset_path.empty()) data.validate();
    model.validate();
    stage1.validate();
    stage2.validate();
    if (stage1.stage != 1) throw ValidationError("config: train.stage1 must keep stage id 1");
    if (stage2.stage != 2 && stage2.stage != 0)
        throw ValidationError("config: train.stage2 must keep stage id 2 (or 0 for one-stage)");
    if (eval.mode != "closed_set" && eval.mode != "open_vocab" && eval.mode != "both")
        throw ValidationError("config: eval.mode must be closed_set|open_vocab|both");
    if (eval.horizons.empty()) throw ValidationError("config: eval.horizons must be nonempty");
    if (out_dir.empty()) throw ValidationError("config: io.out_dir must be nonempty");
}

json run_config_to_json(const RunConfig& cfg) {
    json data{{"n_tasks", cfg.data.n_tasks},
              {"n_steps", cfg.data.n_steps},
              {"horizon", cfg.data.horizon},
              {"samples_per_task", cfg.data.samples_per_task},
              {"d_raw", cfg.data.d_raw},
              {"noise_sigma", cfg.data.noise_sigma},
              {"seed", cfg.data.seed},
              {"path", cfg.dataset_path}};
    json split{{"ratios", cfg.split.ratios}, {"seed", cfg.split.seed}, {"by_task", cfg.split.by_task}};
    json train{{"stage1", stage_to_json(cfg.stage1)}, {"stage2", stage_to_json(cfg.stage2)}};
    json eval_rec{{"mode", cfg.eval.mode}, {"horizons", cfg.eval.horizons}};
    json io{{"out_dir", cfg.out_dir}};
    return json{{"data", data},       {"split", split}, {"model", model_config_to_json(cfg.model)},
                {"train", train},     {"eval", eval_rec}, {"io", io}};
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown_keys(j, {"data", "split", "model", "train", "eval", "io"}, "<root>");
    RunConfig cfg;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown_keys(d, {"n_tasks", "n_steps", "horizon", "samples_per_task", "d_raw",
                                "noise_sigma", "seed", "path"},
                            "data");
        read_into(d, "n_tasks", cfg.data.n_tasks);
        read_into(d, "n_steps", cfg.data.n_steps);
        read_into(d, "horizon", cfg.data.horizon);
        read_into(d, "samples_per_task", cfg.data.samples_per_task);
        read_into(d, "d_raw", cfg.data.d_raw);
        read_into(d, "noise_sigma", cfg.data.noise_sigma);
        read_into(d, "seed", cfg.data.seed);
        read_into(d, "path", cfg.dataset_path);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        reject_unknown_keys(s, {"ratios", "seed", "by_task"}, "split");
        if (s.contains("ratios")) {
            auto r = s.at("ratios").get<std::vector<double>>();
            if (r.size() != 3)
                throw ValidationError("config: split.ratios must have exactly 3 entries");
            cfg.split.ratios = {r[0], r[1], r[2]};
        }
        read_into(s, "seed", cfg.split.seed);
        read_into(s, "by_task", cfg.split.by_task);
    }
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown_keys(t, {"stage1", "stage2"}, "train");
        if (t.contains("stage1"))
            cfg.stage1 = stage_from_json(t.at("stage1"), StageConfig::stage1_defaults(), "train.stage1");
        if (t.contains("stage2"))
            cfg.stage2 = stage_from_json(t.at("stage2"), StageConfig::stage2_defaults(), "train.stage2");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown_keys(e, {"mode", "horizons"}, "eval");
        read_into(e, "mode", cfg.eval.mode);
        read_into(e, "horizons", cfg.eval.horizons);
    }
    if (j.contains("io")) {
        const auto& io = j.at("io");
        reject_unknown_keys(io, {"out_dir"}, "io");
        read_into(io, "out_dir", cfg.out_dir);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("config: malformed JSON in " + path + ": " + e.what(), -1);
    }
    return run_config_from_json(j);
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* out = std::getenv("PLANLLM_OUT_DIR"); out && *out) cfg.out_dir = out;
    if (const char* seed = std::getenv("PLANLLM_SEED"); seed && *seed) {
        try {
            std::uint64_t s = std::stoull(seed);
            cfg.stage1.seed = s;
            cfg.stage2.seed = s;
        } catch (const std::exception&) {
            throw ValidationError("config: PLANLLM_SEED must be an unsigned integer");
        }
    }
}

std::string canonical_config_text(const RunConfig& cfg) {
    return run_config_to_json(cfg).dump(2);
}

std::string config_fingerprint(const RunConfig& cfg) {
    return to_hex(fnv1a64(canonical_config_text(cfg)));
}

}  // namespace planllm
