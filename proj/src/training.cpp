#include "planllm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "planllm/config.hpp"

namespace planllm {

using nlohmann::json;

namespace manifest {

const std::vector<std::string>& all_groups() {
    static const std::vector<std::string> groups = {
        "visual_backbone", "visual_projection", "text_encoder", "state_interaction",
        "step_queries",    "qformer",           "match_head",   "lm_base",
        "lm_prefix_projection", "lora_adapters", "decoder_queries", "decoder_blocks",
        "fusion_projection", "refiner_blocks", "classifier"};
    return groups;
}

const std::vector<std::string>& always_frozen() {
    static const std::vector<std::string> groups = {"visual_backbone", "text_encoder", "lm_base"};
    return groups;
}

std::vector<std::string> trainable_groups(int stage, const ModelVariant& variant) {
    std::vector<std::string> out;
    auto add = [&](const char* g) { out.emplace_back(g); };

    if (stage == 1 || stage == 2 || stage == 0) {
        add("visual_projection");
        add("state_interaction");
        if (variant.use_qformer) {
            add("step_queries");
            add("qformer");
            add("match_head");
        }
    }
    if (stage == 2 || stage == 0) {
        if (variant.use_llm) {
            if (variant.train_llm) add("lora_adapters");
            add("lm_prefix_projection");
        }
        if (variant.use_decoder) {
            add("decoder_queries");
            add("decoder_blocks");
            if (variant.use_llm) add("fusion_projection");
            add("refiner_blocks");
            add("classifier");
        }
    }
    return out;
}

bool is_trainable(const std::string& group, int stage, const ModelVariant& variant) {
    auto groups = trainable_groups(stage, variant);
    return std::find(groups.begin(), groups.end(), group) != groups.end();
}

}  // namespace manifest

AdamW::AdamW(std::vector<std::pair<Parameter*, double>> params_with_lr, AdamWConfig cfg)
    : entries_(std::move(params_with_lr)), cfg_(cfg) {
    slots_.reserve(entries_.size());
    for (auto& [p, lr] : entries_) {
        (void)lr;
        slots_.push_back({Mat::Zero(p->value.rows(), p->value.cols()),
                          Mat::Zero(p->value.rows(), p->value.cols())});
    }
}

void AdamW::zero_grad() {
    for (auto& [p, lr] : entries_) {
        (void)lr;
        p->zero_grad();
    }
}

void AdamW::step() {
    ++step_count_;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (auto& [p, lr] : entries_) {
            (void)lr;
            sq += p->grad.squaredNorm();
        }
        double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) {
            double scale = cfg_.grad_clip / norm;
            for (auto& [p, lr] : entries_) {
                (void)lr;
                p->grad *= scale;
            }
        }
    }
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_count_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_count_));
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& [p, lr] = entries_[i];
        auto& slot = slots_[i];
        slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * p->grad;
        slot.v = cfg_.beta2 * slot.v.array().matrix() +
                 (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
        Mat mhat = slot.m / bc1;
        Mat vhat = slot.v / bc2;
        Mat update = mhat.array() / (vhat.array().sqrt() + cfg_.eps);
        p->value -= lr * (update + cfg_.weight_decay * p->value);
    }
}

StageConfig StageConfig::stage1_defaults() {
    StageConfig cfg;
    cfg.stage = 1;
    cfg.epochs = 10;
    cfg.lr_default = 1e-3;
    cfg.lr_overrides = {{"qformer", 1e-4}};
    return cfg;
}

StageConfig StageConfig::stage2_defaults() {
    StageConfig cfg;
    cfg.stage = 2;
    cfg.epochs = 50;
    cfg.lr_default = 1e-4;
    return cfg;
}

StageConfig StageConfig::one_stage_defaults() {
    StageConfig cfg = stage2_defaults();
    cfg.stage = 0;
    return cfg;
}

void StageConfig::validate() const {
    if (stage != 0 && stage != 1 && stage != 2)
        throw ValidationError("StageConfig.stage: must be 0 (one-stage), 1, or 2");
    if (epochs < 0) throw ValidationError("StageConfig.epochs: must be >= 0");
    if (batch_size < 1) throw ValidationError("StageConfig.batch_size: must be >= 1");
    if (!(lr_default > 0.0)) throw ValidationError("StageConfig.lr_default: must be > 0");
    for (const auto& [name, lr] : lr_overrides) {
        if (std::find(manifest::all_groups().begin(), manifest::all_groups().end(), name) ==
            manifest::all_groups().end())
            throw ValidationError("StageConfig.lr_overrides: unknown group '" + name + "'");
        if (!(lr > 0.0))
            throw ValidationError("StageConfig.lr_overrides: non-positive rate for '" + name + "'");
    }
}

double StageConfig::lr_for(const std::string& group) const {
    auto it = lr_overrides.find(group);
    return it == lr_overrides.end() ? lr_default : it->second;
}

std::string format_loss_row(const LossRow& row) {
    return std::to_string(row.stage) + " " + std::to_string(row.step) + " " +
           format_double(row.mim) + " " + format_double(row.asc) + " " + format_double(row.sd) +
           " " + format_double(row.total);
}

std::string group_hash(const std::vector<Parameter*>& params) {
    std::uint64_t h = kFnvOffset;
    for (const auto* p : params)
        h = fnv1a64(p->value.data(), sizeof(double) * std::size_t(p->value.size()), h);
    return to_hex(h);
}

const Checkpoint::Group& Checkpoint::group(const std::string& name) const {
    for (const auto& g : groups)
        if (g.name == name) return g;
    throw ValidationError("checkpoint has no group '" + name + "'");
}

Checkpoint make_checkpoint(Model& model, int stage, int epoch, const std::string& rng_state,
                           const std::string& config_fingerprint) {
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.epoch = epoch;
    ckpt.rng_state = rng_state;
    ckpt.config_fingerprint = config_fingerprint;
    ckpt.model_config_json = model_config_to_json(model.cfg).dump();
    ckpt.tokenizer_vocab = model.tokenizer.vocab;
    ckpt.vocab = model.vocab;
    for (auto& g : model.parameter_groups()) {
        Checkpoint::Group group;
        group.name = g.name;
        group.hash = group_hash(g.params);
        for (auto* p : g.params) group.tensors.push_back(p->value);
        ckpt.groups.push_back(std::move(group));
    }
    return ckpt;
}

namespace {

constexpr const char* kCheckpointMagic = "PLANLLM-CKPT-1";

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json manifest_rec;
    manifest_rec["stage"] = ckpt.stage;
    manifest_rec["epoch"] = ckpt.epoch;
    manifest_rec["rng_state"] = ckpt.rng_state;
    manifest_rec["config_fingerprint"] = ckpt.config_fingerprint;
    manifest_rec["model_config"] = json::parse(ckpt.model_config_json);
    manifest_rec["tokenizer_vocab"] = ckpt.tokenizer_vocab;
    json vocab_rec = json::array();
    for (const auto& s : ckpt.vocab.steps)
        vocab_rec.push_back({{"id", s.id}, {"label", s.label}, {"description", s.description}});
    manifest_rec["vocabulary"] = vocab_rec;

    std::uint64_t offset = 0;
    json groups_rec = json::array();
    for (const auto& g : ckpt.groups) {
        json tensors = json::array();
        for (const auto& m : g.tensors) {
            tensors.push_back({{"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
            offset += sizeof(double) * std::uint64_t(m.size());
        }
        groups_rec.push_back({{"name", g.name}, {"hash", g.hash}, {"tensors", tensors}});
    }
    manifest_rec["groups"] = groups_rec;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("save_checkpoint: cannot open " + path);
    out << kCheckpointMagic << "\n" << manifest_rec.dump() << "\n";
    for (const auto& g : ckpt.groups)
        for (const auto& m : g.tensors)
            out.write(reinterpret_cast<const char*>(m.data()),
                      std::streamsize(sizeof(double) * std::size_t(m.size())));
    if (!out) throw ValidationError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("load_checkpoint: cannot open " + path);
    std::string magic, manifest_line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw ParseError("load_checkpoint: bad magic in " + path, 1);
    if (!std::getline(in, manifest_line))
        throw ParseError("load_checkpoint: missing manifest", 2);
    json manifest_rec;
    try {
        manifest_rec = json::parse(manifest_line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("load_checkpoint: malformed manifest: ") + e.what(), 2);
    }

    Checkpoint ckpt;
    try {
        ckpt.stage = manifest_rec.at("stage").get<int>();
        ckpt.epoch = manifest_rec.at("epoch").get<int>();
        ckpt.rng_state = manifest_rec.at("rng_state").get<std::string>();
        ckpt.config_fingerprint = manifest_rec.at("config_fingerprint").get<std::string>();
        ckpt.model_config_json = manifest_rec.at("model_config").dump();
        ckpt.tokenizer_vocab = manifest_rec.at("tokenizer_vocab").get<std::vector<std::string>>();
        for (const auto& rec : manifest_rec.at("vocabulary"))
            ckpt.vocab.steps.push_back({rec.at("id").get<int>(),
                                        rec.at("label").get<std::string>(),
                                        rec.at("description").get<std::string>()});

        std::streampos data_start = in.tellg();
        for (const auto& grec : manifest_rec.at("groups")) {
            Checkpoint::Group g;
            g.name = grec.at("name").get<std::string>();
            g.hash = grec.at("hash").get<std::string>();
            for (const auto& trec : grec.at("tensors")) {
                Eigen::Index rows = trec.at("rows").get<Eigen::Index>();
                Eigen::Index cols = trec.at("cols").get<Eigen::Index>();
                std::uint64_t offset = trec.at("offset").get<std::uint64_t>();
                Mat m(rows, cols);
                in.seekg(data_start + std::streampos(offset));
                in.read(reinterpret_cast<char*>(m.data()),
                        std::streamsize(sizeof(double) * std::size_t(m.size())));
                if (!in) throw ParseError("load_checkpoint: truncated tensor data", -1);
                g.tensors.push_back(std::move(m));
            }
            ckpt.groups.push_back(std::move(g));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("load_checkpoint: manifest missing field: ") + e.what(), 2);
    }

    // Integrity: recomputed hashes must match the manifest.
    for (const auto& g : ckpt.groups) {
        std::uint64_t h = kFnvOffset;
        for (const auto& m : g.tensors)
            h = fnv1a64(m.data(), sizeof(double) * std::size_t(m.size()), h);
        if (to_hex(h) != g.hash)
            throw IntegrityError("load_checkpoint: hash mismatch in group '" + g.name +
                                 "' (archive tampered or truncated)");
    }
    return ckpt;
}

void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
    auto groups = model.parameter_groups();
    if (groups.size() != ckpt.groups.size())
        throw ValidationError("apply_checkpoint: group count mismatch");
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i].name != ckpt.groups[i].name)
            throw ValidationError("apply_checkpoint: group order mismatch at '" + groups[i].name +
                                  "'");
        if (groups[i].params.size() != ckpt.groups[i].tensors.size())
            throw ValidationError("apply_checkpoint: tensor count mismatch in '" + groups[i].name +
                                  "'");
        for (std::size_t j = 0; j < groups[i].params.size(); ++j) {
            const Mat& src = ckpt.groups[i].tensors[j];
            Parameter* dst = groups[i].params[j];
            if (src.rows() != dst->value.rows() || src.cols() != dst->value.cols())
                throw ValidationError("apply_checkpoint: shape mismatch for " + dst->name);
            dst->value = src;
            dst->zero_grad();
        }
    }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    ModelConfig cfg = model_config_from_json(json::parse(ckpt.model_config_json));
    Model model(cfg, ckpt.vocab);
    if (model.tokenizer.vocab != ckpt.tokenizer_vocab)
        throw IntegrityError("model_from_checkpoint: tokenizer vocabulary mismatch");
    apply_checkpoint(model, ckpt);
    return model;
}

FreezeReport verify_freeze(const Checkpoint& before, const Checkpoint& after, int stage,
                           const ModelVariant& variant) {
    FreezeReport report;
    for (const auto& g : after.groups) {
        const auto& prev = before.group(g.name);
        if (prev.hash != g.hash) {
            report.changed.push_back(g.name);
            if (!manifest::is_trainable(g.name, stage, variant))
                report.violations.push_back(g.name);
        }
    }
    return report;
}

TrainResult run_stage(Model& model, const Dataset& train_data, const StageConfig& cfg,
                      const std::string& config_fingerprint, std::ostream* loss_log) {
    cfg.validate();
    if (train_data.samples.empty()) throw ValidationError("run_stage: empty training set");

    auto trainable = manifest::trainable_groups(cfg.stage, model.cfg.variant);
    std::vector<std::pair<Parameter*, double>> entries;
    for (auto& g : model.parameter_groups()) {
        if (std::find(trainable.begin(), trainable.end(), g.name) == trainable.end()) continue;
        double lr = cfg.lr_for(g.name);
        for (auto* p : g.params) entries.emplace_back(p, lr);
    }
    AdamW optimizer(std::move(entries), cfg.optim);
    optimizer.zero_grad();

    bool mim_only = (cfg.stage == 1);
    TrainResult result;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train_data.samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(cfg.seed, "epoch_shuffle",
                                        std::uint64_t(cfg.stage) * 1000003ULL + std::uint64_t(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t pos = 0; pos < order.size(); pos += std::size_t(cfg.batch_size)) {
            std::vector<const PlanningSample*> batch;
            for (std::size_t i = pos; i < std::min(order.size(), pos + std::size_t(cfg.batch_size));
                 ++i)
                batch.push_back(&train_data.samples[order[i]]);

            Tape tape;
            Model::BatchLosses losses;
            try {
                losses = model.batch_loss(tape, batch, mim_only);
                tape.backward(losses.total);
            } catch (const NumericError& e) {
                std::ostringstream diag;
                diag << "training aborted at stage " << cfg.stage << " step " << step << " (epoch "
                     << epoch << ", first sample id " << batch.front()->sample_id
                     << "): " << e.what() << "; recent losses:";
                for (std::size_t i = result.log.size() > 5 ? result.log.size() - 5 : 0;
                     i < result.log.size(); ++i)
                    diag << " " << format_double(result.log[i].total);
                throw NumericError(diag.str());
            }
            optimizer.step();
            optimizer.zero_grad();

            LossRow row{cfg.stage, step, losses.mim_value, losses.asc_value, losses.sd_value,
                        losses.total_value};
            result.log.push_back(row);
            if (loss_log) (*loss_log) << format_loss_row(row) << "\n";
            ++step;
        }
    }

    std::ostringstream rng_state;
    {
        std::mt19937_64 final_rng(derive_seed(cfg.seed, "rng_state", std::uint64_t(cfg.epochs)));
        rng_state << final_rng;
    }
    result.checkpoint = make_checkpoint(model, cfg.stage, cfg.epochs, rng_state.str(),
                                        config_fingerprint);
    return result;
}

TrainResult run_stage1(Model& model, const Dataset& train_data, const StageConfig& cfg,
                       const std::string& config_fingerprint, std::ostream* loss_log) {
    if (cfg.stage != 1) throw ValidationError("run_stage1: config stage must be 1");
    return run_stage(model, train_data, cfg, config_fingerprint, loss_log);
}

TrainResult run_stage2(Model& model, const Dataset& train_data, const StageConfig& cfg,
                       const Checkpoint& stage1_ckpt, const std::string& config_fingerprint,
                       std::ostream* loss_log) {
    if (cfg.stage != 2) throw ValidationError("run_stage2: config stage must be 2");
    apply_checkpoint(model, stage1_ckpt);
    return run_stage(model, train_data, cfg, config_fingerprint, loss_log);
}

}  // namespace planllm
