#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "planllm/model.hpp"

namespace planllm {

// Stage ids: 1 and 2 per the progressive scheme; 0 is the one-stage
// ablation arm (full objective from scratch).
namespace manifest {

const std::vector<std::string>& all_groups();
const std::vector<std::string>& always_frozen();  // visual_backbone, text_encoder, lm_base

// Trainable groups for a stage, dropping groups whose branch the variant
// disables (they would otherwise drift under weight decay with zero grads).
std::vector<std::string> trainable_groups(int stage, const ModelVariant& variant);

bool is_trainable(const std::string& group, int stage, const ModelVariant& variant);

}  // namespace manifest

struct AdamWConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip = 1.0;  // global norm; <= 0 disables
};

// Decoupled-weight-decay Adam over an ordered parameter list with
// per-parameter learning rates.
class AdamW {
public:
    AdamW(std::vector<std::pair<Parameter*, double>> params_with_lr, AdamWConfig cfg);

    void step();
    void zero_grad();
    long steps_taken() const { return step_count_; }

private:
    struct Slot {
        Mat m, v;
    };
    std::vector<std::pair<Parameter*, double>> entries_;
    std::vector<Slot> slots_;
    AdamWConfig cfg_;
    long step_count_ = 0;
};

struct StageConfig {
    int stage = 1;  // 1, 2, or 0 (one-stage)
    int epochs = 10;
    int batch_size = 16;
    double lr_default = 1e-3;
    std::map<std::string, double> lr_overrides;  // group name -> lr
    AdamWConfig optim;
    std::uint64_t seed = 1234;

    // Paper rates: 1e-4 for the Q-Former, 1e-3 elsewhere in stage 1;
    // stage 2 reuses the conservative 1e-4 for every group.
    static StageConfig stage1_defaults();
    static StageConfig stage2_defaults();
    static StageConfig one_stage_defaults();

    void validate() const;
    double lr_for(const std::string& group) const;
};

struct LossRow {
    int stage = 0;
    long step = 0;
    double mim = 0.0, asc = 0.0, sd = 0.0, total = 0.0;
};

std::string format_loss_row(const LossRow& row);

struct Checkpoint {
    int stage = 0;
    int epoch = 0;
    std::string rng_state;
    std::string config_fingerprint;
    std::string model_config_json;
    std::vector<std::string> tokenizer_vocab;
    StepVocabulary vocab;

    struct Group {
        std::string name;
        std::string hash;
        std::vector<Mat> tensors;
    };
    std::vector<Group> groups;

    const Group& group(const std::string& name) const;
};

std::string group_hash(const std::vector<Parameter*>& params);

Checkpoint make_checkpoint(Model& model, int stage, int epoch, const std::string& rng_state,
                           const std::string& config_fingerprint);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the model (shapes must match).
void apply_checkpoint(Model& model, const Checkpoint& ckpt);

// Rebuilds a model purely from a checkpoint (config + vocabulary + weights).
Model model_from_checkpoint(const Checkpoint& ckpt);

struct FreezeReport {
    std::vector<std::string> changed;
    std::vector<std::string> violations;  // changed groups the manifest froze
    bool ok() const { return violations.empty(); }
};

FreezeReport verify_freeze(const Checkpoint& before, const Checkpoint& after, int stage,
                           const ModelVariant& variant);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRow> log;
};

// One optimization stage over the training split. Stage 1 minimizes the MIM
// loss only; stages 0/2 minimize the full objective. Emits one loss row per
// step into `loss_log` when given. NaN losses abort with diagnostics.
TrainResult run_stage(Model& model, const Dataset& train_data, const StageConfig& cfg,
                      const std::string& config_fingerprint, std::ostream* loss_log = nullptr);

TrainResult run_stage1(Model& model, const Dataset& train_data, const StageConfig& cfg,
                       const std::string& config_fingerprint, std::ostream* loss_log = nullptr);

// Loads the stage-1 checkpoint into the model first, so resuming from disk
// and continuing in-process produce identical trajectories.
TrainResult run_stage2(Model& model, const Dataset& train_data, const StageConfig& cfg,
                       const Checkpoint& stage1_ckpt, const std::string& config_fingerprint,
                       std::ostream* loss_log = nullptr);

}  // namespace planllm
