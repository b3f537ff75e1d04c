#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "planllm/common.hpp"

namespace planllm {

struct ActionStep {
    int id = -1;
    std::string label;
    std::string description;
};

struct StepVocabulary {
    std::vector<ActionStep> steps;  // dense ids: steps[i].id == i

    int size() const { return static_cast<int>(steps.size()); }
    const ActionStep& at(int id) const;
    std::vector<std::string> labels() const;
    void validate() const;
};

struct TaskSpec {
    int task_id = -1;
    std::vector<int> canonical_sequence;
};

struct PlanningSample {
    std::int64_t sample_id = -1;
    int task_id = -1;
    Vec start_features;
    Vec goal_features;
    std::vector<int> gt_steps;
    int horizon = 0;
};

struct Dataset {
    int horizon = 0;
    int d_raw = 0;
    std::vector<TaskSpec> tasks;
    std::vector<PlanningSample> samples;
};

struct GeneratorSpec {
    int n_tasks = 10;
    int n_steps = 30;
    int horizon = 3;
    int samples_per_task = 100;
    int d_raw = 64;
    double noise_sigma = 0.0;
    std::uint64_t seed = 17;

    void validate() const;
};

std::pair<Dataset, StepVocabulary> generate_synthetic_dataset(const GeneratorSpec& spec);

// Line-delimited records: one header, one record per step, one per sample.
std::string serialize_dataset(const Dataset& dataset, const StepVocabulary& vocab);
void save_dataset(const Dataset& dataset, const StepVocabulary& vocab, const std::string& path);
std::pair<Dataset, StepVocabulary> parse_dataset(const std::string& text);
std::pair<Dataset, StepVocabulary> load_dataset(const std::string& path);

// FNV-1a over the canonical serialized form, hex-encoded.
std::string dataset_fingerprint(const Dataset& dataset, const StepVocabulary& vocab);

struct SplitResult {
    Dataset train, val, test;
};

// Disjoint partition covering the input; deterministic per seed. With
// `by_task` no task id crosses partitions (grouping before assignment).
SplitResult split_dataset(const Dataset& dataset, const std::array<double, 3>& ratios,
                          std::uint64_t seed, bool by_task = false);

// Cross-vocabulary variant for the retrieval-transfer protocol: same samples
// and features, labels re-worded (content words preserved) and step ids
// permuted. The returned dataset references the new id space.
std::pair<Dataset, StepVocabulary> make_cross_vocabulary_variant(const Dataset& dataset,
                                                                 const StepVocabulary& vocab,
                                                                 std::uint64_t seed);

}  // namespace planllm
