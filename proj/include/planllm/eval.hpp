#pragma once

#include <string>
#include <vector>

#include "planllm/model.hpp"

namespace planllm {

struct MetricsReport {
    double sr = 0.0, macc = 0.0, miou = 0.0;
    int horizon = 0;
    int n_samples = 0;
    std::string mode;  // closed_set | open_vocab
    std::uint64_t seed = 0;
    std::string dataset_fingerprint;

    // One JSON record with exactly these keys.
    std::string to_record() const;
    static MetricsReport from_record(const std::string& line);
    void validate() const;  // ranges plus sr <= macc and sr <= miou
};

using IdSeq = std::vector<int>;

// Exact-sequence-match rate.
double metric_sr(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts);
// Element-wise accuracy, averaged per sample then over samples.
double metric_macc(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts);
// Order-insensitive set IoU per sample, averaged over samples.
double metric_miou(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts);

MetricsReport aggregate_metrics(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts,
                                int horizon, const std::string& mode, std::uint64_t seed,
                                const std::string& dataset_fingerprint);

enum class EvalMode { closed_set, open_vocab };

// Full-dataset evaluation. Closed-set uses the decoder branch when present
// and falls back to caption retrieval over the model vocabulary for
// LLM-only variants. Open-vocab always runs generation + retrieval.
MetricsReport evaluate(Model& model, const Dataset& dataset, const StepVocabulary& dataset_vocab,
                       EvalMode mode, std::uint64_t seed);

// Retrieval-transfer protocol: the model's captions are matched against the
// other vocabulary's labels; metrics live in the other id space. With the
// model's own dataset this coincides with open-vocab evaluation exactly.
MetricsReport cross_dataset_eval(Model& model, const Dataset& dataset_b,
                                 const StepVocabulary& vocab_b, std::uint64_t seed);

}  // namespace planllm
