#include "planllm/eval.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

namespace planllm {

using nlohmann::json;

std::string MetricsReport::to_record() const {
    json rec{{"sr", sr},
             {"macc", macc},
             {"miou", miou},
             {"horizon", horizon},
             {"n_samples", n_samples},
             {"mode", mode},
             {"seed", seed},
             {"dataset_fingerprint", dataset_fingerprint}};
    return rec.dump();
}

MetricsReport MetricsReport::from_record(const std::string& line) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("MetricsReport: malformed record: ") + e.what(), -1);
    }
    MetricsReport r;
    try {
        r.sr = rec.at("sr").get<double>();
        r.macc = rec.at("macc").get<double>();
        r.miou = rec.at("miou").get<double>();
        r.horizon = rec.at("horizon").get<int>();
        r.n_samples = rec.at("n_samples").get<int>();
        r.mode = rec.at("mode").get<std::string>();
        r.seed = rec.at("seed").get<std::uint64_t>();
        r.dataset_fingerprint = rec.at("dataset_fingerprint").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("MetricsReport: missing field: ") + e.what(), -1);
    }
    return r;
}

void MetricsReport::validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(sr) || !in_unit(macc) || !in_unit(miou))
        throw NumericError("MetricsReport: metric outside [0,1]");
    if (sr > macc + 1e-12 || sr > miou + 1e-12)
        throw NumericError("MetricsReport: sr must not exceed macc or miou");
    if (n_samples < 0) throw ValidationError("MetricsReport: negative sample count");
}

namespace {

void check_pairs(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts) {
    if (preds.size() != gts.size())
        throw ValidationError("metrics: prediction/ground-truth count mismatch");
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i].size() != gts[i].size())
            throw ValidationError("metrics: length mismatch at sample " + std::to_string(i));
}

}  // namespace

double metric_sr(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts) {
    check_pairs(preds, gts);
    if (preds.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == gts[i]) ++hits;
    return double(hits) / double(preds.size());
}

double metric_macc(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts) {
    check_pairs(preds, gts);
    if (preds.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::size_t match = 0;
        for (std::size_t k = 0; k < preds[i].size(); ++k)
            if (preds[i][k] == gts[i][k]) ++match;
        total += preds[i].empty() ? 0.0 : double(match) / double(preds[i].size());
    }
    return total / double(preds.size());
}

double metric_miou(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts) {
    check_pairs(preds, gts);
    if (preds.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::set<int> p(preds[i].begin(), preds[i].end());
        std::set<int> g(gts[i].begin(), gts[i].end());
        std::size_t inter = 0;
        for (int id : p) inter += g.count(id);
        std::size_t uni = p.size() + g.size() - inter;
        total += uni == 0 ? 0.0 : double(inter) / double(uni);
    }
    return total / double(preds.size());
}

MetricsReport aggregate_metrics(const std::vector<IdSeq>& preds, const std::vector<IdSeq>& gts,
                                int horizon, const std::string& mode, std::uint64_t seed,
                                const std::string& dataset_fingerprint) {
    MetricsReport report;
    report.sr = metric_sr(preds, gts);
    report.macc = metric_macc(preds, gts);
    report.miou = metric_miou(preds, gts);
    report.horizon = horizon;
    report.n_samples = static_cast<int>(preds.size());
    report.mode = mode;
    report.seed = seed;
    report.dataset_fingerprint = dataset_fingerprint;
    report.validate();
    return report;
}

namespace {

MetricsReport run_retrieval_eval(Model& model, const Dataset& dataset,
                                 const StepVocabulary& candidate_vocab, const std::string& mode,
                                 std::uint64_t seed, const std::string& fingerprint) {
    auto labels = candidate_vocab.labels();
    std::vector<IdSeq> preds, gts;
    preds.reserve(dataset.samples.size());
    for (const auto& sample : dataset.samples) {
        auto plan = model.infer_open_vocab(sample, labels);
        preds.push_back(plan.indices);
        gts.push_back(sample.gt_steps);
    }
    return aggregate_metrics(preds, gts, dataset.horizon, mode, seed, fingerprint);
}

}  // namespace

MetricsReport evaluate(Model& model, const Dataset& dataset, const StepVocabulary& dataset_vocab,
                       EvalMode mode, std::uint64_t seed) {
    std::string fingerprint = dataset_fingerprint(dataset, dataset_vocab);
    if (mode == EvalMode::open_vocab)
        return run_retrieval_eval(model, dataset, dataset_vocab, "open_vocab", seed, fingerprint);

    if (!model.cfg.variant.use_decoder) {
        // LLM-only variant answers the closed-set task via caption retrieval
        // over its own training vocabulary.
        return run_retrieval_eval(model, dataset, model.vocab, "closed_set", seed, fingerprint);
    }
    std::vector<IdSeq> preds, gts;
    preds.reserve(dataset.samples.size());
    for (const auto& sample : dataset.samples) {
        preds.push_back(model.infer_closed_set(sample));
        gts.push_back(sample.gt_steps);
    }
    return aggregate_metrics(preds, gts, dataset.horizon, "closed_set", seed, fingerprint);
}

MetricsReport cross_dataset_eval(Model& model, const Dataset& dataset_b,
                                 const StepVocabulary& vocab_b, std::uint64_t seed) {
    if (vocab_b.size() == 0) throw ValidationError("cross_dataset_eval: empty vocabulary");
    return evaluate(model, dataset_b, vocab_b, EvalMode::open_vocab, seed);
}

}  // namespace planllm
