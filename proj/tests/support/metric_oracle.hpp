#pragma once

// Brute-force metric implementations kept deliberately naive and separate
// from the library path; used to cross-check SR/mAcc/mIoU.

#include <vector>

namespace planllm::test {

inline double oracle_sr(const std::vector<std::vector<int>>& preds,
                        const std::vector<std::vector<int>>& gts) {
    if (preds.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        bool same = preds[i].size() == gts[i].size();
        for (std::size_t k = 0; same && k < preds[i].size(); ++k)
            if (preds[i][k] != gts[i][k]) same = false;
        total += same ? 1.0 : 0.0;
    }
    return total / double(preds.size());
}

inline double oracle_macc(const std::vector<std::vector<int>>& preds,
                          const std::vector<std::vector<int>>& gts) {
    if (preds.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double hits = 0.0;
        for (std::size_t k = 0; k < preds[i].size(); ++k)
            if (preds[i][k] == gts[i][k]) hits += 1.0;
        total += hits / double(preds[i].size());
    }
    return total / double(preds.size());
}

inline double oracle_miou(const std::vector<std::vector<int>>& preds,
                          const std::vector<std::vector<int>>& gts) {
    if (preds.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::vector<int> pset, gset;
        for (int v : preds[i])
            if (std::find(pset.begin(), pset.end(), v) == pset.end()) pset.push_back(v);
        for (int v : gts[i])
            if (std::find(gset.begin(), gset.end(), v) == gset.end()) gset.push_back(v);
        double inter = 0.0;
        for (int v : pset)
            if (std::find(gset.begin(), gset.end(), v) != gset.end()) inter += 1.0;
        double uni = double(pset.size() + gset.size()) - inter;
        total += uni == 0.0 ? 0.0 : inter / uni;
    }
    return total / double(preds.size());
}

}  // namespace planllm::test
