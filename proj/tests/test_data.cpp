#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "planllm/data.hpp"

using namespace planllm;

namespace {

GeneratorSpec small_spec() {
    GeneratorSpec spec;
    spec.n_tasks = 2;
    spec.n_steps = 6;
    spec.horizon = 3;
    spec.samples_per_task = 5;
    spec.d_raw = 8;
    spec.noise_sigma = 0.0;
    spec.seed = 11;
    return spec;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generator satisfies structural postconditions") {
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    CHECK(ds.samples.size() == 10);
    CHECK(vocab.size() == 6);
    for (const auto& s : ds.samples) {
        CHECK(s.gt_steps.size() == 3);
        CHECK(s.horizon == 3);
        for (int id : s.gt_steps) {
            CHECK(id >= 0);
            CHECK(id < 6);
        }
        CHECK(s.start_features.size() == 8);
        CHECK(s.start_features.allFinite());
    }
    for (const auto& step : vocab.steps) {
        CHECK_FALSE(step.label.empty());
        CHECK_FALSE(step.description.empty());
        auto words = step.label.find(' ');
        CHECK(words != std::string::npos);  // 2-3 token labels
    }
}

TEST_CASE("every gt window is a contiguous slice of its task sequence") {
    auto spec = small_spec();
    spec.n_tasks = 4;
    spec.samples_per_task = 20;
    auto [ds, vocab] = generate_synthetic_dataset(spec);
    for (const auto& s : ds.samples) {
        const auto& canon = ds.tasks[static_cast<std::size_t>(s.task_id)].canonical_sequence;
        bool found = false;
        for (std::size_t i = 0; i + s.gt_steps.size() <= canon.size() && !found; ++i)
            found = std::equal(s.gt_steps.begin(), s.gt_steps.end(), canon.begin() + i);
        CHECK(found);
    }
}

TEST_CASE("noiseless samples with equal (task, window) share features exactly") {
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    bool found_pair = false;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        for (std::size_t j = i + 1; j < ds.samples.size(); ++j) {
            const auto& a = ds.samples[i];
            const auto& b = ds.samples[j];
            if (a.task_id == b.task_id && a.gt_steps == b.gt_steps) {
                found_pair = true;
                CHECK((a.start_features - b.start_features).cwiseAbs().maxCoeff() == 0.0);
                CHECK((a.goal_features - b.goal_features).cwiseAbs().maxCoeff() == 0.0);
            }
        }
    CHECK(found_pair);  // 5 samples over 4 windows force a duplicate
}

TEST_CASE("noiseless endpoint features are injective over distinct windows") {
    auto spec = small_spec();
    spec.n_tasks = 6;
    spec.samples_per_task = 30;
    auto [ds, vocab] = generate_synthetic_dataset(spec);
    std::map<std::pair<int, std::vector<int>>, Vec> seen;
    for (const auto& s : ds.samples) {
        Vec key(s.start_features.size() + s.goal_features.size());
        key << s.start_features, s.goal_features;
        auto id = std::make_pair(s.task_id, s.gt_steps);
        for (const auto& [other_id, other_key] : seen) {
            if (other_id.first == id.first && other_id.second == id.second) continue;
            CHECK((other_key - key).cwiseAbs().maxCoeff() > 1e-9);
        }
        seen.emplace(std::move(id), std::move(key));
    }
}

TEST_CASE("identical specs produce byte-identical serializations") {
    auto [ds1, v1] = generate_synthetic_dataset(small_spec());
    auto [ds2, v2] = generate_synthetic_dataset(small_spec());
    CHECK(serialize_dataset(ds1, v1) == serialize_dataset(ds2, v2));
    CHECK(dataset_fingerprint(ds1, v1) == dataset_fingerprint(ds2, v2));
}

TEST_CASE("save then load round-trips the dataset") {
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    auto path = temp_path("planllm_roundtrip.jsonl");
    save_dataset(ds, vocab, path);
    auto [ds2, vocab2] = load_dataset(path);
    CHECK(serialize_dataset(ds, vocab) == serialize_dataset(ds2, vocab2));
    CHECK(ds2.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(ds2.samples[i].sample_id == ds.samples[i].sample_id);
        CHECK(ds2.samples[i].task_id == ds.samples[i].task_id);
        CHECK(ds2.samples[i].gt_steps == ds.samples[i].gt_steps);
        CHECK((ds2.samples[i].start_features - ds.samples[i].start_features).cwiseAbs().maxCoeff() == 0.0);
        CHECK((ds2.samples[i].goal_features - ds.samples[i].goal_features).cwiseAbs().maxCoeff() == 0.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("loader rejects out-of-range gt ids naming the sample") {
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    ds.samples[3].gt_steps[1] = 6;  // vocabulary has ids [0, 6)
    auto text = serialize_dataset(ds, vocab);
    try {
        parse_dataset(text);
        FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
        CHECK(std::string(e.what()).find("sample 3") != std::string::npos);
    }
}

TEST_CASE("loader rejects empty files and malformed lines with line numbers") {
    CHECK_THROWS_AS(parse_dataset(""), ParseError);
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    auto text = serialize_dataset(ds, vocab);
    text.insert(text.find('\n') + 1, "{not json}\n");
    try {
        parse_dataset(text);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 2);
    }
}

TEST_CASE("split produces exact sizes, determinism, and disjointness") {
    auto spec = small_spec();
    spec.n_tasks = 10;
    spec.samples_per_task = 10;
    auto [ds, vocab] = generate_synthetic_dataset(spec);
    auto split = split_dataset(ds, {0.8, 0.1, 0.1}, 5);
    CHECK(split.train.samples.size() == 80);
    CHECK(split.val.samples.size() == 10);
    CHECK(split.test.samples.size() == 10);

    auto split2 = split_dataset(ds, {0.8, 0.1, 0.1}, 5);
    CHECK(serialize_dataset(split.train, vocab) == serialize_dataset(split2.train, vocab));

    std::set<std::int64_t> seen;
    for (const auto* part : {&split.train, &split.val, &split.test})
        for (const auto& s : part->samples) {
            CHECK(seen.insert(s.sample_id).second);  // no duplicates across parts
        }
    CHECK(seen.size() == ds.samples.size());
}

TEST_CASE("by-task split never puts one task in two partitions") {
    auto spec = small_spec();
    spec.n_tasks = 12;
    spec.samples_per_task = 7;
    auto [ds, vocab] = generate_synthetic_dataset(spec);
    auto split = split_dataset(ds, {0.6, 0.2, 0.2}, 3, /*by_task=*/true);
    std::map<int, int> task_part;
    int part_idx = 0;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (const auto& s : part->samples) {
            auto [it, inserted] = task_part.emplace(s.task_id, part_idx);
            if (!inserted) CHECK(it->second == part_idx);
        }
        ++part_idx;
    }
    CHECK(split.train.samples.size() + split.val.samples.size() + split.test.samples.size() ==
          ds.samples.size());
}

TEST_CASE("split validates ratios") {
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.2, 0.2}, 1), ValidationError);
    CHECK_THROWS_AS(split_dataset(ds, {1.2, -0.1, -0.1}, 1), ValidationError);
}

TEST_CASE("generator validates its spec naming the offending field") {
    auto spec = small_spec();
    spec.noise_sigma = -1.0;
    try {
        generate_synthetic_dataset(spec);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("noise_sigma") != std::string::npos);
    }
    spec = small_spec();
    spec.n_steps = 2;
    CHECK_THROWS_AS(generate_synthetic_dataset(spec), ValidationError);
}

TEST_CASE("cross-vocabulary variant permutes ids and preserves content words") {
    auto [ds, vocab] = generate_synthetic_dataset(small_spec());
    auto [ds_b, vocab_b] = make_cross_vocabulary_variant(ds, vocab, 99);
    CHECK(vocab_b.size() == vocab.size());
    vocab_b.validate();
    CHECK(ds_b.samples.size() == ds.samples.size());

    // Each relabeled step keeps the original label as a prefix.
    int moved = 0;
    for (int old_id = 0; old_id < vocab.size(); ++old_id) {
        const std::string& old_label = vocab.at(old_id).label;
        bool matched = false;
        for (int new_id = 0; new_id < vocab_b.size(); ++new_id) {
            const std::string& nl = vocab_b.at(new_id).label;
            if (nl.rfind(old_label + " ", 0) == 0) {
                matched = true;
                if (new_id != old_id) ++moved;
            }
        }
        CHECK(matched);
    }
    CHECK(moved > 0);

    // gt sequences must reference the permuted ids of the same steps.
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        for (std::size_t k = 0; k < ds.samples[i].gt_steps.size(); ++k) {
            const std::string& old_label = vocab.at(ds.samples[i].gt_steps[k]).label;
            const std::string& new_label = vocab_b.at(ds_b.samples[i].gt_steps[k]).label;
            CHECK(new_label.rfind(old_label + " ", 0) == 0);
        }
        CHECK((ds_b.samples[i].start_features - ds.samples[i].start_features).cwiseAbs().maxCoeff() == 0.0);
    }
}
