#include "planllm/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "planllm/encoders.hpp"

namespace planllm {

using nlohmann::json;

namespace {

const std::vector<std::string> kVerbs = {"peel", "chop", "rinse", "crush", "toast", "stir",
                                         "pour", "grate", "steam", "slice", "whisk", "mash"};
const std::vector<std::string> kNouns = {"garlic", "onion", "carrot", "beans", "dough", "batter",
                                         "rice",   "tomato", "pepper", "butter", "cheese", "basil"};
const std::vector<std::string> kAdjectives = {"fresh", "dried", "roasted", "minced", "warm", "cold"};

// Re-wording bank for cross-vocabulary variants; content words stay intact.
const std::vector<std::string> kRewordSuffix = {"gently", "slowly", "evenly",
                                                "briefly", "firmly", "properly"};

std::vector<std::string> build_label_bank(std::uint64_t seed) {
    std::vector<std::string> bank;
    for (const auto& v : kVerbs)
        for (const auto& n : kNouns) bank.push_back(v + " " + n);
    for (const auto& v : kVerbs)
        for (const auto& a : kAdjectives)
            for (const auto& n : kNouns) bank.push_back(v + " " + a + " " + n);
    std::mt19937_64 rng(derive_seed(seed, "label_bank"));
    std::shuffle(bank.begin(), bank.end(), rng);
    return bank;
}

Vec seeded_gaussian_vec(std::uint64_t seed, std::string_view tag, std::uint64_t index, int dim) {
    std::mt19937_64 rng(derive_seed(seed, tag, index));
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v(i) = dist(rng);
    return v;
}

json vec_to_json(const Vec& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Vec vec_from_json(const json& arr) {
    Vec v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
}

}  // namespace

const ActionStep& StepVocabulary::at(int id) const {
    if (id < 0 || id >= size())
        throw ValidationError("step id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(size()));
    return steps[static_cast<std::size_t>(id)];
}

std::vector<std::string> StepVocabulary::labels() const {
    std::vector<std::string> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.label);
    return out;
}

void StepVocabulary::validate() const {
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].id != static_cast<int>(i))
            throw IntegrityError("vocabulary ids must be dense; slot " + std::to_string(i) +
                                 " holds id " + std::to_string(steps[i].id));
        if (steps[i].label.empty()) throw IntegrityError("empty label at id " + std::to_string(i));
        if (steps[i].description.empty())
            throw IntegrityError("empty description at id " + std::to_string(i));
    }
}

void GeneratorSpec::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ValidationError("GeneratorSpec." + field + ": " + why);
    };
    if (n_tasks < 1) fail("n_tasks", "must be >= 1");
    if (n_steps < 4) fail("n_steps", "must be >= 4 so every task window exists");
    if (horizon < 1) fail("horizon", "must be >= 1");
    if (n_steps < horizon) fail("n_steps", "must be >= horizon");
    if (samples_per_task < 1) fail("samples_per_task", "must be >= 1");
    if (d_raw < 1) fail("d_raw", "must be >= 1");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
}

std::pair<Dataset, StepVocabulary> generate_synthetic_dataset(const GeneratorSpec& spec) {
    spec.validate();

    StepVocabulary vocab;
    auto bank = build_label_bank(spec.seed);
    if (spec.n_steps > static_cast<int>(bank.size()))
        throw ValidationError("GeneratorSpec.n_steps: exceeds label bank capacity of " +
                              std::to_string(bank.size()));
    auto expander = DescriptionExpander::templated();
    for (int i = 0; i < spec.n_steps; ++i)
        vocab.steps.push_back({i, bank[static_cast<std::size_t>(i)],
                               expander.expand(bank[static_cast<std::size_t>(i)])});

    Dataset ds;
    ds.horizon = spec.horizon;
    ds.d_raw = spec.d_raw;

    int canon_len = std::max(4, std::min(spec.n_steps, spec.horizon + 5));
    for (int task = 0; task < spec.n_tasks; ++task) {
        std::vector<int> ids(static_cast<std::size_t>(spec.n_steps));
        std::iota(ids.begin(), ids.end(), 0);
        std::mt19937_64 rng(derive_seed(spec.seed, "task_sequence", static_cast<std::uint64_t>(task)));
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(static_cast<std::size_t>(canon_len));
        ds.tasks.push_back({task, std::move(ids)});
    }

    // Fixed linear map g from (step embedding, task embedding) to raw features.
    const int d_e = 16;
    std::mt19937_64 map_rng(derive_seed(spec.seed, "feature_map"));
    Mat g = gaussian_matrix(map_rng, spec.d_raw, 2 * d_e, 1.0 / std::sqrt(2.0 * d_e));

    auto endpoint_features = [&](int step_id, int task_id, std::mt19937_64& noise_rng) {
        Vec in(2 * d_e);
        in.head(d_e) = seeded_gaussian_vec(spec.seed, "step_embed", static_cast<std::uint64_t>(step_id), d_e);
        in.tail(d_e) = seeded_gaussian_vec(spec.seed, "task_embed", static_cast<std::uint64_t>(task_id), d_e);
        Vec out = g * in;
        if (spec.noise_sigma > 0.0) {
            std::normal_distribution<double> noise(0.0, spec.noise_sigma);
            for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += noise(noise_rng);
        }
        return out;
    };

    std::int64_t next_id = 0;
    for (int task = 0; task < spec.n_tasks; ++task) {
        const auto& canon = ds.tasks[static_cast<std::size_t>(task)].canonical_sequence;
        std::mt19937_64 rng(derive_seed(spec.seed, "task_samples", static_cast<std::uint64_t>(task)));
        std::uniform_int_distribution<int> start_dist(0, canon_len - spec.horizon);
        for (int s = 0; s < spec.samples_per_task; ++s) {
            int start = start_dist(rng);
            PlanningSample sample;
            sample.sample_id = next_id++;
            sample.task_id = task;
            sample.horizon = spec.horizon;
            sample.gt_steps.assign(canon.begin() + start, canon.begin() + start + spec.horizon);
            sample.start_features = endpoint_features(sample.gt_steps.front(), task, rng);
            sample.goal_features = endpoint_features(sample.gt_steps.back(), task, rng);
            ds.samples.push_back(std::move(sample));
        }
    }
    return {std::move(ds), std::move(vocab)};
}

std::string serialize_dataset(const Dataset& dataset, const StepVocabulary& vocab) {
    std::ostringstream out;
    json header{{"record", "header"},
                {"version", 1},
                {"n_steps", vocab.size()},
                {"horizon", dataset.horizon},
                {"d_raw", dataset.d_raw}};
    out << header.dump() << "\n";
    for (const auto& task : dataset.tasks) {
        json rec{{"record", "task"},
                 {"task_id", task.task_id},
                 {"canonical_sequence", task.canonical_sequence}};
        out << rec.dump() << "\n";
    }
    for (const auto& step : vocab.steps) {
        json rec{{"record", "step"},
                 {"id", step.id},
                 {"label", step.label},
                 {"description", step.description}};
        out << rec.dump() << "\n";
    }
    for (const auto& s : dataset.samples) {
        json rec{{"record", "sample"},
                 {"sample_id", s.sample_id},
                 {"task_id", s.task_id},
                 {"start_features", vec_to_json(s.start_features)},
                 {"goal_features", vec_to_json(s.goal_features)},
                 {"gt_steps", s.gt_steps},
                 {"horizon", s.horizon}};
        out << rec.dump() << "\n";
    }
    return out.str();
}

void save_dataset(const Dataset& dataset, const StepVocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("save_dataset: cannot open " + path + " for writing");
    out << serialize_dataset(dataset, vocab);
    if (!out) throw ValidationError("save_dataset: write failed for " + path);
}

std::pair<Dataset, StepVocabulary> parse_dataset(const std::string& text) {
    Dataset ds;
    StepVocabulary vocab;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    bool have_header = false;
    int n_steps = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
        try {
            std::string kind = rec.at("record").get<std::string>();
            if (kind == "header") {
                int version = rec.at("version").get<int>();
                if (version != 1)
                    throw ParseError("unsupported dataset version " + std::to_string(version), line_no);
                n_steps = rec.at("n_steps").get<int>();
                ds.horizon = rec.at("horizon").get<int>();
                ds.d_raw = rec.at("d_raw").get<int>();
                have_header = true;
            } else if (kind == "task") {
                TaskSpec task;
                task.task_id = rec.at("task_id").get<int>();
                task.canonical_sequence = rec.at("canonical_sequence").get<std::vector<int>>();
                ds.tasks.push_back(std::move(task));
            } else if (kind == "step") {
                ActionStep step;
                step.id = rec.at("id").get<int>();
                step.label = rec.at("label").get<std::string>();
                step.description = rec.at("description").get<std::string>();
                vocab.steps.push_back(std::move(step));
            } else if (kind == "sample") {
                PlanningSample s;
                s.sample_id = rec.at("sample_id").get<std::int64_t>();
                s.task_id = rec.at("task_id").get<int>();
                s.start_features = vec_from_json(rec.at("start_features"));
                s.goal_features = vec_from_json(rec.at("goal_features"));
                s.gt_steps = rec.at("gt_steps").get<std::vector<int>>();
                s.horizon = rec.at("horizon").get<int>();
                ds.samples.push_back(std::move(s));
            } else {
                throw ParseError("unknown record kind '" + kind + "'", line_no);
            }
        } catch (const json::exception& e) {
            throw ParseError(std::string("record missing field: ") + e.what(), line_no);
        }
    }
    if (!have_header) throw ParseError("empty or headerless dataset file", -1);
    if (vocab.size() != n_steps)
        throw IntegrityError("header declares " + std::to_string(n_steps) + " steps but file has " +
                             std::to_string(vocab.size()));
    vocab.validate();
    for (const auto& s : ds.samples) {
        if (static_cast<int>(s.gt_steps.size()) != s.horizon)
            throw IntegrityError("sample " + std::to_string(s.sample_id) + ": gt_steps length " +
                                 std::to_string(s.gt_steps.size()) + " != horizon " +
                                 std::to_string(s.horizon));
        for (int id : s.gt_steps)
            if (id < 0 || id >= n_steps)
                throw IntegrityError("sample " + std::to_string(s.sample_id) + ": gt step id " +
                                     std::to_string(id) + " outside vocabulary of size " +
                                     std::to_string(n_steps));
        if (s.start_features.size() != ds.d_raw || s.goal_features.size() != ds.d_raw)
            throw IntegrityError("sample " + std::to_string(s.sample_id) +
                                 ": feature dimension mismatch");
        if (!s.start_features.allFinite() || !s.goal_features.allFinite())
            throw IntegrityError("sample " + std::to_string(s.sample_id) + ": non-finite features");
    }
    return {std::move(ds), std::move(vocab)};
}

std::pair<Dataset, StepVocabulary> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("load_dataset: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str());
}

std::string dataset_fingerprint(const Dataset& dataset, const StepVocabulary& vocab) {
    return to_hex(fnv1a64(serialize_dataset(dataset, vocab)));
}

SplitResult split_dataset(const Dataset& dataset, const std::array<double, 3>& ratios,
                          std::uint64_t seed, bool by_task) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    for (double r : ratios)
        if (!(r > 0.0)) throw ValidationError("split_dataset: ratios must be positive");
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("split_dataset: ratios sum to " + format_double(sum) + ", expected 1");

    auto make_empty = [&] {
        Dataset d;
        d.horizon = dataset.horizon;
        d.d_raw = dataset.d_raw;
        d.tasks = dataset.tasks;
        return d;
    };
    SplitResult out{make_empty(), make_empty(), make_empty()};

    std::size_t n = dataset.samples.size();
    std::mt19937_64 rng(derive_seed(seed, "split"));
    if (!by_task) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t n_train = static_cast<std::size_t>(std::llround(ratios[0] * double(n)));
        std::size_t n_val = static_cast<std::size_t>(std::llround(ratios[1] * double(n)));
        n_train = std::min(n_train, n);
        n_val = std::min(n_val, n - n_train);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& s = dataset.samples[idx[i]];
            if (i < n_train)
                out.train.samples.push_back(s);
            else if (i < n_train + n_val)
                out.val.samples.push_back(s);
            else
                out.test.samples.push_back(s);
        }
    } else {
        std::vector<int> task_ids;
        for (const auto& s : dataset.samples)
            if (std::find(task_ids.begin(), task_ids.end(), s.task_id) == task_ids.end())
                task_ids.push_back(s.task_id);
        std::shuffle(task_ids.begin(), task_ids.end(), rng);
        double target_train = ratios[0] * double(n);
        double target_val = ratios[1] * double(n);
        std::size_t assigned_train = 0, assigned_val = 0;
        std::map<int, int> assignment;  // task -> partition
        for (int task : task_ids) {
            std::size_t count = 0;
            for (const auto& s : dataset.samples)
                if (s.task_id == task) ++count;
            if (double(assigned_train) < target_train) {
                assignment[task] = 0;
                assigned_train += count;
            } else if (double(assigned_val) < target_val) {
                assignment[task] = 1;
                assigned_val += count;
            } else {
                assignment[task] = 2;
            }
        }
        for (const auto& s : dataset.samples) {
            int part = assignment.at(s.task_id);
            (part == 0 ? out.train : part == 1 ? out.val : out.test).samples.push_back(s);
        }
    }
    return out;
}

std::pair<Dataset, StepVocabulary> make_cross_vocabulary_variant(const Dataset& dataset,
                                                                 const StepVocabulary& vocab,
                                                                 std::uint64_t seed) {
    vocab.validate();
    int n = vocab.size();
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, "cross_vocab_perm"));
    std::shuffle(perm.begin(), perm.end(), rng);

    auto expander = DescriptionExpander::templated();
    StepVocabulary out_vocab;
    out_vocab.steps.resize(static_cast<std::size_t>(n));
    std::mt19937_64 word_rng(derive_seed(seed, "cross_vocab_words"));
    std::uniform_int_distribution<std::size_t> pick(0, kRewordSuffix.size() - 1);
    for (int old_id = 0; old_id < n; ++old_id) {
        int new_id = perm[static_cast<std::size_t>(old_id)];
        std::string label = vocab.at(old_id).label + " " + kRewordSuffix[pick(word_rng)];
        out_vocab.steps[static_cast<std::size_t>(new_id)] = {new_id, label, expander.expand(label)};
    }

    Dataset out = dataset;
    for (auto& task : out.tasks)
        for (auto& id : task.canonical_sequence) id = perm[static_cast<std::size_t>(id)];
    for (auto& s : out.samples)
        for (auto& id : s.gt_steps) id = perm[static_cast<std::size_t>(id)];
    return {std::move(out), std::move(out_vocab)};
}

}  // namespace planllm
