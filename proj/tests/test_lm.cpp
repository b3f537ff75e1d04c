#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "planllm/data.hpp"
#include "planllm/lm.hpp"
#include "support/finite_diff.hpp"
#include "support/naive_attention.hpp"

using namespace planllm;

namespace {

std::vector<std::string> sample_labels() {
    return {"peel garlic", "chop fresh onion", "stir warm batter", "rinse beans",
            "mash cold butter", "slice tomato"};
}

struct LmFixture {
    Tokenizer tok;
    TinyLM lm;
    LoraSet lora;
    PrefixProjection proj;

    explicit LmFixture(std::uint64_t seed, int d_model = 6, int d_lm = 8)
        : tok(Tokenizer::build(sample_labels())) {
        std::mt19937_64 rng(seed);
        lm = TinyLM("lm", tok.size(), d_lm, 2, 2, 16, 32, rng);
        lora = LoraSet("lora", lm, 2, 4.0, rng);
        proj = PrefixProjection("prefix", d_model, d_lm, rng);
    }
};

}  // namespace

TEST_CASE("tokenizer round-trips in-vocabulary text deterministically") {
    auto tok = Tokenizer::build(sample_labels());
    std::string text = "step 1: peel garlic ; step 2: chop fresh onion";
    auto ids = tok.encode(text);
    CHECK(tok.decode(ids) == text);
    CHECK(tok.encode(text) == ids);
    CHECK(tok.encode("unknownword")[0] == tok.unk_id);
    CHECK(tok.size() > 10);
}

TEST_CASE("format_caption produces the exact template") {
    CHECK(format_caption({"a b", "c d", "e f"}, 3) == "step 1: a b ; step 2: c d ; step 3: e f");
    CHECK_THROWS_AS(format_caption({"a", "b"}, 3), ValidationError);
    CHECK_THROWS_AS(format_caption({"a", "", "c"}, 3), ValidationError);
}

TEST_CASE("parse inverts format for random word-bank label sequences") {
    GeneratorSpec spec;
    spec.n_tasks = 1;
    spec.n_steps = 40;
    spec.horizon = 3;
    spec.samples_per_task = 1;
    spec.d_raw = 4;
    spec.seed = 5;
    auto [ds, vocab] = generate_synthetic_dataset(spec);
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> pick(0, vocab.size() - 1);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<std::string> labels;
        for (int k = 0; k < 3; ++k) labels.push_back(vocab.at(pick(rng)).label);
        auto parsed = parse_caption(format_caption(labels, 3), 3);
        CHECK_FALSE(parsed.fallback);
        CHECK(parsed.segments == labels);
    }
}

TEST_CASE("parse falls back to whole-caption copies on garbage") {
    auto parsed = parse_caption("complete nonsense text", 3);
    CHECK(parsed.fallback);
    REQUIRE(parsed.segments.size() == 3);
    for (const auto& s : parsed.segments) CHECK(s == "complete nonsense text");

    auto empty = parse_caption("", 2);
    CHECK(empty.fallback);
    CHECK(empty.segments.size() == 2);
}

TEST_CASE("parse handles every subset of present markers with fixed arity") {
    std::vector<std::string> labels{"peel garlic", "chop onion", "rinse beans"};
    for (int mask = 0; mask < 8; ++mask) {
        std::string caption;
        int present = 0;
        for (int k = 0; k < 3; ++k) {
            if (!caption.empty()) caption += " ; ";
            if (mask & (1 << k)) {
                caption += "step " + std::to_string(k + 1) + ": " + labels[std::size_t(k)];
                ++present;
            } else {
                caption += labels[std::size_t(k)];
            }
        }
        auto parsed = parse_caption(caption, 3);
        REQUIRE(parsed.segments.size() == 3);
        if (present == 3 || present == 0) {
            // all markers, or pure ';'-separated text: three clean segments
            CHECK_FALSE(parsed.fallback);
            CHECK(parsed.segments == labels);
        } else {
            CHECK(parsed.fallback == (present < 3));
        }
    }

    // Two of three markers: two parsed segments plus one fallback copy.
    auto two = parse_caption("step 1: peel garlic ; chop onion ; step 3: rinse beans", 3);
    CHECK(two.fallback);
    CHECK(two.segments[0] == "peel garlic ; chop onion");
    CHECK(two.segments[1] == "rinse beans");
    CHECK(two.segments[2] == "step 1: peel garlic ; chop onion ; step 3: rinse beans");
}

TEST_CASE("llm_encode returns horizon rows and respects causality") {
    LmFixture f(51);
    const int T = 3;
    std::mt19937_64 rng(52);
    Mat prefix_model = gaussian_matrix(rng, 2 + T, 6, 1.0);

    Tape t;
    Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
    Var h = llm_encode(t, f.lm, &f.lora, prefix, T);
    CHECK(t.value(h).rows() == T);
    CHECK(t.value(h).cols() == 8);

    // Perturb x^q_1 (prefix row 2): earlier hidden states must not move.
    Mat perturbed = prefix_model;
    perturbed(2, 3) += 0.25;
    Tape t2;
    Var prefix2 = project_prefix(t2, f.proj, t2.constant(perturbed));
    Var full1 = lm_hidden(t, f.lm, &f.lora, prefix, {});
    Var full2 = lm_hidden(t2, f.lm, &f.lora, prefix2, {});
    const Mat& h1 = t.value(full1);
    const Mat& h2 = t2.value(full2);
    CHECK((h1.topRows(2) - h2.topRows(2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((h1.row(2) - h2.row(2)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("single-block single-head lm matches a hand-unrolled forward") {
    auto tok = Tokenizer::build(sample_labels());
    std::mt19937_64 rng(53);
    TinyLM lm("lm", tok.size(), 6, 1, 1, 12, 16, rng);
    Mat prefix = gaussian_matrix(rng, 3, 6, 1.0);
    std::vector<int> tokens{tok.bos_id, 7, 9};

    Tape t;
    Mat got = t.value(lm_hidden(t, lm, nullptr, t.constant(prefix), tokens));

    Mat x(6, 6);
    x.topRows(3) = prefix;
    for (int i = 0; i < 3; ++i) x.row(3 + i) = lm.tok_embed.value.row(tokens[std::size_t(i)]);
    x += lm.pos_embed.value.topRows(6);
    Mat mask = causal_mask(6);
    auto ln = [&](const Mat& m, LayerNormParams& p) {
        Mat out(m.rows(), m.cols());
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            double mu = m.row(r).mean();
            double var = (m.row(r).array() - mu).square().sum() / double(m.cols());
            out.row(r) = (((m.row(r).array() - mu) / std::sqrt(var + 1e-6)).matrix())
                             .cwiseProduct(p.gain.value.row(0)) +
                         p.bias.value.row(0);
        }
        return out;
    };
    Mat normed = ln(x, lm.blocks[0].ln_attn);
    x += test::naive_attention(normed, normed, lm.blocks[0].attn, &mask);
    Mat ff_in = ln(x, lm.blocks[0].ln_ffn);
    Mat hid = ff_in * lm.blocks[0].ffn.w1.value;
    hid.rowwise() += lm.blocks[0].ffn.b1.value.row(0);
    hid = hid.unaryExpr([](double v) { return v * 0.5 * (1.0 + std::erf(v * 0.7071067811865475244)); });
    Mat ff = hid * lm.blocks[0].ffn.w2.value;
    ff.rowwise() += lm.blocks[0].ffn.b2.value.row(0);
    x += ff;
    Mat expect = ln(x, lm.ln_final);

    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("greedy generation is deterministic, bounded, and stable for seeded params") {
    LmFixture f(54);
    std::mt19937_64 rng(55);
    Mat prefix_model = gaussian_matrix(rng, 5, 6, 1.0);
    Mat prefix = (prefix_model * f.proj.w.value).rowwise() + f.proj.b.value.row(0);

    auto a = llm_generate(f.lm, &f.lora, prefix, 12, f.tok);
    auto b = llm_generate(f.lm, &f.lora, prefix, 12, f.tok);
    CHECK(a == b);
    CHECK(a.size() <= 12);
    CHECK(llm_generate(f.lm, &f.lora, prefix, 0, f.tok).empty());

    // Golden output of the untrained seeded model; must never drift.
    std::vector<int> golden{23, 23, 23, 23, 6, 27, 12, 27, 27, 23, 23, 23};
    CHECK(a == golden);
}

TEST_CASE("asc loss equals ln V at uniform logits and matches hand CE for biased logits") {
    LmFixture f(56);
    std::mt19937_64 rng(57);
    Mat prefix_model = gaussian_matrix(rng, 4, 6, 1.0);

    f.lm.out_w.value.setZero();
    f.lm.out_b.value.setZero();  // uniform distribution over the vocabulary
    {
        Tape t;
        Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
        Var loss = asc_loss(t, f.lm, &f.lora, prefix, {5, 7, 9}, f.tok);
        CHECK(t.value(loss)(0, 0) ==
              doctest::Approx(std::log(double(f.tok.size()))).epsilon(1e-12));
    }

    // Concentrate all mass on one target: loss for a 1-token caption -> 0.
    {
        f.lm.out_b.value.setConstant(-40.0);
        f.lm.out_b.value(0, 5) = 40.0;
        f.lm.out_b.value(0, f.tok.eos_id) = 40.0;
        // both the target and EOS get huge logits; CE stays ~ln 2 then... use
        // exact hand computation instead of a limit claim:
        Tape t;
        Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
        Var loss = asc_loss(t, f.lm, &f.lora, prefix, {5}, f.tok);
        double z_each = 40.0;
        // two positions: predict 5 then EOS; logits identical at both
        double lse = std::log(2.0 * std::exp(0.0)) + z_each;  // two winners at 40, rest ~ -40
        double hand = 0.5 * ((lse - z_each) + (lse - z_each));
        CHECK(t.value(loss)(0, 0) == doctest::Approx(hand).epsilon(1e-9));
    }

    // Specified 3-token caption against per-token scalar CE.
    {
        f.lm.out_w.value.setZero();
        std::mt19937_64 rng2(58);
        f.lm.out_b.value = gaussian_matrix(rng2, 1, f.tok.size(), 1.0);
        Tape t;
        Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
        std::vector<int> caption{4, 8, 6};
        Var loss = asc_loss(t, f.lm, &f.lora, prefix, caption, f.tok);
        Eigen::RowVectorXd logits = f.lm.out_b.value.row(0);
        double m = logits.maxCoeff();
        double lse = std::log((logits.array() - m).exp().sum()) + m;
        std::vector<int> targets{4, 8, 6, f.tok.eos_id};
        double hand = 0.0;
        for (int tgt : targets) hand += lse - logits(tgt);
        hand /= double(targets.size());
        CHECK(t.value(loss)(0, 0) == doctest::Approx(hand).epsilon(1e-9));
    }

    Tape t;
    Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
    CHECK_THROWS_AS(asc_loss(t, f.lm, &f.lora, prefix, {}, f.tok), ValidationError);
}

TEST_CASE("lora at init is exactly the adapter-free model") {
    LmFixture f(59);
    std::mt19937_64 rng(60);
    Mat prefix_model = gaussian_matrix(rng, 5, 6, 1.0);
    std::vector<int> tokens{f.tok.bos_id, 6, 11, 4};

    Tape t;
    Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
    Mat with = t.value(lm_hidden(t, f.lm, &f.lora, prefix, tokens));
    Mat without = t.value(lm_hidden(t, f.lm, nullptr, prefix, tokens));
    CHECK((with - without).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("lora_apply algebra: zero alpha, rank-1 outer product") {
    std::mt19937_64 rng(61);
    Parameter base("w", gaussian_matrix(rng, 5, 3, 1.0));
    LoraAdapter ad("ad", 5, 3, 1, 2.0, rng);
    ad.up.value = gaussian_matrix(rng, 1, 3, 1.0);

    Tape t;
    Mat got = t.value(lora_apply(t, base, ad));
    Mat expect = base.value + 2.0 * (ad.down.value * ad.up.value);
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);

    ad.alpha = 0.0;
    Tape t2;
    CHECK((t2.value(lora_apply(t2, base, ad)) - base.value).cwiseAbs().maxCoeff() == 0.0);

    LoraAdapter wrong("wrong", 4, 3, 1, 2.0, rng);
    Tape t3;
    CHECK_THROWS_AS(lora_apply(t3, base, wrong), ShapeError);
}

TEST_CASE("asc gradients match finite differences for prefix, lora, and base") {
    LmFixture f(62, 4, 4);
    // shrink to one block for speed
    std::mt19937_64 rng(63);
    f.lm = TinyLM("lm", f.tok.size(), 4, 1, 2, 8, 16, rng);
    f.lora = LoraSet("lora", f.lm, 2, 4.0, rng);
    f.proj = PrefixProjection("prefix", 4, 4, rng);
    // move LoRA off the zero point so its gradient path is generic
    for (auto& block : f.lora.per_block)
        for (auto* list : {&block.query, &block.value})
            for (auto& a : *list) a.up.value = gaussian_matrix(rng, a.up.value.rows(), a.up.value.cols(), 0.05);

    Mat prefix_model = gaussian_matrix(rng, 4, 4, 1.0);
    std::vector<int> caption{5, 9};

    auto eval = [&](bool with_grad) {
        Tape t;
        Var prefix = project_prefix(t, f.proj, t.constant(prefix_model));
        Var loss = asc_loss(t, f.lm, &f.lora, prefix, caption, f.tok);
        if (with_grad) t.backward(loss);
        return t.value(loss)(0, 0);
    };

    std::vector<Parameter*> params = f.proj.parameters();
    for (auto* p : f.lora.parameters()) params.push_back(p);
    for (auto* p : f.lm.parameters()) params.push_back(p);
    auto res = test::check_gradients(params, eval);
    INFO(res.worst);
    CHECK(res.ok);
}
