#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "planllm/decoder.hpp"
#include "support/finite_diff.hpp"
#include "support/naive_attention.hpp"

using namespace planllm;

namespace {

StepDecoder make_decoder(int d_model, int d_lm, int heads, int T, int N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return StepDecoder("decoder", d_model, d_lm, heads, T, N, rng);
}

}  // namespace

TEST_CASE("step_decode outputs horizon rows and matches the attention oracle") {
    auto dec = make_decoder(8, 6, 2, 3, 5, 71);
    std::mt19937_64 rng(72);
    Mat context = gaussian_matrix(rng, 5, 8, 1.0);  // 2 + T tokens

    Tape t;
    Mat got = t.value(step_decode(t, dec, t.constant(context)));
    CHECK(got.rows() == 3);
    Mat expect = dec.queries.value + test::naive_attention(dec.queries.value, context, dec.decode_attn);
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);

    Mat doubled(10, 8);
    doubled << context, context;
    Mat got2 = t.value(step_decode(t, dec, t.constant(doubled)));
    CHECK((got - got2).cwiseAbs().maxCoeff() < 1e-12);  // softmax renormalizes
}

TEST_CASE("knowledge fusion with zero hidden states is the identity at init") {
    auto dec = make_decoder(8, 6, 2, 3, 5, 73);
    std::mt19937_64 rng(74);
    Mat r = gaussian_matrix(rng, 3, 8, 1.0);
    Mat h = Mat::Zero(3, 6);

    Tape t;
    Mat fused = t.value(knowledge_fuse(t, dec, t.constant(r), t.constant(h)));
    // zero h -> zero projected context (bias starts 0) -> zero value rows ->
    // attention output bo (= 0 at init) -> pure residual
    CHECK((fused - r).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(fused.rows() == 3);
}

TEST_CASE("knowledge fusion matches oracle for projected context") {
    auto dec = make_decoder(8, 6, 2, 2, 5, 75);
    std::mt19937_64 rng(76);
    Mat r = gaussian_matrix(rng, 2, 8, 1.0);
    Mat h = gaussian_matrix(rng, 2, 6, 1.0);

    Tape t;
    Mat got = t.value(knowledge_fuse(t, dec, t.constant(r), t.constant(h)));
    Mat projected = h * dec.fusion_w.value;
    projected.rowwise() += dec.fusion_b.value.row(0);
    Mat expect = r + test::naive_attention(r, projected, dec.fusion_attn);
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);

    Tape t2;
    CHECK_THROWS_AS(knowledge_fuse(t2, dec, t2.constant(r), t2.constant(Mat::Zero(2, 5))),
                    ShapeError);
}

TEST_CASE("step refinement with one description reduces to the singleton value path") {
    auto dec = make_decoder(8, 6, 2, 3, 1, 77);
    std::mt19937_64 rng(78);
    Mat r = gaussian_matrix(rng, 3, 8, 1.0);
    Mat y = gaussian_matrix(rng, 1, 8, 1.0);

    Tape t;
    Mat got = t.value(step_refine(t, dec, t.constant(r), y));
    CHECK(got.rows() == 3);
    Mat concat(1, 8);
    concat.middleCols(0, 4) = y * dec.refine_attn.wv[0].value;
    concat.middleCols(4, 4) = y * dec.refine_attn.wv[1].value;
    Mat attended = concat * dec.refine_attn.wo.value + dec.refine_attn.bo.value;
    for (int i = 0; i < 3; ++i)
        CHECK((got.row(i) - (r.row(i) + attended.row(0))).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(step_refine(t, dec, t.constant(r), Mat::Zero(0, 8)), ValidationError);
}

TEST_CASE("classification logits ignore permutations of the description table") {
    auto dec = make_decoder(8, 6, 2, 3, 6, 79);
    std::mt19937_64 rng(80);
    Mat r = gaussian_matrix(rng, 3, 8, 1.0);
    Mat y = gaussian_matrix(rng, 6, 8, 1.0);
    Mat y_perm(6, 8);
    std::vector<int> perm{5, 3, 0, 1, 4, 2};
    for (int i = 0; i < 6; ++i) y_perm.row(i) = y.row(perm[i]);

    Tape t;
    Mat a = t.value(classify(t, dec, step_refine(t, dec, t.constant(r), y)));
    Mat b = t.value(classify(t, dec, step_refine(t, dec, t.constant(r), y_perm)));
    CHECK(a.rows() == 3);
    CHECK(a.cols() == 6);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sd loss closed forms and validation") {
    {
        Tape t;
        Var loss = sd_loss(t, t.constant(Mat::Constant(3, 7, 0.4)), {0, 3, 6});
        CHECK(t.value(loss)(0, 0) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    }
    {
        Mat logits = Mat::Constant(2, 4, -30.0);
        logits(0, 1) = 30.0;
        logits(1, 2) = 30.0;
        Tape t;
        CHECK(t.value(sd_loss(t, t.constant(logits), {1, 2}))(0, 0) < 1e-9);
    }
    {
        // T=2, N=3 hand computation
        Mat logits(2, 3);
        logits << 1.0, 0.5, -0.5, 0.2, 2.0, 0.0;
        auto ce = [&](int row, int tgt) {
            double m = logits.row(row).maxCoeff();
            double lse = std::log((logits.row(row).array() - m).exp().sum()) + m;
            return lse - logits(row, tgt);
        };
        double hand = 0.5 * (ce(0, 0) + ce(1, 2));
        Tape t;
        CHECK(t.value(sd_loss(t, t.constant(logits), {0, 2}))(0, 0) ==
              doctest::Approx(hand).epsilon(1e-12));
    }
    {
        Tape t;
        CHECK_THROWS_AS(sd_loss(t, t.constant(Mat::Zero(2, 3)), {0, 3}), ValidationError);
        CHECK_THROWS_AS(sd_loss(t, t.constant(Mat::Zero(2, 3)), {0}), ShapeError);
    }
}

TEST_CASE("total loss is the unweighted sum with pass-through gradients") {
    Tape t;
    Var a = t.constant(Mat::Constant(1, 1, 0.1));
    Var b = t.constant(Mat::Constant(1, 1, 0.2));
    Var c = t.constant(Mat::Constant(1, 1, 0.3));
    Var total = total_loss(t, a, b, c);
    CHECK(t.value(total)(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    t.backward(total);
    CHECK(t.grad(a)(0, 0) == 1.0);
    CHECK(t.grad(b)(0, 0) == 1.0);
    CHECK(t.grad(c)(0, 0) == 1.0);

    LossWeights w;
    w.asc = 0.5;
    CHECK(t.value(total_loss(t, a, b, c, w))(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("decoder branch gradients match finite differences end to end") {
    auto dec = make_decoder(6, 4, 2, 2, 4, 81);
    std::mt19937_64 rng(82);
    Mat context = gaussian_matrix(rng, 4, 6, 1.0);
    Mat h = gaussian_matrix(rng, 2, 4, 1.0);
    Mat y = gaussian_matrix(rng, 4, 6, 1.0);
    std::vector<int> gt{1, 3};

    auto eval = [&](bool with_grad) {
        Tape t;
        Var r = step_decode(t, dec, t.constant(context));
        r = knowledge_fuse(t, dec, r, t.constant(h));
        r = step_refine(t, dec, r, y);
        Var loss = sd_loss(t, classify(t, dec, r), gt);
        if (with_grad) t.backward(loss);
        return t.value(loss)(0, 0);
    };

    std::vector<Parameter*> params = dec.query_group();
    for (auto* p : dec.decode_group()) params.push_back(p);
    for (auto* p : dec.fusion_group()) params.push_back(p);
    for (auto* p : dec.refine_group()) params.push_back(p);
    for (auto* p : dec.classifier_group()) params.push_back(p);
    auto res = test::check_gradients(params, eval);
    INFO(res.worst);
    CHECK(res.ok);
}
