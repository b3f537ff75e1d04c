#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "planllm/attention.hpp"
#include "support/finite_diff.hpp"
#include "support/naive_attention.hpp"

using namespace planllm;

namespace {

AttentionParams make_attention(int width, int heads, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return AttentionParams("attn", width, heads, rng);
}

}  // namespace

TEST_CASE("single-token self-attention reduces to residual value path") {
    auto p = make_attention(8, 2, 3);
    std::mt19937_64 rng(4);
    Mat x = gaussian_matrix(rng, 1, 8, 1.0);

    Tape t;
    Var out = self_attention(t, t.constant(x), p);

    // softmax over a single key is 1, so each head passes x*wv straight through
    Mat concat(1, 8);
    concat.middleCols(0, 4) = x * p.wv[0].value;
    concat.middleCols(4, 4) = x * p.wv[1].value;
    Mat expect = x + concat * p.wo.value + p.bo.value;
    CHECK((t.value(out) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self-attention without positions is permutation-equivariant") {
    auto p = make_attention(8, 4, 5);
    std::mt19937_64 rng(6);
    Mat x = gaussian_matrix(rng, 5, 8, 1.0);
    std::vector<int> perm{3, 0, 4, 1, 2};
    Mat xp(5, 8);
    for (int i = 0; i < 5; ++i) xp.row(i) = x.row(perm[i]);

    Tape t;
    Mat out = t.value(self_attention(t, t.constant(x), p));
    Mat outp = t.value(self_attention(t, t.constant(xp), p));
    for (int i = 0; i < 5; ++i)
        CHECK((outp.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self-attention matches brute-force per-head oracle") {
    auto p = make_attention(8, 2, 7);
    std::mt19937_64 rng(8);
    Mat x = gaussian_matrix(rng, 3, 8, 1.0);

    Tape t;
    Mat out = t.value(self_attention(t, t.constant(x), p));
    Mat expect = x + test::naive_attention(x, x, p);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross-attention with one context token hits the residual value path") {
    auto p = make_attention(8, 2, 9);
    std::mt19937_64 rng(10);
    Mat q = gaussian_matrix(rng, 3, 8, 1.0);
    Mat c = gaussian_matrix(rng, 1, 8, 1.0);

    Tape t;
    Mat out = t.value(cross_attention(t, t.constant(q), t.constant(c), p));
    Mat concat(1, 8);
    concat.middleCols(0, 4) = c * p.wv[0].value;
    concat.middleCols(4, 4) = c * p.wv[1].value;
    Mat attended = concat * p.wo.value + p.bo.value;
    for (int i = 0; i < 3; ++i)
        CHECK((out.row(i) - (q.row(i) + attended.row(0))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("duplicating every context token leaves cross-attention unchanged") {
    auto p = make_attention(8, 4, 11);
    std::mt19937_64 rng(12);
    Mat q = gaussian_matrix(rng, 2, 8, 1.0);
    Mat c = gaussian_matrix(rng, 3, 8, 1.0);
    Mat c2(6, 8);
    c2 << c, c;

    Tape t;
    Mat a = t.value(cross_attention(t, t.constant(q), t.constant(c), p));
    Mat b = t.value(cross_attention(t, t.constant(q), t.constant(c2), p));
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross-attention 2x3 case matches oracle") {
    auto p = make_attention(8, 2, 13);
    std::mt19937_64 rng(14);
    Mat q = gaussian_matrix(rng, 2, 8, 1.0);
    Mat c = gaussian_matrix(rng, 3, 8, 1.0);

    Tape t;
    Mat out = t.value(cross_attention(t, t.constant(q), t.constant(c), p));
    Mat expect = q + test::naive_attention(q, c, p);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rejects NaN inputs") {
    auto p = make_attention(8, 2, 15);
    Mat x = Mat::Zero(2, 8);
    x(1, 3) = std::numeric_limits<double>::quiet_NaN();
    Tape t;
    CHECK_THROWS_AS(self_attention(t, t.constant(x), p), NumericError);
}

TEST_CASE("attention gradient matches finite differences") {
    auto p = make_attention(8, 2, 16);
    std::mt19937_64 rng(17);
    Mat q = gaussian_matrix(rng, 2, 8, 0.7);
    Mat c = gaussian_matrix(rng, 3, 8, 0.7);
    Mat mask = Mat::Zero(2, 3);
    mask(0, 1) = -std::numeric_limits<double>::infinity();

    auto eval = [&](bool with_grad) {
        Tape t;
        Var out = cross_attention(t, t.constant(q), t.constant(c), p, &mask);
        Var loss = t.mean_all(t.mul_elem(out, out));
        if (with_grad) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    auto res = test::check_gradients(p.parameters(), eval);
    INFO(res.worst);
    CHECK(res.ok);
}

TEST_CASE("feed-forward and layer-norm gradients match finite differences") {
    std::mt19937_64 rng(18);
    FeedForwardParams ffn("ffn", 6, 10, rng);
    LayerNormParams ln("ln", 6);
    Mat x = gaussian_matrix(rng, 3, 6, 0.9);

    auto eval = [&](bool with_grad) {
        Tape t;
        Var out = feed_forward(t, layer_norm(t, t.constant(x), ln), ffn);
        Var loss = t.mean_all(t.gelu(out));
        if (with_grad) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    std::vector<Parameter*> params = ffn.parameters();
    auto lnp = ln.parameters();
    params.insert(params.end(), lnp.begin(), lnp.end());
    auto res = test::check_gradients(params, eval);
    INFO(res.worst);
    CHECK(res.ok);
}

TEST_CASE("causal mask blocks exactly the upper triangle") {
    Mat m = causal_mask(4);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 4; ++j) {
            if (j > i)
                CHECK(m(i, j) == -std::numeric_limits<double>::infinity());
            else
                CHECK(m(i, j) == 0.0);
        }
}
