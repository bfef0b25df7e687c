#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "laytext/ops.hpp"
#include "laytext/optim.hpp"
#include "laytext/rng.hpp"
#include "laytext/tensor.hpp"

using namespace laytext;

namespace {

Tensor randn(Rng& rng, Shape shape, bool requires_grad = true) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (double& v : d) v = rng.normal();
    return Tensor::from(std::move(shape), std::move(d), requires_grad);
}

}  // namespace

// ---------------------------------------------------------------- matmul

TEST_CASE("matmul identity") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(eye, a);
    CHECK(c.data() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul hand-computed dot products") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{17, 39});
}

TEST_CASE("matmul zero annihilator") {
    Rng rng(1);
    Tensor z = Tensor::zeros({2, 3});
    Tensor b = randn(rng, {3, 4}, false);
    Tensor c = matmul(z, b);
    CHECK(c.shape() == Shape{2, 4});
    for (double v : c.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch throws") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

// ------------------------------------------------------- masked cross entropy

TEST_CASE("uniform logits give ln V") {
    const int t = 3, v = 8;
    Tensor logits = Tensor::zeros({t, v});
    std::vector<int> targets = {1, 5, 7};
    std::vector<uint8_t> mask = {1, 1, 1};
    Tensor loss = masked_cross_entropy(logits, targets, mask);
    CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("all-zero mask is an error, never a silent zero") {
    Tensor logits = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(masked_cross_entropy(logits, {0, 1}, {0, 0}), ContractError);
}

TEST_CASE("single position matches a direct softmax oracle") {
    Tensor logits = Tensor::from({1, 3}, {2, 0, 0});
    // oracle: p = softmax([2,0,0]); loss = -log p[0]
    const double e2 = std::exp(2.0);
    const double expected = -std::log(e2 / (e2 + 2.0));
    Tensor loss = masked_cross_entropy(logits, {0}, {1});
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("target outside vocabulary throws") {
    Tensor logits = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(masked_cross_entropy(logits, {3}, {1}), ContractError);
}

TEST_CASE("masked positions are gradient inert") {
    Rng rng(2);
    Tensor logits = randn(rng, {4, 6});
    std::vector<int> targets = {1, 2, 3, 4};
    std::vector<uint8_t> mask = {1, 0, 1, 0};

    Tensor loss = masked_cross_entropy(logits, targets, mask);
    backward(loss);
    const double v0 = loss.item();
    std::vector<double> g0 = logits.grad();

    // perturb masked-out rows; value and gradient must not move
    Tensor logits2 = logits.clone(true);
    for (int j = 0; j < 6; ++j) {
        logits2.data()[1 * 6 + j] += 3.7;
        logits2.data()[3 * 6 + j] -= 1.9;
    }
    Tensor loss2 = masked_cross_entropy(logits2, targets, mask);
    backward(loss2);
    CHECK(loss2.item() == v0);
    CHECK(logits2.grad() == g0);
    for (int j = 0; j < 6; ++j) {
        CHECK(logits2.grad()[1 * 6 + j] == 0.0);
        CHECK(logits2.grad()[3 * 6 + j] == 0.0);
    }
}

// ----------------------------------------------------------------- backward

TEST_CASE("loss = sum(x^2) gives grad 2x") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor loss = sum(mul(x, x));
    backward(loss);
    CHECK(loss.item() == 5.0);
    CHECK(x.grad() == std::vector<double>{2, 4});
}

TEST_CASE("parameter not in the graph keeps zero grad") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor p = Tensor::from({2}, {5, 5}, true);
    backward(sum(mul(x, x)));
    CHECK(p.grad_at(0) == 0.0);
    CHECK(p.grad_at(1) == 0.0);
}

TEST_CASE("backward on a non-scalar is a contract error") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("grad accumulates across backward calls until zeroed") {
    Tensor x = Tensor::from({1}, {3}, true);
    backward(sum(mul(x, x)));
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{12});
    x.zero_grad();
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{6});
}

// --------------------------------------------------------------- grad_check

TEST_CASE("grad_check on x^3 at x=2") {
    Tensor x = Tensor::from({1}, {2}, true);
    auto f = [&] { return sum(mul(mul(x, x), x)); };
    CHECK(grad_check(f, {x}, 1e-5) <= 1e-6);
}

TEST_CASE("grad_check on a constant function is exactly zero") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    auto f = [&] { return Tensor::scalar(4.2); };
    CHECK(grad_check(f, {x}, 1e-5) == 0.0);
}

TEST_CASE("grad_check flags non-finite losses") {
    Tensor x = Tensor::from({1}, {0.0}, true);
    auto f = [&] { return Tensor::scalar(std::numeric_limits<double>::infinity()); };
    CHECK_THROWS_AS(grad_check(f, {x}, 1e-5), NumericError);
}

// Every differentiable op, checked against central differences on small
// random tensors (<= 64 entries).
TEST_CASE("per-op gradient fidelity") {
    Rng rng(42);
    const double tol = 1e-4;

    SUBCASE("matmul") {
        Tensor a = randn(rng, {3, 4}), b = randn(rng, {4, 2});
        auto f = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
        CHECK(grad_check(f, {a, b}) <= tol);
    }
    SUBCASE("matmul_nt") {
        Tensor a = randn(rng, {3, 4}), b = randn(rng, {2, 4});
        auto f = [&] { return sum(matmul_nt(a, b)); };
        CHECK(grad_check(f, {a, b}) <= tol);
    }
    SUBCASE("linear with bias") {
        Tensor x = randn(rng, {3, 4}), w = randn(rng, {5, 4}), b = randn(rng, {5});
        auto f = [&] { return sum(mul(linear(x, w, b), linear(x, w, b))); };
        CHECK(grad_check(f, {x, w, b}) <= tol);
    }
    SUBCASE("add mul scale silu") {
        Tensor a = randn(rng, {2, 5}), b = randn(rng, {2, 5});
        auto f = [&] { return sum(silu(scale(mul(add(a, b), a), 0.7))); };
        CHECK(grad_check(f, {a, b}) <= tol);
    }
    SUBCASE("rmsnorm") {
        Tensor x = randn(rng, {4, 6}), g = randn(rng, {6});
        auto f = [&] { return sum(mul(rmsnorm(x, g), rmsnorm(x, g))); };
        CHECK(grad_check(f, {x, g}) <= tol);
    }
    SUBCASE("causal_softmax") {
        Tensor s = randn(rng, {5, 5});
        Tensor wsum = randn(rng, {5, 5}, false);
        auto f = [&] { return sum(mul(causal_softmax(s), wsum)); };
        CHECK(grad_check(f, {s}) <= tol);
    }
    SUBCASE("rope") {
        Tensor x = randn(rng, {4, 6});
        Tensor w = randn(rng, {4, 6}, false);
        auto f = [&] { return sum(mul(rope_rows(x, 10000.0), w)); };
        CHECK(grad_check(f, {x}) <= tol);
    }
    SUBCASE("slice and concat") {
        Tensor x = randn(rng, {3, 8});
        auto f = [&] {
            Tensor a = slice_cols(x, 0, 4), b = slice_cols(x, 4, 4);
            return sum(mul(concat_cols({b, a}), concat_cols({a, b})));
        };
        CHECK(grad_check(f, {x}) <= tol);
    }
    SUBCASE("embed, gather, replace, masked add") {
        Tensor table = randn(rng, {6, 4});
        Tensor repl = randn(rng, {2, 4});
        Tensor delta = randn(rng, {2, 4});
        std::vector<int> ids = {0, 3, 3, 5};
        std::vector<int> pos = {1, 2};
        auto f = [&] {
            Tensor e = embed_rows(table, ids);
            Tensor r = row_replace(e, repl, pos);
            Tensor m = masked_row_add(r, delta, pos);
            Tensor g = gather_rows(m, {0, 2, 3});
            return sum(mul(g, g));
        };
        CHECK(grad_check(f, {table, repl, delta}) <= tol);
    }
    SUBCASE("masked cross entropy") {
        Tensor logits = randn(rng, {4, 5});
        std::vector<int> targets = {1, 0, 4, 2};
        std::vector<uint8_t> mask = {1, 0, 1, 1};
        auto f = [&] { return masked_cross_entropy(logits, targets, mask); };
        CHECK(grad_check(f, {logits}) <= tol);
    }
    SUBCASE("composition chain") {
        Tensor x = randn(rng, {4, 6}), w1 = randn(rng, {6, 6}), w2 = randn(rng, {5, 6}),
               g = randn(rng, {6});
        std::vector<int> targets = {0, 3, 1, 4};
        std::vector<uint8_t> mask = {0, 1, 1, 1};
        auto f = [&] {
            Tensor h = silu(linear(rmsnorm(x, g), w1));
            Tensor att = matmul(causal_softmax(matmul_nt(h, h)), h);
            return masked_cross_entropy(linear(add(h, att), w2), targets, mask);
        };
        CHECK(grad_check(f, {x, w1, w2, g}) <= tol);
    }
}

// -------------------------------------------------------------------- rope

TEST_CASE("rope at position zero is the identity") {
    Rng rng(8);
    Tensor x = randn(rng, {1, 8}, false);
    Tensor y = rope_rows(x, 10000.0);
    CHECK(y.data() == x.data());
}

TEST_CASE("rope preserves norms") {
    Rng rng(9);
    Tensor x = randn(rng, {7, 8}, false);
    Tensor y = rope_rows(x, 10000.0);
    for (int i = 0; i < 7; ++i) {
        double nx = 0, ny = 0;
        for (int j = 0; j < 8; ++j) {
            nx += x.data()[i * 8 + j] * x.data()[i * 8 + j];
            ny += y.data()[i * 8 + j] * y.data()[i * 8 + j];
        }
        CHECK(std::sqrt(ny) == doctest::Approx(std::sqrt(nx)).epsilon(1e-12));
    }
}

TEST_CASE("rope attention scores depend only on relative position") {
    Rng rng(10);
    const int d = 8;
    std::vector<double> qv(d), kv(d);
    for (double& v : qv) v = rng.normal();
    for (double& v : kv) v = rng.normal();

    auto score = [&](int m, int n) {
        // place q at row m and k at row n of otherwise ignored matrices
        const int rows = std::max(m, n) + 1;
        std::vector<double> qm(static_cast<size_t>(rows) * d, 0.0), km(qm);
        for (int j = 0; j < d; ++j) {
            qm[static_cast<size_t>(m) * d + j] = qv[static_cast<size_t>(j)];
            km[static_cast<size_t>(n) * d + j] = kv[static_cast<size_t>(j)];
        }
        Tensor q = rope_rows(Tensor::from({rows, d}, std::move(qm)), 10000.0);
        Tensor k = rope_rows(Tensor::from({rows, d}, std::move(km)), 10000.0);
        double dot = 0.0;
        for (int j = 0; j < d; ++j)
            dot += q.data()[static_cast<size_t>(m) * d + j] * k.data()[static_cast<size_t>(n) * d + j];
        return dot;
    };

    for (int shift : {1, 5, 11}) {
        CHECK(std::fabs(score(2, 6) - score(2 + shift, 6 + shift)) <= 1e-9);
        CHECK(std::fabs(score(7, 3) - score(7 + shift, 3 + shift)) <= 1e-9);
    }
}

TEST_CASE("rope rejects odd head dimensions") {
    Tensor x = Tensor::zeros({2, 5});
    CHECK_THROWS_AS(rope_rows(x, 10000.0), ContractError);
}

// -------------------------------------------------------------------- adam

TEST_CASE("adam: zero gradient and zero decay leave the parameter unchanged") {
    std::vector<Tensor> params = {Tensor::from({2}, {1.0, -2.0}, true)};
    params[0].grad().assign(2, 0.0);
    OptimState state(params);
    adam_step(params, state, {.lr = 0.1});
    CHECK(params[0].data() == std::vector<double>{1.0, -2.0});
    CHECK(state.step_count() == 1);
}

TEST_CASE("adam single step matches the hand-unrolled oracle") {
    // oracle: p=1, g=1, lr=0.1, betas=(0.9,0.999), eps=1e-8, step 1
    const double m = 0.1 * 1.0;           // (1-b1)*g
    const double v = 0.001 * 1.0;         // (1-b2)*g^2
    const double mhat = m / (1 - 0.9);    // = 1
    const double vhat = v / (1 - 0.999);  // = 1
    const double expected = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);

    std::vector<Tensor> params = {Tensor::from({1}, {1.0}, true)};
    params[0].grad().assign(1, 1.0);
    OptimState state(params);
    adam_step(params, state, {.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
    CHECK(params[0].data()[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("decoupled weight decay shrinks by lr*wd*p under zero gradient") {
    std::vector<Tensor> params = {Tensor::from({1}, {2.0}, true)};
    params[0].grad().assign(1, 0.0);
    OptimState state(params);
    adam_step(params, state, {.lr = 0.1, .weight_decay = 0.01});
    CHECK(params[0].data()[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-15));
}

TEST_CASE("non-finite gradient aborts the step before mutating anything") {
    std::vector<Tensor> params = {Tensor::from({2}, {1.0, 1.0}, true)};
    params[0].grad() = {1.0, std::numeric_limits<double>::quiet_NaN()};
    OptimState state(params);
    CHECK_THROWS_AS(adam_step(params, state, {.lr = 0.1}), NumericError);
    CHECK(params[0].data() == std::vector<double>{1.0, 1.0});
    CHECK(state.step_count() == 0);
}

TEST_CASE("clip_grad_norm rescales to the cap") {
    std::vector<Tensor> params = {Tensor::from({2}, {0.0, 0.0}, true)};
    params[0].grad() = {3.0, 4.0};
    const double norm = clip_grad_norm(params, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(params[0].grad()[0] == doctest::Approx(0.6));
    CHECK(params[0].grad()[1] == doctest::Approx(0.8));
}

// ------------------------------------------------------------- determinism

TEST_CASE("identical seeds give bitwise-identical values and gradients") {
    auto run = [] {
        Rng rng(123);
        Tensor x = randn(rng, {4, 6}), w = randn(rng, {6, 6});
        Tensor loss = masked_cross_entropy(linear(silu(matmul(x, w)), w), {0, 1, 2, 3},
                                           {1, 1, 1, 1});
        backward(loss);
        std::vector<double> out = {loss.item()};
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("no-grad mode builds no graph") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard ng;
    Tensor y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}
