#include <cmath>
#include <random>

#include "doctest.h"
#include "gat/autodiff.hpp"
#include "gat/error.hpp"
#include "test_util.hpp"

using namespace gat;
using gat::testing::random_tensor;

TEST_CASE("forward: affine with identity weight") {
    Graph g;
    auto x = g.leaf("x", Tensor::matrix(1, 2, {1, 2}));
    auto w = g.leaf("w", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    auto b = g.leaf("b", Tensor(Shape{2}));
    CHECK(affine(x, w, b).value() == Tensor::matrix(1, 2, {1, 2}));
}

TEST_CASE("forward: relu") {
    Graph g;
    auto x = g.leaf("x", Tensor(Shape{2}, {-1, 2}));
    CHECK(relu(x).value() == Tensor(Shape{2}, {0, 2}));
}

TEST_CASE("forward: softmax cross-entropy of equal logits is ln 2") {
    Graph g;
    auto z = g.leaf("z", Tensor::matrix(1, 2, {0, 0}));
    CHECK(mean(softmax_cross_entropy(z, {0})).value().item() == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("forward: errors") {
    Graph g;
    auto x = g.leaf("x", Tensor::matrix(1, 3, {1, 2, 3}));
    auto w = g.leaf("w", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    auto b = g.leaf("b", Tensor(Shape{2}));
    CHECK_THROWS_AS(affine(x, w, b), ShapeError);
    CHECK_THROWS_AS(g.leaf("nan", Tensor::scalar(std::nan(""))), NumericError);

    auto y = sum(relu(x));
    CHECK_THROWS_AS(g.evaluate(y, {}), GraphError);
    Bindings bad{{"x", Tensor::matrix(1, 3, {1, std::numeric_limits<double>::infinity(), 3})},
                 {"w", w.value()},
                 {"b", b.value()}};
    CHECK_THROWS_AS(g.evaluate(y, bad), NumericError);
    Bindings wrong_shape{{"x", Tensor::matrix(3, 1, {1, 2, 3})}, {"w", w.value()}, {"b", b.value()}};
    CHECK_THROWS_AS(g.evaluate(y, wrong_shape), ShapeError);
}

TEST_CASE("forward: replay is pure and reproduces recorded values") {
    std::mt19937_64 rng(7);
    Graph g;
    auto m = gat::testing::build_tiny_mlp(g, rng, 5, 4, 6, 3);
    Bindings bindings;
    for (const auto& name : g.leaf_names()) bindings.emplace(name, g.find_leaf(name)->value());
    const Tensor first = g.evaluate(m.loss, bindings);
    const Tensor second = g.evaluate(m.loss, bindings);
    CHECK(first == second);
    CHECK(first == m.loss.value());
}

TEST_CASE("backward: linear map") {
    Graph g;
    auto w = g.leaf("w", Tensor(Shape{2}, {3, -4}), false);
    auto x = g.leaf("x", Tensor(Shape{2}, {0.5, 0.25}));
    auto out = sum(mul(w, x));
    auto grads = backward(g, out, {"x", "w"});
    CHECK(grads.at("x") == Tensor(Shape{2}, {3, -4}));
    CHECK(grads.at("w") == Tensor(Shape{2}));  // does not require grad
}

TEST_CASE("backward: relu subgradient is zero at negative inputs") {
    Graph g;
    auto x = g.leaf("x", Tensor(Shape{2}, {-1, 2}));
    auto grads = backward(g, sum(relu(x)), {"x"});
    CHECK(grads.at("x") == Tensor(Shape{2}, {0, 1}));
}

TEST_CASE("backward: untouched leaves get zero, errors") {
    Graph g;
    auto x = g.leaf("x", Tensor(Shape{2}, {1, 2}));
    g.leaf("unused", Tensor(Shape{3}, {1, 2, 3}));
    auto grads = backward(g, sum(x), {"unused"});
    CHECK(grads.at("unused") == Tensor(Shape{3}));
    CHECK_THROWS_AS(backward(g, relu(x), {"x"}), GraphError);
    CHECK_THROWS_AS(backward(g, sum(x), {"nope"}), GraphError);
}

TEST_CASE("backward: random two-layer MLPs match central differences") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Graph g;
        auto m = gat::testing::build_tiny_mlp(g, rng, 4, 5, 7, 3, true);
        auto report = finite_difference_check(g, m.loss, {"x", "W1", "b1", "W2", "b2"}, 1e-3);
        CHECK(report.checked > 0);
        CHECK(report.max_relative_error < 1e-4);
    }
}

TEST_CASE("backward: every primitive matches central differences") {
    std::mt19937_64 rng(3);
    auto check = [&](auto build, std::vector<std::string> wrt) {
        Graph g;
        Var out = build(g);
        auto report = finite_difference_check(g, out, wrt, 1e-4);
        CHECK(report.max_relative_error < 1e-4);
        CHECK(report.checked > 0);
    };
    auto weights = [&](Graph& g, Var v) { return sum(mul(v, g.constant(random_tensor(rng, v.shape())))); };
    auto pos = [&](Shape s) { return random_tensor(rng, std::move(s), 0.5, 2.0); };

    check([&](Graph& g) { return weights(g, matmul(g.leaf("a", random_tensor(rng, {3, 4})), g.leaf("b", random_tensor(rng, {4, 2})))); }, {"a", "b"});
    check([&](Graph& g) { return weights(g, transpose(g.leaf("a", random_tensor(rng, {3, 4})))); }, {"a"});
    check([&](Graph& g) { return weights(g, sub(g.leaf("a", random_tensor(rng, {2, 3})), g.leaf("b", random_tensor(rng, {2, 3})))); }, {"a", "b"});
    check([&](Graph& g) { return weights(g, mul(g.leaf("a", random_tensor(rng, {2, 3})), g.leaf("b", random_tensor(rng, {2, 3})))); }, {"a", "b"});
    check([&](Graph& g) { return weights(g, div(g.leaf("a", random_tensor(rng, {2, 3})), g.leaf("b", pos({2, 3})))); }, {"a", "b"});
    check([&](Graph& g) { return weights(g, add_scalar(scale(g.leaf("a", random_tensor(rng, {2, 3})), -1.5), 2.0)); }, {"a"});
    check([&](Graph& g) {
        Tensor a = random_tensor(rng, {3, 3});
        for (auto& v : a.values()) v += v > 0 ? 0.05 : -0.05;
        return weights(g, relu(g.leaf("a", a)));
    }, {"a"});
    check([&](Graph& g) { return weights(g, sigmoid(g.leaf("a", random_tensor(rng, {2, 3}, -3, 3)))); }, {"a"});
    check([&](Graph& g) { return weights(g, softmax(g.leaf("a", random_tensor(rng, {2, 4}, -2, 2)))); }, {"a"});
    check([&](Graph& g) { return weights(g, flatten(g.leaf("a", random_tensor(rng, {2, 2, 3})))); }, {"a"});
    check([&](Graph& g) {
        std::vector<Var> parts{g.leaf("a", random_tensor(rng, {2, 2})), g.leaf("b", random_tensor(rng, {2, 3}))};
        return weights(g, concat_cols(parts));
    }, {"a", "b"});
    check([&](Graph& g) { return weights(g, slice_cols(g.leaf("a", random_tensor(rng, {2, 5})), 1, 3)); }, {"a"});
    check([&](Graph& g) { return weights(g, pad_cols(g.leaf("a", random_tensor(rng, {2, 2})), 1, 4)); }, {"a"});
    check([&](Graph& g) { return mul(sum(g.leaf("a", random_tensor(rng, {2, 3}))), mean(g.leaf("b", random_tensor(rng, {4})))); }, {"a", "b"});
    check([&](Graph& g) { return weights(g, sum_rows(g.leaf("a", random_tensor(rng, {3, 2})))); }, {"a"});
    check([&](Graph& g) { return weights(g, sum_cols(g.leaf("a", random_tensor(rng, {3, 2})))); }, {"a"});
    check([&](Graph& g) { return weights(g, broadcast_rows(g.leaf("a", random_tensor(rng, {1, 3})), 4)); }, {"a"});
    check([&](Graph& g) { return weights(g, broadcast_cols(g.leaf("a", random_tensor(rng, {3, 1})), 2)); }, {"a"});
    check([&](Graph& g) { return weights(g, broadcast_to(g.leaf("a", random_tensor(rng, {1})), {2, 3})); }, {"a"});
    check([&](Graph& g) { return weights(g, softmax_cross_entropy(g.leaf("a", random_tensor(rng, {3, 4}, -2, 2)), {0, 3, 1})); }, {"a"});
    check([&](Graph& g) {
        return weights(g, sigmoid_bce(g.leaf("a", random_tensor(rng, {3, 2}, -2, 2)), random_tensor(rng, {3, 2}, 0, 1)));
    }, {"a"});
    check([&](Graph& g) { return weights(g, squared_error(g.leaf("a", random_tensor(rng, {3, 2})), random_tensor(rng, {3, 2}))); }, {"a"});
}

TEST_CASE("backward: gradient of a sum is the sum of gradients") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        Graph g;
        auto x = g.leaf("x", random_tensor(rng, {3, 4}));
        auto w = g.leaf("w", random_tensor(rng, {4, 2}));
        auto f1 = sum(relu(matmul(x, w)));
        auto f2 = sum(sigmoid(matmul(x, w)));
        auto both = backward(g, add(f1, f2), {"w"}).at("w");
        auto a = backward(g, f1, {"w"}).at("w");
        auto b = backward(g, f2, {"w"}).at("w");
        for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == doctest::Approx(a[i] + b[i]).epsilon(1e-12));
    }
}

TEST_CASE("second order: squared input-gradient norm of (w.x)^2") {
    // reg = ||d/dx (w.x)^2||^2 = 4 (w.x)^2 ||w||^2, so d reg/dw = 8(w.x)||w||^2 x + 8 (w.x)^2 w.
    Graph g(Graph::Mode::record_backward);
    auto w = g.leaf("w", Tensor(Shape{2}, {1, 0}));
    auto x = g.leaf("x", Tensor(Shape{2}, {1, 1}));
    auto dot = sum(mul(w, x));
    auto loss = mul(dot, dot);
    std::vector<Var> xs{x};
    auto gx = gradients(loss, xs)[0];
    auto reg = sum(mul(gx, gx));
    CHECK(reg.value().item() == doctest::Approx(4.0));
    std::vector<Var> ws{w};
    auto dreg = second_order_backward(reg, ws)[0];
    CHECK(dreg[0] == doctest::Approx(16.0));
    CHECK(dreg[1] == doctest::Approx(8.0));

    auto report = finite_difference_check(g, reg, {"w"}, 1e-3);
    CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("second order: detached gradients give zero, first-order tape is rejected") {
    Graph g(Graph::Mode::record_backward);
    auto w = g.leaf("w", Tensor(Shape{2}, {1, 2}));
    auto x = g.leaf("x", Tensor(Shape{2}, {1, 1}));
    std::vector<Var> xs{x}, ws{w};
    auto gx = detach(gradients(mul(sum(mul(w, x)), sum(mul(w, x))), xs)[0]);
    auto dreg = second_order_backward(sum(mul(gx, gx)), ws)[0];
    CHECK(dreg == Tensor(Shape{2}));

    Graph first;
    auto w1 = first.leaf("w", Tensor(Shape{2}, {1, 2}));
    auto x1 = first.leaf("x", Tensor(Shape{2}, {1, 1}));
    std::vector<Var> xs1{x1}, ws1{w1};
    auto gx1 = gradients(sum(mul(w1, x1)), xs1)[0];
    CHECK_THROWS_AS(second_order_backward(sum(mul(gx1, gx1)), ws1), GraphError);
}

TEST_CASE("second order: random tiny MLP input-gradient penalty matches finite differences") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        Graph g(Graph::Mode::record_backward);
        auto m = gat::testing::build_tiny_mlp(g, rng, 3, 4, 5, 3, true);
        std::vector<Var> xs{m.x};
        auto gx = gradients(m.loss, xs)[0];
        auto reg = sum(mul(gx, gx));
        std::vector<Var> params{m.w1, m.b1, m.w2, m.b2};
        auto analytic = second_order_backward(reg, params);

        // Oracle: rebuild a first-order graph for each perturbed parameter.
        auto reg_at = [&](const std::string& name, std::size_t i, double delta) {
            Graph fresh;
            auto leaf = [&](const std::string& n, const Var& v, bool rg) {
                Tensor t = v.value();
                if (n == name) t[i] += delta;
                return fresh.leaf(n, t, rg);
            };
            auto x = leaf("x", m.x, true);
            auto h = relu(affine(x, leaf("W1", m.w1, false), leaf("b1", m.b1, false)));
            auto z = affine(h, leaf("W2", m.w2, false), leaf("b2", m.b2, false));
            const auto& labels = *g.node(m.loss.id() - 1).labels;
            std::vector<Var> fx{x};
            auto grad = gradients(mean(softmax_cross_entropy(z, labels)), fx)[0].value();
            double total = 0;
            for (double v : grad.values()) total += v * v;
            return total;
        };
        const std::vector<std::string> names{"W1", "b1", "W2", "b2"};
        const double h = 1e-3;
        for (std::size_t p = 0; p < names.size(); ++p) {
            for (std::size_t i = 0; i < analytic[p].size(); ++i) {
                const double numeric = (reg_at(names[p], i, h) - reg_at(names[p], i, -h)) / (2 * h);
                const double a = analytic[p][i];
                const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
                CHECK(rel < 1e-3);
            }
        }
    }
}

TEST_CASE("finite_difference_check: exactness, kinks and bad steps") {
    Graph g;
    auto x = g.leaf("x", Tensor(Shape{3}, {0.3, -0.2, 0.9}));
    auto w = g.constant(Tensor(Shape{3}, {2, -1, 0.5}));
    CHECK(finite_difference_check(g, sum(mul(w, x)), {"x"}, 1e-3).max_relative_error < 1e-10);
    auto dot = sum(mul(w, x));
    CHECK(finite_difference_check(g, mul(dot, dot), {"x"}, 1e-3).max_relative_error < 1e-6);
    // a plain central difference is off by h^2 f'''/6 on a cubic; the extrapolation removes it
    CHECK(finite_difference_check(g, mul(mul(dot, dot), dot), {"x"}, 1e-3).max_relative_error < 1e-9);
    CHECK_THROWS_AS(finite_difference_check(g, dot, {"x"}, 0.0), ConfigError);

    Graph k;
    auto at_kink = k.leaf("a", Tensor(Shape{2}, {0.0, 1.0}));
    auto report = finite_difference_check(k, sum(relu(at_kink)), {"a"}, 1e-3);
    CHECK(report.excluded == 1);
    CHECK(report.checked == 1);
}
