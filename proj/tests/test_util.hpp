#pragma once

#include <random>
#include <string>
#include <vector>

#include "gat/autodiff.hpp"

namespace gat::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

// Two-layer relu MLP with softmax cross-entropy, built on `g` with named leaves
// x, W1, b1, W2, b2.
struct TinyMlp {
    Var x, w1, b1, w2, b2, loss;
};

inline TinyMlp build_tiny_mlp(Graph& g, std::mt19937_64& rng, std::size_t n, std::size_t in, std::size_t hidden,
                              std::size_t classes, bool x_requires_grad = false) {
    TinyMlp m;
    m.x = g.leaf("x", random_tensor(rng, {n, in}), x_requires_grad);
    m.w1 = g.leaf("W1", random_tensor(rng, {in, hidden}));
    m.b1 = g.leaf("b1", random_tensor(rng, {hidden}, -0.1, 0.1));
    m.w2 = g.leaf("W2", random_tensor(rng, {hidden, classes}));
    m.b2 = g.leaf("b2", random_tensor(rng, {classes}, -0.1, 0.1));
    std::uniform_int_distribution<int> label(0, int(classes) - 1);
    std::vector<int> labels(n);
    for (auto& y : labels) y = label(rng);
    Var h = relu(affine(m.x, m.w1, m.b1));
    m.loss = mean(softmax_cross_entropy(affine(h, m.w2, m.b2), labels));
    return m;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace gat::testing
