#include <cmath>

#include "doctest.h"
#include "gat/error.hpp"
#include "gat/metrics.hpp"
#include "gat/random.hpp"

using namespace gat;

using V = std::vector<double>;

TEST_CASE("cosine examples") {
    auto r = cosine_angle(V{1, 0}, V{0, 1});
    CHECK(r.cosine == 0.0);
    CHECK_FALSE(r.conflicting);
    CHECK(cosine_angle(V{1, 1}, V{2, 2}).cosine == doctest::Approx(1.0));
    r = cosine_angle(V{1, 0}, V{-2, 0});
    CHECK(r.cosine == -1.0);
    CHECK(r.conflicting);
    CHECK_THROWS_AS(cosine_angle(V{0, 0}, V{1, 0}), NumericError);
}

TEST_CASE("magnitude similarity examples") {
    CHECK(magnitude_similarity(V{3, 4}, V{0, 5}) == 1.0);
    CHECK(magnitude_similarity(V{1, 0}, V{0, 3}) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(magnitude_similarity(V{0, 0}, V{2, 1}) == 0.0);
    CHECK_THROWS_AS(magnitude_similarity(V{0, 0}, V{0, 0}), NumericError);
}

TEST_CASE("curvature examples") {
    CHECK(curvature_measure(V{1, 2}, V{2, 4}) == 0.0);
    CHECK(curvature_measure(V{1, 0}, V{0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(curvature_measure(V{0.3, -1.7, 2.2}, V{-0.3, 1.7, -2.2}) == 0.0);
    CHECK_THROWS_AS(curvature_measure(V{0, 0}, V{0, 0}), NumericError);
}

TEST_CASE("gradient measures: symmetry, scale invariance and the curvature bound") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        V a(7), b(7);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        const double c = rng.uniform(0.1, 10.0);
        V ca = a, cb = b;
        for (auto& x : ca) x *= c;
        for (auto& x : cb) x *= c;
        CHECK(cosine_angle(a, b).cosine == doctest::Approx(cosine_angle(b, a).cosine).epsilon(1e-12));
        CHECK(cosine_angle(a, b).cosine == doctest::Approx(cosine_angle(ca, cb).cosine).epsilon(1e-12));
        CHECK(magnitude_similarity(a, b) == doctest::Approx(magnitude_similarity(b, a)).epsilon(1e-12));
        CHECK(magnitude_similarity(a, b) == doctest::Approx(magnitude_similarity(ca, cb)).epsilon(1e-12));
        const double xi = curvature_measure(a, b);
        CHECK(xi == doctest::Approx(curvature_measure(b, a)).epsilon(1e-12));
        CHECK(xi == doctest::Approx(curvature_measure(ca, cb)).epsilon(1e-9));
        double diff = 0, sum = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            diff += (a[i] - b[i]) * (a[i] - b[i]);
            sum += (a[i] + b[i]) * (a[i] + b[i]);
        }
        CHECK(xi >= 0.0);
        CHECK(xi <= diff / sum + 1e-12);
    }
    GradientBundle bundle{{V{1, 0}, V{0, 1}, V{1, 1}}, GradientTag::input, "b0"};
    auto m = bundle_metrics(bundle);
    CHECK(m.cosine == doctest::Approx((0.0 + 2.0 / std::sqrt(2.0)) / 3.0));
}

TEST_CASE("hypervolume examples") {
    CHECK(hypervolume_2d({{{0.2, 0.2}}, {1, 1}}) == doctest::Approx(0.64).epsilon(1e-14));
    CHECK(hypervolume_2d({{{0.25, 0.75}, {0.5, 0.5}, {0.75, 0.25}}, {1, 1}}) == doctest::Approx(0.375).epsilon(1e-14));
    CHECK(hypervolume_2d({{}, {1, 1}}) == 0.0);
    CHECK(hypervolume_2d({{{0.75, 0.25}, {0.25, 0.75}, {0.5, 0.5}, {0.5, 0.5}}, {1, 1}}) == doctest::Approx(0.375));
    CHECK_THROWS_AS(hypervolume_2d({{{1.2, 0.5}}, {1, 1}}), ConfigError);
}

TEST_CASE("hypervolume matches brute-force grid integration") {
    Rng rng(3);
    const int grid = 100;
    for (int trial = 0; trial < 30; ++trial) {
        ParetoFront2D front{{}, {1.0, 1.0}};
        const std::size_t n = 1 + rng.index(8);
        for (std::size_t k = 0; k < n; ++k)
            front.points.push_back({double(rng.index(grid)) / grid, double(rng.index(grid)) / grid});
        // count grid cells dominated by some point
        std::size_t cells = 0;
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                const double x = (i + 0.5) / grid, y = (j + 0.5) / grid;
                for (const auto& p : front.points)
                    if (p.a <= x && p.b <= y) {
                        ++cells;
                        break;
                    }
            }
        const double hv = hypervolume_2d(front);
        CHECK(std::abs(hv - double(cells) / (grid * grid)) <= 1.0 / (grid * grid));
        // dominated point leaves the volume unchanged
        auto more = front;
        more.points.push_back({std::min(1.0, front.points[0].a + 0.05), std::min(1.0, front.points[0].b + 0.05)});
        CHECK(hypervolume_2d(more) == doctest::Approx(hv).epsilon(1e-12));
    }
}

TEST_CASE("pearson examples") {
    V x{1, 2, 3, 4, 5}, y2, yneg;
    for (double v : x) {
        y2.push_back(2 * v);
        yneg.push_back(-v);
    }
    CHECK(pearson_r(x, y2).r == doctest::Approx(1.0));
    CHECK(pearson_r(x, yneg).r == doctest::Approx(-1.0));
    Rng rng(1);
    V a(1000), b(1000);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    auto r = pearson_r(a, b);
    CHECK(std::abs(r.r) < 0.1);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value <= 1.0);
    V xs{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CHECK_THROWS_AS(pearson_r(xs, V(10, 1.0)), NumericError);
    CHECK_THROWS_AS(pearson_r(V{1, 2}, V{1, 2}), ConfigError);
}

TEST_CASE("pearson p-value against a reference value") {
    // n = 12 points with r = 0.6: t = 0.6 sqrt(10 / 0.64) = 2.371708, two-sided p = 0.039163
    // built from two orthonormal centered vectors u, v: y = 0.6 u + 0.8 v
    V u{-5.5, -4.5, -3.5, -2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 3.5, 4.5, 5.5};
    V v{1, -1, -1, 1, 1, -1, -1, 1, 1, -1, -1, 1};
    double nu = 0, nv = 0, uv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        nu += u[i] * u[i];
        nv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    REQUIRE(uv == 0.0);
    V y(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) y[i] = 0.6 * u[i] / std::sqrt(nu) + 0.8 * v[i] / std::sqrt(nv);
    auto r = pearson_r(u, y);
    CHECK(r.r == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(0.039163).epsilon(1e-4));
}

TEST_CASE("roc auc examples and monotone invariance") {
    CHECK(roc_auc(V{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc(V{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}) == 0.5);
    CHECK(roc_auc(V{0.8, 0.4, 0.6, 0.2}, std::vector<int>{1, 1, 0, 0}) == 0.75);
    CHECK_THROWS_AS(roc_auc(V{0.1, 0.2}, std::vector<int>{1, 1}), ConfigError);
    Rng rng(2);
    V s(50);
    std::vector<int> l(50);
    for (std::size_t i = 0; i < 50; ++i) {
        l[i] = int(i % 2);
        s[i] = std::round(10 * (rng.uniform() + 0.3 * l[i])) / 10;
    }
    V t;
    for (double v : s) t.push_back(std::exp(3 * v) - 7);
    CHECK(roc_auc(s, l) == doctest::Approx(roc_auc(t, l)).epsilon(1e-15));
    // pairwise oracle
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 50; ++j)
            if (l[i] == 1 && l[j] == 0) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    CHECK(roc_auc(s, l) == doctest::Approx(wins / pairs).epsilon(1e-14));
}

TEST_CASE("mcnemar examples") {
    auto r = mcnemar_test(10, 2);
    CHECK(r.chi2 == doctest::Approx(49.0 / 12.0).epsilon(1e-14));
    CHECK(r.reject);
    r = mcnemar_test(5, 5);
    CHECK(r.chi2 == doctest::Approx(0.1).epsilon(1e-14));
    CHECK_FALSE(r.reject);
    CHECK_THROWS_AS(mcnemar_test(0, 0), NumericError);
    std::vector<bool> a{true, true, false, true}, b{false, true, true, false};
    CHECK(mcnemar_test(a, b).chi2 == doctest::Approx(0.0));
}

TEST_CASE("accuracy") {
    auto logits = Tensor::matrix(3, 2, {0.1, 0.9, 2.0, -1.0, 0.0, 0.5});
    auto pred = argmax_rows(logits);
    CHECK(pred == std::vector<int>{1, 0, 1});
    CHECK(accuracy(pred, std::vector<int>{1, 1, 1}) == doctest::Approx(2.0 / 3.0));
}
