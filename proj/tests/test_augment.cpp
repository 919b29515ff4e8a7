#include <algorithm>

#include "doctest.h"
#include "gat/augment.hpp"
#include "gat/error.hpp"

using namespace gat;

namespace {

Image ramp(std::size_t h, std::size_t w, std::size_t c = 1) {
    std::vector<double> v(h * w * c);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i) / double(v.size());
    return Image(h, w, c, v);
}

Image random_image(Rng& rng, std::size_t side, std::size_t channels = 1) {
    std::vector<double> v(side * side * channels);
    for (auto& p : v) p = rng.uniform();
    return Image(side, side, channels, v);
}

}  // namespace

TEST_CASE("rotation examples") {
    // a b / c d
    Image img(2, 2, 1, {1, 2, 3, 4});
    CHECK(apply_rotation(img, 0) == img);
    CHECK(apply_rotation(img, 1).pixels == std::vector<double>{2, 4, 1, 3});
    CHECK(apply_rotation(img, 2).pixels == std::vector<double>{4, 3, 2, 1});
    Image r = img;
    for (int k = 0; k < 4; ++k) r = apply_rotation(r, 1);
    CHECK(r == img);
    CHECK_THROWS_AS(apply_rotation(img, 4), ConfigError);
    CHECK_THROWS_AS(apply_rotation(img, -1), ConfigError);
    CHECK_THROWS_AS(apply_rotation(ramp(2, 3), 1), ShapeError);
}

TEST_CASE("rotations form a cyclic group") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Image img = random_image(rng, 5, 2);
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) CHECK(apply_rotation(apply_rotation(img, a), b) == apply_rotation(img, (a + b) % 4));
    }
}

TEST_CASE("jigsaw swap of the top quadrants") {
    Image img = ramp(4, 4);
    auto pool = PermutationPool::from_entries(2, {{0, 1, 2, 3}, {1, 0, 2, 3}});
    CHECK(apply_jigsaw(img, 0, pool) == img);
    Image out = apply_jigsaw(img, 1, pool);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) {
            CHECK(out.at(y, x) == img.at(y, x + 2));
            CHECK(out.at(y, x + 2) == img.at(y, x));
            CHECK(out.at(y + 2, x) == img.at(y + 2, x));
            CHECK(out.at(y + 2, x + 2) == img.at(y + 2, x + 2));
        }
    CHECK_THROWS_AS(apply_jigsaw(img, 2, pool), ConfigError);
    CHECK_THROWS_AS(apply_jigsaw(ramp(5, 4), 1, pool), ShapeError);
}

TEST_CASE("jigsaw inverse restores the image and preserves the pixel multiset") {
    Rng rng(9);
    auto pool = PermutationPool::build(4, 24, 17);
    for (std::size_t id = 0; id < pool.size(); ++id) {
        Image img = random_image(rng, 8);
        Image out = apply_jigsaw(img, id, pool);
        CHECK(permute_chunks(out, 4, inverse(pool[id])) == img);
        auto a = img.pixels, b = out.pixels;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        CHECK(out.in_unit_range());
    }
}

TEST_CASE("permutation pool construction") {
    auto pool = PermutationPool::build(4, 24, 5);
    CHECK(pool.size() == 24);
    for (std::size_t k = 0; k < 16; ++k) CHECK(pool[0][k] == k);
    CHECK(pool.min_hamming_distance() >= 1);
    // greedy max-min selection over random 16-cell permutations lands far apart
    CHECK(pool.min_hamming_distance() >= 12);
    CHECK(PermutationPool::build(4, 24, 5) == pool);
    CHECK(PermutationPool::build(4, 24, 6) != pool);

    auto small = PermutationPool::build(2, 24, 1);
    CHECK(small.size() == 24);
    CHECK(small.min_hamming_distance() >= 2);
    CHECK_THROWS_AS(PermutationPool::build(2, 25, 1), ConfigError);

    nlohmann::json j = pool;
    CHECK(pool_from_json(j) == pool);
    CHECK_THROWS_AS(PermutationPool::from_entries(2, {{1, 0, 2, 3}}), ConfigError);
    CHECK_THROWS_AS(PermutationPool::from_entries(2, {{0, 1, 2, 3}, {0, 1, 2, 3}}), ConfigError);
    CHECK_THROWS_AS(PermutationPool::from_entries(2, {{0, 1, 2, 2}}), ConfigError);
}

TEST_CASE("macro labels") {
    GroupMap map{0, 0, 1, 1};
    CHECK(macro_label(3, map) == 1);
    CHECK(macro_label(0, map) == 0);
    CHECK_THROWS_AS(macro_label(4, map), ConfigError);
    CHECK_THROWS_AS(macro_label(-1, map), ConfigError);
    validate_group_map(map, 4, 2);
    CHECK_THROWS_AS(validate_group_map(map, 5, 2), ConfigError);
    CHECK_THROWS_AS(validate_group_map({0, 2}, 2, 2), ConfigError);

    auto cifar = cifar10_vehicles_animals();
    validate_group_map(cifar, 10, 2);
    for (int f : {0, 1, 8, 9}) CHECK(macro_label(f, cifar) == 0);
    for (int f : {2, 3, 4, 5, 6, 7}) CHECK(macro_label(f, cifar) == 1);
}

TEST_CASE("compose preprocessors") {
    Rng rng(4);
    Image img = random_image(rng, 4);
    std::vector<TaskSpec> none{tasks::fine_target(3), tasks::macro()};
    auto d0 = compose_preprocessors(none, img, rng, 0);
    CHECK(d0.image == img);
    CHECK(d0.labels.empty());

    std::vector<TaskSpec> rot{tasks::fine_target(3), tasks::rotation()};
    AugmentPipeline p1(rot, 0);
    std::vector<int> two{2};
    auto d1 = p1.apply(img, two);
    CHECK(d1.image == apply_rotation(img, 2));
    CHECK(d1.labels == two);

    std::vector<TaskSpec> both{tasks::fine_target(3), tasks::rotation(), tasks::macro(), tasks::jigsaw(2)};
    AugmentPipeline p2(both, 7);
    CHECK(p2.stages() == std::vector<std::size_t>{1, 3});
    for (int trial = 0; trial < 20; ++trial) {
        auto d = p2.apply(img, rng);
        REQUIRE(d.labels.size() == 2);
        CHECK(d.labels[0] >= 0);
        CHECK(d.labels[0] < 4);
        CHECK(d.labels[1] < 24);
        CHECK(d.image == apply_jigsaw(apply_rotation(img, d.labels[0]), std::size_t(d.labels[1]), p2.pools().at(3)));
        CHECK(d.image.in_unit_range());
    }
    CHECK_THROWS_AS(p2.apply(Image(4, 6, 1, std::vector<double>(24, 0.5)), rng), ShapeError);
}

TEST_CASE("seeded draws are reproducible") {
    std::vector<TaskSpec> both{tasks::fine_target(3), tasks::rotation(), tasks::jigsaw(2)};
    AugmentPipeline p(both, 7);
    Rng a(11), b(11), src(1);
    Tensor x(Shape{6, 16});
    for (auto& v : x.values()) v = src.uniform();
    auto ra = p.apply_batch(x, {4, 4, 1}, a);
    auto rb = p.apply_batch(x, {4, 4, 1}, b);
    CHECK(ra.first == rb.first);
    CHECK(ra.second == rb.second);
    CHECK(ra.second.size() == 2);
    CHECK(ra.second[0].size() == 6);
}
