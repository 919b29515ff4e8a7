#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gat/error.hpp"
#include "gat/model.hpp"
#include "test_util.hpp"

using namespace gat;

namespace {

MultiTaskModel small_model(std::uint64_t seed = 1) {
    return MultiTaskModel::build({{6, 8}}, {tasks::fine_target(3), tasks::macro(), tasks::age()}, seed);
}

Tensor random_batch(std::size_t n, std::size_t width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return testing::random_tensor(rng, {n, width}, 0.0, 1.0);
}

std::vector<TaskLabels> labels_for(std::size_t n) {
    TaskLabels fine, macro, age;
    for (std::size_t i = 0; i < n; ++i) {
        fine.classes.push_back(int(i % 3));
        macro.classes.push_back(int(i % 2));
        age.values.push_back(0.1 * double(i));
    }
    return {fine, macro, age};
}

}  // namespace

TEST_CASE("parameter count for widths [4,3] with two classes") {
    auto m = MultiTaskModel::build({{4, 3}}, {tasks::fine_target(2)}, 0);
    CHECK(m.parameter_count() == 23);
    CHECK(m.shared_parameter_count() == 15);
    CHECK(m.all_parameters().size() == 23);
}

TEST_CASE("build is deterministic in the seed") {
    CHECK(small_model(5).all_parameters() == small_model(5).all_parameters());
    CHECK(small_model(5).all_parameters() != small_model(6).all_parameters());
    auto p = small_model(5).all_parameters();
    const double bound = 1.0 / std::sqrt(6.0);
    for (std::size_t i = 0; i < 6 * 8 + 8; ++i) CHECK(std::abs(p[i]) <= bound);
}

TEST_CASE("build rejects bad configurations") {
    CHECK_THROWS_AS(MultiTaskModel::build({{4, 3}}, {}, 0), ConfigError);
    CHECK_THROWS_AS(MultiTaskModel::build({{4, 0}}, {tasks::fine_target(2)}, 0), ConfigError);
    CHECK_THROWS_AS(MultiTaskModel::build({{4, 3}}, {tasks::fine_target(2), tasks::fine_target(2)}, 0),
                    ConfigError);
    CHECK_THROWS_AS(MultiTaskModel::build({{4, 3}}, {tasks::macro()}, 0), ConfigError);
}

TEST_CASE("attaching a rotation head adds 36 parameters and keeps the encoder") {
    auto m = MultiTaskModel::build({{5, 8}}, {tasks::fine_target(2)}, 3);
    auto a = m.attach_decoder(tasks::rotation(), 9);
    CHECK(a.parameter_count() == m.parameter_count() + 36);
    CHECK(a.shared_parameters() == m.shared_parameters());
    CHECK(a.task_count() == 2);
    CHECK_THROWS_AS(a.attach_decoder(tasks::rotation(), 1), ConfigError);
}

TEST_CASE("disable keeps target behaviour bit-identical and is idempotent") {
    auto base = MultiTaskModel::build({{6, 8}}, {tasks::fine_target(3)}, 2);
    auto m = base.attach_decoder(tasks::macro(), 4).attach_decoder(tasks::rotation(), 5);
    auto d = m.disable_auxiliary();
    CHECK(m.enabled_tasks().size() == 3);
    CHECK(d.enabled_tasks() == std::vector<std::size_t>{0});
    CHECK(d.disable_auxiliary() == d);
    CHECK(d.shared_parameters() == m.shared_parameters());
    CHECK(d.head_parameters(0) == m.head_parameters(0));

    auto x = random_batch(4, 6, 11);
    auto before = predict(base, x)[0];
    auto during = predict(m, x)[0];
    auto after = predict(d, x);
    CHECK(before == during);
    CHECK(after[0] == before);
}

TEST_CASE("loss examples") {
    auto m = MultiTaskModel::build({{2, 2}}, {tasks::fine_target(2), tasks::age()}, 0);
    // zero head weights give logits (0,0) and prediction 0
    for (std::size_t t = 0; t < 2; ++t) m.set_head_parameters(t, std::vector<double>(m.head(t).layer.parameter_count(), 0.0));
    Tensor x = Tensor::matrix(1, 2, {0.3, 0.7});
    std::vector<TaskLabels> labels{{{0}, {}}, {{}, {0.0}}};
    auto r = forward_and_losses(m, x, labels);
    REQUIRE(r.size() == 2);
    CHECK(r[0].loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r[0].output.shape() == Shape{1, 2});
    CHECK(r[1].loss == 0.0);
    CHECK(r[1].output.shape() == Shape{1, 1});
}

TEST_CASE("duplicated samples give the single-sample loss") {
    auto m = small_model();
    Tensor one = random_batch(1, 6, 3);
    Tensor two = Tensor::matrix(2, 6, [&] {
        std::vector<double> v(one.data());
        v.insert(v.end(), one.data().begin(), one.data().end());
        return v;
    }());
    std::vector<TaskLabels> l1{{{1}, {}}, {{0}, {}}, {{}, {0.4}}};
    std::vector<TaskLabels> l2{{{1, 1}, {}}, {{0, 0}, {}}, {{}, {0.4, 0.4}}};
    auto a = forward_and_losses(m, one, l1);
    auto b = forward_and_losses(m, two, l2);
    for (std::size_t t = 0; t < 3; ++t) CHECK(a[t].loss == doctest::Approx(b[t].loss).epsilon(1e-14));
}

TEST_CASE("forward_and_losses validates labels") {
    auto m = small_model();
    auto x = random_batch(3, 6, 1);
    auto labels = labels_for(3);
    labels.pop_back();
    CHECK_THROWS_AS(forward_and_losses(m, x, labels), ShapeError);
    auto short_labels = labels_for(2);
    CHECK_THROWS_AS(forward_and_losses(m, x, short_labels), ShapeError);
    CHECK_THROWS_AS(forward_and_losses(m, random_batch(3, 5, 1), labels_for(3)), ShapeError);
    // disabled tasks need no labels
    auto d = m.disable_auxiliary();
    CHECK(forward_and_losses(d, x, labels_for(3)).size() == 1);
}

TEST_CASE("heads receive gradients only from their own task") {
    auto m = small_model();
    Graph g;
    auto b = bind(g, m, true);
    auto pass = forward(m, b, g.leaf("x", random_batch(5, 6, 2), false));
    auto labels = labels_for(5);
    Var target = task_loss(*pass.outputs[0], m.head(0).spec, labels[0]);
    auto grads = gradients(target, b.heads[1]);
    for (const auto& gr : grads)
        for (double v : gr.value().values()) CHECK(v == 0.0);
    Var aux = task_loss(*pass.outputs[1], m.head(1).spec, labels[1]);
    grads = gradients(aux, b.heads[0]);
    for (const auto& gr : grads)
        for (double v : gr.value().values()) CHECK(v == 0.0);
}

TEST_CASE("shared gradient of a weighted sum is the weighted sum of gradients") {
    auto m = small_model(7);
    auto labels = labels_for(6);
    auto x = random_batch(6, 6, 8);
    const std::vector<double> w{0.5, 1.5, -0.25};

    auto shared_grad = [&](const std::vector<double>& weights) {
        Graph g;
        auto b = bind(g, m, true);
        auto pass = forward(m, b, g.leaf("x", x, false));
        Var total = task_loss(*pass.outputs[0], m.head(0).spec, labels[0]) * weights[0];
        for (std::size_t t = 1; t < 3; ++t)
            total = total + task_loss(*pass.outputs[t], m.head(t).spec, labels[t]) * weights[t];
        std::vector<double> flat;
        for (const auto& gr : gradients(total, b.encoder))
            flat.insert(flat.end(), gr.value().data().begin(), gr.value().data().end());
        return flat;
    };
    auto combined = shared_grad(w);
    std::vector<double> summed(combined.size(), 0.0);
    for (std::size_t t = 0; t < 3; ++t) {
        std::vector<double> unit(3, 0.0);
        unit[t] = 1.0;
        auto gt = shared_grad(unit);
        for (std::size_t i = 0; i < gt.size(); ++i) summed[i] += w[t] * gt[i];
    }
    for (std::size_t i = 0; i < summed.size(); ++i) CHECK(combined[i] == doctest::Approx(summed[i]).epsilon(1e-10));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto m = small_model(13).attach_decoder(tasks::rotation(), 2).disable_auxiliary();
    auto path = std::filesystem::temp_directory_path() / "gat_test_checkpoint.json";
    save_checkpoint(m, path);
    auto r = load_checkpoint(path);
    CHECK(r == m);
    CHECK(r.all_parameters() == m.all_parameters());
    std::filesystem::remove(path);

    auto j = model_to_json(m);
    j["version"] = 99;
    CHECK_THROWS_AS(model_from_json(j), IoError);
    j = model_to_json(m);
    j["parameters"].erase(j["parameters"].size() - 1);
    CHECK_THROWS_AS(model_from_json(j), IoError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), IoError);
}
