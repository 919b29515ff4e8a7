#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gat/error.hpp"
#include "gat/metrics.hpp"
#include "gat/random.hpp"
#include "gat/train.hpp"

using namespace gat;

namespace {

TaskSpec mse_task(const std::string& name, TaskKind kind) {
    return {name, kind, LossFamily::mse, 1, Preprocessor::none, "age"};
}

// Identity encoder on [2] with two linear regression heads reading x1 and x2.
MultiTaskModel probe_model(std::vector<double> head_a, std::vector<double> head_b) {
    auto m = MultiTaskModel::build({{2, 2}}, {mse_task("a", TaskKind::target), mse_task("b", TaskKind::domain_knowledge)}, 1);
    m.set_shared_parameters(std::vector<double>{1, 0, 0, 1, 0, 0});
    m.set_head_parameters(0, head_a);
    m.set_head_parameters(1, head_b);
    return m;
}

std::vector<TaskLabels> zero_targets(std::size_t n) {
    TaskLabels l;
    l.values.assign(n, 0.0);
    return {l, l};
}

double regularizer_value(const MultiTaskModel& m, const Tensor& x, const std::vector<TaskLabels>& labels, bool detached,
                         Graph::Mode mode = Graph::Mode::record_backward) {
    Graph g(mode);
    auto bound = bind(g, m, true);
    Var xv = g.leaf("x", x, true);
    auto pass = forward(m, bound, xv);
    return curvature_regularizer(m, pass, xv, labels, 1, detached).value().item();
}

LabeledCorpus small_corpus(std::size_t n, std::size_t classes, std::size_t val, std::uint64_t seed = 5) {
    SyntheticOptions o;
    o.n = n;
    o.image_size = 8;
    o.fine_classes = classes;
    o.seed = seed;
    o.val_count = val;
    o.test_count = 0;
    o.jigsaw_grid = 2;
    return generate_synthetic(o);
}

TrainConfig quick_config(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 32;
    c.seed = 3;
    c.attack.steps = 3;
    c.attack.step = c.attack.epsilon / 2;
    c.eval_attack = c.attack;
    return c;
}

}  // namespace

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 10, 0.1) == doctest::Approx(0.1));
    CHECK(cosine_lr(5, 10, 0.1) == doctest::Approx(0.05));
    CHECK(cosine_lr(10, 10, 0.1) == doctest::Approx(0.0));
    CHECK_THROWS_AS(cosine_lr(11, 10, 0.1), ConfigError);
    CHECK_THROWS_AS(cosine_lr(0, 0, 0.1), ConfigError);
}

TEST_CASE("config round trip and validation") {
    TrainConfig c = quick_config(4);
    c.weighting = Weighting::equal;
    c.regularizer = Regularizer::detached;
    c.task_loss_weights = {1.0, 0.5};
    auto back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(train_config_from_json({{"weighting", "sum"}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"lr", -1.0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"patience", 0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"mgda_normalization", "max"}}), ConfigError);
}

TEST_CASE("curvature regularizer values") {
    const Tensor x = Tensor::matrix(3, 2, {0.5, 0.5, 0.2, 0.2, 0.9, 0.9});
    const auto labels = zero_targets(3);

    SUBCASE("identical tasks give zero") {
        auto m = probe_model({0.3, -0.7, 0.1}, {0.3, -0.7, 0.1});
        CHECK(regularizer_value(m, x, labels, false) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("orthogonal equal-norm gradients give one") {
        auto m = probe_model({1, 0, 0}, {0, 1, 0});
        CHECK(regularizer_value(m, x, labels, false) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("opposite gradients of unequal norm") {
        // a = (2x,0), b = (-x,0): cos^2 = 1 so the term vanishes
        auto m = probe_model({1, 0, 0}, {-0.5, 0, 0});
        CHECK(std::abs(regularizer_value(m, x, labels, false)) < 1e-9);
    }
    SUBCASE("first-order graph is rejected unless detached") {
        auto m = probe_model({1, 0, 0}, {0, 1, 0});
        CHECK_THROWS_AS(regularizer_value(m, x, labels, false, Graph::Mode::first_order), GraphError);
        CHECK(regularizer_value(m, x, labels, true, Graph::Mode::first_order) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("target task has no regularizer") {
        auto m = probe_model({1, 0, 0}, {0, 1, 0});
        Graph g(Graph::Mode::record_backward);
        auto bound = bind(g, m, true);
        Var xv = g.leaf("x", x, true);
        auto pass = forward(m, bound, xv);
        CHECK_THROWS_AS(curvature_regularizer(m, pass, xv, labels, 0), ConfigError);
    }
}

TEST_CASE("curvature regularizer parameter gradient matches finite differences") {
    auto m = MultiTaskModel::build({{6, 5, 4}}, {mse_task("a", TaskKind::target), mse_task("b", TaskKind::domain_knowledge)}, 17);
    Rng rng(4);
    Tensor x(Shape{5, 6});
    for (auto& v : x.values()) v = rng.uniform();
    TaskLabels la, lb;
    for (int i = 0; i < 5; ++i) {
        la.values.push_back(rng.uniform());
        lb.values.push_back(rng.uniform());
    }
    const std::vector<TaskLabels> labels{la, lb};

    Graph g(Graph::Mode::record_backward);
    auto bound = bind(g, m, true);
    Var xv = g.leaf("x", x, true);
    auto pass = forward(m, bound, xv);
    Var r = curvature_regularizer(m, pass, xv, labels, 1);
    auto grads = second_order_backward(r, bound.encoder);
    std::vector<double> analytic;
    for (const auto& t : grads) analytic.insert(analytic.end(), t.data().begin(), t.data().end());

    const auto theta = m.shared_parameters();
    const double h = 1e-6;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        auto plus = theta, minus = theta;
        plus[i] += h;
        minus[i] -= h;
        auto mp = m, mm = m;
        mp.set_shared_parameters(plus);
        mm.set_shared_parameters(minus);
        const double numeric = (regularizer_value(mp, x, labels, false) - regularizer_value(mm, x, labels, false)) / (2 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
        ++checked;
    }
    CHECK(checked == theta.size());
    CHECK(worst < 1e-3);

    // the detached variant has no parameter dependence through the gradients
    Graph gd(Graph::Mode::record_backward);
    auto bd = bind(gd, m, true);
    Var xd = gd.leaf("x", x, true);
    auto pd = forward(m, bd, xd);
    Var rd = curvature_regularizer(m, pd, xd, labels, 1, true);
    for (const auto& t : second_order_backward(rd, bd.encoder))
        for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("standard training fits a tiny set") {
    auto corpus = small_corpus(40, 2, 0);
    auto model = MultiTaskModel::build({{64, 32}}, {tasks::fine_target(2)}, 9);
    TrainConfig c = quick_config(60);
    c.batch_size = 8;
    c.lr = 0.1;
    auto r = train_standard(model, corpus, c);
    const auto ids = corpus.indices(Split::train);
    auto out = predict(r.model, corpus.batch(ids))[0];
    auto pred = argmax_rows(out);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) correct += pred[i] == corpus.fine[ids[i]];
    CHECK(correct == ids.size());
    CHECK(r.records.size() == 60);
}

TEST_CASE("zero epochs leave the model unchanged") {
    auto corpus = small_corpus(60, 2, 10);
    auto model = MultiTaskModel::build({{64, 8}}, {tasks::fine_target(2), tasks::rotation()}, 2);
    auto r = train_gat(model, corpus, quick_config(0));
    CHECK(r.model == model);
    CHECK(r.records.empty());
}

TEST_CASE("training is deterministic") {
    auto corpus = small_corpus(120, 4, 20);
    auto model = MultiTaskModel::build({{64, 12}}, {tasks::fine_target(4), tasks::rotation(), tasks::macro()}, 2);
    auto c = quick_config(2);
    auto a = train_gat(model, corpus, c);
    auto b = train_gat(model, corpus, c);
    CHECK(a.model == b.model);
    CHECK(a.records == b.records);
}

TEST_CASE("madry training keeps perturbations inside the ball") {
    auto corpus = small_corpus(100, 2, 0);
    auto model = MultiTaskModel::build({{64, 8}}, {tasks::fine_target(2)}, 2);
    auto c = quick_config(2);
    auto r = train_madry(model, corpus, c);
    REQUIRE(!r.batches.empty());
    for (const auto& b : r.batches) CHECK(b.max_delta_linf <= c.attack.epsilon + 1e-12);
}

TEST_CASE("madry with zero radius equals doubled clean loss") {
    auto corpus = small_corpus(100, 2, 0);
    auto model = MultiTaskModel::build({{64, 8}}, {tasks::fine_target(2)}, 2);
    auto c = quick_config(2);
    c.attack.epsilon = 0.0;
    c.attack.step = 0.01;
    c.attack.random_start = false;
    auto madry = train_madry(model, corpus, c);
    auto c2 = c;
    c2.lr = 2 * c.lr;
    auto standard = train_standard(model, corpus, c2);
    const auto a = madry.model.all_parameters(), b = standard.model.all_parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst < 1e-9);
}

TEST_CASE("gat reduces to madry bit-exactly") {
    auto corpus = small_corpus(120, 4, 20);
    auto base = MultiTaskModel::build({{64, 12}}, {tasks::fine_target(4)}, 8);
    auto with_aux = base.attach_decoder(tasks::macro(), 99);
    auto c = quick_config(2);
    c.weighting = Weighting::equal;
    c.regularizer = Regularizer::off;
    c.task_loss_weights = {1.0};
    auto madry = train_madry(base, corpus, c);
    auto cg = c;
    cg.task_loss_weights = {1.0, 0.0};
    auto gat = train_gat(with_aux, corpus, cg);
    CHECK(gat.model.shared_parameters() == madry.model.shared_parameters());
    CHECK(gat.model.head_parameters(0) == madry.model.head_parameters(0));
    CHECK_FALSE(gat.model.head(1).enabled);
}

TEST_CASE("mgda weights lie on the simplex with a certificate") {
    auto corpus = small_corpus(120, 4, 20);
    auto model = MultiTaskModel::build({{64, 12}}, {tasks::fine_target(4), tasks::rotation(), tasks::macro()}, 2);
    auto r = train_gat(model, corpus, quick_config(2));
    CHECK(r.objectives.size() == 3 * 3 - 1);
    std::size_t max_iters = 0;
    for (const auto& b : r.batches) {
        REQUIRE(b.alpha.size() == 8);
        double s = 0.0;
        for (double a : b.alpha) {
            CHECK(a >= 0.0);
            s += a;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(b.certificate);
        CHECK(b.mgda_converged);
        max_iters = std::max(max_iters, b.mgda_iterations);
    }
    MESSAGE("most Frank-Wolfe iterations in a batch: " << max_iters);
    CHECK_FALSE(r.model.head(1).enabled);
    CHECK_FALSE(r.model.head(2).enabled);
}

TEST_CASE("objective lists") {
    auto corpus = small_corpus(80, 4, 10);
    auto model = MultiTaskModel::build({{64, 8}}, {tasks::fine_target(4), tasks::macro()}, 2);
    auto c = quick_config(1);
    c.reg_weighting = RegWeighting::fixed;
    auto fixed = train_gat(model, corpus, c);
    CHECK(fixed.objectives == std::vector<std::string>{"target:clean", "target:adv", "macro:clean", "macro:adv"});
    c.reg_weighting = RegWeighting::mgda;
    auto weighted = train_gat(model, corpus, c);
    CHECK(weighted.objectives.back() == "macro:reg");
    CHECK_FALSE(fixed.model == weighted.model);
    c.regularizer = Regularizer::detached;
    CHECK(train_gat(model, corpus, c).objectives.size() == 4);
}

TEST_CASE("early stopping keeps the best epoch") {
    auto corpus = small_corpus(160, 4, 40);
    auto model = MultiTaskModel::build({{64, 12}}, {tasks::fine_target(4)}, 2);
    auto c = quick_config(12);
    c.patience = 2;
    c.lr = 0.3;
    auto r = train_madry(model, corpus, c);
    double best = -1.0;
    std::size_t arg = 0;
    for (const auto& rec : r.records)
        if (rec.val_robust_accuracy > best) {
            best = rec.val_robust_accuracy;
            arg = rec.epoch;
        }
    CHECK(r.best_epoch == arg);
    if (r.stopped_early) CHECK(r.records.size() == r.best_epoch + 3);
    auto ev = evaluate_model(r.model, corpus, corpus.indices(Split::val), c.eval_attack, 1);
    CHECK(ev.count == 40);
}

TEST_CASE("evaluation") {
    auto corpus = small_corpus(400, 4, 100);
    auto model = MultiTaskModel::build({{64, 12}}, {tasks::fine_target(4)}, 2);
    const auto ids = corpus.indices(Split::val);

    SUBCASE("zero radius gives equal clean and robust accuracy") {
        AttackConfig a;
        a.epsilon = 0.0;
        a.step = 0.01;
        a.random_start = false;
        auto ev = evaluate_model(model, corpus, ids, a, 1);
        CHECK(ev.clean_accuracy == ev.robust_accuracy);
        CHECK(ev.vulnerability == 0.0);
    }
    SUBCASE("constant classifier is at chance with AUC one half") {
        auto binary = MultiTaskModel::build({{64, 12}}, {{"target", TaskKind::target, LossFamily::multiclass_ce, 2,
                                                           Preprocessor::none, "macro"}},
                                            2);
        auto heads = binary.head_parameters(0);
        std::fill(heads.begin(), heads.end(), 0.0);
        binary.set_head_parameters(0, heads);
        auto ev = evaluate_model(binary, corpus, ids, AttackConfig{}, 1);
        REQUIRE(ev.clean_auc);
        CHECK(*ev.clean_auc == doctest::Approx(0.5));
        CHECK(ev.robust_accuracy == ev.clean_accuracy);
    }
    SUBCASE("untrained model on a balanced two-class set is near chance") {
        auto binary = MultiTaskModel::build({{64, 12}}, {{"target", TaskKind::target, LossFamily::multiclass_ce, 2,
                                                           Preprocessor::none, "macro"}},
                                            11);
        auto ev = evaluate_model(binary, corpus, ids, AttackConfig{}, 1);
        CHECK(std::abs(ev.clean_accuracy - 0.5) <= 0.1);
    }
    SUBCASE("robust accuracy never exceeds what clean inputs allow by much") {
        auto ev = evaluate_model(model, corpus, ids, AttackConfig{}, 1);
        CHECK(ev.robust_accuracy <= ev.clean_accuracy + 0.05);
        CHECK(ev.count == ids.size());
    }
    CHECK_THROWS_AS(evaluate_model(model, corpus, {}, AttackConfig{}, 1), ConfigError);
}
