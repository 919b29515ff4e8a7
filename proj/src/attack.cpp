#include "gat/attack.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "gat/error.hpp"
#include "gat/random.hpp"

namespace gat {

std::string to_string(Norm p) { return p == Norm::l2 ? "l2" : "linf"; }

std::string to_string(TaskSelector s) {
    switch (s) {
        case TaskSelector::main_only: return "main-only";
        case TaskSelector::all_tasks: return "all-tasks";
        case TaskSelector::auxiliary_only: return "auxiliary-only";
    }
    return "?";
}

Norm norm_from_string(const std::string& s) {
    if (s == "l2" || s == "2") return Norm::l2;
    if (s == "linf" || s == "inf") return Norm::linf;
    throw ConfigError("unknown norm '" + s + "' (expected l2 or linf)");
}

TaskSelector selector_from_string(const std::string& s) {
    if (s == "main-only") return TaskSelector::main_only;
    if (s == "all-tasks") return TaskSelector::all_tasks;
    if (s == "auxiliary-only") return TaskSelector::auxiliary_only;
    throw ConfigError("unknown task selector '" + s + "'");
}

double dual_exponent(Norm p) { return p == Norm::l2 ? 2.0 : 1.0; }

double vector_norm(std::span<const double> v, double q) {
    if (std::isinf(q)) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }
    if (q == 1.0) {
        double s = 0.0;
        for (double x : v) s += std::abs(x);
        return s;
    }
    if (q == 2.0) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    }
    double s = 0.0;
    for (double x : v) s += std::pow(std::abs(x), q);
    return std::pow(s, 1.0 / q);
}

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be finite and >= 0");
    if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("attack step size must be > 0");
    if (steps == 0) throw ConfigError("attack needs at least one step");
}

std::vector<std::string> AttackConfig::warnings() const {
    std::vector<std::string> out;
    if (double(steps) * step < epsilon)
        out.push_back("steps * step = " + std::to_string(double(steps) * step) + " < epsilon = " + std::to_string(epsilon) +
                      ": PGD cannot reach the boundary of the ball");
    return out;
}

// ---------------------------------------------------------------------------

ModelTarget::ModelTarget(const MultiTaskModel& model, std::vector<TaskLabels> labels)
    : model_(&model), labels_(std::move(labels)) {
    for (auto t : model.enabled_tasks())
        if (t >= labels_.size() || labels_[t].size() == 0)
            throw ConfigError("missing labels for task '" + model.head(t).spec.name + "'");
}

namespace {

double weight_of(std::span<const double> weights, std::size_t k) { return weights.empty() ? 1.0 : weights[k]; }

void check_weights(std::span<const std::size_t> tasks, std::span<const double> weights) {
    if (!weights.empty() && weights.size() != tasks.size()) throw ConfigError("need one loss weight per attacked task");
}

}  // namespace

LossAndGrad ModelTarget::evaluate(const Tensor& x, std::span<const std::size_t> tasks, std::span<const double> weights,
                                  bool need_grad) const {
    check_weights(tasks, weights);
    Graph g;
    auto bound = bind(g, *model_, false);
    Var xv = g.leaf("x", x, need_grad);
    auto pass = forward(*model_, bound, xv);
    LossAndGrad out;
    out.losses.resize(model_->task_count());
    std::vector<Var> per_task(model_->task_count());
    for (auto t : model_->enabled_tasks()) {
        per_task[t] = per_sample_loss(*pass.outputs[t], model_->head(t).spec, labels_[t]);
        out.losses[t] = per_task[t].value().data();
    }
    if (need_grad) {
        std::optional<Var> total;
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            if (!per_task.at(tasks[k]).valid()) throw ConfigError("attacked task is disabled");
            Var term = sum(per_task[tasks[k]]) * weight_of(weights, k);
            total = total ? *total + term : term;
        }
        if (!total) throw ConfigError("no attacked tasks");
        Var xs[] = {xv};
        out.grad = gradients(*total, xs)[0].value().reshaped(x.shape());
    }
    return out;
}

LinearTarget::LinearTarget(std::vector<std::vector<double>> weights, std::vector<double> bias)
    : w_(std::move(weights)), b_(std::move(bias)) {
    if (w_.empty()) throw ConfigError("linear target needs at least one task");
    for (const auto& w : w_)
        if (w.size() != w_[0].size() || w.empty()) throw ShapeError("linear target weights must share a positive width");
    if (b_.empty()) b_.assign(w_.size(), 0.0);
    if (b_.size() != w_.size()) throw ShapeError("linear target needs one bias per task");
}

std::vector<std::size_t> LinearTarget::enabled_tasks() const {
    std::vector<std::size_t> out(w_.size());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = t;
    return out;
}

LossAndGrad LinearTarget::evaluate(const Tensor& x, std::span<const std::size_t> tasks, std::span<const double> weights,
                                   bool need_grad) const {
    check_weights(tasks, weights);
    const std::size_t n = x.rows(), d = x.cols();
    if (d != w_[0].size()) throw ShapeError("linear target input width mismatch");
    LossAndGrad out;
    out.losses.assign(w_.size(), std::vector<double>(n, 0.0));
    for (std::size_t t = 0; t < w_.size(); ++t)
        for (std::size_t i = 0; i < n; ++i) {
            double s = b_[t];
            auto row = x.row(i);
            for (std::size_t k = 0; k < d; ++k) s += w_[t][k] * row[k];
            out.losses[t][i] = s;
        }
    if (need_grad) {
        out.grad = Tensor(x.shape());
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            const auto& w = w_.at(tasks[k]);
            const double a = weight_of(weights, k);
            for (std::size_t i = 0; i < n; ++i) {
                auto row = out.grad.row(i);
                for (std::size_t j = 0; j < d; ++j) row[j] += a * w[j];
            }
        }
    }
    return out;
}

std::vector<std::size_t> select_tasks(const AttackTarget& target, TaskSelector selector) {
    std::vector<std::size_t> out;
    for (auto t : target.enabled_tasks()) {
        const bool keep = selector == TaskSelector::all_tasks || (selector == TaskSelector::main_only ? t == 0 : t != 0);
        if (keep) out.push_back(t);
    }
    if (out.empty()) throw ConfigError("selector " + to_string(selector) + " selects no enabled task");
    return out;
}

double PerturbedBatch::max_delta_norm(Norm p) const {
    double worst = 0.0;
    for (std::size_t i = 0; i < delta.rows(); ++i)
        worst = std::max(worst, vector_norm(delta.row(i), p == Norm::l2 ? 2.0 : HUGE_VAL));
    return worst;
}

// ---------------------------------------------------------------------------

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_input(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("attack inputs must be a flattened [N, D] batch");
    if (!x.all_finite()) throw NumericError("attack input contains non-finite values");
}

// Projects row-wise onto the p-ball of radius eps around x, then clamps to [0,1].
void project(Tensor& x_adv, const Tensor& x, double eps, Norm p) {
    const std::size_t n = x.rows(), d = x.cols();
    for (std::size_t i = 0; i < n; ++i) {
        auto a = x_adv.row(i);
        auto o = x.row(i);
        if (p == Norm::linf) {
            for (std::size_t k = 0; k < d; ++k) a[k] = o[k] + std::clamp(a[k] - o[k], -eps, eps);
        } else {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += (a[k] - o[k]) * (a[k] - o[k]);
            const double norm = std::sqrt(s);
            if (norm > eps) {
                const double f = eps / norm;
                for (std::size_t k = 0; k < d; ++k) a[k] = o[k] + (a[k] - o[k]) * f;
            }
        }
        for (std::size_t k = 0; k < d; ++k) a[k] = std::clamp(a[k], 0.0, 1.0);
    }
}

PerturbedBatch finish(const AttackTarget& target, std::vector<std::size_t> tasks, const Tensor& x, Tensor x_adv,
                      std::vector<std::vector<double>> before) {
    PerturbedBatch out;
    out.x = x;
    out.delta = Tensor(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out.delta[k] = x_adv[k] - x[k];
    out.loss_before = std::move(before);
    out.loss_after = target.evaluate(x_adv, tasks, {}, false).losses;
    out.x_adv = std::move(x_adv);
    out.attacked = std::move(tasks);
    return out;
}

}  // namespace

PerturbedBatch fgsm_perturb(const AttackTarget& target, TaskSelector selector, const Tensor& x, double epsilon) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be finite and >= 0");
    check_input(x);
    auto tasks = select_tasks(target, selector);
    auto lg = target.evaluate(x, tasks, {}, true);
    Tensor x_adv = x;
    for (std::size_t k = 0; k < x.size(); ++k) x_adv[k] = std::clamp(x[k] + epsilon * sign(lg.grad[k]), 0.0, 1.0);
    return finish(target, std::move(tasks), x, std::move(x_adv), std::move(lg.losses));
}

PerturbedBatch pgd_attack(const AttackTarget& target, const Tensor& x, const AttackConfig& config, std::uint64_t seed) {
    auto tasks = select_tasks(target, config.selector);
    return pgd_attack(target, tasks, {}, x, config, seed);
}

PerturbedBatch pgd_attack(const AttackTarget& target, std::span<const std::size_t> tasks_in, std::span<const double> weights,
                          const Tensor& x, const AttackConfig& config, std::uint64_t seed) {
    config.validate();
    check_input(x);
    if (tasks_in.empty()) throw ConfigError("no attacked tasks");
    std::vector<std::size_t> tasks(tasks_in.begin(), tasks_in.end());
    const double eps = config.epsilon;
    Tensor x_adv = x;
    if (config.random_start && eps > 0.0) {
        Rng rng(seed);
        for (std::size_t k = 0; k < x.size(); ++k) x_adv[k] = x[k] + rng.uniform(-eps, eps);
        project(x_adv, x, eps, config.norm);
    }
    std::vector<std::vector<double>> before = target.evaluate(x, tasks, weights, false).losses;
    if (eps > 0.0) {
        for (std::size_t s = 0; s < config.steps; ++s) {
            auto lg = target.evaluate(x_adv, tasks, weights, true);
            for (std::size_t k = 0; k < x.size(); ++k) x_adv[k] += config.step * sign(lg.grad[k]);
            project(x_adv, x, eps, config.norm);
        }
    }
    return finish(target, std::move(tasks), x, std::move(x_adv), std::move(before));
}

Tensor input_gradients(const AttackTarget& target, std::span<const std::size_t> tasks, std::span<const double> weights,
                       const Tensor& x) {
    check_input(x);
    return target.evaluate(x, tasks, weights, true).grad;
}

namespace {

std::vector<double> joint(const std::vector<std::vector<double>>& losses, std::span<const std::size_t> tasks,
                          std::span<const double> weights, std::size_t n) {
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < tasks.size(); ++k)
        for (std::size_t i = 0; i < n; ++i) out[i] += weight_of(weights, k) * losses.at(tasks[k]).at(i);
    return out;
}

}  // namespace

double empirical_vulnerability(const AttackTarget& target, std::span<const std::size_t> tasks,
                               std::span<const double> weights, const Tensor& x, const AttackConfig& config,
                               std::uint64_t seed) {
    if (x.rank() != 2 || x.rows() == 0) throw ConfigError("empty dataset");
    if (tasks.empty()) throw ConfigError("task set must be non-empty");
    auto pb = pgd_attack(target, tasks, weights, x, config, seed);
    const std::size_t n = x.rows();
    auto a = joint(pb.loss_before, tasks, weights, n);
    auto b = joint(pb.loss_after, tasks, weights, n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::abs(b[i] - a[i]);
    return total / double(n);
}

double first_order_vulnerability(const AttackTarget& target, std::span<const std::size_t> tasks,
                                 std::span<const double> weights, const Tensor& x, double epsilon, Norm p) {
    if (x.rank() != 2 || x.rows() == 0) throw ConfigError("empty dataset");
    if (tasks.empty()) throw ConfigError("task set must be non-empty");
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
    const Tensor g = input_gradients(target, tasks, weights, x);
    const double q = dual_exponent(p);
    double total = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) total += vector_norm(g.row(i), q);
    return epsilon * total / double(g.rows());
}

double vulnerability_predictor(double alpha1, double alpha2, const Tensor& g1, const Tensor& g2) {
    if (!(alpha1 > 0.0 && alpha2 > 0.0)) throw ConfigError("task weights must be positive");
    if (g1.shape() != g2.shape() || g1.rank() != 2) throw ShapeError("gradient batches must share an [N, D] shape");
    const std::size_t n = g1.rows();
    if (n < 2) throw ConfigError("need at least two samples");
    double cov = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto a = g1.row(i), b = g2.row(i);
        for (std::size_t k = 0; k < a.size(); ++k) {
            cov += a[k] * b[k];
            s1 += a[k] * a[k];
            s2 += b[k] * b[k];
        }
    }
    cov /= double(n);
    s1 /= double(n);
    s2 /= double(n);
    const double denom = alpha1 * alpha1 * s1 + alpha2 * alpha2 * s2;
    if (!(denom > 0.0)) throw NumericError("degenerate task gradients: all zero");
    return std::sqrt(std::max(0.0, 1.0 + 2.0 * alpha1 * alpha2 * cov / denom));
}

void write_attack_csv(std::ostream& out, const PerturbedBatch& batch, std::span<const std::size_t> ids,
                      std::span<const std::string> task_names) {
    const std::size_t n = batch.x.rows();
    if (ids.size() != n) throw ShapeError("need one id per sample");
    std::vector<std::size_t> tasks;
    for (std::size_t t = 0; t < batch.loss_before.size(); ++t)
        if (!batch.loss_before[t].empty()) tasks.push_back(t);
    out << "id";
    for (auto t : tasks) {
        const std::string name = t < task_names.size() ? task_names[t] : "task" + std::to_string(t);
        out << ",loss_before_" << name << ",loss_after_" << name;
    }
    out << ",delta_linf,delta_l2\n";
    char buf[32];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    for (std::size_t i = 0; i < n; ++i) {
        out << ids[i];
        for (auto t : tasks) out << ',' << num(batch.loss_before[t][i]) << ',' << num(batch.loss_after[t][i]);
        out << ',' << num(vector_norm(batch.delta.row(i), HUGE_VAL)) << ',' << num(vector_norm(batch.delta.row(i), 2.0)) << '\n';
    }
}

}  // namespace gat
