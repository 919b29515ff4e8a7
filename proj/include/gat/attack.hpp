#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gat/model.hpp"
#include "gat/tensor.hpp"

namespace gat {

enum class Norm { l2, linf };
enum class TaskSelector { main_only, all_tasks, auxiliary_only };

std::string to_string(Norm p);
std::string to_string(TaskSelector s);
Norm norm_from_string(const std::string& s);
TaskSelector selector_from_string(const std::string& s);
// Dual exponent q with 1/p + 1/q = 1; +inf is returned as HUGE_VAL.
double dual_exponent(Norm p);
double vector_norm(std::span<const double> v, double q);

struct AttackConfig {
    Norm norm = Norm::linf;
    double epsilon = 8.0 / 255.0;
    double step = 2.0 / 255.0;
    std::size_t steps = 10;
    bool random_start = true;
    TaskSelector selector = TaskSelector::main_only;

    // Throws ConfigError on invalid values.
    void validate() const;
    // Non-fatal issues, e.g. steps * step < epsilon.
    std::vector<std::string> warnings() const;
};

struct LossAndGrad {
    // losses[t][i]: per-sample loss of task t; empty for disabled tasks.
    std::vector<std::vector<double>> losses;
    // d/dx of sum_i sum_{t in tasks} w_t * loss_t(x_i); row i is sample i's input gradient.
    Tensor grad;
};

// Anything whose per-sample task losses can be differentiated with respect to its input.
class AttackTarget {
   public:
    virtual ~AttackTarget() = default;
    virtual std::size_t task_count() const = 0;
    virtual std::vector<std::size_t> enabled_tasks() const = 0;
    virtual LossAndGrad evaluate(const Tensor& x, std::span<const std::size_t> tasks, std::span<const double> weights,
                                 bool need_grad) const = 0;
};

// A multi-task model together with the batch labels of every enabled task.
class ModelTarget : public AttackTarget {
   public:
    ModelTarget(const MultiTaskModel& model, std::vector<TaskLabels> labels);
    std::size_t task_count() const override { return model_->task_count(); }
    std::vector<std::size_t> enabled_tasks() const override { return model_->enabled_tasks(); }
    LossAndGrad evaluate(const Tensor& x, std::span<const std::size_t> tasks, std::span<const double> weights,
                         bool need_grad) const override;

   private:
    const MultiTaskModel* model_;
    std::vector<TaskLabels> labels_;
};

// loss_t(x) = w_t . x + b_t, one row of `weights` per task. Task 0 is the main task.
class LinearTarget : public AttackTarget {
   public:
    LinearTarget(std::vector<std::vector<double>> weights, std::vector<double> bias = {});
    std::size_t task_count() const override { return w_.size(); }
    std::vector<std::size_t> enabled_tasks() const override;
    LossAndGrad evaluate(const Tensor& x, std::span<const std::size_t> tasks, std::span<const double> weights,
                         bool need_grad) const override;

   private:
    std::vector<std::vector<double>> w_;
    std::vector<double> b_;
};

// Enabled tasks picked by a selector; throws ConfigError when the result is empty.
std::vector<std::size_t> select_tasks(const AttackTarget& target, TaskSelector selector);

struct PerturbedBatch {
    Tensor x;
    Tensor x_adv;
    Tensor delta;
    std::vector<std::size_t> attacked;
    std::vector<std::vector<double>> loss_before;  // [task][sample]
    std::vector<std::vector<double>> loss_after;

    // Largest per-sample ||x_adv - x||_p.
    double max_delta_norm(Norm p) const;
};

PerturbedBatch fgsm_perturb(const AttackTarget& target, TaskSelector selector, const Tensor& x, double epsilon);
PerturbedBatch pgd_attack(const AttackTarget& target, const Tensor& x, const AttackConfig& config, std::uint64_t seed);
// PGD against an explicit task set with per-task loss weights.
PerturbedBatch pgd_attack(const AttackTarget& target, std::span<const std::size_t> tasks, std::span<const double> weights,
                          const Tensor& x, const AttackConfig& config, std::uint64_t seed);

// Per-sample input gradients [N, D] of the weighted joint loss over `tasks`.
Tensor input_gradients(const AttackTarget& target, std::span<const std::size_t> tasks, std::span<const double> weights,
                       const Tensor& x);

// Mean over samples of |L'(x_adv) - L'(x)|, L' the weighted joint loss over
// `tasks` and x_adv the PGD maximizer of L'.
double empirical_vulnerability(const AttackTarget& target, std::span<const std::size_t> tasks,
                               std::span<const double> weights, const Tensor& x, const AttackConfig& config,
                               std::uint64_t seed);
// epsilon * mean over samples of ||d L'/dx||_q, q dual to p.
double first_order_vulnerability(const AttackTarget& target, std::span<const std::size_t> tasks,
                                 std::span<const double> weights, const Tensor& x, double epsilon, Norm p);

// sqrt(1 + 2 a1 a2 Cov / (a1^2 s1^2 + a2^2 s2^2)) with Cov and s_i^2 the
// sample means of per-sample gradient inner products (no mean subtraction).
double vulnerability_predictor(double alpha1, double alpha2, const Tensor& grads1, const Tensor& grads2);

// id, loss_before_<task>, loss_after_<task> per attacked-or-enabled task, delta_linf, delta_l2.
void write_attack_csv(std::ostream& out, const PerturbedBatch& batch, std::span<const std::size_t> ids,
                      std::span<const std::string> task_names);

}  // namespace gat
