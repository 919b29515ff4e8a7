#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gat/attack.hpp"
#include "gat/augment.hpp"
#include "gat/data.hpp"
#include "gat/model.hpp"
#include "gat/moo.hpp"
#include "json.hpp"

namespace gat {

enum class Weighting { equal, mgda };
enum class Regularizer { off, on, detached };
// on: regularizers are MGDA objectives; fixed: added with weight 1 outside MGDA.
enum class RegWeighting { mgda, fixed };
enum class TrainMode { standard, madry, gat };
// Per-objective gradient scaling applied before the min-norm solve; the update
// itself combines the unscaled gradients.
enum class GradNormalization { none, l2, loss, loss_l2 };

std::string to_string(Weighting w);
std::string to_string(Regularizer r);
std::string to_string(TrainMode m);
std::string to_string(RegWeighting r);
std::string to_string(GradNormalization n);
Weighting weighting_from_string(const std::string& s);
Regularizer regularizer_from_string(const std::string& s);
TrainMode train_mode_from_string(const std::string& s);
RegWeighting reg_weighting_from_string(const std::string& s);
GradNormalization normalization_from_string(const std::string& s);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    // Cosine schedule horizon in epochs; 0 means `epochs`.
    std::size_t lr_horizon = 0;
    // Early stopping on validation robust accuracy.
    std::size_t patience = 20;
    std::uint64_t seed = 0;
    AttackConfig attack;       // training-time attack
    AttackConfig eval_attack;  // validation / test attack
    Weighting weighting = Weighting::mgda;
    Regularizer regularizer = Regularizer::on;
    RegWeighting reg_weighting = RegWeighting::mgda;
    // Clean and adversarial gradients are nearly collinear, so the solver needs
    // more iterations than its standalone default.
    MgdaOptions mgda{100000, 1e-6};
    // Multiplies the MGDA direction before the shared update. The weights sum to
    // one while the Madry objective sums a clean and an adversarial loss, so 2
    // keeps the two step sizes comparable.
    double mgda_scale = 2.0;
    GradNormalization mgda_normalization = GradNormalization::loss_l2;
    // Per-task multipliers of the equal-weight objective; empty means all ones.
    std::vector<double> task_loss_weights;
    std::uint64_t pool_seed = 0;
    // Validation samples used for early stopping; 0 means the whole split.
    std::size_t val_limit = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    std::vector<double> clean_loss;  // per task, epoch mean
    std::vector<double> adv_loss;
    std::vector<double> reg;         // per task; task 0 has no regularizer term
    std::vector<double> alpha;       // epoch mean of the per-batch weights, one per objective
    double val_clean_accuracy = 0.0;
    double val_robust_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct BatchLog {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    std::vector<double> alpha;
    double direction_norm_sq = 0.0;
    // min_r g_r . d >= (1 - tol) ||d||^2 and g_t . d > 0 for supported objectives
    bool certificate = true;
    std::size_t mgda_iterations = 0;
    bool mgda_converged = true;
    double max_delta_linf = 0.0;
};

struct TrainResult {
    MultiTaskModel model;
    std::vector<EpochRecord> records;
    std::vector<BatchLog> batches;
    std::vector<std::string> objectives;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    std::optional<PermutationPool> pool;
};

double cosine_lr(double t, double horizon, double lr0);

// Sum over k < j of the curvature measure between the per-sample input
// gradients of tasks j and k, averaged over the batch. `x` must be a leaf of a
// record_backward graph for the term to be differentiable in the parameters.
Var curvature_regularizer(const MultiTaskModel& model, const ForwardPass& pass, Var x,
                          std::span<const TaskLabels> labels, std::size_t j, bool detached = false);

// Labels of every enabled task for corpus samples, drawing self-supervised
// labels through the pipeline (which also transforms x).
struct PreparedBatch {
    Tensor x;
    std::vector<TaskLabels> labels;
    std::vector<std::size_t> ids;
};
PreparedBatch prepare_batch(const MultiTaskModel& model, const LabeledCorpus& corpus, std::span<const std::size_t> ids,
                            const AugmentPipeline& pipeline, Rng& rng);

TrainResult train(TrainMode mode, const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config);
TrainResult train_standard(const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config);
TrainResult train_madry(const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config);
TrainResult train_gat(const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config);

struct EvalResult {
    std::size_t count = 0;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    // Binary targets only.
    std::optional<double> clean_auc;
    std::optional<double> robust_auc;
    double vulnerability = 0.0;
    std::vector<bool> clean_correct;
    std::vector<bool> robust_correct;
    std::vector<int> robust_predictions;
};

// Target-task metrics on the given samples; auxiliary heads are ignored.
EvalResult evaluate_model(const MultiTaskModel& model, const LabeledCorpus& corpus, std::span<const std::size_t> ids,
                          const AttackConfig& attack, std::uint64_t seed, std::size_t batch_size = 250);

// Evaluation of `target` on adversarial examples crafted against `surrogate`.
EvalResult evaluate_transfer(const MultiTaskModel& surrogate, const MultiTaskModel& target, const LabeledCorpus& corpus,
                             std::span<const std::size_t> ids, const AttackConfig& attack, std::uint64_t seed,
                             std::size_t batch_size = 250);

nlohmann::json run_manifest(TrainMode mode, const TrainConfig& config, const TrainResult& result);

}  // namespace gat
