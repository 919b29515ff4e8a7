#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "gat/autodiff.hpp"
#include "gat/task.hpp"
#include "json.hpp"

namespace gat {

// widths[0] is the flattened input size, widths.back() the penultimate width.
// Every encoder layer is affine followed by relu.
struct EncoderSpec {
    std::vector<std::size_t> widths;

    std::size_t input_width() const { return widths.front(); }
    std::size_t penultimate_width() const { return widths.back(); }
    friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct DenseLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    std::size_t parameter_count() const { return weight.size() + bias.size(); }
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct TaskHead {
    TaskSpec spec;
    DenseLayer layer;
    bool enabled = true;

    friend bool operator==(const TaskHead&, const TaskHead&) = default;
};

// Shared encoder plus one single-dense-layer decoder per task, all attached to
// the penultimate layer. Task 0 is the target task and is always enabled.
class MultiTaskModel {
   public:
    static MultiTaskModel build(EncoderSpec encoder, std::vector<TaskSpec> tasks, std::uint64_t seed);

    // Appends a decoder at the penultimate layer; the encoder is untouched.
    MultiTaskModel attach_decoder(TaskSpec task, std::uint64_t seed) const;
    // Leaves only the target task enabled.
    MultiTaskModel disable_auxiliary() const;

    const EncoderSpec& encoder_spec() const noexcept { return spec_; }
    std::span<const DenseLayer> encoder() const noexcept { return encoder_; }
    std::span<DenseLayer> encoder() noexcept { return encoder_; }
    std::span<const TaskHead> heads() const noexcept { return heads_; }
    std::span<TaskHead> heads() noexcept { return heads_; }
    const TaskHead& head(std::size_t task) const { return heads_.at(task); }
    std::size_t task_count() const noexcept { return heads_.size(); }
    std::vector<std::size_t> enabled_tasks() const;
    std::optional<std::size_t> find_task(const std::string& name) const;

    std::size_t parameter_count() const;
    std::size_t shared_parameter_count() const;
    std::vector<double> shared_parameters() const;
    void set_shared_parameters(std::span<const double> flat);
    std::vector<double> head_parameters(std::size_t task) const;
    void set_head_parameters(std::size_t task, std::span<const double> flat);
    // Encoder then every head, in declared order.
    std::vector<double> all_parameters() const;

    friend bool operator==(const MultiTaskModel&, const MultiTaskModel&) = default;

   private:
    MultiTaskModel() = default;
    friend MultiTaskModel model_from_json(const nlohmann::json& j);

    EncoderSpec spec_;
    std::vector<DenseLayer> encoder_;
    std::vector<TaskHead> heads_;
};

// Model parameters as graph leaves. Names follow "enc.<i>.W", "enc.<i>.b",
// "head.<name>.W", "head.<name>.b".
struct BoundModel {
    std::vector<Var> encoder;            // W0, b0, W1, b1, ...
    std::vector<std::vector<Var>> heads; // per task: W, b

    std::vector<Var> all() const;
};

BoundModel bind(Graph& graph, const MultiTaskModel& model, bool requires_grad);

struct ForwardPass {
    Var features;                        // penultimate activations
    std::vector<std::optional<Var>> outputs;  // per task; empty for disabled tasks
};

ForwardPass forward(const MultiTaskModel& model, const BoundModel& bound, Var x);

// Per-sample loss [N,1] of one task head.
Var per_sample_loss(Var output, const TaskSpec& task, const TaskLabels& labels);
// Batch-mean loss of one task head.
Var task_loss(Var output, const TaskSpec& task, const TaskLabels& labels);

struct TaskResult {
    std::size_t task;
    Tensor output;
    double loss;
};

// Outputs and batch-mean losses of every enabled task for a flattened batch x.
std::vector<TaskResult> forward_and_losses(const MultiTaskModel& model, const Tensor& x,
                                           std::span<const TaskLabels> labels);

// Outputs of every enabled task, no labels needed.
std::vector<Tensor> predict(const MultiTaskModel& model, const Tensor& x);

nlohmann::json model_to_json(const MultiTaskModel& model);
MultiTaskModel model_from_json(const nlohmann::json& j);
void save_checkpoint(const MultiTaskModel& model, const std::filesystem::path& path);
MultiTaskModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gat
