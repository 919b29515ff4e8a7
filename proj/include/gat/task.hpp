#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

namespace gat {

enum class TaskKind { target, self_supervised, domain_knowledge };
enum class LossFamily { multiclass_ce, binary_ce, mse };
enum class Preprocessor { none, rotation, jigsaw };

// One prediction task of a multi-task model. Domain-knowledge and target tasks
// read labels from a corpus column ("fine", "macro" or a metadata column);
// self-supervised tasks derive them from their preprocessor.
struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::target;
    LossFamily loss = LossFamily::multiclass_ce;
    std::size_t arity = 2;
    Preprocessor preprocessor = Preprocessor::none;
    std::string label_column;
    std::size_t jigsaw_grid = 0;       // grid side for jigsaw tasks
    std::size_t jigsaw_pool_size = 0;  // equals arity for jigsaw tasks

    void validate() const;
    // Width of the decoder output.
    std::size_t output_width() const { return loss == LossFamily::multiclass_ce ? arity : 1; }
    bool is_classification() const { return loss != LossFamily::mse; }

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Per-task labels of a batch: class indices for classification, real targets
// for regression.
struct TaskLabels {
    std::vector<int> classes;
    std::vector<double> values;

    std::size_t size() const { return classes.empty() ? values.size() : classes.size(); }
};

// Presets used by the experiments and the CLI.
namespace tasks {
TaskSpec fine_target(std::size_t classes);
TaskSpec macro(std::size_t groups = 2);
TaskSpec rotation();
TaskSpec jigsaw(std::size_t grid, std::size_t pool_size = 24);
TaskSpec age();
TaskSpec gender();
TaskSpec marker();
// Looks up an auxiliary preset by name (macro, rotation, jigsaw, age, gender, marker).
TaskSpec auxiliary(const std::string& name, std::size_t jigsaw_grid = 4);
}  // namespace tasks

std::string to_string(TaskKind kind);
std::string to_string(LossFamily loss);
std::string to_string(Preprocessor p);

void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);

}  // namespace gat
