#include "gat/task.hpp"

#include "gat/error.hpp"

namespace gat {

void TaskSpec::validate() const {
    if (name.empty()) throw ConfigError("task name must be non-empty");
    const bool self_supervised = kind == TaskKind::self_supervised;
    if (self_supervised && preprocessor == Preprocessor::none)
        throw ConfigError("self-supervised task '" + name + "' needs a preprocessor");
    if (!self_supervised && preprocessor != Preprocessor::none)
        throw ConfigError("task '" + name + "' is not self-supervised but has a preprocessor");
    if (!self_supervised && label_column.empty())
        throw ConfigError("task '" + name + "' needs a label column");
    if (is_classification() && arity < 2)
        throw ConfigError("classification task '" + name + "' needs arity >= 2");
    if (loss == LossFamily::mse && arity != 1) throw ConfigError("regression task '" + name + "' needs arity 1");
    if (loss == LossFamily::binary_ce && arity != 2) throw ConfigError("binary task '" + name + "' needs arity 2");
    if (preprocessor == Preprocessor::rotation && arity != 4)
        throw ConfigError("rotation task '" + name + "' needs arity 4");
    if (preprocessor == Preprocessor::jigsaw) {
        if (jigsaw_grid < 2) throw ConfigError("jigsaw task '" + name + "' needs a grid side >= 2");
        if (jigsaw_pool_size != arity) throw ConfigError("jigsaw task '" + name + "' pool size must equal arity");
    }
}

namespace tasks {

TaskSpec fine_target(std::size_t classes) {
    return {"target", TaskKind::target, LossFamily::multiclass_ce, classes, Preprocessor::none, "fine"};
}
TaskSpec macro(std::size_t groups) {
    return {"macro", TaskKind::domain_knowledge, LossFamily::multiclass_ce, groups, Preprocessor::none, "macro"};
}
TaskSpec rotation() {
    return {"rotation", TaskKind::self_supervised, LossFamily::multiclass_ce, 4, Preprocessor::rotation, ""};
}
TaskSpec jigsaw(std::size_t grid, std::size_t pool_size) {
    TaskSpec t{"jigsaw", TaskKind::self_supervised, LossFamily::multiclass_ce, pool_size, Preprocessor::jigsaw, ""};
    t.jigsaw_grid = grid;
    t.jigsaw_pool_size = pool_size;
    return t;
}
TaskSpec age() { return {"age", TaskKind::domain_knowledge, LossFamily::mse, 1, Preprocessor::none, "age"}; }
TaskSpec gender() {
    return {"gender", TaskKind::domain_knowledge, LossFamily::multiclass_ce, 3, Preprocessor::none, "gender"};
}
TaskSpec marker() {
    return {"marker", TaskKind::domain_knowledge, LossFamily::binary_ce, 2, Preprocessor::none, "marker"};
}

TaskSpec auxiliary(const std::string& name, std::size_t jigsaw_grid) {
    if (name == "macro") return macro();
    if (name == "rotation") return rotation();
    if (name == "jigsaw") return jigsaw(jigsaw_grid);
    if (name == "age") return age();
    if (name == "gender") return gender();
    if (name == "marker") return marker();
    throw ConfigError("unknown auxiliary task '" + name + "'");
}

}  // namespace tasks

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::target: return "target";
        case TaskKind::self_supervised: return "self-supervised";
        case TaskKind::domain_knowledge: return "domain-knowledge";
    }
    return "?";
}

std::string to_string(LossFamily loss) {
    switch (loss) {
        case LossFamily::multiclass_ce: return "multiclass-ce";
        case LossFamily::binary_ce: return "binary-ce";
        case LossFamily::mse: return "mse";
    }
    return "?";
}

std::string to_string(Preprocessor p) {
    switch (p) {
        case Preprocessor::none: return "none";
        case Preprocessor::rotation: return "rotation";
        case Preprocessor::jigsaw: return "jigsaw";
    }
    return "?";
}

namespace {
template <typename E>
E parse_enum(const std::string& text, std::initializer_list<E> values, const char* what) {
    for (E v : values)
        if (to_string(v) == text) return v;
    throw ConfigError(std::string("unknown ") + what + " '" + text + "'");
}
}  // namespace

void to_json(nlohmann::json& j, const TaskSpec& t) {
    j = {{"name", t.name},
         {"kind", to_string(t.kind)},
         {"loss", to_string(t.loss)},
         {"arity", t.arity},
         {"preprocessor", to_string(t.preprocessor)},
         {"label_column", t.label_column},
         {"jigsaw_grid", t.jigsaw_grid},
         {"jigsaw_pool_size", t.jigsaw_pool_size}};
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
    t.name = j.at("name").get<std::string>();
    t.kind = parse_enum(j.at("kind").get<std::string>(),
                        {TaskKind::target, TaskKind::self_supervised, TaskKind::domain_knowledge}, "task kind");
    t.loss = parse_enum(j.at("loss").get<std::string>(),
                        {LossFamily::multiclass_ce, LossFamily::binary_ce, LossFamily::mse}, "loss family");
    t.arity = j.at("arity").get<std::size_t>();
    t.preprocessor = parse_enum(j.at("preprocessor").get<std::string>(),
                                {Preprocessor::none, Preprocessor::rotation, Preprocessor::jigsaw}, "preprocessor");
    t.label_column = j.value("label_column", std::string{});
    t.jigsaw_grid = j.value("jigsaw_grid", std::size_t{0});
    t.jigsaw_pool_size = j.value("jigsaw_pool_size", std::size_t{0});
}

}  // namespace gat
