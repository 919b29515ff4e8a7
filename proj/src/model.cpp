#include "gat/model.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "gat/error.hpp"
#include "gat/random.hpp"

namespace gat {

namespace {

DenseLayer init_layer(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) throw ConfigError("layer widths must be positive");
    const double bound = 1.0 / std::sqrt(double(in));
    DenseLayer layer{Tensor(Shape{in, out}), Tensor(Shape{out})};
    for (auto& v : layer.weight.values()) v = rng.uniform(-bound, bound);
    for (auto& v : layer.bias.values()) v = rng.uniform(-bound, bound);
    return layer;
}

void append(std::vector<double>& out, const Tensor& t) { out.insert(out.end(), t.values().begin(), t.values().end()); }

std::size_t assign(Tensor& t, std::span<const double> flat, std::size_t offset) {
    std::copy_n(flat.begin() + std::ptrdiff_t(offset), t.size(), t.values().begin());
    return offset + t.size();
}

}  // namespace

MultiTaskModel MultiTaskModel::build(EncoderSpec encoder, std::vector<TaskSpec> tasks, std::uint64_t seed) {
    if (tasks.empty()) throw ConfigError("a model needs at least one task");
    if (encoder.widths.empty()) throw ConfigError("encoder needs an input width");
    for (auto w : encoder.widths)
        if (w == 0) throw ConfigError("encoder widths must be positive");
    std::set<std::string> names;
    for (const auto& t : tasks) {
        t.validate();
        if (!names.insert(t.name).second) throw ConfigError("duplicate task name '" + t.name + "'");
    }
    if (tasks.front().kind != TaskKind::target) throw ConfigError("task 0 must be the target task");

    MultiTaskModel m;
    m.spec_ = std::move(encoder);
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < m.spec_.widths.size(); ++i)
        m.encoder_.push_back(init_layer(m.spec_.widths[i], m.spec_.widths[i + 1], rng));
    for (auto& t : tasks) {
        DenseLayer layer = init_layer(m.spec_.penultimate_width(), t.output_width(), rng);
        m.heads_.push_back({std::move(t), std::move(layer), true});
    }
    return m;
}

MultiTaskModel MultiTaskModel::attach_decoder(TaskSpec task, std::uint64_t seed) const {
    task.validate();
    if (find_task(task.name)) throw ConfigError("task '" + task.name + "' already exists");
    if (task.kind == TaskKind::target) throw ConfigError("the model already has a target task");
    MultiTaskModel m = *this;
    Rng rng(seed);
    DenseLayer layer = init_layer(spec_.penultimate_width(), task.output_width(), rng);
    m.heads_.push_back({std::move(task), std::move(layer), true});
    return m;
}

MultiTaskModel MultiTaskModel::disable_auxiliary() const {
    MultiTaskModel m = *this;
    for (std::size_t i = 1; i < m.heads_.size(); ++i) m.heads_[i].enabled = false;
    return m;
}

std::vector<std::size_t> MultiTaskModel::enabled_tasks() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < heads_.size(); ++i)
        if (heads_[i].enabled) out.push_back(i);
    return out;
}

std::optional<std::size_t> MultiTaskModel::find_task(const std::string& name) const {
    for (std::size_t i = 0; i < heads_.size(); ++i)
        if (heads_[i].spec.name == name) return i;
    return std::nullopt;
}

std::size_t MultiTaskModel::shared_parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : encoder_) n += l.parameter_count();
    return n;
}

std::size_t MultiTaskModel::parameter_count() const {
    std::size_t n = shared_parameter_count();
    for (const auto& h : heads_) n += h.layer.parameter_count();
    return n;
}

std::vector<double> MultiTaskModel::shared_parameters() const {
    std::vector<double> out;
    out.reserve(shared_parameter_count());
    for (const auto& l : encoder_) {
        append(out, l.weight);
        append(out, l.bias);
    }
    return out;
}

void MultiTaskModel::set_shared_parameters(std::span<const double> flat) {
    if (flat.size() != shared_parameter_count()) throw ShapeError("shared parameter vector has the wrong length");
    std::size_t offset = 0;
    for (auto& l : encoder_) {
        offset = assign(l.weight, flat, offset);
        offset = assign(l.bias, flat, offset);
    }
}

std::vector<double> MultiTaskModel::head_parameters(std::size_t task) const {
    const auto& l = heads_.at(task).layer;
    std::vector<double> out;
    append(out, l.weight);
    append(out, l.bias);
    return out;
}

void MultiTaskModel::set_head_parameters(std::size_t task, std::span<const double> flat) {
    auto& l = heads_.at(task).layer;
    if (flat.size() != l.parameter_count()) throw ShapeError("head parameter vector has the wrong length");
    assign(l.bias, flat, assign(l.weight, flat, 0));
}

std::vector<double> MultiTaskModel::all_parameters() const {
    auto out = shared_parameters();
    for (std::size_t t = 0; t < heads_.size(); ++t) {
        auto h = head_parameters(t);
        out.insert(out.end(), h.begin(), h.end());
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Var> BoundModel::all() const {
    std::vector<Var> out = encoder;
    for (const auto& h : heads) out.insert(out.end(), h.begin(), h.end());
    return out;
}

BoundModel bind(Graph& graph, const MultiTaskModel& model, bool requires_grad) {
    BoundModel b;
    const auto enc = model.encoder();
    for (std::size_t i = 0; i < enc.size(); ++i) {
        b.encoder.push_back(graph.leaf("enc." + std::to_string(i) + ".W", enc[i].weight, requires_grad));
        b.encoder.push_back(graph.leaf("enc." + std::to_string(i) + ".b", enc[i].bias, requires_grad));
    }
    for (const auto& h : model.heads()) {
        b.heads.push_back({graph.leaf("head." + h.spec.name + ".W", h.layer.weight, requires_grad),
                           graph.leaf("head." + h.spec.name + ".b", h.layer.bias, requires_grad)});
    }
    return b;
}

ForwardPass forward(const MultiTaskModel& model, const BoundModel& bound, Var x) {
    if (x.value().cols() != model.encoder_spec().input_width())
        throw ShapeError("input width " + std::to_string(x.value().cols()) + " != encoder input width " +
                         std::to_string(model.encoder_spec().input_width()));
    Var h = x.shape().size() == 2 ? x : flatten(x);
    for (std::size_t i = 0; i + 1 < bound.encoder.size(); i += 2) h = relu(affine(h, bound.encoder[i], bound.encoder[i + 1]));
    ForwardPass pass{h, {}};
    const auto heads = model.heads();
    for (std::size_t t = 0; t < heads.size(); ++t) {
        if (heads[t].enabled)
            pass.outputs.emplace_back(affine(h, bound.heads[t][0], bound.heads[t][1]));
        else
            pass.outputs.emplace_back(std::nullopt);
    }
    return pass;
}

Var per_sample_loss(Var output, const TaskSpec& task, const TaskLabels& labels) {
    const std::size_t n = output.value().rows();
    if (labels.size() != n)
        throw ShapeError("task '" + task.name + "': " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
    if (output.value().cols() != task.output_width())
        throw ShapeError("task '" + task.name + "': output arity mismatch");
    switch (task.loss) {
        case LossFamily::multiclass_ce:
            if (labels.classes.size() != n) throw ShapeError("task '" + task.name + "' needs class labels");
            return softmax_cross_entropy(output, labels.classes);
        case LossFamily::binary_ce: {
            Tensor t(Shape{n, 1});
            if (!labels.classes.empty())
                for (std::size_t i = 0; i < n; ++i) t[i] = labels.classes[i];
            else
                for (std::size_t i = 0; i < n; ++i) t[i] = labels.values[i];
            return sigmoid_bce(output, std::move(t));
        }
        case LossFamily::mse: {
            if (labels.values.size() != n) throw ShapeError("task '" + task.name + "' needs real-valued labels");
            return squared_error(output, Tensor(Shape{n, 1}, labels.values));
        }
    }
    throw ConfigError("unknown loss family");
}

Var task_loss(Var output, const TaskSpec& task, const TaskLabels& labels) {
    return mean(per_sample_loss(output, task, labels));
}

std::vector<TaskResult> forward_and_losses(const MultiTaskModel& model, const Tensor& x,
                                           std::span<const TaskLabels> labels) {
    if (x.rows() == 0) throw ShapeError("empty batch");
    Graph g;
    auto bound = bind(g, model, false);
    auto pass = forward(model, bound, g.leaf("x", x, false));
    std::vector<TaskResult> out;
    for (auto t : model.enabled_tasks()) {
        if (t >= labels.size() || labels[t].size() == 0)
            throw ShapeError("missing labels for task '" + model.head(t).spec.name + "'");
        Var loss = task_loss(*pass.outputs[t], model.head(t).spec, labels[t]);
        out.push_back({t, pass.outputs[t]->value(), loss.value().item()});
    }
    return out;
}

std::vector<Tensor> predict(const MultiTaskModel& model, const Tensor& x) {
    Graph g;
    auto bound = bind(g, model, false);
    auto pass = forward(model, bound, g.leaf("x", x, false));
    std::vector<Tensor> out;
    for (const auto& o : pass.outputs) out.push_back(o ? o->value() : Tensor());
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json tensor_json(const std::string& name, const Tensor& t) {
    return {{"name", name}, {"shape", t.shape()}, {"values", t.data()}};
}

Tensor tensor_from(const nlohmann::json& j, const std::string& name, const Shape& expected) {
    if (j.at("name").get<std::string>() != name)
        throw IoError("checkpoint parameter order mismatch: expected '" + name + "'");
    auto shape = j.at("shape").get<Shape>();
    if (shape != expected) throw IoError("checkpoint parameter '" + name + "' has shape " + shape_string(shape));
    return Tensor(std::move(shape), j.at("values").get<std::vector<double>>());
}

}  // namespace

nlohmann::json model_to_json(const MultiTaskModel& model) {
    nlohmann::json tasks = nlohmann::json::array();
    nlohmann::json params = nlohmann::json::array();
    const auto enc = model.encoder();
    for (std::size_t i = 0; i < enc.size(); ++i) {
        params.push_back(tensor_json("enc." + std::to_string(i) + ".W", enc[i].weight));
        params.push_back(tensor_json("enc." + std::to_string(i) + ".b", enc[i].bias));
    }
    for (const auto& h : model.heads()) {
        nlohmann::json t = h.spec;
        t["enabled"] = h.enabled;
        tasks.push_back(std::move(t));
        params.push_back(tensor_json("head." + h.spec.name + ".W", h.layer.weight));
        params.push_back(tensor_json("head." + h.spec.name + ".b", h.layer.bias));
    }
    return {{"format", "gat-checkpoint"},
            {"version", kCheckpointVersion},
            {"encoder", {{"widths", model.encoder_spec().widths}, {"activation", "relu"}}},
            {"tasks", std::move(tasks)},
            {"parameters", std::move(params)}};
}

MultiTaskModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "gat-checkpoint") throw IoError("not a gat checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw IoError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
        MultiTaskModel m;
        m.spec_.widths = j.at("encoder").at("widths").get<std::vector<std::size_t>>();
        const auto& params = j.at("parameters");
        std::size_t k = 0;
        auto next = [&](const std::string& name, const Shape& shape) {
            if (k >= params.size()) throw IoError("checkpoint is missing parameter '" + name + "'");
            return tensor_from(params[k++], name, shape);
        };
        const auto& w = m.spec_.widths;
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            DenseLayer l;
            l.weight = next("enc." + std::to_string(i) + ".W", {w[i], w[i + 1]});
            l.bias = next("enc." + std::to_string(i) + ".b", {w[i + 1]});
            m.encoder_.push_back(std::move(l));
        }
        for (const auto& tj : j.at("tasks")) {
            TaskHead h;
            h.spec = tj.get<TaskSpec>();
            h.spec.validate();
            h.enabled = tj.value("enabled", true);
            h.layer.weight = next("head." + h.spec.name + ".W", {w.back(), h.spec.output_width()});
            h.layer.bias = next("head." + h.spec.name + ".b", {h.spec.output_width()});
            m.heads_.push_back(std::move(h));
        }
        if (k != params.size()) throw IoError("checkpoint has unexpected extra parameters");
        if (m.heads_.empty() || !m.heads_[0].enabled) throw IoError("checkpoint target task missing or disabled");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const MultiTaskModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out << model_to_json(model).dump() << '\n';
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

MultiTaskModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace gat
