#include "gat/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "gat/error.hpp"

namespace gat {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.raw(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
MutMap as_matrix(Tensor& t) { return MutMap(t.raw(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

void require(bool condition, Op op, const std::string& detail) {
    if (!condition) throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

void require_same(const Tensor& a, const Tensor& b, Op op) {
    require(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename F>
Tensor elementwise(const Tensor& a, F f) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, Op op, F f) {
    require_same(a, b, op);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

std::string_view op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::affine: return "affine";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::scale: return "scale";
        case Op::add_scalar: return "add_scalar";
        case Op::relu: return "relu";
        case Op::relu_grad: return "relu_grad";
        case Op::sigmoid: return "sigmoid";
        case Op::softmax: return "softmax";
        case Op::reshape: return "reshape";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_cols: return "slice_cols";
        case Op::pad_cols: return "pad_cols";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::sum_rows: return "sum_rows";
        case Op::sum_cols: return "sum_cols";
        case Op::broadcast_rows: return "broadcast_rows";
        case Op::broadcast_cols: return "broadcast_cols";
        case Op::broadcast_to: return "broadcast_to";
        case Op::softmax_cross_entropy: return "softmax_cross_entropy";
        case Op::sigmoid_bce: return "sigmoid_bce";
        case Op::squared_error: return "squared_error";
        case Op::detach: return "detach";
    }
    return "unknown";
}

Tensor compute_node(const Node& node, std::span<const Tensor* const> in) {
    const Op op = node.op;
    switch (op) {
        case Op::leaf:
        case Op::constant:
            return node.value;
        case Op::affine: {
            const Tensor &x = *in[0], &w = *in[1], &b = *in[2];
            require(w.rank() == 2 && w.rows() == x.cols(), op,
                    "input " + shape_string(x.shape()) + " incompatible with weight " + shape_string(w.shape()));
            require(b.size() == w.cols(), op, "bias size " + std::to_string(b.size()) + " != " + std::to_string(w.cols()));
            Tensor out(Shape{x.rows(), w.cols()});
            auto o = as_matrix(out);
            o.noalias() = as_matrix(x) * as_matrix(w);
            o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.raw(), Eigen::Index(b.size()));
            return out;
        }
        case Op::matmul: {
            const Tensor &a = *in[0], &b = *in[1];
            require(a.cols() == b.rows(), op, shape_string(a.shape()) + " x " + shape_string(b.shape()));
            Tensor out(Shape{a.rows(), b.cols()});
            as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
            return out;
        }
        case Op::transpose: {
            const Tensor& a = *in[0];
            Tensor out(Shape{a.cols(), a.rows()});
            as_matrix(out) = as_matrix(a).transpose();
            return out;
        }
        case Op::add: return elementwise(*in[0], *in[1], op, [](double a, double b) { return a + b; });
        case Op::sub: return elementwise(*in[0], *in[1], op, [](double a, double b) { return a - b; });
        case Op::mul: return elementwise(*in[0], *in[1], op, [](double a, double b) { return a * b; });
        case Op::div: return elementwise(*in[0], *in[1], op, [](double a, double b) { return a / b; });
        case Op::scale: {
            const double c = node.scalar;
            return elementwise(*in[0], [c](double a) { return a * c; });
        }
        case Op::add_scalar: {
            const double c = node.scalar;
            return elementwise(*in[0], [c](double a) { return a + c; });
        }
        case Op::relu: return elementwise(*in[0], [](double a) { return a > 0.0 ? a : 0.0; });
        case Op::relu_grad:
            return elementwise(*in[0], *in[1], op, [](double g, double a) { return a > 0.0 ? g : 0.0; });
        case Op::sigmoid: return elementwise(*in[0], stable_sigmoid);
        case Op::softmax: {
            const Tensor& a = *in[0];
            Tensor out(a.shape());
            for (std::size_t r = 0; r < a.rows(); ++r) {
                auto src = a.row(r);
                auto dst = out.row(r);
                const double peak = *std::max_element(src.begin(), src.end());
                double total = 0.0;
                for (std::size_t c = 0; c < src.size(); ++c) total += dst[c] = std::exp(src[c] - peak);
                for (auto& v : dst) v /= total;
            }
            return out;
        }
        case Op::reshape:
        case Op::detach:
            return op == Op::reshape ? in[0]->reshaped(node.target_shape) : *in[0];
        case Op::concat_cols: {
            const std::size_t rows = in[0]->rows();
            std::size_t total = 0;
            for (auto* p : in) {
                require(p->rows() == rows, op, "row count mismatch");
                total += p->cols();
            }
            Tensor out(Shape{rows, total});
            for (std::size_t r = 0; r < rows; ++r) {
                std::size_t col = 0;
                for (auto* p : in) {
                    auto src = p->row(r);
                    std::copy(src.begin(), src.end(), out.row(r).begin() + std::ptrdiff_t(col));
                    col += src.size();
                }
            }
            return out;
        }
        case Op::slice_cols: {
            const Tensor& a = *in[0];
            require(node.width > 0 && node.offset + node.width <= a.cols(), op, "slice out of range");
            Tensor out(Shape{a.rows(), node.width});
            for (std::size_t r = 0; r < a.rows(); ++r) {
                auto src = a.row(r).subspan(node.offset, node.width);
                std::copy(src.begin(), src.end(), out.row(r).begin());
            }
            return out;
        }
        case Op::pad_cols: {
            const Tensor& a = *in[0];
            require(node.offset + a.cols() <= node.width, op, "padding narrower than input");
            Tensor out(Shape{a.rows(), node.width});
            for (std::size_t r = 0; r < a.rows(); ++r) {
                auto src = a.row(r);
                std::copy(src.begin(), src.end(), out.row(r).begin() + std::ptrdiff_t(node.offset));
            }
            return out;
        }
        case Op::sum:
        case Op::mean: {
            const Tensor& a = *in[0];
            double total = 0.0;
            for (double v : a.values()) total += v;
            return Tensor::scalar(op == Op::sum ? total : total / double(a.size()));
        }
        case Op::sum_rows: {
            const Tensor& a = *in[0];
            Tensor out(Shape{1, a.cols()});
            as_matrix(out) = as_matrix(a).colwise().sum();
            return out;
        }
        case Op::sum_cols: {
            const Tensor& a = *in[0];
            Tensor out(Shape{a.rows(), 1});
            as_matrix(out) = as_matrix(a).rowwise().sum();
            return out;
        }
        case Op::broadcast_rows: {
            const Tensor& a = *in[0];
            require(a.rows() == 1, op, "expects a single row");
            Tensor out(Shape{node.width, a.cols()});
            as_matrix(out) = as_matrix(a).replicate(Eigen::Index(node.width), 1);
            return out;
        }
        case Op::broadcast_cols: {
            const Tensor& a = *in[0];
            require(a.cols() == 1, op, "expects a single column");
            Tensor out(Shape{a.rows(), node.width});
            as_matrix(out) = as_matrix(a).replicate(1, Eigen::Index(node.width));
            return out;
        }
        case Op::broadcast_to: {
            require(in[0]->size() == 1, op, "expects a scalar");
            return Tensor::filled(node.target_shape, in[0]->item());
        }
        case Op::softmax_cross_entropy: {
            const Tensor& z = *in[0];
            const auto& labels = *node.labels;
            require(labels.size() == z.rows(), op, "label count " + std::to_string(labels.size()) + " != batch " +
                                                       std::to_string(z.rows()));
            Tensor out(Shape{z.rows(), 1});
            for (std::size_t r = 0; r < z.rows(); ++r) {
                auto row = z.row(r);
                const int y = labels[r];
                require(y >= 0 && std::size_t(y) < row.size(), op, "label " + std::to_string(y) + " out of range");
                const double peak = *std::max_element(row.begin(), row.end());
                double total = 0.0;
                for (double v : row) total += std::exp(v - peak);
                out[r] = peak + std::log(total) - row[std::size_t(y)];
            }
            return out;
        }
        case Op::sigmoid_bce:
            return elementwise(*in[0], *node.targets, op, [](double z, double t) {
                return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
            });
        case Op::squared_error:
            return elementwise(*in[0], *node.targets, op, [](double p, double t) { return (p - t) * (p - t); });
    }
    throw GraphError("unsupported primitive");
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph_->node(id_).value; }
bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }

Var Graph::leaf(std::string name, Tensor value, bool requires_grad) {
    if (name.empty()) throw GraphError("leaf name must be non-empty");
    if (leaves_.count(name)) throw GraphError("duplicate leaf '" + name + "'");
    if (!value.all_finite()) throw NumericError("non-finite value bound to leaf '" + name + "'");
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad && !detached_;
    n.name = name;
    const auto id = NodeId(nodes_.size());
    nodes_.push_back(std::move(n));
    leaves_.emplace(std::move(name), id);
    return {this, id};
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, NodeId(nodes_.size() - 1)};
}

Var Graph::push(Node node) {
    std::vector<const Tensor*> in;
    in.reserve(node.parents.size());
    for (auto p : node.parents) {
        if (p >= nodes_.size()) throw GraphError("parent node does not exist");
        in.push_back(&nodes_[p].value);
    }
    node.value = compute_node(node, in);
    if (detached_) {
        node.op = Op::constant;
        node.parents.clear();
        node.requires_grad = false;
    } else if (node.op != Op::detach) {
        node.requires_grad = std::any_of(node.parents.begin(), node.parents.end(),
                                         [&](NodeId p) { return nodes_[p].requires_grad; });
    }
    nodes_.push_back(std::move(node));
    return {this, NodeId(nodes_.size() - 1)};
}

std::optional<Var> Graph::find_leaf(std::string_view name) {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) return std::nullopt;
    return Var(this, it->second);
}

std::vector<std::string> Graph::leaf_names() const {
    std::vector<std::string> names;
    for (const auto& [name, id] : leaves_) names.push_back(name);
    return names;
}

std::vector<Tensor> Graph::replay(const Bindings& bindings, NodeId last) const {
    if (last >= nodes_.size()) throw GraphError("output node does not exist");
    std::vector<Tensor> values(last + 1);
    std::vector<const Tensor*> in;
    for (NodeId id = 0; id <= last; ++id) {
        const Node& n = nodes_[id];
        if (n.op == Op::leaf) {
            auto it = bindings.find(n.name);
            if (it == bindings.end()) throw GraphError("unbound leaf '" + n.name + "'");
            if (it->second.shape() != n.value.shape())
                throw ShapeError("binding for '" + n.name + "' has shape " + shape_string(it->second.shape()) +
                                 ", expected " + shape_string(n.value.shape()));
            if (!it->second.all_finite()) throw NumericError("non-finite binding for leaf '" + n.name + "'");
            values[id] = it->second;
            continue;
        }
        in.clear();
        for (auto p : n.parents) in.push_back(&values[p]);
        values[id] = compute_node(n, in);
    }
    return values;
}

Tensor Graph::evaluate(Var output, const Bindings& bindings) const {
    if (&output.graph() != this) throw GraphError("output belongs to another graph");
    return std::move(replay(bindings, output.id()).back());
}

// ---------------------------------------------------------------------------
// primitives

namespace {

Node make(Op op, std::initializer_list<Var> parents) {
    Node n;
    n.op = op;
    for (const auto& p : parents) n.parents.push_back(p.id());
    return n;
}

Graph& graph_of(std::initializer_list<Var> vars) {
    Graph* g = nullptr;
    for (const auto& v : vars) {
        if (!v.valid()) throw GraphError("invalid variable");
        if (g && g != &v.graph()) throw GraphError("variables belong to different graphs");
        g = &v.graph();
    }
    return *g;
}

Var unary(Op op, Var a) { return graph_of({a}).push(make(op, {a})); }
Var binary(Op op, Var a, Var b) { return graph_of({a, b}).push(make(op, {a, b})); }

}  // namespace

Var affine(Var x, Var weight, Var bias) { return graph_of({x, weight, bias}).push(make(Op::affine, {x, weight, bias})); }
Var matmul(Var a, Var b) { return binary(Op::matmul, a, b); }
Var transpose(Var a) { return unary(Op::transpose, a); }
Var add(Var a, Var b) { return binary(Op::add, a, b); }
Var sub(Var a, Var b) { return binary(Op::sub, a, b); }
Var mul(Var a, Var b) { return binary(Op::mul, a, b); }
Var div(Var a, Var b) { return binary(Op::div, a, b); }

Var scale(Var a, double factor) {
    Node n = make(Op::scale, {a});
    n.scalar = factor;
    return graph_of({a}).push(std::move(n));
}

Var add_scalar(Var a, double value) {
    Node n = make(Op::add_scalar, {a});
    n.scalar = value;
    return graph_of({a}).push(std::move(n));
}

Var relu(Var a) { return unary(Op::relu, a); }
Var relu_grad(Var upstream, Var pre_activation) { return binary(Op::relu_grad, upstream, pre_activation); }
Var sigmoid(Var a) { return unary(Op::sigmoid, a); }
Var softmax(Var a) { return unary(Op::softmax, a); }

Var reshape(Var a, Shape shape) {
    Node n = make(Op::reshape, {a});
    n.target_shape = std::move(shape);
    return graph_of({a}).push(std::move(n));
}

Var flatten(Var a) {
    const auto& s = a.shape();
    return reshape(a, Shape{s[0], shape_size(s) / s[0]});
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Node n;
    n.op = Op::concat_cols;
    Graph& g = parts[0].graph();
    for (const auto& p : parts) {
        if (&p.graph() != &g) throw GraphError("variables belong to different graphs");
        n.parents.push_back(p.id());
    }
    return g.push(std::move(n));
}

Var slice_cols(Var a, std::size_t offset, std::size_t width) {
    Node n = make(Op::slice_cols, {a});
    n.offset = offset;
    n.width = width;
    return graph_of({a}).push(std::move(n));
}

Var pad_cols(Var a, std::size_t offset, std::size_t total_width) {
    Node n = make(Op::pad_cols, {a});
    n.offset = offset;
    n.width = total_width;
    return graph_of({a}).push(std::move(n));
}

Var sum(Var a) { return unary(Op::sum, a); }
Var mean(Var a) { return unary(Op::mean, a); }
Var sum_rows(Var a) { return unary(Op::sum_rows, a); }
Var sum_cols(Var a) { return unary(Op::sum_cols, a); }

Var broadcast_rows(Var a, std::size_t rows) {
    Node n = make(Op::broadcast_rows, {a});
    n.width = rows;
    return graph_of({a}).push(std::move(n));
}

Var broadcast_cols(Var a, std::size_t cols) {
    Node n = make(Op::broadcast_cols, {a});
    n.width = cols;
    return graph_of({a}).push(std::move(n));
}

Var broadcast_to(Var a, Shape shape) {
    Node n = make(Op::broadcast_to, {a});
    n.target_shape = std::move(shape);
    return graph_of({a}).push(std::move(n));
}

Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
    Node n = make(Op::softmax_cross_entropy, {logits});
    n.labels = std::make_shared<const std::vector<int>>(std::move(labels));
    return graph_of({logits}).push(std::move(n));
}

Var sigmoid_bce(Var logits, Tensor targets) {
    Node n = make(Op::sigmoid_bce, {logits});
    n.targets = std::make_shared<const Tensor>(std::move(targets));
    return graph_of({logits}).push(std::move(n));
}

Var squared_error(Var prediction, Tensor targets) {
    Node n = make(Op::squared_error, {prediction});
    n.targets = std::make_shared<const Tensor>(std::move(targets));
    return graph_of({prediction}).push(std::move(n));
}

Var detach(Var a) { return unary(Op::detach, a); }

// ---------------------------------------------------------------------------
// vector-Jacobian products, written in primitives

namespace {

struct ParentGrad {
    bool present = false;
    Var value;
};

std::vector<ParentGrad> vjp(Graph& g, NodeId id, Var up) {
    // Copy what is needed: pushing nodes invalidates references into the graph.
    const Node n = [&] {
        const Node& src = g.node(id);
        Node c;
        c.op = src.op;
        c.parents = src.parents;
        c.scalar = src.scalar;
        c.offset = src.offset;
        c.width = src.width;
        c.labels = src.labels;
        c.targets = src.targets;
        return c;
    }();
    std::vector<ParentGrad> out(n.parents.size());
    auto parent = [&](std::size_t i) { return Var(&g, n.parents[i]); };
    auto wants = [&](std::size_t i) { return g.node(n.parents[i]).requires_grad; };
    auto set = [&](std::size_t i, Var v) { out[i] = {true, v}; };
    const Var self(&g, id);

    switch (n.op) {
        case Op::leaf:
        case Op::constant:
        case Op::detach:
            break;
        case Op::affine: {
            Var x = parent(0), w = parent(1), b = parent(2);
            if (wants(0)) {
                Var gx = matmul(up, transpose(w));
                set(0, x.shape().size() == 2 ? gx : reshape(gx, x.shape()));
            }
            if (wants(1)) {
                Var x2 = x.shape().size() == 2 ? x : reshape(x, Shape{x.value().rows(), x.value().cols()});
                set(1, matmul(transpose(x2), up));
            }
            if (wants(2)) set(2, reshape(sum_rows(up), b.shape()));
            break;
        }
        case Op::matmul: {
            Var a = parent(0), b = parent(1);
            if (wants(0)) set(0, reshape(matmul(up, transpose(b)), a.shape()));
            if (wants(1)) {
                Var a2 = a.shape().size() == 2 ? a : reshape(a, Shape{a.value().rows(), a.value().cols()});
                set(1, reshape(matmul(transpose(a2), up), b.shape()));
            }
            break;
        }
        case Op::transpose:
            set(0, reshape(transpose(up), parent(0).shape()));
            break;
        case Op::add:
            set(0, up);
            set(1, up);
            break;
        case Op::sub:
            set(0, up);
            if (wants(1)) set(1, scale(up, -1.0));
            break;
        case Op::mul:
            if (wants(0)) set(0, mul(up, parent(1)));
            if (wants(1)) set(1, mul(up, parent(0)));
            break;
        case Op::div: {
            Var a = parent(0), b = parent(1);
            if (wants(0)) set(0, div(up, b));
            if (wants(1)) set(1, scale(div(mul(up, a), mul(b, b)), -1.0));
            break;
        }
        case Op::scale:
            set(0, scale(up, n.scalar));
            break;
        case Op::add_scalar:
        case Op::reshape:
            set(0, n.op == Op::reshape ? reshape(up, parent(0).shape()) : up);
            break;
        case Op::relu:
            set(0, relu_grad(up, parent(0)));
            break;
        case Op::relu_grad:
            // Second derivative of relu is zero almost everywhere.
            if (wants(0)) set(0, relu_grad(up, parent(1)));
            break;
        case Op::sigmoid:
            set(0, mul(up, mul(self, add_scalar(scale(self, -1.0), 1.0))));
            break;
        case Op::softmax: {
            Var prod = mul(up, self);
            set(0, mul(self, sub(up, broadcast_cols(sum_cols(prod), self.value().cols()))));
            break;
        }
        case Op::concat_cols: {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < n.parents.size(); ++i) {
                const std::size_t w = g.node(n.parents[i]).value.cols();
                if (wants(i)) set(i, reshape(slice_cols(up, offset, w), parent(i).shape()));
                offset += w;
            }
            break;
        }
        case Op::slice_cols:
            set(0, reshape(pad_cols(up, n.offset, parent(0).value().cols()), parent(0).shape()));
            break;
        case Op::pad_cols:
            set(0, reshape(slice_cols(up, n.offset, parent(0).value().cols()), parent(0).shape()));
            break;
        case Op::sum:
            set(0, broadcast_to(up, parent(0).shape()));
            break;
        case Op::mean:
            set(0, scale(broadcast_to(up, parent(0).shape()), 1.0 / double(parent(0).value().size())));
            break;
        case Op::sum_rows:
            set(0, reshape(broadcast_rows(up, parent(0).value().rows()), parent(0).shape()));
            break;
        case Op::sum_cols:
            set(0, reshape(broadcast_cols(up, parent(0).value().cols()), parent(0).shape()));
            break;
        case Op::broadcast_rows:
            set(0, reshape(sum_rows(up), parent(0).shape()));
            break;
        case Op::broadcast_cols:
            set(0, reshape(sum_cols(up), parent(0).shape()));
            break;
        case Op::broadcast_to:
            set(0, reshape(sum(up), parent(0).shape()));
            break;
        case Op::softmax_cross_entropy: {
            Var z = parent(0);
            const std::size_t rows = z.value().rows(), cols = z.value().cols();
            Tensor onehot(Shape{rows, cols});
            for (std::size_t r = 0; r < rows; ++r) onehot.at(r, std::size_t((*n.labels)[r])) = 1.0;
            Var diff = sub(softmax(z), g.constant(std::move(onehot)));
            set(0, mul(diff, broadcast_cols(up, cols)));
            break;
        }
        case Op::sigmoid_bce:
            set(0, mul(sub(sigmoid(parent(0)), g.constant(*n.targets)), up));
            break;
        case Op::squared_error:
            set(0, mul(scale(sub(parent(0), g.constant(*n.targets)), 2.0), up));
            break;
    }
    return out;
}

std::vector<Var> gradients_impl(Var output, std::span<const Var> wrt, bool detached) {
    Graph& g = output.graph();
    if (output.value().size() != 1)
        throw GraphError("backward needs a scalar output, got shape " + shape_string(output.shape()));
    for (const auto& w : wrt)
        if (!w.valid() || &w.graph() != &g || w.id() >= g.size()) throw GraphError("wrt variable not in graph");

    std::optional<Graph::DetachScope> scope;
    if (detached) scope.emplace(g);

    const NodeId out = output.id();
    std::vector<ParentGrad> grads(out + 1);
    grads[out] = {true, g.constant(Tensor::filled(output.shape(), 1.0))};
    for (NodeId id = out + 1; id-- > 0;) {
        if (!grads[id].present) continue;
        const Node& node = g.node(id);
        if (!node.requires_grad || node.parents.empty()) continue;
        auto parent_grads = vjp(g, id, grads[id].value);
        const auto parents = g.node(id).parents;
        for (std::size_t i = 0; i < parents.size(); ++i) {
            if (!parent_grads[i].present || !g.node(parents[i]).requires_grad) continue;
            auto& slot = grads[parents[i]];
            slot = slot.present ? ParentGrad{true, add(slot.value, parent_grads[i].value)} : parent_grads[i];
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        if (w.id() <= out && grads[w.id()].present)
            result.push_back(grads[w.id()].value);
        else
            result.push_back(g.constant(Tensor(w.shape())));
    }
    return result;
}

}  // namespace

std::vector<Var> gradients(Var output, std::span<const Var> wrt) {
    return gradients_impl(output, wrt, output.graph().mode() == Graph::Mode::first_order);
}

std::map<std::string, Tensor> backward(Graph& graph, Var output, const std::vector<std::string>& wrt) {
    std::vector<Var> vars;
    for (const auto& name : wrt) {
        auto v = graph.find_leaf(name);
        if (!v) throw GraphError("wrt leaf '" + name + "' not in graph");
        vars.push_back(*v);
    }
    auto grads = gradients_impl(output, vars, true);
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < wrt.size(); ++i) out.emplace(wrt[i], grads[i].value());
    return out;
}

std::vector<Tensor> second_order_backward(Var scalar_of_gradients, std::span<const Var> wrt) {
    if (scalar_of_gradients.graph().mode() != Graph::Mode::record_backward)
        throw GraphError("second-order backward needs a graph in record_backward mode");
    auto grads = gradients_impl(scalar_of_gradients, wrt, true);
    std::vector<Tensor> out;
    out.reserve(grads.size());
    for (const auto& v : grads) out.push_back(v.value());
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<bool> relu_pattern(const Graph& g, const std::vector<Tensor>& values) {
    std::vector<bool> pattern;
    for (NodeId id = 0; id < values.size(); ++id) {
        const Node& n = g.node(id);
        NodeId pre;
        if (n.op == Op::relu)
            pre = n.parents[0];
        else if (n.op == Op::relu_grad)
            pre = n.parents[1];
        else
            continue;
        for (double v : values[pre].values()) pattern.push_back(v > 0.0);
    }
    return pattern;
}

}  // namespace

FiniteDifferenceReport finite_difference_check(Graph& graph, Var output, const std::vector<std::string>& wrt,
                                               double h) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
    if (output.value().size() != 1) throw GraphError("finite-difference check needs a scalar output");
    const NodeId out = output.id();

    Bindings base;
    for (const auto& name : graph.leaf_names()) base.emplace(name, graph.find_leaf(name)->value());
    const auto analytic = backward(graph, output, wrt);
    const auto base_pattern = relu_pattern(graph, graph.replay(base, out));

    FiniteDifferenceReport report;
    for (const auto& name : wrt) {
        const Tensor& grad = analytic.at(name);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            bool kink = false;
            auto central = [&](double step) {
                Bindings plus = base, minus = base;
                plus.at(name)[i] += step;
                minus.at(name)[i] -= step;
                const auto vp = graph.replay(plus, out);
                const auto vm = graph.replay(minus, out);
                kink |= relu_pattern(graph, vp) != base_pattern || relu_pattern(graph, vm) != base_pattern;
                return (vp.back().item() - vm.back().item()) / (2.0 * step);
            };
            // Richardson step: cancels the h^2 truncation term of the central difference.
            const double coarse = central(h), fine = central(h / 2);
            if (kink) {
                ++report.excluded;
                continue;
            }
            const double numeric = (4.0 * fine - coarse) / 3.0;
            const double a = grad[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
            report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
            ++report.checked;
        }
    }
    return report;
}

}  // namespace gat
