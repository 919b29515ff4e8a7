#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gat/tensor.hpp"

namespace gat {

// Primitive set of the differentiation engine. Every primitive's vector-Jacobian
// product is itself written in these primitives, which is what makes
// backward-of-backward possible.
enum class Op : std::uint8_t {
    leaf,
    constant,
    affine,        // x[N,D] * W[D,K] + b[K]
    matmul,
    transpose,
    add,
    sub,
    mul,
    div,
    scale,         // a * c
    add_scalar,    // a + c
    relu,
    relu_grad,     // g * 1[a > 0]; zero derivative with respect to a
    sigmoid,
    softmax,       // row-wise
    reshape,
    concat_cols,
    slice_cols,
    pad_cols,
    sum,           // -> [1]
    mean,          // -> [1]
    sum_rows,      // [N,K] -> [1,K]
    sum_cols,      // [N,K] -> [N,1]
    broadcast_rows,
    broadcast_cols,
    broadcast_to,  // [1] -> shape
    softmax_cross_entropy,  // per-row loss [N,1]
    sigmoid_bce,            // elementwise [N,K]
    squared_error,          // elementwise [N,K]
    detach,
};

std::string_view op_name(Op op);

using NodeId = std::uint32_t;

struct Node {
    Op op = Op::constant;
    Tensor value;
    std::vector<NodeId> parents;
    bool requires_grad = false;
    std::string name;               // leaves only
    double scalar = 0.0;            // scale / add_scalar factor
    std::size_t offset = 0;         // slice_cols / pad_cols
    std::size_t width = 0;          // slice_cols width, pad_cols total width, broadcast count
    Shape target_shape;             // reshape / broadcast_to
    std::shared_ptr<const std::vector<int>> labels;    // softmax_cross_entropy
    std::shared_ptr<const Tensor> targets;             // sigmoid_bce / squared_error
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
   public:
    Var() = default;
    Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    NodeId id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    bool valid() const noexcept { return graph_ != nullptr; }

   private:
    Graph* graph_ = nullptr;
    NodeId id_ = 0;
};

using Bindings = std::map<std::string, Tensor, std::less<>>;

// Recorded computation: nodes are stored in creation order, which is a
// topological order, so the node list doubles as the replayable tape.
class Graph {
   public:
    enum class Mode { first_order, record_backward };

    explicit Graph(Mode mode = Mode::first_order) : mode_(mode) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(std::string name, Tensor value, bool requires_grad = true);
    Var constant(Tensor value);

    Mode mode() const noexcept { return mode_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::optional<Var> find_leaf(std::string_view name);
    std::vector<std::string> leaf_names() const;

    // Replays the tape with every named leaf taken from `bindings`.
    Tensor evaluate(Var output, const Bindings& bindings) const;
    std::vector<Tensor> replay(const Bindings& bindings, NodeId last) const;

    // Appends a node computed from its parents. Used by the primitive functions.
    Var push(Node node);

    // Backward passes in first-order mode run detached: every node they create
    // is a constant with no parents.
    class DetachScope {
       public:
        explicit DetachScope(Graph& g) : graph_(g), previous_(g.detached_) { g.detached_ = true; }
        ~DetachScope() { graph_.detached_ = previous_; }
        DetachScope(const DetachScope&) = delete;
        DetachScope& operator=(const DetachScope&) = delete;

       private:
        Graph& graph_;
        bool previous_;
    };

   private:
    Mode mode_;
    bool detached_ = false;
    std::vector<Node> nodes_;
    std::map<std::string, NodeId, std::less<>> leaves_;
};

// Forward value of a non-leaf node from its parents' values.
Tensor compute_node(const Node& node, std::span<const Tensor* const> parents);

// ---- primitives ----
Var affine(Var x, Var weight, Var bias);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var relu(Var a);
Var relu_grad(Var upstream, Var pre_activation);
Var sigmoid(Var a);
Var softmax(Var a);
Var reshape(Var a, Shape shape);
Var flatten(Var a);  // [N, ...] -> [N, prod(...)]
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t offset, std::size_t width);
Var pad_cols(Var a, std::size_t offset, std::size_t total_width);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);
Var sum_cols(Var a);
Var broadcast_rows(Var a, std::size_t rows);
Var broadcast_cols(Var a, std::size_t cols);
Var broadcast_to(Var a, Shape shape);
Var softmax_cross_entropy(Var logits, std::vector<int> labels);
Var sigmoid_bce(Var logits, Tensor targets);
Var squared_error(Var prediction, Tensor targets);
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// ---- differentiation ----

// d output / d wrt for a scalar output. Entries for inputs the output does not
// depend on are zero-valued constants. In a record_backward graph the returned
// nodes are differentiable functions of the graph's leaves.
std::vector<Var> gradients(Var output, std::span<const Var> wrt);

// Named-leaf convenience wrapper returning plain tensors.
std::map<std::string, Tensor> backward(Graph& graph, Var output, const std::vector<std::string>& wrt);

// Gradient of a scalar built from first-order gradient nodes. Requires the
// graph to be in record_backward mode.
std::vector<Tensor> second_order_backward(Var scalar_of_gradients, std::span<const Var> wrt);

struct FiniteDifferenceReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    // Components whose +-h perturbation flips a relu activation pattern.
    std::size_t excluded = 0;
};

// Central-difference audit of d output / d leaf for the named leaves, by
// replaying the tape, with one Richardson extrapolation (steps h and h/2).
// Relative error per component is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
FiniteDifferenceReport finite_difference_check(Graph& graph, Var output, const std::vector<std::string>& wrt,
                                               double h);

}  // namespace gat
