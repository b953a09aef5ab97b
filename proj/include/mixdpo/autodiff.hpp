#pragma once

// Minimal eager reverse-mode automatic differentiation over dense tensors.
//
// Every op computes its forward value immediately and, when any input
// requires a gradient, records a backward closure. backward() walks the
// graph iteratively in reverse topological order, so depth is bounded only
// by memory. A graph may be differentiated once.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixdpo::ad {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape shape_in, std::vector<double> data_in);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }
    double item() const;

    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
};

std::size_t num_elements(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
struct NodeData;
}

class Node {
public:
    Node() = default;

    /// Leaf constructor. Parameters pass requires_grad = true.
    explicit Node(Tensor value, bool requires_grad = false);

    static Node constant(double v) { return Node(Tensor::scalar(v), false); }
    static Node variable(double v) { return Node(Tensor::scalar(v), true); }

    const Tensor& value() const;
    // Mutable access for optimizers updating leaf parameters in place.
    Tensor& mutable_value();
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape; }
    double item() const { return value().item(); }

    bool requires_grad() const;
    bool is_leaf() const;
    bool defined() const { return static_cast<bool>(data_); }

    void zero_grad();

    // Internal: construct an interior node.
    static Node make(Tensor value, std::vector<Node> parents,
                     std::function<void(const Tensor& upstream, std::span<Node> parents)> backward_fn);

    const std::shared_ptr<detail::NodeData>& impl() const { return data_; }

private:
    friend struct detail::NodeData;
    explicit Node(std::shared_ptr<detail::NodeData> data) : data_(std::move(data)) {}
    std::shared_ptr<detail::NodeData> data_;

    friend void backward(const Node& root);
    friend void accumulate_grad(Node& node, const Tensor& delta);
    friend void accumulate_grad_scaled(Node& node, const Tensor& delta, double factor);
};

// Adds delta (same shape) into node's adjoint if it requires a gradient.
void accumulate_grad(Node& node, const Tensor& delta);
void accumulate_grad_scaled(Node& node, const Tensor& delta, double factor);

/// Populates adjoints of every reachable node. Root must be a scalar;
/// throws std::logic_error if this graph was already differentiated.
void backward(const Node& root);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Elementwise binary ops accept equal shapes or one scalar operand.
Node add(const Node& a, const Node& b);
Node sub(const Node& a, const Node& b);
Node mul(const Node& a, const Node& b);
Node scale(const Node& a, double factor);
Node shift(const Node& a, double offset);
Node neg(const Node& a);

Node exp(const Node& a);
Node log(const Node& a);
Node tanh(const Node& a);
Node sigmoid(const Node& a);
Node log_sigmoid(const Node& a);
Node softplus(const Node& a);

// [m x k] x [k x n] -> [m x n]
Node matmul(const Node& a, const Node& b);
// Adds a length-n row vector to every row of an [m x n] matrix.
Node add_rows(const Node& matrix, const Node& row);
// table [V x d], indices -> [len(indices) x d]
Node gather_rows(const Node& table, std::span<const std::size_t> indices);
// matrix [m x n], one column index per row -> [m]
Node pick(const Node& matrix, std::span<const std::size_t> columns);

Node sum(const Node& a);
Node mean(const Node& a);
Node logsumexp(const Node& a);
// axis 0 or 1 for matrices; vectors use axis 0.
Node log_softmax(const Node& a, int axis);

/// Node whose value is supplied externally together with one partial per
/// input: d value / d input_i = partials[i] (same shape as input_i when the
/// value is a scalar, or elementwise for equal shapes).
Node custom_node(Tensor value, std::vector<Node> inputs, std::vector<Tensor> partials);

}  // namespace mixdpo::ad
