#include "mixdpo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mixdpo/specfn.hpp"

namespace mixdpo::ad {

namespace detail {

struct NodeData {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool consumed = false;
    std::vector<Node> parents;
    std::function<void(const Tensor&, std::span<Node>)> backward_fn;

    // Unlinks uniquely owned ancestors iteratively so that dropping a deep
    // chain cannot overflow the stack.
    ~NodeData() {
        std::vector<std::shared_ptr<NodeData>> pending;
        const auto detach = [&pending](std::vector<Node>& ps) {
            for (Node& p : ps) {
                if (p.data_ && p.data_.use_count() == 1) {
                    pending.push_back(std::move(p.data_));
                }
            }
            ps.clear();
        };
        detach(parents);
        while (!pending.empty()) {
            std::shared_ptr<NodeData> n = std::move(pending.back());
            pending.pop_back();
            detach(n->parents);
        }
    }
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
}

// Builds an interior node, or a constant when nothing upstream needs grad.
Node finish(Tensor value, std::vector<Node> parents,
            std::function<void(const Tensor&, std::span<Node>)> fn) {
    bool needs = false;
    for (const Node& p : parents) {
        needs = needs || p.requires_grad();
    }
    if (!needs || !grad_enabled()) {
        return Node(std::move(value), false);
    }
    return Node::make(std::move(value), std::move(parents), std::move(fn));
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape == b.shape) {
        return Broadcast::kSame;
    }
    if (a.is_scalar()) {
        return Broadcast::kLeftScalar;
    }
    if (b.is_scalar()) {
        return Broadcast::kRightScalar;
    }
    shape_mismatch(op, a.shape, b.shape);
}

// Reduces an upstream adjoint to the shape of an operand that was broadcast.
Tensor reduce_to(const Tensor& upstream, const Shape& target) {
    if (upstream.shape == target) {
        return upstream;
    }
    double total = 0.0;
    for (double v : upstream.data) {
        total += v;
    }
    return Tensor::scalar(total);
}

template <typename Fwd>
Tensor elementwise(const Tensor& a, const Tensor& b, Broadcast mode, Fwd f) {
    const Shape& shape = mode == Broadcast::kLeftScalar ? b.shape : a.shape;
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = mode == Broadcast::kLeftScalar ? a.data[0] : a.data[i];
        const double y = mode == Broadcast::kRightScalar ? b.data[0] : b.data[i];
        out.data[i] = f(x, y);
    }
    return out;
}

template <typename Fwd, typename Deriv>
Node unary(const Node& a, Fwd f, Deriv df) {
    Tensor out = a.value();
    for (double& v : out.data) {
        v = f(v);
    }
    return finish(std::move(out), {a}, [df](const Tensor& up, std::span<Node> ps) {
        const Tensor& x = ps[0].value();
        Tensor g = Tensor::zeros(x.shape);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.data[i] = up.data[i] * df(x.data[i]);
        }
        accumulate_grad(ps[0], g);
    });
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t num_elements(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (num_elements(shape) != data.size()) {
        throw ShapeError("Tensor: shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = num_elements(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

double Tensor::item() const {
    if (data.size() != 1) {
        throw ShapeError("Tensor::item: tensor of shape " + shape_to_string(shape) +
                         " is not a single value");
    }
    return data[0];
}

Node::Node(Tensor value, bool requires_grad) : data_(std::make_shared<detail::NodeData>()) {
    data_->grad = Tensor::zeros(value.shape);
    data_->value = std::move(value);
    data_->requires_grad = requires_grad;
}

Node Node::make(Tensor value, std::vector<Node> parents,
                std::function<void(const Tensor&, std::span<Node>)> backward_fn) {
    auto data = std::make_shared<detail::NodeData>();
    data->grad = Tensor::zeros(value.shape);
    data->value = std::move(value);
    data->requires_grad = true;
    data->parents = std::move(parents);
    data->backward_fn = std::move(backward_fn);
    return Node(std::move(data));
}

const Tensor& Node::value() const { return data_->value; }
Tensor& Node::mutable_value() { return data_->value; }
const Tensor& Node::grad() const { return data_->grad; }
bool Node::requires_grad() const { return data_ && data_->requires_grad; }
bool Node::is_leaf() const { return data_->parents.empty(); }

void Node::zero_grad() {
    std::fill(data_->grad.data.begin(), data_->grad.data.end(), 0.0);
}

void accumulate_grad(Node& node, const Tensor& delta) { accumulate_grad_scaled(node, delta, 1.0); }

void accumulate_grad_scaled(Node& node, const Tensor& delta, double factor) {
    if (!node.requires_grad()) {
        return;
    }
    auto& g = node.impl()->grad;
    if (g.shape != delta.shape) {
        shape_mismatch("accumulate_grad", g.shape, delta.shape);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.data[i] += factor * delta.data[i];
    }
}

void backward(const Node& root) {
    if (!root.defined()) {
        throw std::invalid_argument("backward: undefined root");
    }
    if (!root.value().is_scalar()) {
        throw ShapeError("backward: root must be a scalar, got shape " +
                         shape_to_string(root.value().shape));
    }
    if (root.impl()->consumed) {
        throw std::logic_error("backward: graph was already differentiated");
    }
    if (!root.requires_grad()) {
        root.impl()->consumed = true;
        return;
    }

    // Iterative post-order DFS over nodes requiring gradients.
    std::vector<detail::NodeData*> order;
    std::unordered_set<detail::NodeData*> visited;
    std::vector<std::pair<detail::NodeData*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    visited.insert(root.impl().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            detail::NodeData* child = node->parents[next_child].impl().get();
            ++next_child;
            if (child->requires_grad && !child->parents.empty() && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.impl()->grad.data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::NodeData* node = *it;
        if (node->backward_fn) {
            node->backward_fn(node->grad, node->parents);
        }
        node->consumed = true;
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Node add(const Node& a, const Node& b) {
    const Broadcast mode = check_binary("add", a.value(), b.value());
    Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x + y; });
    return finish(std::move(out), {a, b}, [](const Tensor& up, std::span<Node> ps) {
        accumulate_grad(ps[0], reduce_to(up, ps[0].shape()));
        accumulate_grad(ps[1], reduce_to(up, ps[1].shape()));
    });
}

Node sub(const Node& a, const Node& b) {
    const Broadcast mode = check_binary("sub", a.value(), b.value());
    Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x - y; });
    return finish(std::move(out), {a, b}, [](const Tensor& up, std::span<Node> ps) {
        accumulate_grad(ps[0], reduce_to(up, ps[0].shape()));
        accumulate_grad_scaled(ps[1], reduce_to(up, ps[1].shape()), -1.0);
    });
}

Node mul(const Node& a, const Node& b) {
    const Broadcast mode = check_binary("mul", a.value(), b.value());
    Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x * y; });
    return finish(std::move(out), {a, b}, [mode](const Tensor& up, std::span<Node> ps) {
        const Tensor& x = ps[0].value();
        const Tensor& y = ps[1].value();
        auto times = [](double u, double v) { return u * v; };
        if (ps[0].requires_grad()) {
            const Broadcast gx_mode = mode == Broadcast::kRightScalar ? mode : Broadcast::kSame;
            accumulate_grad(ps[0], reduce_to(elementwise(up, y, gx_mode, times), x.shape));
        }
        if (ps[1].requires_grad()) {
            const Broadcast gy_mode =
                mode == Broadcast::kLeftScalar ? Broadcast::kRightScalar : Broadcast::kSame;
            accumulate_grad(ps[1], reduce_to(elementwise(up, x, gy_mode, times), y.shape));
        }
    });
}

Node scale(const Node& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.data) {
        v *= factor;
    }
    return finish(std::move(out), {a}, [factor](const Tensor& up, std::span<Node> ps) {
        accumulate_grad_scaled(ps[0], up, factor);
    });
}

Node shift(const Node& a, double offset) {
    Tensor out = a.value();
    for (double& v : out.data) {
        v += offset;
    }
    return finish(std::move(out), {a},
                  [](const Tensor& up, std::span<Node> ps) { accumulate_grad(ps[0], up); });
}

Node neg(const Node& a) { return scale(a, -1.0); }

Node exp(const Node& a) {
    Tensor out = a.value();
    for (double& v : out.data) {
        v = std::exp(v);
    }
    Tensor saved = out;
    return finish(std::move(out), {a}, [saved](const Tensor& up, std::span<Node> ps) {
        Tensor g = Tensor::zeros(saved.shape);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.data[i] = up.data[i] * saved.data[i];
        }
        accumulate_grad(ps[0], g);
    });
}

Node log(const Node& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Node tanh(const Node& a) {
    return unary(
        a, [](double x) { return std::tanh(x); },
        [](double x) {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        });
}

Node sigmoid(const Node& a) {
    return unary(
        a, [](double x) { return specfn::sigmoid(x); },
        [](double x) {
            const double s = specfn::sigmoid(x);
            return s * (1.0 - s);
        });
}

Node log_sigmoid(const Node& a) {
    return unary(
        a, [](double x) { return specfn::log_sigmoid(x); },
        [](double x) { return specfn::sigmoid(-x); });
}

Node softplus(const Node& a) {
    return unary(
        a, [](double x) { return specfn::softplus(x); },
        [](double x) { return specfn::sigmoid(x); });
}

Node matmul(const Node& a, const Node& b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) {
        shape_mismatch("matmul", x.shape, y.shape);
    }
    const std::size_t m = x.shape[0];
    const std::size_t k = x.shape[1];
    const std::size_t n = y.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.data[i * k + p];
            if (xv == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                out.data[i * n + j] += xv * y.data[p * n + j];
            }
        }
    }
    return finish(std::move(out), {a, b}, [m, k, n](const Tensor& up, std::span<Node> ps) {
        const Tensor& xa = ps[0].value();
        const Tensor& yb = ps[1].value();
        if (ps[0].requires_grad()) {
            Tensor gx = Tensor::zeros({m, k});
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += up.data[i * n + j] * yb.data[p * n + j];
                    }
                    gx.data[i * k + p] = acc;
                }
            }
            accumulate_grad(ps[0], gx);
        }
        if (ps[1].requires_grad()) {
            Tensor gy = Tensor::zeros({k, n});
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = xa.data[i * k + p];
                    if (xv == 0.0) {
                        continue;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        gy.data[p * n + j] += xv * up.data[i * n + j];
                    }
                }
            }
            accumulate_grad(ps[1], gy);
        }
    });
}

Node add_rows(const Node& matrix, const Node& row) {
    const Tensor& x = matrix.value();
    const Tensor& r = row.value();
    if (x.rank() != 2 || r.rank() != 1 || r.shape[0] != x.shape[1]) {
        shape_mismatch("add_rows", x.shape, r.shape);
    }
    const std::size_t m = x.shape[0];
    const std::size_t n = x.shape[1];
    Tensor out = x;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.data[i * n + j] += r.data[j];
        }
    }
    return finish(std::move(out), {matrix, row}, [m, n](const Tensor& up, std::span<Node> ps) {
        accumulate_grad(ps[0], up);
        if (ps[1].requires_grad()) {
            Tensor g = Tensor::zeros({n});
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g.data[j] += up.data[i * n + j];
                }
            }
            accumulate_grad(ps[1], g);
        }
    });
}

Node gather_rows(const Node& table, std::span<const std::size_t> indices) {
    const Tensor& t = table.value();
    if (t.rank() != 2) {
        throw ShapeError("gather_rows: table must be a matrix, got " + shape_to_string(t.shape));
    }
    const std::size_t rows = t.shape[0];
    const std::size_t d = t.shape[1];
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Tensor out = Tensor::zeros({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows) {
            throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) +
                                    " out of range for table " + shape_to_string(t.shape));
        }
        std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return finish(std::move(out), {table}, [idx, rows, d](const Tensor& up, std::span<Node> ps) {
        Tensor g = Tensor::zeros({rows, d});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                g.data[idx[i] * d + j] += up.data[i * d + j];
            }
        }
        accumulate_grad(ps[0], g);
    });
}

Node pick(const Node& matrix, std::span<const std::size_t> columns) {
    const Tensor& x = matrix.value();
    if (x.rank() != 2 || x.shape[0] != columns.size()) {
        shape_mismatch("pick", x.shape, Shape{columns.size()});
    }
    const std::size_t m = x.shape[0];
    const std::size_t n = x.shape[1];
    std::vector<std::size_t> cols(columns.begin(), columns.end());
    Tensor out = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
        if (cols[i] >= n) {
            throw std::out_of_range("pick: column " + std::to_string(cols[i]) + " out of range for " +
                                    shape_to_string(x.shape));
        }
        out.data[i] = x.data[i * n + cols[i]];
    }
    return finish(std::move(out), {matrix}, [cols, m, n](const Tensor& up, std::span<Node> ps) {
        Tensor g = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            g.data[i * n + cols[i]] = up.data[i];
        }
        accumulate_grad(ps[0], g);
    });
}

Node sum(const Node& a) {
    double total = 0.0;
    for (double v : a.value().data) {
        total += v;
    }
    return finish(Tensor::scalar(total), {a}, [](const Tensor& up, std::span<Node> ps) {
        Tensor g = Tensor::zeros(ps[0].shape());
        std::fill(g.data.begin(), g.data.end(), up.data[0]);
        accumulate_grad(ps[0], g);
    });
}

Node mean(const Node& a) {
    const std::size_t n = a.value().size();
    if (n == 0) {
        throw ShapeError("mean: empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Node logsumexp(const Node& a) {
    const Tensor& x = a.value();
    if (x.size() == 0) {
        throw ShapeError("logsumexp: empty tensor");
    }
    const double mx = *std::max_element(x.data.begin(), x.data.end());
    double acc = 0.0;
    for (double v : x.data) {
        acc += std::exp(v - mx);
    }
    const double value = mx + std::log(acc);
    return finish(Tensor::scalar(value), {a}, [value](const Tensor& up, std::span<Node> ps) {
        const Tensor& xv = ps[0].value();
        Tensor g = Tensor::zeros(xv.shape);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.data[i] = up.data[0] * std::exp(xv.data[i] - value);
        }
        accumulate_grad(ps[0], g);
    });
}

Node log_softmax(const Node& a, int axis) {
    const Tensor& x = a.value();
    std::size_t rows = 1;
    std::size_t cols = 0;
    if (x.rank() == 1 && axis == 0) {
        cols = x.shape[0];
    } else if (x.rank() == 2 && (axis == 0 || axis == 1)) {
        rows = x.shape[0];
        cols = x.shape[1];
    } else {
        throw ShapeError("log_softmax: unsupported axis " + std::to_string(axis) + " for shape " +
                         shape_to_string(x.shape));
    }
    // Groups run along `axis`: element (g, i) lives at offset base(g) + i * stride.
    const bool along_rows = x.rank() == 2 && axis == 0;
    const std::size_t groups = along_rows ? cols : rows;
    const std::size_t len = along_rows ? rows : cols;
    const std::size_t stride = along_rows ? cols : 1;
    auto base = [=](std::size_t g) { return along_rows ? g : g * cols; };

    Tensor out = x;
    for (std::size_t g = 0; g < groups; ++g) {
        double mx = -INFINITY;
        for (std::size_t i = 0; i < len; ++i) {
            mx = std::max(mx, x.data[base(g) + i * stride]);
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            acc += std::exp(x.data[base(g) + i * stride] - mx);
        }
        const double lse = mx + std::log(acc);
        for (std::size_t i = 0; i < len; ++i) {
            out.data[base(g) + i * stride] -= lse;
        }
    }
    Tensor saved = out;
    return finish(std::move(out), {a},
                  [saved, groups, len, stride, base](const Tensor& up, std::span<Node> ps) {
                      Tensor g = Tensor::zeros(saved.shape);
                      for (std::size_t grp = 0; grp < groups; ++grp) {
                          double up_sum = 0.0;
                          for (std::size_t i = 0; i < len; ++i) {
                              up_sum += up.data[base(grp) + i * stride];
                          }
                          for (std::size_t i = 0; i < len; ++i) {
                              const std::size_t o = base(grp) + i * stride;
                              g.data[o] = up.data[o] - std::exp(saved.data[o]) * up_sum;
                          }
                      }
                      accumulate_grad(ps[0], g);
                  });
}

Node custom_node(Tensor value, std::vector<Node> inputs, std::vector<Tensor> partials) {
    if (inputs.size() != partials.size()) {
        throw std::invalid_argument("custom_node: " + std::to_string(inputs.size()) + " inputs but " +
                                    std::to_string(partials.size()) + " partials");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape& want = value.is_scalar() ? inputs[i].shape() : value.shape;
        if (partials[i].shape != want || inputs[i].shape() != (value.is_scalar() ? want : value.shape)) {
            shape_mismatch("custom_node", inputs[i].shape(), partials[i].shape);
        }
    }
    const bool scalar_out = value.is_scalar();
    return finish(std::move(value), std::move(inputs),
                  [partials = std::move(partials), scalar_out](const Tensor& up, std::span<Node> ps) {
                      for (std::size_t i = 0; i < ps.size(); ++i) {
                          if (!ps[i].requires_grad()) {
                              continue;
                          }
                          Tensor g = partials[i];
                          for (std::size_t j = 0; j < g.size(); ++j) {
                              g.data[j] *= scalar_out ? up.data[0] : up.data[j];
                          }
                          accumulate_grad(ps[i], g);
                      }
                  });
}

}  // namespace mixdpo::ad
