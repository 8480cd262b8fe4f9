#include "rvqtts/numerics/tensor.hpp"

#include <unordered_set>

#include "rvqtts/errors.hpp"

namespace rvqtts::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string to_string(const Shape& s) {
    return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    return full(rows, cols, 0.0, requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = {rows, cols};
    n->value.assign(rows * cols, v);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
    if (values.size() != rows * cols) {
        throw DimensionError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + to_string(Shape{rows, cols}));
    }
    auto n = std::make_shared<Node>();
    n->shape = {rows, cols};
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full(1, 1, v, requires_grad); }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + to_string(shape()));
    return node_->value[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
    return node_->grad;
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
    return from(rows(), cols(), node_->value, requires_grad);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

// Iterative post-order DFS so deep graphs do not exhaust the stack.
std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() needs a scalar loss");
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward() on a loss that does not depend on any parameter");
    }
    Node* root = loss.node();
    auto order = topo_order(root);
    for (Node* n : order) {
        if (n->backward_fn) n->grad.clear();
    }
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

std::vector<const Node*> computation_record(const Tensor& loss) {
    auto order = topo_order(loss.node());
    return {order.begin(), order.end()};
}

} // namespace rvqtts::nn
