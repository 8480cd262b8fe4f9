#pragma once

// Dense row-major matrices with a record-as-you-run reverse-mode tape.
//
// Every tensor is two-dimensional (rows x cols); a scalar is 1x1 and a
// vector is 1xN or Nx1. Ops that see at least one input with
// requires_grad() (and grad mode enabled) attach a backward closure and
// keep their inputs alive as parents. backward() topologically sorts the
// reachable nodes once and replays the closures in reverse.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rvqtts::nn {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor full(std::size_t rows, std::size_t cols, double v, bool requires_grad = false);
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rows() const { return node_->shape.rows; }
    std::size_t cols() const { return node_->shape.cols; }
    std::size_t size() const { return node_->shape.size(); }

    std::span<const double> data() const { return node_->value; }
    // Writing through this is only valid on leaves (parameters, inputs).
    std::span<double> mutable_data() { return node_->value; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Zeros when no gradient has been accumulated.
    std::vector<double> grad() const;
    void zero_grad() { node_->grad.clear(); }

    // Fresh leaf holding a copy of the values; never requires grad.
    Tensor detach() const;
    // Fresh leaf holding a copy of the values with the given grad flag.
    Tensor clone(bool requires_grad) const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

// Thread-local switch. While disabled, ops never record backward closures.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Reverse-mode sweep from a scalar loss. Leaves accumulate across calls;
// intermediate buffers are reset at the start of each sweep.
void backward(const Tensor& loss);

// The op sequence backward() would replay, in forward (topological) order.
std::vector<const Node*> computation_record(const Tensor& loss);

} // namespace rvqtts::nn
