#pragma once

// Dense tensors with tape-free reverse-mode differentiation. Every tensor
// produced by an op while gradient recording is on keeps shared ownership of
// its inputs and a closure that pushes its gradient back into them; backward()
// walks that DAG in reverse topological order.
//
// Ops treat a tensor as a row-major matrix: cols() is the last dimension and
// rows() is the product of the others.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icodec/real.hpp"

ICODEC_CORE_BEGIN
namespace nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until first accumulated into
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::span<Real> ensure_grad();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
    static Tensor scalar(Real value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    std::span<const Real> values() const { return node_->value; }
    std::span<Real> mutable_values() const { return node_->value; }
    Real item() const;
    Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    /// Only meaningful on leaves (parameters): freezes or unfreezes them.
    void set_requires_grad(bool value) const { node_->requires_grad = value; }
    /// Gradient accumulated so far; empty span when nothing has flowed here.
    std::span<const Real> grad() const { return node_->grad; }
    std::span<Real> mutable_grad() const { return node_->ensure_grad(); }
    void zero_grad() const;

    /// Seeds d(this)/d(this) = 1 (this must hold a single value) and
    /// accumulates gradients into every reachable leaf that requires them.
    void backward() const;

    /// Same storage, reinterpreted shape; gradients flow straight through.
    Tensor reshape(Shape shape) const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// True while ops record the graph. Recording is per thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

/// Builds an op result. The backward closure is kept only if recording is on
/// and some input needs a gradient.
Tensor make_result(Shape shape, std::vector<Real> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace nn
ICODEC_CORE_END
