#include "icodec/nn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN
namespace nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::span<Real> detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), Real(0));
    }
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(shape_size(shape), Real(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw Error("Tensor::from: shape " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)) +
                    " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value) {
    return from({1}, {value});
}

Real Tensor::item() const {
    if (size() != 1) {
        throw Error("Tensor::item: tensor has " + std::to_string(size()) + " values");
    }
    return node_->value[0];
}

void Tensor::zero_grad() const {
    std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

void Tensor::backward() const {
    if (size() != 1) {
        throw Error("backward: loss must be a single value, got shape " + shape_string(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    node_->ensure_grad()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
}

Tensor Tensor::reshape(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw Error("reshape: " + shape_string(this->shape()) + " -> " + shape_string(shape));
    }
    return detail::make_result(std::move(shape), node_->value, {*this}, [](detail::Node& self) {
        auto g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

bool grad_enabled() {
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

Tensor detail::make_result(Shape shape, std::vector<Real> value, std::vector<Tensor> inputs,
                           std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (auto& t : inputs) node->inputs.push_back(t.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

}  // namespace nn
ICODEC_CORE_END
