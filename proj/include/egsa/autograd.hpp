#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "egsa/tensor.hpp"

namespace egsa {

/// One value in the computation graph. Gradients are allocated lazily and start at zero.
template <typename T>
struct Node {
    BasicTensor<T> value;
    std::vector<std::shared_ptr<Node>> inputs;
    /// Receives this node's accumulated gradient and adds contributions into the inputs.
    std::function<void(const BasicTensor<T>&)> backward_fn;
    bool requires_grad = false;

    const BasicTensor<T>& grad() const;
    BasicTensor<T>& grad_buffer();
    bool has_grad() const { return has_grad_; }
    void zero_grad() { has_grad_ = false; }

private:
    mutable BasicTensor<T> grad_;
    mutable bool has_grad_ = false;
};

/// Shared handle to a graph node.
template <typename T>
class Var {
public:
    Var() = default;

    /// Graph input. Leaves with requires_grad collect gradients on backward().
    static Var leaf(BasicTensor<T> value, bool requires_grad = true);
    static Var constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

    const BasicTensor<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    /// Accumulated gradient; zeros if backward never reached this node.
    BasicTensor<T> grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool valid() const { return static_cast<bool>(node_); }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

    /// Builds an op result. Records the backward closure only when gradients are
    /// enabled on this thread and at least one input requires them.
    static Var from_op(BasicTensor<T> value, std::vector<Var> inputs,
                       std::function<void(const BasicTensor<T>&)> backward_fn);

private:
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
    std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode sweep from a scalar (1x1x1x1) loss.
template <typename T>
void backward(const Var<T>& loss);

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

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;
extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);

}  // namespace egsa
