#include "egsa/autograd.hpp"

#include <unordered_set>

namespace egsa {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
const BasicTensor<T>& Node<T>::grad() const {
    if (!has_grad_) {
        grad_ = BasicTensor<T>::zeros_like(value);
        has_grad_ = true;
    }
    return grad_;
}

template <typename T>
BasicTensor<T>& Node<T>::grad_buffer() {
    if (!has_grad_ || grad_.shape() != value.shape()) {
        grad_ = BasicTensor<T>::zeros_like(value);
        has_grad_ = true;
    }
    return grad_;
}

template <typename T>
Var<T> Var<T>::leaf(BasicTensor<T> value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

template <typename T>
BasicTensor<T> Var<T>::grad() const {
    if (!node_ || !node_->has_grad()) return BasicTensor<T>::zeros_like(node_->value);
    return node_->grad();
}

template <typename T>
Var<T> Var<T>::from_op(BasicTensor<T> value, std::vector<Var> inputs,
                       std::function<void(const BasicTensor<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) any = any || in.requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node_);
        node->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.valid()) throw ContractError("backward on an empty variable");
    if (loss.shape() != Shape{}) {
        throw ContractError("backward requires a scalar loss, got shape " + loss.shape().str());
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; reversed it is a topological order from the loss.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && node->has_grad()) node->backward_fn(node->grad());
    }
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace egsa
