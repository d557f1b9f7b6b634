#include "rimr/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "rimr/error.hpp"

namespace rimr::tensor {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool on) { grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    impl->data.assign(tensor::numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
    if (tensor::numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                         std::to_string(tensor::numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data.assign(data.begin(), data.end());
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::make_result(Shape shape, Buffer<T> data,
                                 const std::vector<Tensor>& inputs, std::string op,
                                 BackwardFn backward) {
    if (tensor::numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                         std::to_string(tensor::numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    Tensor out(std::move(impl));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    auto node = std::make_shared<Node<T>>();
    node->op = std::move(op);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl_);
    node->backward = std::move(backward);
    out.impl_->node = std::move(node);
    out.impl_->requires_grad = true;
    return out;
}

template <class T>
void Tensor<T>::zero_grad() {
    impl_->grad.assign(impl_->data.size(), T(0));
}

template <class T>
void Tensor<T>::clear_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    }
    return impl_->data[0];
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
    auto impl = std::make_shared<Impl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out = detach();
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
}

template <class T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + to_string(shape()));
    }
    if (!impl_->requires_grad) {
        throw Error("backward: loss is not connected to any tensor that requires grad");
    }

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (cur->node && next < cur->node->inputs.size()) {
            Impl* child = cur->node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(cur);
        stack.pop_back();
    }

    for (Impl* t : order) {
        if (t->node) t->grad.assign(t->data.size(), T(0));
    }
    impl_->ensure_grad();
    impl_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Impl* t = *it;
        if (t->node && t->node->backward) t->node->backward(*t);
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace rimr::tensor
