#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations in ops.hpp build
// a backward graph while grad mode is on and at least one input requires a
// gradient; Tensor::backward() walks that graph in reverse topological order.
//
// Gradients accumulate into leaves (tensors that require grad and have no
// producing node). Interior gradients are reset at the start of every
// backward pass, so calling backward() twice on the same loss doubles the
// leaf gradients exactly.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace rimr::tensor {

using Shape = std::vector<std::size_t>;

// Tensor buffers start on a 64-byte boundary, so vectorized kernels split
// their work identically on every run and results are bit-reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <class T>
struct TensorImpl;

template <class T>
struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    // Reads out.grad and accumulates into the inputs that require grad.
    std::function<void(const TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;  // empty means "no gradient"
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    // Allocates a zero gradient if none exists yet and returns it.
    Buffer<T>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// Thread-local switch that disables graph construction (inference).
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
class Tensor {
public:
    using value_type = T;
    using Impl = TensorImpl<T>;
    using BackwardFn = std::function<void(const Impl& out)>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    // Builds the result of an operation. The node is attached only when grad
    // mode is on and some input requires grad.
    static Tensor make_result(Shape shape, Buffer<T> data, const std::vector<Tensor>& inputs,
                              std::string op, BackwardFn backward);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    Buffer<T>& storage() { return impl_->data; }
    const Buffer<T>& storage() const { return impl_->data; }

    bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> grad() { return impl_->grad; }
    void zero_grad();   // grad := 0, allocated
    void clear_grad();  // grad := none

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool is_leaf() const { return !impl_->node; }
    std::string op_name() const { return impl_->node ? impl_->node->op : std::string("leaf"); }

    T item() const;
    T operator[](std::size_t i) const { return impl_->data[i]; }

    // Copy of the values with no graph attached.
    Tensor detach() const;
    // Deep copy that keeps requires_grad but drops the graph.
    Tensor clone() const;

    // Reverse-mode sweep from this scalar.
    void backward() const;

    const std::shared_ptr<Impl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rimr::tensor
