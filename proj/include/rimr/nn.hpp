#pragma once

// Named parameters, the layers built from them, and the Adam optimizer.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rimr/ops.hpp"
#include "rimr/rng.hpp"
#include "rimr/tensor.hpp"

namespace rimr::tensor {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    std::vector<T> moment1;
    std::vector<T> moment2;
    // Buffers (batch-norm running statistics) are stored and checkpointed like
    // parameters but never receive gradients or optimizer updates.
    bool trainable = true;
};

template <class T>
using ParameterPtr = std::shared_ptr<Parameter<T>>;

// One serialized entry of a checkpoint, always in 32-bit floats.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
    std::vector<float> moment1;
    std::vector<float> moment2;
};

template <class T>
class ParameterStore {
public:
    // Weights drawn uniformly from +-1/sqrt(fan_in).
    ParameterPtr<T> add_uniform(const std::string& name, Shape shape, std::size_t fan_in, rng::Engine& eng);
    ParameterPtr<T> add_constant(const std::string& name, Shape shape, T value, bool trainable = true);

    const std::vector<ParameterPtr<T>>& all() const { return params_; }
    ParameterPtr<T> find(const std::string& name) const;
    std::size_t scalar_count() const;

    void zero_grad();
    void clear_grad();
    // Freezing removes trainable parameters from graph construction entirely.
    void set_trainable(bool on);

    std::vector<NamedArray> export_arrays() const;
    // Every stored name must be present with a matching shape.
    void import_arrays(const std::vector<NamedArray>& arrays);

private:
    ParameterPtr<T> insert(Parameter<T> p);
    std::vector<ParameterPtr<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// While alive, layers reading the store see detached copies of the trainable
// values, so graphs built in this scope never route gradients into the store
// (even if backward runs after the guard is gone). Buffers stay shared.
template <class T>
class FreezeGuard {
public:
    explicit FreezeGuard(const ParameterStore<T>& store);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<std::pair<ParameterPtr<T>, Tensor<T>>> saved_;
};

template <class T>
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
           rng::Engine& eng);
    Tensor<T> operator()(const Tensor<T>& x) const;
    std::size_t in_features() const { return weight_->value.dim(0); }
    std::size_t out_features() const { return weight_->value.dim(1); }

private:
    ParameterPtr<T> weight_, bias_;
};

template <class T>
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
           Dims3 kernel, Dims3 stride, Dims3 pad, rng::Engine& eng);
    Tensor<T> operator()(const Tensor<T>& x) const;

private:
    ParameterPtr<T> kernels_;
    Dims3 stride_, pad_;
};

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
           Dims2 kernel, Dims2 stride, Dims2 pad, rng::Engine& eng, bool bias = false);
    Tensor<T> operator()(const Tensor<T>& x) const;

private:
    ParameterPtr<T> kernels_, bias_;
    Dims2 stride_, pad_;
};

template <class T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                    Dims2 kernel, Dims2 stride, Dims2 pad, rng::Engine& eng, bool bias = false);
    Tensor<T> operator()(const Tensor<T>& x) const;

private:
    ParameterPtr<T> kernels_, bias_;
    Dims2 stride_, pad_;
};

template <class T>
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels);
    Tensor<T> operator()(const Tensor<T>& x, Mode mode) const;

private:
    ParameterPtr<T> gamma_, beta_, running_mean_, running_var_;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update at 1-based step `t`. Gradients are left in
// place. Every trainable parameter must carry a gradient.
template <class T>
void adam_step(std::span<const ParameterPtr<T>> params, const AdamConfig& cfg, std::uint64_t t);

template <class T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    void step(const ParameterStore<T>& store) {
        ++t_;
        adam_step<T>(store.all(), cfg_, t_);
    }
    std::uint64_t steps() const { return t_; }
    void set_steps(std::uint64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
};

}  // namespace rimr::tensor
