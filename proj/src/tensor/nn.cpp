#include "rimr/nn.hpp"

#include <cmath>

#include "rimr/error.hpp"

namespace rimr::tensor {

template <class T>
ParameterPtr<T> ParameterStore<T>::insert(Parameter<T> p) {
    if (index_.count(p.name)) throw Error("parameter name '" + p.name + "' registered twice");
    p.moment1.assign(p.value.numel(), T(0));
    p.moment2.assign(p.value.numel(), T(0));
    index_[p.name] = params_.size();
    params_.push_back(std::make_shared<Parameter<T>>(std::move(p)));
    return params_.back();
}

template <class T>
ParameterPtr<T> ParameterStore<T>::add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                                               rng::Engine& eng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(rng::uniform(eng, -bound, bound));
    return insert({name, Tensor<T>::from(std::move(shape), std::move(data), true), {}, {}, true});
}

template <class T>
ParameterPtr<T> ParameterStore<T>::add_constant(const std::string& name, Shape shape, T value,
                                                bool trainable) {
    return insert({name, Tensor<T>::full(std::move(shape), value, trainable), {}, {}, trainable});
}

template <class T>
ParameterPtr<T> ParameterStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
}

template <class T>
std::size_t ParameterStore<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (p->trainable) n += p->value.numel();
    return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
    for (auto& p : params_)
        if (p->trainable) p->value.zero_grad();
}

template <class T>
void ParameterStore<T>::clear_grad() {
    for (auto& p : params_) p->value.clear_grad();
}

template <class T>
void ParameterStore<T>::set_trainable(bool on) {
    for (auto& p : params_)
        if (p->trainable) p->value.set_requires_grad(on);
}

template <class T>
std::vector<NamedArray> ParameterStore<T>::export_arrays() const {
    std::vector<NamedArray> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        NamedArray a;
        a.name = p->name;
        a.shape = p->value.shape();
        a.data.assign(p->value.data().begin(), p->value.data().end());
        a.moment1.assign(p->moment1.begin(), p->moment1.end());
        a.moment2.assign(p->moment2.begin(), p->moment2.end());
        out.push_back(std::move(a));
    }
    return out;
}

template <class T>
void ParameterStore<T>::import_arrays(const std::vector<NamedArray>& arrays) {
    std::unordered_map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (auto& p : params_) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw FormatError("checkpoint is missing parameter '" + p->name + "'");
        const NamedArray& a = *it->second;
        if (a.shape != p->value.shape()) {
            throw FormatError("checkpoint parameter '" + p->name + "' has shape " + to_string(a.shape) +
                              ", network expects " + to_string(p->value.shape()));
        }
        auto& d = p->value.storage();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(a.data[i]);
        for (std::size_t i = 0; i < d.size(); ++i) {
            p->moment1[i] = a.moment1.empty() ? T(0) : static_cast<T>(a.moment1[i]);
            p->moment2[i] = a.moment2.empty() ? T(0) : static_cast<T>(a.moment2[i]);
        }
    }
}

template <class T>
FreezeGuard<T>::FreezeGuard(const ParameterStore<T>& store) {
    for (const auto& p : store.all()) {
        if (!p->trainable) continue;
        saved_.emplace_back(p, p->value);
        p->value = p->value.detach();
    }
}

template <class T>
FreezeGuard<T>::~FreezeGuard() {
    for (auto& [p, original] : saved_) p->value = std::move(original);
}

template <class T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  rng::Engine& eng)
    : weight_(store.add_uniform(name + ".weight", {in, out}, in, eng)),
      bias_(store.add_uniform(name + ".bias", {out}, in, eng)) {}

template <class T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
    return linear(x, weight_->value, bias_->value);
}

template <class T>
Conv3d<T>::Conv3d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  Dims3 kernel, Dims3 stride, Dims3 pad, rng::Engine& eng)
    : kernels_(store.add_uniform(name + ".kernels", {out, in, kernel.d, kernel.h, kernel.w},
                                 in * kernel.d * kernel.h * kernel.w, eng)),
      stride_(stride),
      pad_(pad) {}

template <class T>
Tensor<T> Conv3d<T>::operator()(const Tensor<T>& x) const {
    return conv3d(x, kernels_->value, stride_, pad_);
}

template <class T>
Conv2d<T>::Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  Dims2 kernel, Dims2 stride, Dims2 pad, rng::Engine& eng, bool bias)
    : kernels_(store.add_uniform(name + ".kernels", {out, in, kernel.h, kernel.w}, in * kernel.h * kernel.w, eng)),
      stride_(stride),
      pad_(pad) {
    if (bias) bias_ = store.add_constant(name + ".bias", {out}, T(0));
}

template <class T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
    auto y = conv2d(x, kernels_->value, stride_, pad_);
    return bias_ ? add_channel_bias(y, bias_->value) : y;
}

template <class T>
ConvTranspose2d<T>::ConvTranspose2d(ParameterStore<T>& store, const std::string& name, std::size_t in,
                                    std::size_t out, Dims2 kernel, Dims2 stride, Dims2 pad, rng::Engine& eng,
                                    bool bias)
    : kernels_(store.add_uniform(name + ".kernels", {in, out, kernel.h, kernel.w}, in * kernel.h * kernel.w, eng)),
      stride_(stride),
      pad_(pad) {
    if (bias) bias_ = store.add_constant(name + ".bias", {out}, T(0));
}

template <class T>
Tensor<T> ConvTranspose2d<T>::operator()(const Tensor<T>& x) const {
    auto y = conv_transpose2d(x, kernels_->value, stride_, pad_);
    return bias_ ? add_channel_bias(y, bias_->value) : y;
}

template <class T>
BatchNorm<T>::BatchNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels)
    : gamma_(store.add_constant(name + ".gamma", {channels}, T(1))),
      beta_(store.add_constant(name + ".beta", {channels}, T(0))),
      running_mean_(store.add_constant(name + ".running_mean", {channels}, T(0), false)),
      running_var_(store.add_constant(name + ".running_var", {channels}, T(1), false)) {}

template <class T>
Tensor<T> BatchNorm<T>::operator()(const Tensor<T>& x, Mode mode) const {
    return batch_norm(x, gamma_->value, beta_->value, running_mean_->value, running_var_->value, mode);
}

template <class T>
void adam_step(std::span<const ParameterPtr<T>> params, const AdamConfig& cfg, std::uint64_t t) {
    for (const auto& p : params) {
        if (p->trainable && !p->value.has_grad()) {
            throw Error("adam_step: parameter '" + p->name + "' has no gradient");
        }
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (const auto& p : params) {
        if (!p->trainable) continue;
        auto w = p->value.data();
        auto g = p->value.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            p->moment1[i] = b1 * p->moment1[i] + (T(1) - b1) * g[i];
            p->moment2[i] = b2 * p->moment2[i] + (T(1) - b2) * g[i] * g[i];
            const double mhat = static_cast<double>(p->moment1[i]) / c1;
            const double vhat = static_cast<double>(p->moment2[i]) / c2;
            w[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

#define RIMR_INSTANTIATE_NN(T)                                                                     \
    template class ParameterStore<T>;                                                              \
    template class FreezeGuard<T>;                                                                 \
    template class Linear<T>;                                                                      \
    template class Conv3d<T>;                                                                      \
    template class Conv2d<T>;                                                                      \
    template class ConvTranspose2d<T>;                                                             \
    template class BatchNorm<T>;                                                                   \
    template void adam_step<T>(std::span<const ParameterPtr<T>>, const AdamConfig&, std::uint64_t);

RIMR_INSTANTIATE_NN(float)
RIMR_INSTANTIATE_NN(double)

}  // namespace rimr::tensor
