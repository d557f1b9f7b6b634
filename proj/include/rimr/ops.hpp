#pragma once

// Differentiable operations over rimr::tensor::Tensor.
//
// Layout conventions: convolution tensors are channel-first, optionally with a
// leading batch axis ([N,C,D,H,W] / [N,C,H,W]; the unbatched [C,D,H,W] / [C,H,W]
// forms are accepted and return unbatched results). batch_norm and
// add_channel_bias treat axis 1 as the channel axis.

#include <cstddef>
#include <span>
#include <vector>

#include "rimr/tensor.hpp"

namespace rimr::tensor {

struct Dims3 {
    std::size_t d = 1, h = 1, w = 1;
};

struct Dims2 {
    std::size_t h = 1, w = 1;
};

enum class Mode { Train, Eval };

// ---- elementwise / structural -------------------------------------------

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);
template <class T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Repeats an axis of extent 1 `times` times.
template <class T> Tensor<T> tile(const Tensor<T>& a, std::size_t axis, std::size_t times);
// Rows along axis 0, in the order given (indices may repeat).
template <class T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);

// ---- dense layers -------------------------------------------------------

// out[b,o] = sum_i x[b,i] * w[i,o] + bias[o]
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Cross-correlation. kernels: [K,C,kd,kh,kw].
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernels, Dims3 stride, Dims3 pad);

// kernels: [K,C,kh,kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, Dims2 stride, Dims2 pad);

// Adjoint of conv2d with the same kernels: kernels [Cin,Cout,kh,kw] where Cin
// is the channel count of x. Output extent (in-1)*stride - 2*pad + kernel.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernels, Dims2 stride, Dims2 pad);

template <class T> Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);

// ---- activations --------------------------------------------------------

template <class T> Tensor<T> relu(const Tensor<T>& x);
template <class T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);

// ---- normalization ------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Train mode normalizes with the batch statistics over every axis except 1 and
// folds them into the running estimates; eval mode uses the running estimates.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode);

// ---- reductions ---------------------------------------------------------

// The k largest values along `axis`, sorted descending. Gradients route to the
// selected sources; equal values resolve to the lowest index.
template <class T> Tensor<T> reduce_topk_max(const Tensor<T>& x, std::size_t axis, std::size_t k);

// ---- losses -------------------------------------------------------------

template <class T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> l1(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace rimr::tensor
