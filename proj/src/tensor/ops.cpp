#include "rimr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "rimr/error.hpp"

namespace rimr::tensor {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

// outer x extent x inner decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

// Geometry of an im2col lowering. "image" is the tensor the kernel slides
// over; the column matrix has rows (c, kd, kh, kw) and one column per output
// position (od, oh, ow).
struct ConvGeom {
    std::size_t C = 1, D = 1, H = 1, W = 1;
    std::size_t kd = 1, kh = 1, kw = 1;
    std::size_t sd = 1, sh = 1, sw = 1;
    std::size_t pd = 0, ph = 0, pw = 0;
    std::size_t Do = 1, Ho = 1, Wo = 1;

    std::size_t rows() const { return C * kd * kh * kw; }
    std::size_t cols() const { return Do * Ho * Wo; }
    std::size_t image_size() const { return C * D * H * W; }
};

template <class T>
void im2col(const T* img, const ConvGeom& g, T* col) {
    const std::ptrdiff_t D = g.D, H = g.H, W = g.W;
    const std::size_t P = g.cols();
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t a = 0; a < g.kd; ++a)
            for (std::size_t b = 0; b < g.kh; ++b)
                for (std::size_t e = 0; e < g.kw; ++e) {
                    const std::size_t r = ((c * g.kd + a) * g.kh + b) * g.kw + e;
                    T* dst = col + r * P;
                    for (std::size_t od = 0; od < g.Do; ++od) {
                        const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * g.sd + a) -
                                                  static_cast<std::ptrdiff_t>(g.pd);
                        if (id < 0 || id >= D) {
                            std::fill_n(dst, g.Ho * g.Wo, T(0));
                            dst += g.Ho * g.Wo;
                            continue;
                        }
                        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.sh + b) -
                                                      static_cast<std::ptrdiff_t>(g.ph);
                            if (ih < 0 || ih >= H) {
                                std::fill_n(dst, g.Wo, T(0));
                                dst += g.Wo;
                                continue;
                            }
                            const T* src = img + ((c * D + id) * H + ih) * W;
                            for (std::size_t ow = 0; ow < g.Wo; ++ow) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.sw + e) -
                                                          static_cast<std::ptrdiff_t>(g.pw);
                                *dst++ = (iw >= 0 && iw < W) ? src[iw] : T(0);
                            }
                        }
                    }
                }
}

// Adjoint of im2col: scatters columns back, accumulating into img.
template <class T>
void col2im(const T* col, const ConvGeom& g, T* img) {
    const std::ptrdiff_t D = g.D, H = g.H, W = g.W;
    const std::size_t P = g.cols();
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t a = 0; a < g.kd; ++a)
            for (std::size_t b = 0; b < g.kh; ++b)
                for (std::size_t e = 0; e < g.kw; ++e) {
                    const std::size_t r = ((c * g.kd + a) * g.kh + b) * g.kw + e;
                    const T* src = col + r * P;
                    for (std::size_t od = 0; od < g.Do; ++od) {
                        const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * g.sd + a) -
                                                  static_cast<std::ptrdiff_t>(g.pd);
                        if (id < 0 || id >= D) {
                            src += g.Ho * g.Wo;
                            continue;
                        }
                        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.sh + b) -
                                                      static_cast<std::ptrdiff_t>(g.ph);
                            if (ih < 0 || ih >= H) {
                                src += g.Wo;
                                continue;
                            }
                            T* dst = img + ((c * D + id) * H + ih) * W;
                            for (std::size_t ow = 0; ow < g.Wo; ++ow, ++src) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.sw + e) -
                                                          static_cast<std::ptrdiff_t>(g.pw);
                                if (iw >= 0 && iw < W) dst[iw] += *src;
                            }
                        }
                    }
                }
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* op) {
    if (s == 0) throw ShapeError(std::string(op) + ": stride must be positive");
    if (in + 2 * p < k) {
        throw ShapeError(std::string(op) + ": non-positive output extent (input " + std::to_string(in) +
                         ", pad " + std::to_string(p) + ", kernel " + std::to_string(k) + ")");
    }
    return (in + 2 * p - k) / s + 1;
}

// Forward convolution over a batch of N images lowered through `g`.
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& kernels, const ConvGeom& g,
                       std::size_t N, std::size_t K, Shape out_shape, const char* op) {
    const std::size_t R = g.rows(), P = g.cols(), img = g.image_size();
    Buffer<T> out(N * K * P);
    Buffer<T> col(R * P);
    CMapR<T> wm(kernels.data().data(), K, R);
    for (std::size_t n = 0; n < N; ++n) {
        im2col(x.data().data() + n * img, g, col.data());
        MapR<T> on(out.data() + n * K * P, K, P);
        on.noalias() = wm * CMapR<T>(col.data(), R, P);
    }
    auto xi = x.impl();
    auto ki = kernels.impl();
    return Tensor<T>::make_result(
        std::move(out_shape), std::move(out), {x, kernels}, op,
        [xi, ki, g, N, K](const TensorImpl<T>& o) {
            const std::size_t R = g.rows(), P = g.cols(), img = g.image_size();
            const bool gx = xi->requires_grad, gk = ki->requires_grad;
            Buffer<T> col(R * P);
            CMapR<T> wm(ki->data.data(), K, R);
            T* dk = gk ? ki->ensure_grad().data() : nullptr;
            T* dx = gx ? xi->ensure_grad().data() : nullptr;
            for (std::size_t n = 0; n < N; ++n) {
                CMapR<T> dout(o.grad.data() + n * K * P, K, P);
                if (gk) {
                    im2col(xi->data.data() + n * img, g, col.data());
                    MapR<T>(dk, K, R).noalias() += dout * CMapR<T>(col.data(), R, P).transpose();
                }
                if (gx) {
                    MapR<T>(col.data(), R, P).noalias() = wm.transpose() * dout;
                    col2im(col.data(), g, dx + n * img);
                }
            }
        });
}

}  // namespace

// ---- elementwise / structural -------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    Buffer<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto ai = a.impl(), bi = b.impl();
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, "add",
                                  [ai, bi](const TensorImpl<T>& o) {
                                      for (auto* t : {ai.get(), bi.get()}) {
                                          if (!t->requires_grad) continue;
                                          auto& g = t->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                      }
                                  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    Buffer<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto ai = a.impl(), bi = b.impl();
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, "sub",
                                  [ai, bi](const TensorImpl<T>& o) {
                                      if (ai->requires_grad) {
                                          auto& g = ai->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                                      }
                                  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    Buffer<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto ai = a.impl(), bi = b.impl();
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, "mul",
                                  [ai, bi](const TensorImpl<T>& o) {
                                      if (ai->requires_grad) {
                                          auto& g = ai->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i)
                                              g[i] += o.grad[i] * bi->data[i];
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i)
                                              g[i] += o.grad[i] * ai->data[i];
                                      }
                                  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Buffer<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    auto ai = a.impl();
    return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "scale",
                                  [ai, factor](const TensorImpl<T>& o) {
                                      auto& g = ai->ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                                  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.data()) s += v;
    auto ai = a.impl();
    return Tensor<T>::make_result({1}, {s}, {a}, "sum", [ai](const TensorImpl<T>& o) {
        auto& g = ai->ensure_grad();
        for (auto& v : g) v += o.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    auto ai = a.impl();
    return Tensor<T>::make_result(std::move(shape), a.storage(), {a}, "reshape",
                                  [ai](const TensorImpl<T>& o) {
                                      auto& g = ai->ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape shape = parts[0].shape();
    if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        bool ok = s.size() == shape.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == shape[i];
        if (!ok) {
            throw ShapeError("concat: incompatible shapes " + to_string(shape) + " and " + to_string(s));
        }
        total += s[axis];
    }
    shape[axis] = total;
    const AxisSplit sp = split_axis(shape, axis);
    Buffer<T> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t chunk = p.dim(axis) * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(p.data().data() + o * chunk, chunk,
                        out.data() + o * total * sp.inner + off * sp.inner);
        }
        off += p.dim(axis);
    }
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    return Tensor<T>::make_result(
        std::move(shape), std::move(out), parts, "concat",
        [impls, offsets, sp, total, axis](const TensorImpl<T>& o) {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto& t = impls[k];
                if (!t->requires_grad) continue;
                auto& g = t->ensure_grad();
                const std::size_t chunk = t->shape[axis] * sp.inner;
                for (std::size_t q = 0; q < sp.outer; ++q) {
                    const T* src = o.grad.data() + q * total * sp.inner + offsets[k] * sp.inner;
                    T* dst = g.data() + q * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
        });
}

template <class T>
Tensor<T> tile(const Tensor<T>& a, std::size_t axis, std::size_t times) {
    if (axis >= a.rank() || a.dim(axis) != 1) {
        throw ShapeError("tile: axis " + std::to_string(axis) + " of " + to_string(a.shape()) +
                         " must have extent 1");
    }
    if (times == 0) throw ShapeError("tile: zero repetitions");
    Shape shape = a.shape();
    shape[axis] = times;
    const AxisSplit sp = split_axis(shape, axis);
    Buffer<T> out(numel(shape));
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t t = 0; t < times; ++t)
            std::copy_n(a.data().data() + o * sp.inner, sp.inner,
                        out.data() + (o * times + t) * sp.inner);
    auto ai = a.impl();
    return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "tile",
                                  [ai, sp, times](const TensorImpl<T>& o) {
                                      auto& g = ai->ensure_grad();
                                      for (std::size_t q = 0; q < sp.outer; ++q)
                                          for (std::size_t t = 0; t < times; ++t)
                                              for (std::size_t i = 0; i < sp.inner; ++i)
                                                  g[q * sp.inner + i] +=
                                                      o.grad[(q * times + t) * sp.inner + i];
                                  });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
    if (a.rank() == 0) throw ShapeError("gather_rows: scalar input");
    const std::size_t row = a.numel() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = rows.size();
    Buffer<T> out(rows.size() * row);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.dim(0)) throw ShapeError("gather_rows: row index out of range");
        std::copy_n(a.data().data() + rows[i] * row, row, out.data() + i * row);
    }
    auto ai = a.impl();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "gather_rows",
                                  [ai, idx, row](const TensorImpl<T>& o) {
                                      auto& g = ai->ensure_grad();
                                      for (std::size_t i = 0; i < idx.size(); ++i)
                                          for (std::size_t j = 0; j < row; ++j)
                                              g[idx[i] * row + j] += o.grad[i * row + j];
                                  });
}

// ---- dense layers -------------------------------------------------------

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.rank() != 2 || w.rank() != 2 || bias.rank() != 1 || x.dim(1) != w.dim(0) ||
        bias.dim(0) != w.dim(1)) {
        throw ShapeError("linear: shape mismatch x=" + to_string(x.shape()) + " w=" +
                         to_string(w.shape()) + " b=" + to_string(bias.shape()));
    }
    const std::size_t B = x.dim(0), I = x.dim(1), O = w.dim(1);
    Buffer<T> out(B * O);
    MapR<T> om(out.data(), B, O);
    om.noalias() = CMapR<T>(x.data().data(), B, I) * CMapR<T>(w.data().data(), I, O);
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), O);
    auto xi = x.impl(), wi = w.impl(), bi = bias.impl();
    return Tensor<T>::make_result(
        {B, O}, std::move(out), {x, w, bias}, "linear", [xi, wi, bi, B, I, O](const TensorImpl<T>& o) {
            CMapR<T> dout(o.grad.data(), B, O);
            if (xi->requires_grad) {
                MapR<T>(xi->ensure_grad().data(), B, I).noalias() +=
                    dout * CMapR<T>(wi->data.data(), I, O).transpose();
            }
            if (wi->requires_grad) {
                MapR<T>(wi->ensure_grad().data(), I, O).noalias() +=
                    CMapR<T>(xi->data.data(), B, I).transpose() * dout;
            }
            if (bi->requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bi->ensure_grad().data(), O) +=
                    dout.colwise().sum();
            }
        });
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernels, Dims3 stride, Dims3 pad) {
    const bool batched = x.rank() == 5;
    if ((x.rank() != 4 && !batched) || kernels.rank() != 5) {
        throw ShapeError("conv3d: expected x [N,C,D,H,W] or [C,D,H,W] and kernels [K,C,kd,kh,kw], got " +
                         to_string(x.shape()) + " and " + to_string(kernels.shape()));
    }
    const std::size_t o = batched ? 1 : 0;
    const std::size_t N = batched ? x.dim(0) : 1;
    ConvGeom g;
    g.C = x.dim(o), g.D = x.dim(o + 1), g.H = x.dim(o + 2), g.W = x.dim(o + 3);
    if (kernels.dim(1) != g.C) {
        throw ShapeError("conv3d: kernel channels " + std::to_string(kernels.dim(1)) +
                         " != input channels " + std::to_string(g.C));
    }
    const std::size_t K = kernels.dim(0);
    g.kd = kernels.dim(2), g.kh = kernels.dim(3), g.kw = kernels.dim(4);
    g.sd = stride.d, g.sh = stride.h, g.sw = stride.w;
    g.pd = pad.d, g.ph = pad.h, g.pw = pad.w;
    g.Do = conv_extent(g.D, g.kd, g.sd, g.pd, "conv3d");
    g.Ho = conv_extent(g.H, g.kh, g.sh, g.ph, "conv3d");
    g.Wo = conv_extent(g.W, g.kw, g.sw, g.pw, "conv3d");
    Shape out = batched ? Shape{N, K, g.Do, g.Ho, g.Wo} : Shape{K, g.Do, g.Ho, g.Wo};
    return conv_forward(x, kernels, g, N, K, std::move(out), "conv3d");
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, Dims2 stride, Dims2 pad) {
    const bool batched = x.rank() == 4;
    if ((x.rank() != 3 && !batched) || kernels.rank() != 4) {
        throw ShapeError("conv2d: expected x [N,C,H,W] or [C,H,W] and kernels [K,C,kh,kw], got " +
                         to_string(x.shape()) + " and " + to_string(kernels.shape()));
    }
    const std::size_t o = batched ? 1 : 0;
    const std::size_t N = batched ? x.dim(0) : 1;
    ConvGeom g;
    g.C = x.dim(o), g.H = x.dim(o + 1), g.W = x.dim(o + 2);
    if (kernels.dim(1) != g.C) {
        throw ShapeError("conv2d: kernel channels " + std::to_string(kernels.dim(1)) +
                         " != input channels " + std::to_string(g.C));
    }
    const std::size_t K = kernels.dim(0);
    g.kh = kernels.dim(2), g.kw = kernels.dim(3);
    g.sh = stride.h, g.sw = stride.w;
    g.ph = pad.h, g.pw = pad.w;
    g.Ho = conv_extent(g.H, g.kh, g.sh, g.ph, "conv2d");
    g.Wo = conv_extent(g.W, g.kw, g.sw, g.pw, "conv2d");
    Shape out = batched ? Shape{N, K, g.Ho, g.Wo} : Shape{K, g.Ho, g.Wo};
    return conv_forward(x, kernels, g, N, K, std::move(out), "conv2d");
}

template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernels, Dims2 stride, Dims2 pad) {
    const bool batched = x.rank() == 4;
    if ((x.rank() != 3 && !batched) || kernels.rank() != 4) {
        throw ShapeError("conv_transpose2d: expected x [N,C,H,W] or [C,H,W] and kernels [C,K,kh,kw], got " +
                         to_string(x.shape()) + " and " + to_string(kernels.shape()));
    }
    const std::size_t o = batched ? 1 : 0;
    const std::size_t N = batched ? x.dim(0) : 1;
    const std::size_t Cin = x.dim(o), H = x.dim(o + 1), W = x.dim(o + 2);
    if (kernels.dim(0) != Cin) {
        throw ShapeError("conv_transpose2d: kernel input channels " + std::to_string(kernels.dim(0)) +
                         " != input channels " + std::to_string(Cin));
    }
    if (stride.h == 0 || stride.w == 0) throw ShapeError("conv_transpose2d: stride must be positive");
    const std::size_t Cout = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::ptrdiff_t ho = static_cast<std::ptrdiff_t>((H - 1) * stride.h + kh) -
                              static_cast<std::ptrdiff_t>(2 * pad.h);
    const std::ptrdiff_t wo = static_cast<std::ptrdiff_t>((W - 1) * stride.w + kw) -
                              static_cast<std::ptrdiff_t>(2 * pad.w);
    if (ho <= 0 || wo <= 0) throw ShapeError("conv_transpose2d: non-positive output extent");

    // The output plays the role of the conv "image"; x's positions are the columns.
    ConvGeom g;
    g.C = Cout, g.H = static_cast<std::size_t>(ho), g.W = static_cast<std::size_t>(wo);
    g.kh = kh, g.kw = kw, g.sh = stride.h, g.sw = stride.w, g.ph = pad.h, g.pw = pad.w;
    g.Ho = H, g.Wo = W;
    if (conv_extent(g.H, kh, g.sh, g.ph, "conv_transpose2d") != H ||
        conv_extent(g.W, kw, g.sw, g.pw, "conv_transpose2d") != W) {
        throw ShapeError("conv_transpose2d: incompatible stride/pad for input " + to_string(x.shape()));
    }
    const std::size_t R = g.rows(), P = g.cols(), img = g.image_size();
    Buffer<T> out(N * img, T(0));
    Buffer<T> col(R * P);
    CMapR<T> km(kernels.data().data(), Cin, R);
    for (std::size_t n = 0; n < N; ++n) {
        MapR<T>(col.data(), R, P).noalias() = km.transpose() * CMapR<T>(x.data().data() + n * Cin * P, Cin, P);
        col2im(col.data(), g, out.data() + n * img);
    }
    Shape shape = batched ? Shape{N, Cout, g.H, g.W} : Shape{Cout, g.H, g.W};
    auto xi = x.impl(), ki = kernels.impl();
    return Tensor<T>::make_result(
        std::move(shape), std::move(out), {x, kernels}, "conv_transpose2d",
        [xi, ki, g, N, Cin](const TensorImpl<T>& o) {
            const std::size_t R = g.rows(), P = g.cols(), img = g.image_size();
            Buffer<T> col(R * P);
            const bool gx = xi->requires_grad, gk = ki->requires_grad;
            T* dx = gx ? xi->ensure_grad().data() : nullptr;
            T* dk = gk ? ki->ensure_grad().data() : nullptr;
            for (std::size_t n = 0; n < N; ++n) {
                im2col(o.grad.data() + n * img, g, col.data());
                CMapR<T> cm(col.data(), R, P);
                if (gx) {
                    MapR<T>(dx + n * Cin * P, Cin, P).noalias() += CMapR<T>(ki->data.data(), Cin, R) * cm;
                }
                if (gk) {
                    MapR<T>(dk, Cin, R).noalias() +=
                        CMapR<T>(xi->data.data() + n * Cin * P, Cin, P) * cm.transpose();
                }
            }
        });
}

template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_channel_bias: bias " + to_string(bias.shape()) + " does not match channels of " +
                         to_string(x.shape()));
    }
    const AxisSplit sp = split_axis(x.shape(), 1);
    Buffer<T> out(x.storage());
    for (std::size_t n = 0; n < sp.outer; ++n)
        for (std::size_t c = 0; c < sp.extent; ++c) {
            T* p = out.data() + (n * sp.extent + c) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) p[i] += bias[c];
        }
    auto xi = x.impl(), bi = bias.impl();
    return Tensor<T>::make_result(x.shape(), std::move(out), {x, bias}, "add_channel_bias",
                                  [xi, bi, sp](const TensorImpl<T>& o) {
                                      if (xi->requires_grad) {
                                          auto& g = xi->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->ensure_grad();
                                          for (std::size_t n = 0; n < sp.outer; ++n)
                                              for (std::size_t c = 0; c < sp.extent; ++c) {
                                                  const T* p = o.grad.data() + (n * sp.extent + c) * sp.inner;
                                                  T s = 0;
                                                  for (std::size_t i = 0; i < sp.inner; ++i) s += p[i];
                                                  g[c] += s;
                                              }
                                      }
                                  });
}

// ---- activations --------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return leaky_relu(x, T(0));
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    Buffer<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
    auto xi = x.impl();
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, slope == T(0) ? "relu" : "leaky_relu",
                                  [xi, slope](const TensorImpl<T>& o) {
                                      auto& g = xi->ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          g[i] += xi->data[i] > T(0) ? o.grad[i] : slope * o.grad[i];
                                  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Buffer<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        // Split by sign so exp never overflows.
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
    auto xi = x.impl();
    auto y = std::make_shared<Buffer<T>>(out);
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, "sigmoid",
                                  [xi, y](const TensorImpl<T>& o) {
                                      auto& g = xi->ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          g[i] += o.grad[i] * (*y)[i] * (T(1) - (*y)[i]);
                                  });
}

// ---- normalization ------------------------------------------------------

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode) {
    if (x.rank() < 2) throw ShapeError("batch_norm: input must have a channel axis");
    if (x.numel() == 0 || x.dim(0) == 0) throw ShapeError("batch_norm: zero-size batch");
    const std::size_t C = x.dim(1);
    for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
        if (t->numel() != C) {
            throw ShapeError("batch_norm: per-channel tensor of shape " + to_string(t->shape()) +
                             " does not match " + std::to_string(C) + " channels");
        }
    }
    const AxisSplit sp = split_axis(x.shape(), 1);
    const T count = static_cast<T>(sp.outer * sp.inner);
    const T eps = static_cast<T>(kBatchNormEps);
    const T momentum = static_cast<T>(kBatchNormMomentum);

    Buffer<T> mu(C), inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
        if (mode == Mode::Train) {
            double s = 0;
            for (std::size_t n = 0; n < sp.outer; ++n) {
                const T* p = x.data().data() + (n * C + c) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(count);
            double v = 0;
            for (std::size_t n = 0; n < sp.outer; ++n) {
                const T* p = x.data().data() + (n * C + c) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) v += (p[i] - m) * (p[i] - m);
            }
            v /= static_cast<double>(count);
            mu[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
            running_mean.data()[c] = (T(1) - momentum) * running_mean[c] + momentum * static_cast<T>(m);
            running_var.data()[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(v);
        } else {
            mu[c] = running_mean[c];
            inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }

    Buffer<T> xhat(x.numel()), out(x.numel());
    for (std::size_t n = 0; n < sp.outer; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const T h = (x[base + i] - mu[c]) * inv_std[c];
                xhat[base + i] = h;
                out[base + i] = gamma[c] * h + beta[c];
            }
        }

    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    auto cache = std::make_shared<Buffer<T>>(std::move(xhat));
    const bool train = mode == Mode::Train;
    return Tensor<T>::make_result(
        x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
        [xi, gi, bi, cache, inv_std, sp, C, count, train](const TensorImpl<T>& o) {
            const auto& xh = *cache;
            for (std::size_t c = 0; c < C; ++c) {
                T sum_dy = 0, sum_dy_xh = 0;
                for (std::size_t n = 0; n < sp.outer; ++n) {
                    const std::size_t base = (n * C + c) * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i) {
                        sum_dy += o.grad[base + i];
                        sum_dy_xh += o.grad[base + i] * xh[base + i];
                    }
                }
                if (gi->requires_grad) gi->ensure_grad()[c] += sum_dy_xh;
                if (bi->requires_grad) bi->ensure_grad()[c] += sum_dy;
                if (!xi->requires_grad) continue;
                auto& g = xi->ensure_grad();
                const T gam = gi->data[c];
                const T k = gam * inv_std[c];
                const T mean_dy = sum_dy / count, mean_dy_xh = sum_dy_xh / count;
                for (std::size_t n = 0; n < sp.outer; ++n) {
                    const std::size_t base = (n * C + c) * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i) {
                        const std::size_t j = base + i;
                        g[j] += train ? k * (o.grad[j] - mean_dy - xh[j] * mean_dy_xh) : k * o.grad[j];
                    }
                }
            }
        });
}

// ---- reductions ---------------------------------------------------------

template <class T>
Tensor<T> reduce_topk_max(const Tensor<T>& x, std::size_t axis, std::size_t k) {
    if (axis >= x.rank()) throw ShapeError("reduce_topk_max: axis out of range");
    const AxisSplit sp = split_axis(x.shape(), axis);
    if (k == 0 || k > sp.extent) {
        throw ShapeError("reduce_topk_max: k=" + std::to_string(k) + " exceeds extent " +
                         std::to_string(sp.extent));
    }
    Shape shape = x.shape();
    shape[axis] = k;
    Buffer<T> out(numel(shape));
    auto src = std::make_shared<std::vector<std::size_t>>(out.size());
    const T* xd = x.data().data();

    if (k == 1) {
        // Streaming argmax: strict comparison keeps the lowest index on ties.
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const std::size_t base = o * sp.extent * sp.inner;
            T* best = out.data() + o * sp.inner;
            std::size_t* arg = src->data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
                best[i] = xd[base + i];
                arg[i] = base + i;
            }
            for (std::size_t l = 1; l < sp.extent; ++l) {
                const T* row = xd + base + l * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    if (row[i] > best[i]) {
                        best[i] = row[i];
                        arg[i] = base + l * sp.inner + i;
                    }
                }
            }
        }
    } else {
        std::vector<std::size_t> idx(sp.extent);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.extent * sp.inner + i;
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                                  [&](std::size_t a, std::size_t b) {
                                      const T va = xd[base + a * sp.inner], vb = xd[base + b * sp.inner];
                                      return va > vb || (va == vb && a < b);
                                  });
                for (std::size_t r = 0; r < k; ++r) {
                    const std::size_t dst = (o * k + r) * sp.inner + i;
                    (*src)[dst] = base + idx[r] * sp.inner;
                    out[dst] = xd[(*src)[dst]];
                }
            }
    }
    auto xi = x.impl();
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, "reduce_topk_max",
                                  [xi, src](const TensorImpl<T>& o) {
                                      auto& g = xi->ensure_grad();
                                      for (std::size_t j = 0; j < src->size(); ++j) g[(*src)[j]] += o.grad[j];
                                  });
}

// ---- losses -------------------------------------------------------------

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mse");
    if (a.numel() == 0) throw ShapeError("mse: empty input");
    const std::size_t n = a.numel();
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    auto ai = a.impl(), bi = b.impl();
    return Tensor<T>::make_result({1}, {s / static_cast<T>(n)}, {a, b}, "mse",
                                  [ai, bi, n](const TensorImpl<T>& o) {
                                      const T k = T(2) * o.grad[0] / static_cast<T>(n);
                                      if (ai->requires_grad) {
                                          auto& g = ai->ensure_grad();
                                          for (std::size_t i = 0; i < n; ++i) g[i] += k * (ai->data[i] - bi->data[i]);
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->ensure_grad();
                                          for (std::size_t i = 0; i < n; ++i) g[i] -= k * (ai->data[i] - bi->data[i]);
                                      }
                                  });
}

template <class T>
Tensor<T> l1(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "l1");
    if (a.numel() == 0) throw ShapeError("l1: empty input");
    const std::size_t n = a.numel();
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
    auto ai = a.impl(), bi = b.impl();
    return Tensor<T>::make_result({1}, {s / static_cast<T>(n)}, {a, b}, "l1",
                                  [ai, bi, n](const TensorImpl<T>& o) {
                                      const T k = o.grad[0] / static_cast<T>(n);
                                      auto sign = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
                                      if (ai->requires_grad) {
                                          auto& g = ai->ensure_grad();
                                          for (std::size_t i = 0; i < n; ++i) g[i] += k * sign(ai->data[i] - bi->data[i]);
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->ensure_grad();
                                          for (std::size_t i = 0; i < n; ++i) g[i] -= k * sign(ai->data[i] - bi->data[i]);
                                      }
                                  });
}

#define RIMR_INSTANTIATE_OPS(T)                                                                      \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> scale(const Tensor<T>&, T);                                                   \
    template Tensor<T> sum(const Tensor<T>&);                                                        \
    template Tensor<T> mean(const Tensor<T>&);                                                       \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                           \
    template Tensor<T> tile(const Tensor<T>&, std::size_t, std::size_t);                             \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                  \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, Dims3, Dims3);                     \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, Dims2, Dims2);                     \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, Dims2, Dims2);           \
    template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> relu(const Tensor<T>&);                                                       \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                              \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, \
                                  Tensor<T>&, Mode);                                                 \
    template Tensor<T> reduce_topk_max(const Tensor<T>&, std::size_t, std::size_t);                  \
    template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> l1(const Tensor<T>&, const Tensor<T>&);

RIMR_INSTANTIATE_OPS(float)
RIMR_INSTANTIATE_OPS(double)

}  // namespace rimr::tensor
