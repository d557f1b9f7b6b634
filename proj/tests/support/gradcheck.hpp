#pragma once

// Central finite-difference oracle for the autograd tests. It only ever calls
// the forward function and reads values, so it shares no code with backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rimr/rng.hpp"
#include "rimr/tensor.hpp"

namespace rimr::testing {

using tensor::Tensor;
using TensorD = Tensor<double>;

// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline std::vector<double> numeric_gradient(const std::function<double()>& f, TensorD& x,
                                            double step = 1e-6) {
    std::vector<double> g(x.numel());
    auto d = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double orig = d[i];
        d[i] = orig + step;
        const double up = f();
        d[i] = orig - step;
        const double down = f();
        d[i] = orig;
        g[i] = (up - down) / (2 * step);
    }
    return g;
}

// Runs backward on loss() and compares every input's gradient against central
// differences. Returns the worst norm-wise relative error over the inputs.
inline double gradcheck(const std::function<TensorD()>& loss, std::vector<TensorD> inputs,
                        double step = 1e-6) {
    for (auto& x : inputs) x.clear_grad();
    loss().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& x : inputs) {
        if (x.has_grad()) {
            analytic.emplace_back(x.grad().begin(), x.grad().end());
        } else {
            analytic.emplace_back(x.numel(), 0.0);
        }
    }
    const auto value = [&] { return loss().item(); };
    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        worst = std::max(worst, relative_error(analytic[k], numeric_gradient(value, inputs[k], step)));
    }
    return worst;
}

inline TensorD random_tensor(tensor::Shape shape, rng::Engine& eng, double lo = -1, double hi = 1,
                             bool requires_grad = true) {
    std::vector<double> v(tensor::numel(shape));
    for (auto& x : v) x = rng::uniform(eng, lo, hi);
    return TensorD::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace rimr::testing
