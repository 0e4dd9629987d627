#pragma once

#include "xoftr/rng.hpp"
#include "xoftr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testsupport {

using xoftr::Tensor;

// Compare analytic gradients against central finite differences for every
// element of every parameter. loss_fn must rebuild the graph from the current
// parameter values each call and return a scalar.
inline double max_rel_grad_err(const std::vector<Tensor>& params,
                               const std::function<Tensor()>& loss_fn,
                               double h_scale = 1e-5) {
    for (auto p : params) p.zero_grad();
    Tensor loss = loss_fn();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            double orig = p.data()[i];
            double h = h_scale * std::max(1.0, std::abs(orig));
            p.data()[i] = orig + h;
            double f_plus = loss_fn().item();
            p.data()[i] = orig - h;
            double f_minus = loss_fn().item();
            p.data()[i] = orig;
            double numeric = (f_plus - f_minus) / (2.0 * h);
            double exact = analytic[pi].empty() ? 0.0 : analytic[pi][i];
            double denom = std::max({1.0, std::abs(numeric), std::abs(exact)});
            worst = std::max(worst, std::abs(numeric - exact) / denom);
        }
    }
    return worst;
}

inline Tensor random_tensor(const xoftr::Shape& s, xoftr::SeededStream& rng, double scale = 1.0,
                            bool requires_grad = true) {
    Tensor t = Tensor::zeros(s, requires_grad);
    for (auto& v : t.values()) v = rng.uniform(-scale, scale);
    return t;
}

}  // namespace testsupport
