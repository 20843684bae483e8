#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "csikit/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference gradient check. `forward` must rebuild the graph from
/// the given input tensors on every call and return a scalar; the analytic
/// pass runs under a fresh tape, the difference quotients run untaped.
template <typename Fn>
double gradcheck(const std::vector<csikit::Tensor*>& inputs, Fn&& forward,
                 double h = 1e-5, double floor = 1e-4) {
    using csikit::Tape;
    using csikit::Tensor;

    for (Tensor* t : inputs) {
        t->set_requires_grad(true);
        t->zero_grad();
    }
    {
        Tape tape;
        Tensor loss = forward();
        csikit::backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (Tensor* t : inputs) {
        analytic.emplace_back(t->grad().begin(), t->grad().end());
    }

    double max_err = 0.0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto data = inputs[ti]->mutable_data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = forward().value();
            data[i] = orig - h;
            const double fm = forward().value();
            data[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            max_err = std::max(max_err, rel_err(analytic[ti][i], fd, floor));
        }
    }
    return max_err;
}

inline csikit::Tensor random_tensor(csikit::Shape shape, csikit::Rng& rng,
                                    double lo = -2.0, double hi = 2.0) {
    return csikit::Tensor::uniform(std::move(shape), lo, hi, rng);
}

} // namespace testutil
