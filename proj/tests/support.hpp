#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "leafnet/rng.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, SeededRng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) {
        v = static_cast<T>(rng.normal(0.0, scale));
    }
    return t;
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

/// Central difference of f with respect to every element of x.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f,
                                       double h = 1e-5) {
    Tensor<double> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_rel_error(const Tensor<double>& a, const Tensor<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, rel_error(a[i], b[i]));
    }
    return worst;
}

/// Scalar projection z = sum(y .* w) used to turn layer outputs into a loss.
inline double dot(const Tensor<double>& y, const Tensor<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += y[i] * w[i];
    }
    return s;
}

} // namespace leafnet::test

#include "leafnet/datasets.hpp"

namespace leafnet::test {

/// Gaussian clusters around per-class centers; items are dim x 1 x 1. The
/// centers depend only on `layout`, so separate draws share them.
template <typename T = double>
LabeledDataset<T> blobs(std::size_t n, std::size_t dim, std::size_t classes, SeededRng& rng,
                        std::uint64_t layout = 99) {
    SeededRng center_rng(layout);
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
    for (auto& c : centers) {
        for (double& v : c) {
            v = center_rng.normal(0.0, 2.0);
        }
    }
    LabeledDataset<T> d;
    d.inputs = Tensor<T>({dim, 1, 1, n});
    d.classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = rng.below(classes);
        d.labels.push_back(static_cast<std::int32_t>(label));
        for (std::size_t k = 0; k < dim; ++k) {
            d.inputs[k * n + i] = static_cast<T>(centers[label][k] + rng.normal(0.0, 0.7));
        }
    }
    return d;
}

} // namespace leafnet::test
