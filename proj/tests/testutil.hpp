#pragma once

// Test-only oracles: finite-difference gradient checking and chi-square
// uniformity tests. Nothing here is used by the library itself.

#include <cmath>
#include <functional>
#include <vector>

#include "tg/ops.hpp"
#include "tg/rng.hpp"
#include "tg/tensor.hpp"

namespace testutil {

using DTensor = tg::TensorT<double>;

// Central finite differences against the recorded gradient, in 64-bit.
// `f` rebuilds the graph from the given leaves and returns a scalar loss.
// Returns the worst relative error over every coordinate of every leaf.
inline double max_grad_error(const std::function<DTensor(std::vector<DTensor>&)>& f,
                             std::vector<DTensor>& leaves, double h = 1e-5) {
    for (auto& leaf : leaves) leaf.zero_grad();
    DTensor loss = f(leaves);
    tg::backward(loss);

    double worst = 0.0;
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad) continue;
        for (size_t i = 0; i < leaf.numel(); ++i) {
            const double keep = (*leaf.data)[i];
            (*leaf.data)[i] = keep + h;
            const double up = f(leaves).item();
            (*leaf.data)[i] = keep - h;
            const double down = f(leaves).item();
            (*leaf.data)[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = (*leaf.grad)[i];
            const double err = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline DTensor random_tensor(std::vector<int> shape, tg::Rng& rng, bool requires_grad = true,
                             double stddev = 1.0) {
    return DTensor::randn(std::move(shape), rng, stddev, requires_grad);
}

// Chi-square statistic for observed counts against a uniform expectation.
inline double chi_square_uniform(const std::vector<size_t>& counts) {
    size_t total = 0;
    for (size_t c : counts) total += c;
    const double expected = static_cast<double>(total) / static_cast<double>(counts.size());
    double stat = 0.0;
    for (size_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

// Wilson-Hilferty approximation of the chi-square quantile; accurate to a few
// tenths for the df used here, which is plenty for a p>0.001 gate.
inline double chi_square_quantile(int df, double z_p) {
    const double a = 2.0 / (9.0 * df);
    const double core = 1.0 - a + z_p * std::sqrt(a);
    return df * core * core * core;
}

// Passes when the uniformity hypothesis is NOT rejected at p > 0.001.
inline bool uniform_chi_square_ok(const std::vector<size_t>& counts) {
    const double stat = chi_square_uniform(counts);
    const double threshold = chi_square_quantile(static_cast<int>(counts.size()) - 1, 3.0902);
    return stat < threshold;
}

}  // namespace testutil
