#pragma once

// Random panels shared by the test files.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/panel.hpp"
#include "panelqr/rng.hpp"

namespace fixtures {

/// y = alpha_i + x'beta + noise with continuous covariates and errors.
inline panelqr::PanelDataset random_panel(std::size_t n, std::size_t T, std::size_t p, std::uint64_t seed,
                                          double noise = 1.0) {
    panelqr::RandomStream rng(seed);
    const auto N = static_cast<Eigen::Index>(n * T);
    Eigen::VectorXd y(N);
    Eigen::MatrixXd X(N, static_cast<Eigen::Index>(p));
    std::vector<double> beta(p);
    for (double& b : beta) b = rng.uniform(-2.0, 2.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(-1.0, 1.0);
        for (std::size_t t = 0; t < T; ++t) {
            const auto k = static_cast<Eigen::Index>(i * T + t);
            double v = a + noise * rng.normal();
            for (std::size_t j = 0; j < p; ++j) {
                X(k, static_cast<Eigen::Index>(j)) = rng.normal() + 0.3 * a;
                v += beta[j] * X(k, static_cast<Eigen::Index>(j));
            }
            y[k] = v;
        }
    }
    return panelqr::PanelDataset(n, T, std::move(y), std::move(X));
}

} // namespace fixtures
