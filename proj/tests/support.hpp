#pragma once

// Synthetic data generators for the test suites. They draw from std::
// distributions, never from the library's own samplers, so they stay
// independent of the code under test.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "gmmrisk/timeseries.hpp"

namespace testsupport {

/// i.i.d. draws from a 1-D mixture using std::discrete_distribution / normal_distribution.
inline std::vector<double> mixture_draws(const std::vector<double>& w, const std::vector<double>& mu,
                                         const std::vector<double>& sd, std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& x : out) {
        const int c = pick(rng);
        x = mu[static_cast<std::size_t>(c)] + sd[static_cast<std::size_t>(c)] * z(rng);
    }
    return out;
}

inline double mixture_cdf(const std::vector<double>& w, const std::vector<double>& mu,
                          const std::vector<double>& sd, double x) {
    double f = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) f += w[i] * 0.5 * std::erfc(-(x - mu[i]) / (sd[i] * std::sqrt(2.0)));
    return f;
}

/// Gaussian returns with common pairwise correlation `rho`.
inline Eigen::MatrixXd gaussian_panel(Eigen::Index rows, Eigen::Index assets, double sigma, double rho,
                                      unsigned seed, double mu = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd out(rows, assets);
    const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
    for (Eigen::Index t = 0; t < rows; ++t) {
        const double common = z(rng);
        for (Eigen::Index j = 0; j < assets; ++j) out(t, j) = mu + sigma * (a * common + b * z(rng));
    }
    return out;
}

inline gmmrisk::ReturnPanel panel(Eigen::MatrixXd m) { return gmmrisk::ReturnPanel::from_matrix(std::move(m)); }

}  // namespace testsupport
