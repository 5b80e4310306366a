#pragma once

// Goodness of fit of a univariate GMM (and a normal reference) on a return
// series: per-sample log-likelihood, PDF RMSE against the histogram density
// and the one-sample KS test.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gmmrisk/backtest.hpp"
#include "gmmrisk/gmm.hpp"
#include "gmmrisk/special.hpp"
#include "gmmrisk/timeseries.hpp"

namespace gmmrisk {

struct FitQuality {
    std::string model;  // "gmm<N_c>" or "normal"
    double loglik_per_sample = 0.0;
    GofResult gof;
};

inline FitQuality mixture_quality(const GaussianMixtureModel& model, std::span<const double> series,
                                  std::string name) {
    const Eigen::Map<const Eigen::MatrixXd> data(series.data(), static_cast<Eigen::Index>(series.size()), 1);
    FitQuality q;
    q.model = std::move(name);
    q.loglik_per_sample = log_likelihood(model, data);
    q.gof = ks_test(series, [&](double x) { return mixture_cdf(model, x); });
    q.gof.rmse = pdf_rmse(
        [&](double x) { return mixture_density(model, Eigen::VectorXd::Constant(1, x)); }, series);
    return q;
}

inline FitQuality gmm_quality(std::span<const double> series, int n_components, const EmSettings& em = {}) {
    const Eigen::Map<const Eigen::MatrixXd> data(series.data(), static_cast<Eigen::Index>(series.size()), 1);
    const auto fitted = fit(data, n_components, em);
    return mixture_quality(fitted.model, series, "gmm" + std::to_string(n_components));
}

/// Normal distribution with the population mean and standard deviation.
inline FitQuality normal_quality(std::span<const double> series) {
    const double mu = mean(series);
    const double sd = population_std(series);
    if (!(sd > 0.0)) detail::fail(ErrorKind::degenerate, "normal fit on a constant series");
    return mixture_quality(univariate_mixture({1.0}, std::vector<double>{mu}, std::vector<double>{sd}), series,
                           "normal");
}

}  // namespace gmmrisk
