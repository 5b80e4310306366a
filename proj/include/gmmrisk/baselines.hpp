#pragma once

// Reference estimators: historical simulation, variance-covariance (normal)
// and a GBM Monte Carlo calibrated on the window.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gmmrisk/error.hpp"
#include "gmmrisk/random.hpp"
#include "gmmrisk/risk.hpp"
#include "gmmrisk/scenario.hpp"
#include "gmmrisk/special.hpp"
#include "gmmrisk/timeseries.hpp"

namespace gmmrisk {

inline RiskEstimate historical_var(std::span<const double> window, double alpha, std::size_t min_length = 100) {
    if (window.size() < min_length)
        detail::fail(ErrorKind::insufficient, "historical window shorter than " + std::to_string(min_length));
    return var_es(window, alpha, "hs");
}

/// var = mu + sigma z_alpha, es = mu - sigma phi(z_alpha) / alpha, with
/// population moments of the window.
inline RiskEstimate parametric_var(std::span<const double> window, double alpha) {
    check_alpha(alpha);
    if (window.size() < 2) detail::fail(ErrorKind::insufficient, "parametric VaR needs at least two returns");
    const double mu = mean(window);
    const double sigma = population_std(window);
    if (!(sigma > 0.0)) detail::fail(ErrorKind::degenerate, "parametric VaR on a zero-variance window");
    const double z = special::normal_quantile(alpha);
    RiskEstimate est;
    est.alpha = alpha;
    est.var = mu + sigma * z;
    est.es = mu - sigma * special::normal_pdf(z) / alpha;
    est.n_tail = window.size();
    est.model_tag = "param";
    return est;
}

struct GbmCalibration {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;
    Eigen::MatrixXd corr;
};

/// Per-asset mean and population std of log returns (dt = 1) and their
/// correlation. Assets with zero volatility get an identity row/column.
inline GbmCalibration calibrate_gbm(const Eigen::MatrixXd& window) {
    if (window.rows() < 2) detail::fail(ErrorKind::insufficient, "GBM calibration needs at least two rows");
    const Eigen::Index n = window.cols();
    GbmCalibration cal;
    cal.mu = window.colwise().mean().transpose();
    const Eigen::MatrixXd centered = window.rowwise() - cal.mu.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(window.rows());
    cal.sigma = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    cal.corr = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j || !(cal.sigma(i) > 0.0) || !(cal.sigma(j) > 0.0)) continue;
            cal.corr(i, j) = std::clamp(cov(i, j) / (cal.sigma(i) * cal.sigma(j)), -1.0, 1.0);
        }
    cal.corr = 0.5 * (cal.corr + cal.corr.transpose());
    return cal;
}

/// Portfolio holding-period returns from correlated GBM paths calibrated on `window`.
inline std::vector<double> gbm_mc_returns(const Eigen::MatrixXd& window, const PortfolioSpec& spec,
                                          Eigen::Index paths, std::uint64_t seed, Eigen::Index horizon = 1) {
    if (static_cast<Eigen::Index>(spec.size()) != window.cols())
        detail::fail(ErrorKind::shape, "portfolio weights do not match window assets");
    const auto cal = calibrate_gbm(window);
    const auto sims = simulate_gbm_portfolio(Eigen::VectorXd::Ones(window.cols()), cal.mu, cal.sigma, cal.corr, 1.0,
                                             paths, horizon, Rng(seed));
    return portfolio_returns(sims.returns, spec);
}

inline RiskEstimate gbm_mc_var(const Eigen::MatrixXd& window, const PortfolioSpec& spec, Eigen::Index paths,
                               double alpha, std::uint64_t seed, Eigen::Index horizon = 1) {
    return var_es(gbm_mc_returns(window, spec, paths, seed, horizon), alpha, "gbm_mc", seed);
}

}  // namespace gmmrisk
