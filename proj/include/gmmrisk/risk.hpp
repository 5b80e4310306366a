#pragma once

// VaR / ES from scenario or historical returns. VaR is a return quantile
// with sign preserved (losses negative); ES is the mean of returns at or
// below it, so es <= var always.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmmrisk/error.hpp"
#include "gmmrisk/scenario.hpp"

namespace gmmrisk {

class PortfolioSpec {
public:
    PortfolioSpec() = default;

    PortfolioSpec(std::vector<std::string> tickers, std::vector<double> weights)
        : tickers_(std::move(tickers)), weights_(std::move(weights)) {
        if (tickers_.size() != weights_.size() || weights_.empty())
            detail::fail(ErrorKind::shape, "portfolio needs one weight per ticker");
        double total = 0.0;
        for (double w : weights_) {
            if (!std::isfinite(w)) detail::fail(ErrorKind::validation, "portfolio weights must be finite");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) detail::fail(ErrorKind::validation, "portfolio weights must sum to 1");
    }

    static PortfolioSpec equal_weight(std::vector<std::string> tickers) {
        const double w = 1.0 / static_cast<double>(tickers.size());
        std::vector<double> weights(tickers.size(), w);
        return PortfolioSpec(std::move(tickers), std::move(weights));
    }

    const std::vector<std::string>& tickers() const noexcept { return tickers_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    Eigen::VectorXd weight_vector() const {
        return Eigen::Map<const Eigen::VectorXd>(weights_.data(), static_cast<Eigen::Index>(weights_.size()));
    }
    std::size_t size() const noexcept { return weights_.size(); }
    bool empty() const noexcept { return weights_.empty(); }

private:
    std::vector<std::string> tickers_;
    std::vector<double> weights_;
};

struct RiskEstimate {
    double alpha = 0.05;
    double var = 0.0;
    double es = 0.0;
    std::size_t n_tail = 0;
    std::string model_tag;
    std::uint64_t seed = 0;
};

/// Empirical quantile with linear interpolation at the 1-based rank
/// h = alpha (n - 1) + 1 (the "type 7" convention).
inline double quantile_sorted(std::span<const double> sorted, double alpha) {
    const std::size_t n = sorted.size();
    const double h = alpha * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 >= n) return sorted[std::min(lo, n - 1)];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) detail::fail(ErrorKind::validation, "alpha must lie in (0, 1)");
}

inline double quantile(std::span<const double> samples, double alpha) {
    check_alpha(alpha);
    if (samples.size() < 2) detail::fail(ErrorKind::insufficient, "quantile needs at least two samples");
    std::vector<double> sorted(samples.begin(), samples.end());
    for (double v : sorted)
        if (!std::isfinite(v)) detail::fail(ErrorKind::validation, "quantile input must be finite");
    std::sort(sorted.begin(), sorted.end());
    return quantile_sorted(sorted, alpha);
}

inline RiskEstimate var_es(std::span<const double> returns, double alpha, std::string model_tag = {},
                           std::uint64_t seed = 0) {
    check_alpha(alpha);
    const auto min_size = static_cast<std::size_t>(std::ceil(1.0 / alpha - 1e-9));
    if (returns.size() < std::max<std::size_t>(2, min_size))
        detail::fail(ErrorKind::insufficient, "var_es needs at least ceil(1/alpha) scenarios");
    std::vector<double> sorted(returns.begin(), returns.end());
    for (double v : sorted)
        if (!std::isfinite(v)) detail::fail(ErrorKind::validation, "var_es input must be finite");
    std::sort(sorted.begin(), sorted.end());

    RiskEstimate est;
    est.alpha = alpha;
    est.var = quantile_sorted(sorted, alpha);
    est.model_tag = std::move(model_tag);
    est.seed = seed;
    // Tail mean accumulated as gaps below VaR, which are all <= 0.
    double gap = 0.0;
    for (double v : sorted) {
        if (v > est.var) break;
        gap += v - est.var;
        ++est.n_tail;
    }
    if (est.n_tail == 0) detail::fail(ErrorKind::insufficient, "no scenario at or below VaR");
    est.es = est.var + gap / static_cast<double>(est.n_tail);
    return est;
}

/// VaR' = VaR * ratio, ES' = ES * ratio.
inline RiskEstimate adjust(const RiskEstimate& estimate, const VolRatio& ratio) {
    RiskEstimate out = estimate;
    out.var *= ratio.ratio;
    out.es *= ratio.ratio;
    out.model_tag += "+adj";
    return out;
}

/// r_p = sum_j w_j * (holding-period log return of asset j), per path.
inline std::vector<double> portfolio_returns(const ScenarioMatrix& scenarios, const PortfolioSpec& spec) {
    if (static_cast<Eigen::Index>(spec.size()) != scenarios.assets())
        detail::fail(ErrorKind::shape, "portfolio weight count does not match scenario assets");
    if (!scenarios.tickers().empty() && scenarios.tickers() != spec.tickers())
        detail::fail(ErrorKind::shape, "portfolio tickers do not match scenario tickers");
    const Eigen::MatrixXd holding = holding_returns(scenarios);
    const Eigen::VectorXd r = holding * spec.weight_vector();
    return {r.data(), r.data() + r.size()};
}

/// Holding-period returns of asset j across paths.
inline std::vector<double> asset_returns(const ScenarioMatrix& scenarios, Eigen::Index j) {
    std::vector<double> out(static_cast<std::size_t>(scenarios.paths()), 0.0);
    for (Eigen::Index p = 0; p < scenarios.paths(); ++p)
        for (Eigen::Index t = 0; t < scenarios.steps(); ++t) out[static_cast<std::size_t>(p)] += scenarios(p, t, j);
    return out;
}

}  // namespace gmmrisk
