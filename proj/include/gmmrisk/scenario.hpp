#pragma once

// Monte Carlo scenario generation: i.i.d. daily draws from a fitted mixture,
// single-asset GBM (exponential form), correlated multi-asset GBM (arithmetic
// Euler form with Cholesky-correlated shocks), volatility rescaling and
// compounding to holding-period returns.
//
// Stream layout (all derived from one root Rng):
//   simulate_gmm        step t uses root.split(t); m joint draws per step
//   simulate_gbm_*      path p uses root.split(p); N_s normals per step

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gmmrisk/error.hpp"
#include "gmmrisk/gmm.hpp"
#include "gmmrisk/random.hpp"

namespace gmmrisk {

/// m paths x T steps x N_s assets of simulated log returns, row-major in that order.
class ScenarioMatrix {
public:
    ScenarioMatrix(Eigen::Index paths, Eigen::Index steps, Eigen::Index assets, std::uint64_t seed = 0)
        : paths_(paths), steps_(steps), assets_(assets), seed_(seed) {
        if (paths < 1 || steps < 1 || assets < 1)
            detail::fail(ErrorKind::validation, "scenario matrix needs m, T, N_s >= 1");
        data_.assign(static_cast<std::size_t>(paths * steps * assets), 0.0);
    }

    Eigen::Index paths() const noexcept { return paths_; }
    Eigen::Index steps() const noexcept { return steps_; }
    Eigen::Index assets() const noexcept { return assets_; }
    std::uint64_t seed() const noexcept { return seed_; }
    bool rescaled() const noexcept { return rescaled_; }
    void set_rescaled(bool value) noexcept { rescaled_ = value; }

    const std::vector<std::string>& tickers() const noexcept { return tickers_; }
    void set_tickers(std::vector<std::string> tickers) {
        if (!tickers.empty() && static_cast<Eigen::Index>(tickers.size()) != assets_)
            detail::fail(ErrorKind::shape, "ticker count does not match scenario assets");
        tickers_ = std::move(tickers);
    }

    double& operator()(Eigen::Index p, Eigen::Index t, Eigen::Index j) {
        return data_[static_cast<std::size_t>((p * steps_ + t) * assets_ + j)];
    }
    double operator()(Eigen::Index p, Eigen::Index t, Eigen::Index j) const {
        return data_[static_cast<std::size_t>((p * steps_ + t) * assets_ + j)];
    }

    const std::vector<double>& data() const noexcept { return data_; }

    bool operator==(const ScenarioMatrix&) const = default;

private:
    Eigen::Index paths_;
    Eigen::Index steps_;
    Eigen::Index assets_;
    std::uint64_t seed_;
    bool rescaled_ = false;
    std::vector<std::string> tickers_;
    std::vector<double> data_;
};

struct GbmParams {
    double mu = 0.0;     // drift per period
    double sigma = 0.0;  // volatility per period
    double dt = 1.0;     // step length in periods

    void validate() const {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) detail::fail(ErrorKind::validation, "GBM sigma must be >= 0");
        if (!(dt > 0.0) || !std::isfinite(dt)) detail::fail(ErrorKind::validation, "GBM dt must be > 0");
        if (!std::isfinite(mu)) detail::fail(ErrorKind::validation, "GBM mu must be finite");
    }
};

/// sigma_short / sigma_long for one asset.
struct VolRatio {
    double short_vol = 1.0;
    double long_vol = 1.0;
    double ratio = 1.0;

    static VolRatio from(double short_vol, double long_vol) {
        if (!(long_vol > 0.0) || !std::isfinite(long_vol))
            detail::fail(ErrorKind::degenerate, "long-window volatility must be positive");
        if (!(short_vol >= 0.0) || !std::isfinite(short_vol))
            detail::fail(ErrorKind::degenerate, "short-window volatility must be non-negative");
        return {short_vol, long_vol, short_vol / long_vol};
    }
};

/// Price paths and raw shocks alongside the log-return scenarios.
struct GbmPaths {
    ScenarioMatrix returns;
    std::vector<double> prices;  // m x (T+1) x N_s
    std::vector<double> shocks;  // m x T x N_s, correlated standard normals

    double price(Eigen::Index p, Eigen::Index t, Eigen::Index j) const {
        return prices[static_cast<std::size_t>((p * (returns.steps() + 1) + t) * returns.assets() + j)];
    }
    double shock(Eigen::Index p, Eigen::Index t, Eigen::Index j) const {
        return shocks[static_cast<std::size_t>((p * returns.steps() + t) * returns.assets() + j)];
    }
};

/// Each step is an independent draw of m joint return vectors from the mixture.
inline ScenarioMatrix simulate_gmm(const GaussianMixtureModel& model, Eigen::Index paths, Eigen::Index horizon,
                                   const Rng& root, Allocation allocation = Allocation::stratified) {
    ScenarioMatrix out(paths, horizon, model.dim(), root.seed());
    for (Eigen::Index t = 0; t < horizon; ++t) {
        Rng stream = root.split(static_cast<std::uint64_t>(t));
        const Eigen::MatrixXd draws = sample(model, static_cast<std::size_t>(paths), stream, allocation);
        for (Eigen::Index p = 0; p < paths; ++p)
            for (Eigen::Index j = 0; j < out.assets(); ++j) out(p, t, j) = draws(p, j);
    }
    return out;
}

/// S_t = S_{t-1} exp(mu dt + sigma eps sqrt(dt)).
inline GbmPaths simulate_gbm_single(double s0, const GbmParams& params, Eigen::Index paths, Eigen::Index horizon,
                                    const Rng& root) {
    params.validate();
    if (!(s0 > 0.0)) detail::fail(ErrorKind::validation, "initial price must be positive");
    GbmPaths out{ScenarioMatrix(paths, horizon, 1, root.seed()), {}, {}};
    out.prices.resize(static_cast<std::size_t>(paths * (horizon + 1)));
    out.shocks.resize(static_cast<std::size_t>(paths * horizon));
    const double drift = params.mu * params.dt;
    const double vol = params.sigma * std::sqrt(params.dt);
    for (Eigen::Index p = 0; p < paths; ++p) {
        Rng stream = root.split(static_cast<std::uint64_t>(p));
        double s = s0;
        out.prices[static_cast<std::size_t>(p * (horizon + 1))] = s;
        for (Eigen::Index t = 0; t < horizon; ++t) {
            const double eps = stream.normal();
            const double r = drift + vol * eps;
            s *= std::exp(r);
            out.returns(p, t, 0) = r;
            out.shocks[static_cast<std::size_t>(p * horizon + t)] = eps;
            out.prices[static_cast<std::size_t>(p * (horizon + 1) + t + 1)] = s;
        }
    }
    return out;
}

/// A with A A' = rho. Positive definite input goes through LLT; singular PSD
/// input through pivoted LDLT. Anything else is rejected.
inline Eigen::MatrixXd correlation_factor(const Eigen::MatrixXd& rho) {
    const Eigen::Index n = rho.rows();
    if (rho.cols() != n || n < 1) detail::fail(ErrorKind::shape, "correlation matrix must be square");
    if ((rho - rho.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        detail::fail(ErrorKind::validation, "correlation matrix is not symmetric");
    if ((rho.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12)
        detail::fail(ErrorKind::validation, "correlation matrix needs a unit diagonal");

    Eigen::LLT<Eigen::MatrixXd> llt(rho);
    if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all())
        return llt.matrixL();

    // Judged by pivots and reconstruction; info() also flags legal zero pivots.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(rho);
    const Eigen::VectorXd d = ldlt.vectorD();
    const auto not_psd = [] {
        detail::fail(ErrorKind::factorization,
                     "correlation matrix is not positive semi-definite; repair or shrink it before simulating");
    };
    if (!d.allFinite() || (d.array() < -1e-10).any()) not_psd();
    const Eigen::MatrixXd l = ldlt.matrixL();
    const Eigen::MatrixXd a = ldlt.transpositionsP().transpose() * (l * d.cwiseMax(0.0).cwiseSqrt().asDiagonal());
    if ((a * a.transpose() - rho).cwiseAbs().maxCoeff() > 1e-10) not_psd();
    return a;
}

/// S_t = S_{t-1}(1 + mu dt) + S_{t-1} sigma xi sqrt(dt), xi = A eps.
inline GbmPaths simulate_gbm_portfolio(const Eigen::VectorXd& s0, const Eigen::VectorXd& mus,
                                       const Eigen::VectorXd& sigmas, const Eigen::MatrixXd& corr, double dt,
                                       Eigen::Index paths, Eigen::Index horizon, const Rng& root) {
    const Eigen::Index n = s0.size();
    if (mus.size() != n || sigmas.size() != n || corr.rows() != n)
        detail::fail(ErrorKind::shape, "GBM portfolio parameter dimensions disagree");
    for (Eigen::Index j = 0; j < n; ++j) {
        GbmParams{mus(j), sigmas(j), dt}.validate();
        if (!(s0(j) > 0.0)) detail::fail(ErrorKind::validation, "initial price must be positive");
    }
    const Eigen::MatrixXd a = correlation_factor(corr);

    GbmPaths out{ScenarioMatrix(paths, horizon, n, root.seed()), {}, {}};
    out.prices.resize(static_cast<std::size_t>(paths * (horizon + 1) * n));
    out.shocks.resize(static_cast<std::size_t>(paths * horizon * n));
    const Eigen::ArrayXd growth = 1.0 + mus.array() * dt;
    const Eigen::ArrayXd vol = sigmas.array() * std::sqrt(dt);
    Eigen::VectorXd eps(n);
    for (Eigen::Index p = 0; p < paths; ++p) {
        Rng stream = root.split(static_cast<std::uint64_t>(p));
        Eigen::ArrayXd s = s0.array();
        for (Eigen::Index j = 0; j < n; ++j) out.prices[static_cast<std::size_t>(p * (horizon + 1) * n + j)] = s(j);
        for (Eigen::Index t = 0; t < horizon; ++t) {
            for (Eigen::Index j = 0; j < n; ++j) eps(j) = stream.normal();
            const Eigen::ArrayXd xi = (a.triangularView<Eigen::Lower>() * eps).array();
            const Eigen::ArrayXd gross = growth + vol * xi;
            if ((gross <= 0.0).any())
                detail::fail(ErrorKind::numeric, "arithmetic GBM step produced a non-positive price");
            s *= gross;
            for (Eigen::Index j = 0; j < n; ++j) {
                out.returns(p, t, j) = std::log(gross(j));
                out.shocks[static_cast<std::size_t>((p * horizon + t) * n + j)] = xi(j);
                out.prices[static_cast<std::size_t>((p * (horizon + 1) + t + 1) * n + j)] = s(j);
            }
        }
    }
    return out;
}

/// Multiplies every return of asset j by ratios[j].ratio.
inline ScenarioMatrix rescale(const ScenarioMatrix& scenarios, std::span<const VolRatio> ratios) {
    if (static_cast<Eigen::Index>(ratios.size()) != scenarios.assets())
        detail::fail(ErrorKind::shape, "one volatility ratio per asset required");
    for (const auto& r : ratios)
        if (!(r.long_vol > 0.0)) detail::fail(ErrorKind::degenerate, "long-window volatility is zero");
    ScenarioMatrix out = scenarios;
    for (Eigen::Index p = 0; p < out.paths(); ++p)
        for (Eigen::Index t = 0; t < out.steps(); ++t)
            for (Eigen::Index j = 0; j < out.assets(); ++j) out(p, t, j) *= ratios[static_cast<std::size_t>(j)].ratio;
    out.set_rescaled(true);
    return out;
}

struct Compounded {
    Eigen::MatrixXd terminal_prices;   // m x N_s
    Eigen::MatrixXd holding_returns;   // m x N_s, sum of per-step log returns
};

inline Compounded compound(const ScenarioMatrix& scenarios, const Eigen::VectorXd& s0) {
    if (s0.size() != scenarios.assets()) detail::fail(ErrorKind::shape, "one initial price per asset required");
    Compounded out{Eigen::MatrixXd(scenarios.paths(), scenarios.assets()),
                   Eigen::MatrixXd::Zero(scenarios.paths(), scenarios.assets())};
    for (Eigen::Index p = 0; p < scenarios.paths(); ++p)
        for (Eigen::Index j = 0; j < scenarios.assets(); ++j) {
            double sum = 0.0;
            for (Eigen::Index t = 0; t < scenarios.steps(); ++t) sum += scenarios(p, t, j);
            out.holding_returns(p, j) = sum;
            out.terminal_prices(p, j) = s0(j) * std::exp(sum);
        }
    return out;
}

inline Eigen::MatrixXd holding_returns(const ScenarioMatrix& scenarios) {
    return compound(scenarios, Eigen::VectorXd::Ones(scenarios.assets())).holding_returns;
}

}  // namespace gmmrisk
