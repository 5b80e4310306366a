#pragma once

// Multivariate Gaussian mixture model: densities, EM calibration (k-means
// cold start or warm start from a previous fit) and stratified sampling.
//
// All densities are evaluated through the Cholesky factor of each
// covariance, never an explicit inverse, and the E-step works in log space
// with a per-row max shift so outliers in crisis windows do not underflow.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmmrisk/error.hpp"
#include "gmmrisk/random.hpp"
#include "gmmrisk/special.hpp"

namespace gmmrisk {

class GaussianMixtureModel {
public:
    GaussianMixtureModel() = default;

    GaussianMixtureModel(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                         std::vector<Eigen::MatrixXd> covariances)
        : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
        validate();
    }

    int n_components() const noexcept { return static_cast<int>(weights_.size()); }
    Eigen::Index dim() const noexcept { return means_.empty() ? 0 : means_.front().size(); }

    const std::vector<double>& weights() const noexcept { return weights_; }
    const std::vector<Eigen::VectorXd>& means() const noexcept { return means_; }
    const std::vector<Eigen::MatrixXd>& covariances() const noexcept { return covariances_; }

    /// Components relabelled by ascending first coordinate of the mean.
    GaussianMixtureModel canonicalized() const {
        std::vector<std::size_t> order(weights_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return means_[a](0) < means_[b](0); });
        return permuted(order);
    }

    GaussianMixtureModel permuted(std::span<const std::size_t> order) const {
        std::vector<double> w;
        std::vector<Eigen::VectorXd> mu;
        std::vector<Eigen::MatrixXd> cov;
        for (std::size_t i : order) {
            w.push_back(weights_.at(i));
            mu.push_back(means_.at(i));
            cov.push_back(covariances_.at(i));
        }
        return GaussianMixtureModel(std::move(w), std::move(mu), std::move(cov));
    }

private:
    void validate() const {
        if (weights_.empty()) detail::fail(ErrorKind::validation, "mixture needs at least one component");
        if (means_.size() != weights_.size() || covariances_.size() != weights_.size())
            detail::fail(ErrorKind::shape, "weights, means and covariances must have the same length");
        const Eigen::Index k = means_.front().size();
        if (k < 1) detail::fail(ErrorKind::shape, "mixture dimension must be positive");
        double total = 0.0;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            if (!(weights_[i] >= 0.0) || !std::isfinite(weights_[i]))
                detail::fail(ErrorKind::validation, "mixture weights must be finite and non-negative");
            total += weights_[i];
            if (means_[i].size() != k || covariances_[i].rows() != k || covariances_[i].cols() != k)
                detail::fail(ErrorKind::shape, "component " + std::to_string(i) + " has inconsistent dimension");
            if (!means_[i].allFinite() || !covariances_[i].allFinite())
                detail::fail(ErrorKind::validation, "non-finite mixture parameter");
            const double scale = std::max(1.0, covariances_[i].cwiseAbs().maxCoeff());
            if ((covariances_[i] - covariances_[i].transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
                detail::fail(ErrorKind::validation, "covariance " + std::to_string(i) + " is not symmetric");
        }
        if (std::abs(total - 1.0) > 1e-12) detail::fail(ErrorKind::validation, "mixture weights must sum to 1");
    }

    std::vector<double> weights_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<Eigen::MatrixXd> covariances_;
};

/// Posterior component probabilities, [samples x components].
struct Responsibilities {
    Eigen::MatrixXd r;
};

enum class InitMode { kmeans, warm_start };

inline const char* to_string(InitMode mode) { return mode == InitMode::kmeans ? "kmeans" : "warm_start"; }

struct FitReport {
    int iterations = 0;
    double final_loglik = 0.0;
    std::vector<double> loglik_trace;
    bool converged = false;
    InitMode init_mode = InitMode::kmeans;
    int reseeds = 0;
};

struct EmSettings {
    double tolerance = 1e-6;  // on the per-sample log-likelihood
    int max_iter = 200;
    int kmeans_iter = 20;
    double floor_relative = 1e-8;  // times trace(cov)/k
    double floor_absolute = 1e-10;
    double collapse_fraction = 1e-8;  // component collapsed when sum r_ij < this * N
    std::uint64_t seed = 0;
};

struct FitResult {
    GaussianMixtureModel model;
    FitReport report;
};

enum class Allocation { stratified, categorical };

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) fail(ErrorKind::factorization, "covariance is not positive definite");
    const auto diag = llt.matrixLLT().diagonal();
    if (!(diag.array() > 0.0).all() || !diag.allFinite())
        fail(ErrorKind::factorization, "covariance is not positive definite");
    return llt;
}

/// log N(x_i | mean, cov) for every row of `x`.
inline Eigen::VectorXd log_gaussian_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean,
                                         const Eigen::MatrixXd& cov) {
    const auto llt = factor(cov);
    const Eigen::Index k = mean.size();
    const double log_det_half = llt.matrixLLT().diagonal().array().log().sum();
    const double log_norm = -0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi) - log_det_half;
    Eigen::MatrixXd centered = (x.rowwise() - mean.transpose()).transpose();
    llt.matrixL().solveInPlace(centered);
    return (log_norm - 0.5 * centered.colwise().squaredNorm().array()).matrix().transpose();
}

/// [N x N_c] matrix of log(w_j) + log N(x_i | mu_j, Sigma_j).
inline Eigen::MatrixXd log_weighted_densities(const GaussianMixtureModel& model, const Eigen::MatrixXd& x) {
    if (x.cols() != model.dim()) fail(ErrorKind::shape, "data dimension does not match the mixture");
    Eigen::MatrixXd out(x.rows(), model.n_components());
    for (int j = 0; j < model.n_components(); ++j) {
        const double lw = std::log(model.weights()[j]);
        out.col(j) = log_gaussian_rows(x, model.means()[j], model.covariances()[j]).array() + lw;
    }
    return out;
}

struct LogSumExpRows {
    Eigen::VectorXd lse;
    Eigen::Index first_bad = -1;
};

inline LogSumExpRows log_sum_exp_rows(const Eigen::MatrixXd& logw) {
    LogSumExpRows out{Eigen::VectorXd(logw.rows()), -1};
    for (Eigen::Index i = 0; i < logw.rows(); ++i) {
        const double shift = logw.row(i).maxCoeff();
        if (!std::isfinite(shift)) {
            out.lse(i) = -std::numeric_limits<double>::infinity();
            if (out.first_bad < 0) out.first_bad = i;
            continue;
        }
        double s = 0.0;
        for (Eigen::Index j = 0; j < logw.cols(); ++j) s += std::exp(logw(i, j) - shift);
        out.lse(i) = shift + std::log(s);
    }
    return out;
}

inline double covariance_floor(const Eigen::MatrixXd& cov, const EmSettings& settings) {
    const double k = static_cast<double>(cov.rows());
    return std::max(settings.floor_relative * cov.trace() / k, settings.floor_absolute);
}

inline Eigen::MatrixXd floored(Eigen::MatrixXd cov, const EmSettings& settings) {
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += covariance_floor(cov, settings);
    return cov;
}

inline Eigen::MatrixXd population_covariance(const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mu;
    return (c.transpose() * c) / static_cast<double>(x.rows());
}

struct EStep {
    Responsibilities resp;
    double mean_loglik;
};

inline EStep e_step_with_loglik(const GaussianMixtureModel& model, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd logw = log_weighted_densities(model, x);
    const auto lse = log_sum_exp_rows(logw);
    if (lse.first_bad >= 0)
        fail(ErrorKind::numeric, "mixture density underflows to zero at sample " + std::to_string(lse.first_bad));
    EStep out{{(logw.colwise() - lse.lse).array().exp().matrix()}, lse.lse.mean()};
    return out;
}

}  // namespace detail

/// Multivariate normal density via a Cholesky factorization.
inline double component_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    if (x.size() != mean.size() || cov.rows() != mean.size() || cov.cols() != mean.size())
        detail::fail(ErrorKind::shape, "component_density dimension mismatch");
    return std::exp(detail::log_gaussian_rows(x.transpose(), mean, cov)(0));
}

inline double mixture_density(const GaussianMixtureModel& model, const Eigen::VectorXd& x) {
    if (x.size() != model.dim()) detail::fail(ErrorKind::shape, "mixture_density dimension mismatch");
    double total = 0.0;
    for (int j = 0; j < model.n_components(); ++j)
        total += model.weights()[j] * component_density(x, model.means()[j], model.covariances()[j]);
    return total;
}

/// Per-sample average log-likelihood (1/N) sum_i ln p(x_i).
inline double log_likelihood(const GaussianMixtureModel& model, const Eigen::MatrixXd& data) {
    if (data.rows() == 0) detail::fail(ErrorKind::insufficient, "log_likelihood of empty data");
    const auto lse = detail::log_sum_exp_rows(detail::log_weighted_densities(model, data));
    if (lse.first_bad >= 0)
        detail::fail(ErrorKind::numeric,
                     "mixture density underflows to zero at sample " + std::to_string(lse.first_bad));
    return lse.lse.mean();
}

inline Responsibilities e_step(const GaussianMixtureModel& model, const Eigen::MatrixXd& data) {
    return detail::e_step_with_loglik(model, data).resp;
}

/// Weighted moment updates. A component whose total responsibility falls
/// below collapse_fraction * N is re-seeded at the worst-explained sample
/// with weight 1/N and the global covariance; `reseeds` counts them.
inline GaussianMixtureModel m_step(const Eigen::MatrixXd& data, const Responsibilities& resp,
                                   const EmSettings& settings = {}, int* reseeds = nullptr) {
    const Eigen::Index n = data.rows();
    const Eigen::Index nc = resp.r.cols();
    if (resp.r.rows() != n) detail::fail(ErrorKind::shape, "responsibilities and data row counts differ");
    if (n == 0 || nc == 0) detail::fail(ErrorKind::insufficient, "m_step on empty input");

    const Eigen::VectorXd nk = resp.r.colwise().sum().transpose();
    const double threshold = settings.collapse_fraction * static_cast<double>(n);

    std::vector<double> weights(static_cast<std::size_t>(nc));
    std::vector<Eigen::VectorXd> means(static_cast<std::size_t>(nc));
    std::vector<Eigen::MatrixXd> covs(static_cast<std::size_t>(nc));
    std::vector<Eigen::Index> collapsed;
    for (Eigen::Index j = 0; j < nc; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (!(nk(j) >= threshold) || nk(j) <= 0.0) {
            collapsed.push_back(j);
            continue;
        }
        means[ju] = (data.transpose() * resp.r.col(j)) / nk(j);
        const Eigen::MatrixXd centered = data.rowwise() - means[ju].transpose();
        covs[ju] = detail::floored(
            (centered.transpose() * (centered.array().colwise() * resp.r.col(j).array()).matrix()) / nk(j),
            settings);
        weights[ju] = nk(j);
    }

    if (!collapsed.empty()) {
        if (static_cast<Eigen::Index>(collapsed.size()) == nc)
            detail::fail(ErrorKind::numeric, "every mixture component collapsed");
        const Eigen::MatrixXd global = detail::floored(detail::population_covariance(data), settings);
        // Density of each sample under the surviving components.
        Eigen::MatrixXd logw(n, nc - static_cast<Eigen::Index>(collapsed.size()));
        Eigen::Index col = 0;
        for (Eigen::Index j = 0; j < nc; ++j) {
            if (std::find(collapsed.begin(), collapsed.end(), j) != collapsed.end()) continue;
            const auto ju = static_cast<std::size_t>(j);
            logw.col(col++) = detail::log_gaussian_rows(data, means[ju], covs[ju]).array() + std::log(weights[ju]);
        }
        Eigen::VectorXd score = detail::log_sum_exp_rows(logw).lse;
        for (Eigen::Index j : collapsed) {
            Eigen::Index worst = 0;
            score.minCoeff(&worst);
            const auto ju = static_cast<std::size_t>(j);
            means[ju] = data.row(worst).transpose();
            covs[ju] = global;
            weights[ju] = 1.0;  // 1/N after normalization by N below
            score(worst) = std::numeric_limits<double>::infinity();
        }
        if (reseeds) *reseeds += static_cast<int>(collapsed.size());
    }

    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= total;
    return GaussianMixtureModel(std::move(weights), std::move(means), std::move(covs));
}

/// k-means++ seeding followed by Lloyd iterations; covariances are the
/// per-cluster population covariances (floored), weights the cluster fractions.
inline GaussianMixtureModel kmeans_init(const Eigen::MatrixXd& data, int n_components, const EmSettings& settings) {
    const Eigen::Index n = data.rows();
    if (n < n_components) detail::fail(ErrorKind::insufficient, "fewer samples than mixture components");
    Rng rng(settings.seed);

    std::vector<Eigen::RowVectorXd> centers;
    centers.push_back(data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))));
    Eigen::VectorXd d2 = (data.rowwise() - centers.back()).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < n_components) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (!(total > 0.0)) {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        } else {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= target && d2(i) > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centers.push_back(data.row(pick));
        d2 = d2.cwiseMin((data.rowwise() - centers.back()).rowwise().squaredNorm());
    }

    std::vector<int> label(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < settings.kmeans_iter; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < n_components; ++c) {
                const double d = (data.row(i) - centers[static_cast<std::size_t>(c)]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (label[static_cast<std::size_t>(i)] != best) {
                label[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;
        std::vector<Eigen::RowVectorXd> sums(static_cast<std::size_t>(n_components),
                                             Eigen::RowVectorXd::Zero(data.cols()));
        std::vector<int> counts(static_cast<std::size_t>(n_components), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(label[static_cast<std::size_t>(i)]);
            sums[c] += data.row(i);
            ++counts[c];
        }
        for (std::size_t c = 0; c < centers.size(); ++c)
            if (counts[c] > 0) centers[c] = sums[c] / counts[c];
    }

    const Eigen::MatrixXd global = detail::floored(detail::population_covariance(data), settings);
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    for (int c = 0; c < n_components; ++c) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index i = 0; i < n; ++i)
            if (label[static_cast<std::size_t>(i)] == c) members.push_back(i);
        const auto m = static_cast<Eigen::Index>(members.size());
        if (m >= 2) {
            Eigen::MatrixXd sub(m, data.cols());
            for (Eigen::Index r = 0; r < m; ++r) sub.row(r) = data.row(members[static_cast<std::size_t>(r)]);
            means.push_back(sub.colwise().mean().transpose());
            covs.push_back(detail::floored(detail::population_covariance(sub), settings));
        } else {
            means.push_back(centers[static_cast<std::size_t>(c)].transpose());
            covs.push_back(global);
        }
        weights.push_back(m > 0 ? static_cast<double>(m) : 1.0);
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= total;
    return GaussianMixtureModel(std::move(weights), std::move(means), std::move(covs));
}

/// EM from either a k-means cold start or a previous model. Iteration i
/// evaluates the per-sample log-likelihood of the current parameters; the
/// loop stops once two consecutive values differ by less than the tolerance
/// and returns the parameters that produced the last value.
inline FitResult fit(const Eigen::MatrixXd& data, int n_components, const GaussianMixtureModel* warm_start,
                     const EmSettings& settings = {}) {
    if (n_components < 1) detail::fail(ErrorKind::config, "n_components must be positive");
    if (data.rows() < n_components) detail::fail(ErrorKind::insufficient, "fewer samples than mixture components");
    if (!data.allFinite()) detail::fail(ErrorKind::validation, "non-finite training data");

    FitReport report;
    GaussianMixtureModel current;
    if (warm_start) {
        if (warm_start->dim() != data.cols() || warm_start->n_components() != n_components)
            detail::fail(ErrorKind::shape, "warm-start model does not match data dimension / component count");
        current = *warm_start;
        report.init_mode = InitMode::warm_start;
    } else {
        current = kmeans_init(data, n_components, settings);
        report.init_mode = InitMode::kmeans;
    }

    for (int iter = 1; iter <= settings.max_iter; ++iter) {
        detail::EStep e;
        try {
            e = detail::e_step_with_loglik(current, data);
        } catch (const Error& err) {
            detail::fail(err.kind(), "EM iteration " + std::to_string(iter) + ": " + err.what());
        }
        if (!std::isfinite(e.mean_loglik))
            detail::fail(ErrorKind::numeric, "non-finite log-likelihood at EM iteration " + std::to_string(iter));
        report.loglik_trace.push_back(e.mean_loglik);
        report.iterations = iter;
        report.final_loglik = e.mean_loglik;
        if (iter > 1 && std::abs(e.mean_loglik - report.loglik_trace[report.loglik_trace.size() - 2]) <
                            settings.tolerance) {
            report.converged = true;
            break;
        }
        if (iter == settings.max_iter) break;
        current = m_step(data, e.resp, settings, &report.reseeds);
    }
    return {std::move(current), std::move(report)};
}

inline FitResult fit(const Eigen::MatrixXd& data, int n_components, const EmSettings& settings = {}) {
    return fit(data, n_components, nullptr, settings);
}

inline FitResult fit(const Eigen::MatrixXd& data, const GaussianMixtureModel& warm_start,
                     const EmSettings& settings = {}) {
    return fit(data, warm_start.n_components(), &warm_start, settings);
}

/// Component counts round(w_i N) by largest remainder so they sum to N.
inline std::vector<std::size_t> stratified_counts(std::span<const double> weights, std::size_t n_total) {
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = weights[i] * static_cast<double>(n_total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n_total; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
    while (assigned > n_total) {
        // Only reachable through rounding when weights sum to 1 + O(eps).
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    return counts;
}

/// Draws n_total samples. Each sample consumes exactly 2k 64-bit draws for
/// its normal vector; categorical mode adds one draw for the component and
/// stratified mode ends with a Fisher-Yates shuffle of the rows.
inline Eigen::MatrixXd sample(const GaussianMixtureModel& model, std::size_t n_total, Rng& rng,
                              Allocation allocation = Allocation::stratified) {
    if (n_total < 1) detail::fail(ErrorKind::validation, "sample size must be at least 1");
    const Eigen::Index k = model.dim();
    const int nc = model.n_components();
    std::vector<Eigen::MatrixXd> factors;
    for (int j = 0; j < nc; ++j) factors.push_back(detail::factor(model.covariances()[j]).matrixL());

    Eigen::MatrixXd out(static_cast<Eigen::Index>(n_total), k);
    Eigen::VectorXd z(k);
    auto draw = [&](int j, Eigen::Index row) {
        for (Eigen::Index d = 0; d < k; ++d) z(d) = rng.normal();
        out.row(row) = (model.means()[static_cast<std::size_t>(j)] +
                        factors[static_cast<std::size_t>(j)].triangularView<Eigen::Lower>() * z)
                           .transpose();
    };

    if (allocation == Allocation::stratified) {
        const auto counts = stratified_counts(model.weights(), n_total);
        Eigen::Index row = 0;
        for (int j = 0; j < nc; ++j)
            for (std::size_t c = 0; c < counts[static_cast<std::size_t>(j)]; ++c) draw(j, row++);
        std::vector<Eigen::Index> perm(n_total);
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        rng.shuffle(std::span<Eigen::Index>(perm));
        Eigen::MatrixXd shuffled(out.rows(), k);
        for (std::size_t i = 0; i < n_total; ++i) shuffled.row(static_cast<Eigen::Index>(i)) = out.row(perm[i]);
        return shuffled;
    }

    for (std::size_t i = 0; i < n_total; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        int j = nc - 1;
        for (int c = 0; c < nc; ++c) {
            acc += model.weights()[static_cast<std::size_t>(c)];
            if (u < acc) {
                j = c;
                break;
            }
        }
        draw(j, static_cast<Eigen::Index>(i));
    }
    return out;
}

/// Analytic CDF of a one-dimensional mixture.
inline double mixture_cdf(const GaussianMixtureModel& model, double x) {
    if (model.dim() != 1) detail::fail(ErrorKind::shape, "mixture_cdf requires a one-dimensional mixture");
    double total = 0.0;
    for (int j = 0; j < model.n_components(); ++j) {
        const double sd = std::sqrt(model.covariances()[static_cast<std::size_t>(j)](0, 0));
        total += model.weights()[static_cast<std::size_t>(j)] *
                 special::normal_cdf((x - model.means()[static_cast<std::size_t>(j)](0)) / sd);
    }
    return std::min(total, 1.0);
}

/// Convenience constructor for one-dimensional mixtures from standard deviations.
inline GaussianMixtureModel univariate_mixture(std::vector<double> weights, std::span<const double> means,
                                               std::span<const double> sds) {
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> cov;
    for (std::size_t i = 0; i < means.size(); ++i) {
        mu.push_back(Eigen::VectorXd::Constant(1, means[i]));
        cov.push_back(Eigen::MatrixXd::Constant(1, 1, sds[i] * sds[i]));
    }
    return GaussianMixtureModel(std::move(weights), std::move(mu), std::move(cov));
}

}  // namespace gmmrisk
