#pragma once

// VaR backtests (Christoffersen coverage / independence, quadratic loss) and
// distribution goodness of fit (one-sample KS, PDF RMSE against a
// Freedman-Diaconis histogram).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gmmrisk/error.hpp"
#include "gmmrisk/risk.hpp"
#include "gmmrisk/special.hpp"

namespace gmmrisk {

struct HitSequence {
    std::vector<bool> hits;
    double alpha = 0.05;
};

enum class Verdict { not_rejected, rejected, insufficient };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::not_rejected: return "not_rejected";
        case Verdict::rejected: return "rejected";
        case Verdict::insufficient: return "insufficient";
    }
    return "unknown";
}

struct ChristoffersenOptions {
    double df_uc = 1.0;
    double df_ind = 1.0;
    double df_cc = 2.0;
    double threshold = 0.01;
};

struct ChristoffersenResult {
    double lr_uc = 0.0;
    double lr_ind = 0.0;
    double lr_cc = 0.0;
    double p_uc = 1.0;
    double p_ind = 1.0;
    double p_cc = 1.0;
    std::size_t x = 0;
    std::size_t n = 0;
    std::size_t n00 = 0, n01 = 0, n10 = 0, n11 = 0;
    double pi01 = 0.0, pi11 = 0.0, pi2 = 0.0;
    Verdict verdict = Verdict::not_rejected;
};

struct LossResult {
    double total = 0.0;
    std::vector<double> per_day;
};

struct GofResult {
    double rmse = 0.0;
    double ks_stat = 0.0;
    double ks_pvalue = 1.0;
};

/// hit_t = (r_t <= VaR_t).
inline HitSequence hits(std::span<const double> realized, std::span<const double> var_series, double alpha) {
    if (realized.size() != var_series.size()) detail::fail(ErrorKind::shape, "realized and VaR lengths differ");
    HitSequence seq;
    seq.alpha = alpha;
    seq.hits.reserve(realized.size());
    for (std::size_t t = 0; t < realized.size(); ++t) seq.hits.push_back(realized[t] <= var_series[t]);
    return seq;
}

namespace detail {
/// a * ln(b) with the 0 ln 0 = 0 convention.
inline double xlogy(double a, double b) { return a == 0.0 ? 0.0 : a * std::log(b); }
}  // namespace detail

/// Likelihood-ratio tests from the sufficient statistics (n, x, n_ij).
inline ChristoffersenResult christoffersen(std::size_t n, std::size_t x, std::size_t n00, std::size_t n01,
                                           std::size_t n10, std::size_t n11, double p,
                                           const ChristoffersenOptions& options = {}) {
    using detail::xlogy;
    check_alpha(p);
    if (n < 2) detail::fail(ErrorKind::insufficient, "Christoffersen test needs at least two days");
    if (x > n || n00 + n01 + n10 + n11 != n - 1)
        detail::fail(ErrorKind::validation, "inconsistent hit-sequence counts");

    ChristoffersenResult r;
    r.n = n;
    r.x = x;
    r.n00 = n00;
    r.n01 = n01;
    r.n10 = n10;
    r.n11 = n11;

    const double nd = static_cast<double>(n), xd = static_cast<double>(x);
    const double phat = xd / nd;
    const double null_ll = xlogy(nd - xd, 1.0 - p) + xlogy(xd, p);
    const double alt_ll = xlogy(nd - xd, 1.0 - phat) + xlogy(xd, phat);
    r.lr_uc = std::max(0.0, -2.0 * null_ll + 2.0 * alt_ll);

    const double a00 = static_cast<double>(n00), a01 = static_cast<double>(n01);
    const double a10 = static_cast<double>(n10), a11 = static_cast<double>(n11);
    r.pi01 = (a00 + a01) > 0.0 ? a01 / (a00 + a01) : 0.0;
    r.pi11 = (a10 + a11) > 0.0 ? a11 / (a10 + a11) : 0.0;
    r.pi2 = (a01 + a11) / (a00 + a01 + a10 + a11);
    const double restricted = xlogy(a00 + a10, 1.0 - r.pi2) + xlogy(a01 + a11, r.pi2);
    const double markov =
        xlogy(a00, 1.0 - r.pi01) + xlogy(a01, r.pi01) + xlogy(a10, 1.0 - r.pi11) + xlogy(a11, r.pi11);
    r.lr_ind = std::max(0.0, -2.0 * restricted + 2.0 * markov);
    r.lr_cc = r.lr_uc + r.lr_ind;

    r.p_uc = special::chi2_sf(r.lr_uc, options.df_uc);
    r.p_ind = special::chi2_sf(r.lr_ind, options.df_ind);
    r.p_cc = special::chi2_sf(r.lr_cc, options.df_cc);
    r.verdict = std::min(r.p_uc, r.p_ind) < options.threshold ? Verdict::rejected : Verdict::not_rejected;
    return r;
}

inline ChristoffersenResult christoffersen(const HitSequence& seq, const ChristoffersenOptions& options = {}) {
    const std::size_t n = seq.hits.size();
    if (n < 2) detail::fail(ErrorKind::insufficient, "Christoffersen test needs at least two days");
    std::size_t x = 0, c[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t t = 0; t < n; ++t) {
        x += seq.hits[t] ? 1 : 0;
        if (t > 0) ++c[seq.hits[t - 1] ? 1 : 0][seq.hits[t] ? 1 : 0];
    }
    return christoffersen(n, x, c[0][0], c[0][1], c[1][0], c[1][1], seq.alpha, options);
}

/// QL_t = 1{r_t <= VaR_t} (1 + (r_t - VaR_t)^2); total is the mean over days.
inline LossResult quadratic_loss(std::span<const double> realized, std::span<const double> var_series) {
    if (realized.size() != var_series.size()) detail::fail(ErrorKind::shape, "realized and VaR lengths differ");
    if (realized.empty()) detail::fail(ErrorKind::insufficient, "quadratic loss over zero days");
    LossResult out;
    out.per_day.reserve(realized.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < realized.size(); ++t) {
        const double gap = realized[t] - var_series[t];
        const double ql = realized[t] <= var_series[t] ? 1.0 + gap * gap : 0.0;
        out.per_day.push_back(ql);
        sum += ql;
    }
    out.total = sum / static_cast<double>(realized.size());
    return out;
}

/// One-sample KS against `cdf`; p-value from the limiting Kolmogorov law with
/// Stephens' finite-n correction.
inline GofResult ks_test(std::span<const double> samples, const std::function<double(double)>& cdf) {
    const std::size_t n = samples.size();
    if (n < 8) detail::fail(ErrorKind::insufficient, "KS test needs at least 8 samples");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double nd = static_cast<double>(n);
    double d = 0.0;
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double f = cdf(sorted[i]);
        if (!(f >= 0.0 && f <= 1.0) || f < prev)
            detail::fail(ErrorKind::validation, "KS reference CDF is not a monotone map into [0,1]");
        prev = f;
        d = std::max({d, (static_cast<double>(i) + 1.0) / nd - f, f - static_cast<double>(i) / nd});
    }
    GofResult out;
    out.ks_stat = std::clamp(d, 0.0, 1.0);
    const double sqn = std::sqrt(nd);
    out.ks_pvalue = special::kolmogorov_sf((sqn + 0.12 + 0.11 / sqn) * out.ks_stat);
    return out;
}

/// Histogram density estimate evaluated at bin centres.
struct EmpiricalDensity {
    std::vector<double> grid;
    std::vector<double> density;
};

/// Freedman-Diaconis histogram: width 2 IQR n^(-1/3), bins anchored at min(data).
inline EmpiricalDensity fd_histogram(std::span<const double> data) {
    if (data.size() < 4) detail::fail(ErrorKind::insufficient, "histogram needs at least 4 observations");
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    const double lo = sorted.front(), hi = sorted.back();
    if (!(iqr > 0.0) || !(hi > lo)) detail::fail(ErrorKind::degenerate, "degenerate data for density estimate");
    const double nd = static_cast<double>(sorted.size());
    const double width = 2.0 * iqr / std::cbrt(nd);
    const auto bins = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil((hi - lo) / width)));
    const double h = (hi - lo) / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    for (double v : sorted) {
        auto b = static_cast<std::size_t>((v - lo) / h);
        counts[std::min(b, bins - 1)] += 1.0;
    }
    EmpiricalDensity out;
    for (std::size_t b = 0; b < bins; ++b) {
        out.grid.push_back(lo + (static_cast<double>(b) + 0.5) * h);
        out.density.push_back(counts[b] / (nd * h));
    }
    return out;
}

inline double pdf_rmse(const std::function<double(double)>& model_pdf, const EmpiricalDensity& empirical) {
    if (empirical.grid.size() < 2 || empirical.grid.size() != empirical.density.size())
        detail::fail(ErrorKind::insufficient, "RMSE needs at least two grid points");
    double ss = 0.0;
    for (std::size_t i = 0; i < empirical.grid.size(); ++i) {
        const double diff = model_pdf(empirical.grid[i]) - empirical.density[i];
        ss += diff * diff;
    }
    return std::sqrt(ss / static_cast<double>(empirical.grid.size()));
}

inline double pdf_rmse(const std::function<double(double)>& model_pdf, std::span<const double> data) {
    return pdf_rmse(model_pdf, fd_histogram(data));
}

}  // namespace gmmrisk
