#pragma once

// Price ingestion, log returns, rolling windows and descriptive statistics.
//
// Moments follow the population convention (divide by n) and kurtosis is
// reported as excess kurtosis, which is the reading under which
// JB = n/6 (S^2 + K^2/4) reproduces published Jarque-Bera values.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gmmrisk/error.hpp"
#include "gmmrisk/special.hpp"

namespace gmmrisk {

class PricePanel {
public:
    PricePanel(std::vector<std::string> dates, std::vector<std::string> tickers, Eigen::MatrixXd prices)
        : dates_(std::move(dates)), tickers_(std::move(tickers)), prices_(std::move(prices)) {
        if (prices_.rows() != static_cast<Eigen::Index>(dates_.size()) ||
            prices_.cols() != static_cast<Eigen::Index>(tickers_.size()))
            detail::fail(ErrorKind::shape, "price matrix must be |dates| x |tickers|");
        for (std::size_t t = 1; t < dates_.size(); ++t) {
            if (dates_[t] == dates_[t - 1]) detail::fail(ErrorKind::validation, "duplicate date " + dates_[t]);
            if (dates_[t] < dates_[t - 1])
                detail::fail(ErrorKind::validation, "dates not increasing at " + dates_[t]);
        }
        for (Eigen::Index t = 0; t < prices_.rows(); ++t)
            for (Eigen::Index j = 0; j < prices_.cols(); ++j) {
                const double p = prices_(t, j);
                if (!std::isfinite(p) || p <= 0.0)
                    detail::fail(ErrorKind::validation, "non-positive or non-finite price on " + dates_[t] +
                                                            " for " + tickers_[j]);
            }
    }

    const std::vector<std::string>& dates() const noexcept { return dates_; }
    const std::vector<std::string>& tickers() const noexcept { return tickers_; }
    const Eigen::MatrixXd& prices() const noexcept { return prices_; }
    Eigen::Index rows() const noexcept { return prices_.rows(); }
    Eigen::Index cols() const noexcept { return prices_.cols(); }

private:
    std::vector<std::string> dates_;
    std::vector<std::string> tickers_;
    Eigen::MatrixXd prices_;
};

/// Dated matrix of log returns, one row per date and one column per asset.
class ReturnPanel {
public:
    ReturnPanel() = default;

    ReturnPanel(std::vector<std::string> dates, std::vector<std::string> tickers, Eigen::MatrixXd returns)
        : dates_(std::move(dates)), tickers_(std::move(tickers)), returns_(std::move(returns)) {
        if (returns_.rows() != static_cast<Eigen::Index>(dates_.size()) ||
            returns_.cols() != static_cast<Eigen::Index>(tickers_.size()))
            detail::fail(ErrorKind::shape, "return matrix must be |dates| x |tickers|");
        if (!returns_.allFinite()) detail::fail(ErrorKind::validation, "non-finite return");
    }

    /// Panel with synthetic labels d0, d1, ... and a0, a1, ...
    static ReturnPanel from_matrix(Eigen::MatrixXd returns) {
        std::vector<std::string> dates(static_cast<std::size_t>(returns.rows()));
        std::vector<std::string> tickers(static_cast<std::size_t>(returns.cols()));
        for (std::size_t t = 0; t < dates.size(); ++t) {
            std::string label = std::to_string(t);
            dates[t] = "d" + std::string(8 - std::min<std::size_t>(8, label.size()), '0') + label;
        }
        for (std::size_t j = 0; j < tickers.size(); ++j) tickers[j] = "a" + std::to_string(j);
        return ReturnPanel(std::move(dates), std::move(tickers), std::move(returns));
    }

    const std::vector<std::string>& dates() const noexcept { return dates_; }
    const std::vector<std::string>& tickers() const noexcept { return tickers_; }
    const Eigen::MatrixXd& returns() const noexcept { return returns_; }
    Eigen::Index rows() const noexcept { return returns_.rows(); }
    Eigen::Index cols() const noexcept { return returns_.cols(); }

    std::vector<double> column(Eigen::Index j) const {
        std::vector<double> out(static_cast<std::size_t>(rows()));
        for (Eigen::Index t = 0; t < rows(); ++t) out[static_cast<std::size_t>(t)] = returns_(t, j);
        return out;
    }

    /// Rows [begin, end).
    ReturnPanel slice_rows(Eigen::Index begin, Eigen::Index end) const {
        if (begin < 0 || end > rows() || begin > end) detail::fail(ErrorKind::shape, "row slice out of range");
        return ReturnPanel(std::vector<std::string>(dates_.begin() + begin, dates_.begin() + end), tickers_,
                           returns_.middleRows(begin, end - begin));
    }

private:
    std::vector<std::string> dates_;
    std::vector<std::string> tickers_;
    Eigen::MatrixXd returns_;
};

struct RollingWindow {
    Eigen::Index long_len = 252;
    Eigen::Index short_len = 70;
    Eigen::Index anchor = 252;

    void validate() const {
        if (short_len <= 0 || short_len > long_len)
            detail::fail(ErrorKind::config, "rolling window requires 0 < short_len <= long_len");
        if (anchor < long_len) detail::fail(ErrorKind::shape, "rolling window anchor precedes a full long window");
    }
};

struct DescriptiveStats {
    double mean = 0.0;
    double std = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double jarque_bera = 0.0;
    double jb_pvalue = 1.0;
    double max = 0.0;
    double min = 0.0;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace detail

/// Parse a wide CSV: `date,<ticker>,<ticker>,...` with one row per date.
inline PricePanel parse_prices(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> tickers;

    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) break;
    }
    if (line_no == 0 || detail::trim(line).empty()) detail::fail(ErrorKind::parse, "empty price file");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    {
        const auto header = detail::split_csv_line(detail::trim(line));
        if (header.size() < 2) detail::fail(ErrorKind::parse, "line 1: header needs a date column and a ticker");
        for (std::size_t j = 1; j < header.size(); ++j) {
            const auto name = detail::trim(header[j]);
            if (name.empty()) detail::fail(ErrorKind::parse, "line 1: empty ticker name");
            tickers.emplace_back(name);
        }
    }

    struct Row {
        std::string date;
        std::vector<double> values;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        ++line_no;
        const auto content = detail::trim(line);
        if (content.empty()) continue;
        const auto fields = detail::split_csv_line(content);
        const std::string where = "line " + std::to_string(line_no);
        if (fields.size() != tickers.size() + 1)
            detail::fail(ErrorKind::parse, where + ": expected " + std::to_string(tickers.size() + 1) +
                                               " fields, got " + std::to_string(fields.size()));
        Row row;
        row.date = std::string(detail::trim(fields[0]));
        if (row.date.empty()) detail::fail(ErrorKind::parse, where + ": empty date");
        row.values.reserve(tickers.size());
        for (std::size_t j = 0; j < tickers.size(); ++j) {
            const auto text = detail::trim(fields[j + 1]);
            if (text.empty())
                detail::fail(ErrorKind::validation, "missing price on " + row.date + " for " + tickers[j]);
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
            if (ec != std::errc() || ptr != text.data() + text.size())
                detail::fail(ErrorKind::parse, where + ": cannot parse price '" + std::string(text) + "'");
            row.values.push_back(value);
        }
        rows.push_back(std::move(row));
    }

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });

    std::vector<std::string> dates;
    Eigen::MatrixXd prices(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(tickers.size()));
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (t > 0 && rows[t].date == rows[t - 1].date)
            detail::fail(ErrorKind::validation, "duplicate date " + rows[t].date);
        dates.push_back(rows[t].date);
        for (std::size_t j = 0; j < tickers.size(); ++j)
            prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = rows[t].values[j];
    }
    return PricePanel(std::move(dates), std::move(tickers), std::move(prices));
}

inline PricePanel load_prices(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail(ErrorKind::io, "cannot open price file " + path);
    return parse_prices(in);
}

/// r_t = ln(S_t / S_{t-1}); the first date is dropped.
inline ReturnPanel log_returns(const PricePanel& panel) {
    if (panel.rows() < 2) detail::fail(ErrorKind::insufficient, "log returns need at least two price rows");
    const auto& p = panel.prices();
    const Eigen::MatrixXd r =
        (p.bottomRows(p.rows() - 1).array() / p.topRows(p.rows() - 1).array()).log().matrix();
    return ReturnPanel(std::vector<std::string>(panel.dates().begin() + 1, panel.dates().end()), panel.tickers(), r);
}

inline double mean(std::span<const double> x) {
    if (x.empty()) detail::fail(ErrorKind::insufficient, "mean of empty series");
    // Mean of deviations from the first value; exact for constant input.
    double dev = 0.0;
    for (double v : x) dev += v - x.front();
    return x.front() + dev / static_cast<double>(x.size());
}

/// Population standard deviation (divide by n).
inline double population_std(std::span<const double> x) {
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size()));
}

inline DescriptiveStats describe(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 8) detail::fail(ErrorKind::insufficient, "describe needs at least 8 observations");
    DescriptiveStats s;
    s.mean = mean(series);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : series) {
        const double d = v - s.mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    const double nd = static_cast<double>(n);
    m2 /= nd;
    m3 /= nd;
    m4 /= nd;
    if (!(m2 > 0.0)) detail::fail(ErrorKind::degenerate, "describe on a constant series");
    s.std = std::sqrt(m2);
    s.skewness = m3 / (m2 * s.std);
    s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    s.jarque_bera = nd / 6.0 * (s.skewness * s.skewness + 0.25 * s.excess_kurtosis * s.excess_kurtosis);
    s.jb_pvalue = special::chi2_sf(s.jarque_bera, 2.0);
    const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
    s.min = *lo;
    s.max = *hi;
    // Rounding can push a near-constant mean a hair outside [min, max].
    s.mean = std::clamp(s.mean, s.min, s.max);
    return s;
}

struct WindowSlices {
    ReturnPanel long_slice;
    ReturnPanel short_slice;
};

/// long = rows [anchor - long_len, anchor), short = its last short_len rows.
inline WindowSlices slice_window(const ReturnPanel& panel, const RollingWindow& window) {
    window.validate();
    if (window.anchor > panel.rows())
        detail::fail(ErrorKind::shape, "rolling window anchor beyond the end of the panel");
    return {panel.slice_rows(window.anchor - window.long_len, window.anchor),
            panel.slice_rows(window.anchor - window.short_len, window.anchor)};
}

}  // namespace gmmrisk
