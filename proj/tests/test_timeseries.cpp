#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gmmrisk/timeseries.hpp"
#include "support.hpp"

using namespace gmmrisk;

namespace {

PricePanel parse(const std::string& text) {
    std::istringstream in(text);
    return parse_prices(in);
}

ErrorKind kind_of(const std::string& text) {
    try {
        parse(text);
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::run;  // sentinel: no error
}

}  // namespace

TEST(LoadPrices, EchoesSmallFile) {
    const auto p = parse("date,AAA,BBB\n2020-01-01,100,50\n2020-01-02,101,51\n2020-01-03,102.5,49.75\n");
    ASSERT_EQ(p.rows(), 3);
    ASSERT_EQ(p.cols(), 2);
    EXPECT_EQ(p.tickers(), (std::vector<std::string>{"AAA", "BBB"}));
    EXPECT_EQ(p.dates().back(), "2020-01-03");
    EXPECT_DOUBLE_EQ(p.prices()(2, 0), 102.5);
    EXPECT_DOUBLE_EQ(p.prices()(2, 1), 49.75);
}

TEST(LoadPrices, AcceptsCrlf) {
    const auto p = parse("date,AAA\r\n2020-01-01,100\r\n2020-01-02,101\r\n");
    EXPECT_EQ(p.rows(), 2);
    EXPECT_EQ(p.tickers().front(), "AAA");
}

TEST(LoadPrices, ResortsShuffledDates) {
    std::vector<int> days(10);
    std::iota(days.begin(), days.end(), 1);
    std::vector<int> shuffled = days;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937(7));
    std::string text = "date,X\n";
    for (int d : shuffled) text += "2021-03-" + std::string(d < 10 ? "0" : "") + std::to_string(d) + "," +
                                   std::to_string(100 + d) + "\n";
    const auto p = parse(text);
    // Oracle: a plain sort of the fixture's dates.
    for (std::size_t i = 0; i < days.size(); ++i) {
        EXPECT_DOUBLE_EQ(p.prices()(static_cast<Eigen::Index>(i), 0), 100 + days[i]);
    }
    EXPECT_TRUE(std::is_sorted(p.dates().begin(), p.dates().end()));
}

TEST(LoadPrices, Errors) {
    EXPECT_EQ(kind_of("date,A\n2020-01-01,0.0\n"), ErrorKind::validation);
    EXPECT_EQ(kind_of("date,A\n2020-01-01,-3\n"), ErrorKind::validation);
    EXPECT_EQ(kind_of("date,A\n2020-01-01,1\n2020-01-01,2\n"), ErrorKind::validation);
    EXPECT_EQ(kind_of("date,A\n2020-01-01,\n"), ErrorKind::validation);
    EXPECT_EQ(kind_of("date,A,B\n2020-01-01,1\n"), ErrorKind::parse);
    EXPECT_EQ(kind_of("date,A\n2020-01-01,abc\n"), ErrorKind::parse);
    EXPECT_EQ(kind_of(""), ErrorKind::parse);
    try {
        parse("date,A\n2020-01-01,1\n2020-01-02,x\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    try {
        parse("date,A,B\n2020-01-01,1,0\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("2020-01-01"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("B"), std::string::npos);
    }
    EXPECT_THROW(load_prices("/nonexistent/prices.csv"), Error);
}

TEST(LogReturns, Examples) {
    const double e = std::exp(1.0);
    PricePanel p({"d1", "d2", "d3"}, {"A", "B", "C"},
                 (Eigen::MatrixXd(3, 3) << 100, 100, 100, 100, 100 * e, 110, 100, 100 * e, 99).finished());
    const auto r = log_returns(p);
    ASSERT_EQ(r.rows(), 2);
    EXPECT_EQ(r.dates().front(), "d2");
    EXPECT_DOUBLE_EQ(r.returns()(0, 0), 0.0);
    EXPECT_NEAR(r.returns()(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(r.returns()(0, 2), std::log(1.1), 1e-15);
    EXPECT_NEAR(r.returns()(1, 2), std::log(0.9), 1e-15);

    PricePanel one({"d1"}, {"A"}, Eigen::MatrixXd::Constant(1, 1, 5.0));
    EXPECT_THROW(log_returns(one), Error);
}

TEST(LogReturns, RoundTripReproducesPrices) {
    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> step(0.0, 0.02);
    Eigen::MatrixXd prices(200, 3);
    prices.row(0) << 10.0, 250.0, 3.5;
    for (Eigen::Index t = 1; t < prices.rows(); ++t)
        for (Eigen::Index j = 0; j < 3; ++j) prices(t, j) = prices(t - 1, j) * step(rng);
    std::vector<std::string> dates;
    for (int t = 0; t < 200; ++t) dates.push_back("t" + std::to_string(1000 + t));
    const PricePanel p(dates, {"a", "b", "c"}, prices);
    const auto r = log_returns(p);
    for (Eigen::Index j = 0; j < 3; ++j) {
        double cum = 0.0;
        for (Eigen::Index t = 0; t < r.rows(); ++t) {
            cum += r.returns()(t, j);
            EXPECT_NEAR(prices(0, j) * std::exp(cum) / prices(t + 1, j), 1.0, 1e-10);
        }
    }
}

TEST(Describe, SymmetricTwoPoint) {
    std::vector<double> x;
    for (int i = 0; i < 20; ++i) x.push_back(i % 2 ? 1.0 : -1.0);
    const auto s = describe(x);
    EXPECT_NEAR(s.skewness, 0.0, 1e-15);
    EXPECT_NEAR(s.mean, 0.0, 1e-15);
    EXPECT_NEAR(s.std, 1.0, 1e-15);
    EXPECT_NEAR(s.excess_kurtosis, -2.0, 1e-12);
}

TEST(Describe, ThreePointMomentsByHand) {
    // {-1,-1,2}: mean 0, m2 = 2, m3 = 2, m4 = 6 -> skew = 2 / 2^1.5, kurt = 6/4 - 3.
    // Repeating the pattern keeps population moments and satisfies n >= 8.
    std::vector<double> x;
    for (int r = 0; r < 3; ++r) x.insert(x.end(), {-1.0, -1.0, 2.0});
    const auto s = describe(x);
    EXPECT_NEAR(s.skewness, 1.0 / std::sqrt(2.0), 1e-14);
    EXPECT_NEAR(s.excess_kurtosis, -1.5, 1e-14);
    EXPECT_NEAR(s.jarque_bera, 9.0 / 6.0 * (0.5 + 1.5 * 1.5 / 4.0), 1e-12);
    EXPECT_DOUBLE_EQ(s.min, -1.0);
    EXPECT_DOUBLE_EQ(s.max, 2.0);
}

TEST(Describe, StandardNormalSample) {
    std::mt19937_64 rng(20240101);
    std::normal_distribution<double> z;
    std::vector<double> x(10000);
    for (auto& v : x) v = z(rng);
    const auto s = describe(x);
    EXPECT_LT(std::abs(s.skewness), 0.1);
    EXPECT_LT(std::abs(s.excess_kurtosis), 0.2);
    EXPECT_GT(s.jb_pvalue, 0.01);
    EXPECT_NEAR(s.jarque_bera, x.size() / 6.0 * (s.skewness * s.skewness + s.excess_kurtosis * s.excess_kurtosis / 4.0),
                1e-12 * s.jarque_bera);
    EXPECT_NEAR(s.jb_pvalue, std::exp(-s.jarque_bera / 2.0), 1e-12);
}

TEST(Describe, JarqueBeraConventionReproducesPublishedScale) {
    // Excess-kurtosis reading: S=-0.247, K=8.417, n~1250 gives JB ~ 3.7e3.
    const double jb = 1250.0 / 6.0 * (0.247 * 0.247 + 8.417 * 8.417 / 4.0);
    EXPECT_NEAR(jb, 3702.6, 1.0);
    // The raw-kurtosis reading would give (8.417-3)^2 instead, about 4x smaller.
    EXPECT_LT(1250.0 / 6.0 * (0.247 * 0.247 + 5.417 * 5.417 / 4.0), 1600.0);
}

TEST(Describe, ScaleInvariance) {
    const auto x = testsupport::mixture_draws({0.8, 0.2}, {0.001, -0.01}, {0.01, 0.03}, 500, 11);
    const auto base = describe(x);
    for (double c : {1e-3, 0.5, 7.0, 1e4}) {
        std::vector<double> y(x);
        for (auto& v : y) v *= c;
        const auto s = describe(y);
        EXPECT_NEAR(s.skewness, base.skewness, 1e-9);
        EXPECT_NEAR(s.excess_kurtosis, base.excess_kurtosis, 1e-9);
        EXPECT_NEAR(s.jarque_bera / base.jarque_bera, 1.0, 1e-9);
    }
}

TEST(Describe, Errors) {
    EXPECT_THROW(describe(std::vector<double>(10, 0.3)), Error);
    EXPECT_THROW(describe(std::vector<double>{1, 2, 3}), Error);
}

TEST(SliceWindow, Examples) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(400, 2, 0.01, 0.0, 5));
    {
        const auto s = slice_window(panel, {252, 70, 300});
        EXPECT_EQ(s.long_slice.dates().front(), panel.dates()[48]);
        EXPECT_EQ(s.long_slice.dates().back(), panel.dates()[299]);
        EXPECT_EQ(s.short_slice.dates().front(), panel.dates()[230]);
        EXPECT_EQ(s.short_slice.rows(), 70);
        EXPECT_EQ(s.long_slice.rows(), 252);
    }
    {
        const auto s = slice_window(panel, {252, 70, 252});
        EXPECT_EQ(s.long_slice.dates().front(), panel.dates()[0]);
    }
    {
        const auto s = slice_window(panel, {100, 100, 150});
        EXPECT_EQ(s.long_slice.returns(), s.short_slice.returns());
    }
    EXPECT_THROW(slice_window(panel, {252, 70, 251}), Error);
    EXPECT_THROW(slice_window(panel, {252, 300, 300}), Error);
    EXPECT_THROW(slice_window(panel, {252, 70, 401}), Error);
}

TEST(SliceWindow, ShortIsSuffixOfLong) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(120, 3, 0.01, 0.2, 9));
    std::mt19937 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const Eigen::Index lng = std::uniform_int_distribution<Eigen::Index>(1, 120)(rng);
        const Eigen::Index sht = std::uniform_int_distribution<Eigen::Index>(1, lng)(rng);
        const Eigen::Index anchor = std::uniform_int_distribution<Eigen::Index>(lng, 120)(rng);
        const auto s = slice_window(panel, {lng, sht, anchor});
        ASSERT_EQ(s.short_slice.returns(), s.long_slice.returns().bottomRows(sht));
        ASSERT_EQ(s.short_slice.tickers(), s.long_slice.tickers());
    }
}
