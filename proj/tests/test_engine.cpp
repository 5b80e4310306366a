#include <gtest/gtest.h>

#include <boost/math/distributions/binomial.hpp>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "gmmrisk/engine.hpp"
#include "gmmrisk/io.hpp"
#include "support.hpp"

using namespace gmmrisk;

namespace {

RunConfig small_config() {
    RunConfig c;
    c.models = {"gmm", "hs", "param", "gbm_mc"};
    c.n_components = {2};
    c.alphas = {0.05};
    c.long_len = 120;
    c.short_len = 30;
    c.paths = 500;
    c.eval_days = 25;
    c.seed = 17;
    c.threads = 1;
    return c;
}

std::string estimates_text(const BacktestRun& run) {
    std::ostringstream out;
    write_estimates_csv(out, estimate_rows(run.records));
    write_summary_csv(out, run.report);
    write_fits_csv(out, fit_rows(run.records));
    return out.str();
}

const RiskEstimate* find(const DayRecord& rec, const std::string& tag, double alpha) {
    for (const auto& e : rec.estimates)
        if (e.model_tag == tag && e.alpha == alpha) return &e;
    return nullptr;
}

}  // namespace

TEST(RunConfig, Validation) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(200, 2, 0.01, 0.2, 1));
    auto expect_config_error = [&](RunConfig c) {
        try {
            c.validate(panel);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::config) << e.what();
        }
    };
    RunConfig c = small_config();
    EXPECT_NO_THROW(c.validate(panel));
    c.eval_days = 81;
    expect_config_error(c);
    c = small_config();
    c.models = {"garch"};
    expect_config_error(c);
    c = small_config();
    c.short_len = 121;
    expect_config_error(c);
    c = small_config();
    c.paths = 99;
    expect_config_error(c);
    c = small_config();
    c.horizon = 5;
    expect_config_error(c);
    c = small_config();
    c.portfolio = PortfolioSpec({"zz"}, {1.0});
    expect_config_error(c);
}

TEST(RunBacktest, SingleDayIsInsufficient) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(130, 1, 0.01, 0.0, 2));
    RunConfig c = small_config();
    c.eval_days = 1;
    const auto run = run_backtest(panel, c);
    ASSERT_EQ(run.records.size(), 1u);
    for (const auto& row : run.report) {
        EXPECT_EQ(row.n, 1u);
        EXPECT_EQ(row.verdict, Verdict::insufficient);
        EXPECT_TRUE(std::isnan(row.lr_ind));
    }
}

TEST(RunBacktest, DeterministicAndThreadIndependent) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(150, 3, 0.01, 0.3, 3));
    RunConfig c = small_config();
    c.portfolio = PortfolioSpec::equal_weight(panel.tickers());
    const auto a = run_backtest(panel, c);
    const auto b = run_backtest(panel, c);
    EXPECT_EQ(estimates_text(a), estimates_text(b));
    c.threads = 4;
    EXPECT_EQ(estimates_text(run_backtest(panel, c)), estimates_text(a));
    c.seed = 18;
    EXPECT_NE(estimates_text(run_backtest(panel, c)), estimates_text(a));
}

TEST(RunBacktest, NoLookAhead) {
    const Eigen::MatrixXd full = testsupport::gaussian_panel(160, 2, 0.01, 0.3, 4);
    const auto panel = testsupport::panel(full);
    RunConfig c = small_config();
    c.portfolio = PortfolioSpec::equal_weight(panel.tickers());
    const auto run = run_backtest(panel, c);
    ASSERT_EQ(run.records.size(), 3u * 25u);
    for (const auto& rec : run.records) {
        EXPECT_GT(rec.date, rec.train_end_date);
        EXPECT_EQ(rec.date, panel.dates()[static_cast<std::size_t>(rec.anchor)]);
        EXPECT_EQ(rec.train_end_date, panel.dates()[static_cast<std::size_t>(rec.anchor - 1)]);
    }

    // Corrupting the realized rows and everything after them leaves every
    // estimate of earlier days untouched.
    const Eigen::Index cut = c.long_len + 10;
    Eigen::MatrixXd poisoned = full;
    poisoned.bottomRows(full.rows() - cut).array() *= -7.0;
    const auto other = run_backtest(testsupport::panel(poisoned), c);
    for (std::size_t i = 0; i < run.records.size(); ++i) {
        const auto& r = run.records[i];
        const auto& o = other.records[i];
        if (r.anchor > cut) continue;
        ASSERT_EQ(r.estimates.size(), o.estimates.size());
        for (std::size_t k = 0; k < r.estimates.size(); ++k) {
            EXPECT_EQ(r.estimates[k].var, o.estimates[k].var) << r.target << " " << r.anchor;
            EXPECT_EQ(r.estimates[k].es, o.estimates[k].es);
        }
        if (r.anchor < cut) {
            EXPECT_EQ(r.realized, o.realized);
        }
    }
}

TEST(RunBacktest, PortfolioRealizedUsesFixedWeights) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(140, 3, 0.01, 0.3, 5));
    RunConfig c = small_config();
    c.models = {"param"};
    c.eval_days = 10;
    c.per_asset = false;
    c.portfolio = PortfolioSpec(panel.tickers(), {0.5, 0.3, 0.2});
    const auto run = run_backtest(panel, c);
    ASSERT_EQ(run.records.size(), 10u);
    for (const auto& rec : run.records) {
        const auto& r = panel.returns();
        EXPECT_NEAR(rec.realized, 0.5 * r(rec.anchor, 0) + 0.3 * r(rec.anchor, 1) + 0.2 * r(rec.anchor, 2), 1e-15);
    }
}

TEST(RunBacktest, ParametricCoverageOnGaussianPanel) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(1252, 1, 0.01, 0.0, 6));
    RunConfig c = small_config();
    c.models = {"param"};
    c.long_len = 252;
    c.short_len = 70;
    c.eval_days = 1000;
    const auto run = run_backtest(panel, c);
    ASSERT_EQ(run.report.size(), 1u);
    const boost::math::binomial_distribution<double> b(1000, 0.05);
    EXPECT_GE(static_cast<double>(run.report[0].x), boost::math::quantile(b, 0.005));
    EXPECT_LE(static_cast<double>(run.report[0].x), boost::math::quantile(b, 0.995));
    EXPECT_EQ(run.report[0].verdict, Verdict::not_rejected);
}

TEST(RunBacktest, GmmEstimateMatchesManualPipeline) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(140, 1, 0.01, 0.0, 7));
    RunConfig c = small_config();
    c.models = {"gmm"};
    c.eval_days = 3;
    const auto run = run_backtest(panel, c);
    const auto& rec = run.records[0];
    const Eigen::MatrixXd train = panel.returns().topRows(c.long_len);
    EmSettings em;
    em.seed = detail::stream_seed(c.seed, 0, 0, detail::model_kmeans, 2);
    const auto model = fit(train, 2, em).model;
    const std::uint64_t seed = detail::stream_seed(c.seed, 0, 0, detail::model_gmm, 2);
    const auto sims = simulate_gmm(model, c.paths, 1, Rng(seed));
    const std::vector<double> col(train.data(), train.data() + train.size());
    const double ratio = population_std(std::span(col).last(30)) / population_std(col);
    std::vector<double> r(sims.data());
    for (auto& v : r) v *= ratio;
    const auto expected = var_es(r, 0.05);
    const auto* got = find(rec, "gmm2", 0.05);
    ASSERT_NE(got, nullptr);
    EXPECT_NEAR(got->var, expected.var, 1e-15);
    EXPECT_NEAR(got->es, expected.es, 1e-15);
    EXPECT_EQ(rec.fits[0].init_mode, InitMode::kmeans);
    EXPECT_EQ(run.records[1].fits[0].init_mode, InitMode::warm_start);
}

TEST(RunBacktest, WarmStartMatchesColdStart) {
    // Two well-separated regimes, so the likelihood has one dominant optimum.
    const auto draws = testsupport::mixture_draws({0.7, 0.3}, {0.0, -0.05}, {0.01, 0.01}, 180, 8);
    const Eigen::MatrixXd data = Eigen::Map<const Eigen::MatrixXd>(draws.data(), 180, 1);
    const auto panel = testsupport::panel(data);
    RunConfig c = small_config();
    c.models = {"gmm"};
    c.eval_days = 60;
    const auto cache = build_fit_cache(panel, c);
    int agree = 0;
    for (Eigen::Index d = 0; d < c.eval_days; ++d) {
        EmSettings em;
        em.seed = detail::stream_seed(c.seed, d, 0, detail::model_kmeans, 2);
        const auto cold = fit(data.middleRows(d, c.long_len), 2, em);
        const auto& warm = cache.fits[0][0][static_cast<std::size_t>(d)];
        ASSERT_TRUE(warm.model.has_value());
        const double gap = std::abs(cold.report.final_loglik - warm.diagnostics.loglik);
        agree += gap < 1e-4;
        if (gap >= 1e-4) std::printf("day %ld: warm/cold per-sample log-likelihood gap %.3g\n", long(d), gap);
    }
    EXPECT_GE(agree, static_cast<int>(0.9 * c.eval_days));
}

TEST(RunBacktest, InvalidDaysAreRecordedThenEscalated) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(140, 1, 0.01, 0.0, 9));
    RunConfig c = small_config();
    c.models = {"hs", "param"};
    c.eval_days = 10;
    c.hs_min_length = 500;
    try {
        run_backtest(panel, c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::run);
    }
    c.max_invalid_fraction = 1.0;
    const auto run = run_backtest(panel, c);
    for (const auto& rec : run.records) {
        ASSERT_EQ(rec.errors.size(), 1u);
        EXPECT_EQ(rec.errors[0].rfind("hs: ", 0), 0u);
        EXPECT_NE(find(rec, "param", 0.05), nullptr);
    }
}

TEST(Sweep, FullLengthShortWindowIsUnadjusted) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(140, 1, 0.01, 0.0, 10));
    RunConfig c = small_config();
    c.models = {"gmm"};
    c.eval_days = 5;
    const auto sweep = sweep_sigma_short(panel, c, {c.long_len});
    ASSERT_EQ(sweep.size(), 1u);
    const auto& rec = sweep[0].run.records[0];
    const auto model = *build_fit_cache(panel, c).fits[0][0][0].model;
    const auto sims = simulate_gmm(model, c.paths, 1, Rng(detail::stream_seed(c.seed, 0, 0, detail::model_gmm, 2)));
    const auto expected = var_es(sims.data(), 0.05);
    EXPECT_EQ(find(rec, "gmm2", 0.05)->var, expected.var);
}

TEST(Sweep, SharesFitsAndMatchesSingleRuns) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(150, 2, 0.01, 0.3, 11));
    RunConfig c = small_config();
    const auto sweep = sweep_sigma_short(panel, c, {20, 60});
    ASSERT_EQ(sweep.size(), 2u);
    std::ostringstream f0, f1;
    write_fits_csv(f0, fit_rows(sweep[0].run.records));
    write_fits_csv(f1, fit_rows(sweep[1].run.records));
    EXPECT_EQ(f0.str(), f1.str());
    EXPECT_NE(estimates_text(sweep[0].run), estimates_text(sweep[1].run));

    RunConfig single = c;
    single.short_len = 60;
    EXPECT_EQ(estimates_text(sweep[1].run), estimates_text(run_backtest(panel, single)));
}

TEST(Sweep, GridValidation) {
    const auto panel = testsupport::panel(testsupport::gaussian_panel(150, 1, 0.01, 0.0, 12));
    RunConfig c = small_config();
    EXPECT_THROW(sweep_sigma_short(panel, c, {}), Error);
    try {
        sweep_sigma_short(panel, c, {10, c.long_len + 1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}

TEST(Sweep, ShortWindowTracksVolatilityBreak) {
    // Calm regime, then volatility triples halfway through the evaluation period.
    const Eigen::Index long_len = 150, eval = 300, rows = long_len + eval;
    Eigen::MatrixXd m = testsupport::gaussian_panel(rows, 1, 0.008, 0.0, 13);
    const Eigen::Index brk = long_len + eval / 2;
    m.bottomRows(rows - brk) *= 3.0;
    const auto panel = testsupport::panel(m);
    RunConfig c = small_config();
    c.models = {"gmm"};
    c.long_len = long_len;
    c.eval_days = eval;
    c.paths = 1000;
    const auto sweep = sweep_sigma_short(panel, c, {10, long_len});
    auto later_half = [&](const BacktestRun& run) {
        std::size_t x = 0, clustered = 0;
        bool prev = false;
        for (const auto& rec : run.records) {
            if (rec.anchor < brk) continue;
            const bool hit = rec.realized <= find(rec, "gmm2", 0.05)->var;
            x += hit;
            clustered += hit && prev;
            prev = hit;
        }
        return std::pair{x, clustered};
    };
    const auto fast = later_half(sweep[0].run);
    const auto slow = later_half(sweep[1].run);
    EXPECT_LT(fast.first, slow.first);
    EXPECT_LT(fast.second, slow.second);
}
