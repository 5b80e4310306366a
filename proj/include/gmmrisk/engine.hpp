#pragma once

// Rolling-window backtest driver. For every evaluation day (anchor row a)
// the models train on rows [a - long_len, a) and are scored against the
// realized return on row a. Each ticker is a univariate target; a configured
// portfolio adds a joint target fitted on all of its assets at once.
//
// Random streams: seed -> day -> (target, model) -> N_c -> paths/steps.
// GMM fits only depend on the long window, so they are cached and reused
// across sigma_short sweeps.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gmmrisk/backtest.hpp"
#include "gmmrisk/baselines.hpp"
#include "gmmrisk/error.hpp"
#include "gmmrisk/gmm.hpp"
#include "gmmrisk/risk.hpp"
#include "gmmrisk/scenario.hpp"
#include "gmmrisk/timeseries.hpp"

namespace gmmrisk {

struct RunConfig {
    std::vector<std::string> models{"gmm", "hs", "param", "gbm_mc"};
    std::vector<int> n_components{3, 4, 5, 6};
    std::vector<double> alphas{0.01, 0.05};
    Eigen::Index long_len = 252;
    Eigen::Index short_len = 70;
    Eigen::Index paths = 3000;
    Eigen::Index horizon = 1;
    Eigen::Index eval_days = 1000;
    std::uint64_t seed = 0;
    std::optional<PortfolioSpec> portfolio;
    bool per_asset = true;
    std::size_t hs_min_length = 100;
    double max_invalid_fraction = 0.05;
    int threads = 0;  // 0 = hardware concurrency
    EmSettings em;    // em.seed is ignored; k-means seeds are derived per day
    ChristoffersenOptions christoffersen;
    /// Optional day-1 warm starts keyed "<target>/<n_components>".
    std::map<std::string, GaussianMixtureModel> initial_models;

    bool has_model(const std::string& name) const {
        return std::find(models.begin(), models.end(), name) != models.end();
    }

    void validate(const ReturnPanel& panel) const {
        if (models.empty()) detail::fail(ErrorKind::config, "no models configured");
        for (const auto& m : models)
            if (m != "gmm" && m != "hs" && m != "param" && m != "gbm_mc")
                detail::fail(ErrorKind::config, "unknown model '" + m + "'");
        if (has_model("gmm") && n_components.empty()) detail::fail(ErrorKind::config, "gmm needs n_components");
        for (int nc : n_components)
            if (nc < 1) detail::fail(ErrorKind::config, "n_components must be positive");
        if (alphas.empty()) detail::fail(ErrorKind::config, "no alpha levels configured");
        for (double a : alphas)
            if (!(a > 0.0 && a < 1.0)) detail::fail(ErrorKind::config, "alpha must lie in (0,1)");
        if (long_len < 2 || short_len < 2 || short_len > long_len)
            detail::fail(ErrorKind::config, "window lengths must satisfy 2 <= short <= long");
        if (paths < 100) detail::fail(ErrorKind::config, "paths must be at least 100");
        if (horizon != 1) detail::fail(ErrorKind::config, "the backtest engine supports horizon 1 only");
        if (eval_days < 1) detail::fail(ErrorKind::config, "eval_days must be positive");
        if (eval_days + long_len > panel.rows())
            detail::fail(ErrorKind::config, "eval_days + long_len exceeds the available return rows (" +
                                                std::to_string(panel.rows()) + ")");
        for (double a : alphas)
            if (static_cast<double>(paths) < std::ceil(1.0 / a - 1e-9))
                detail::fail(ErrorKind::config, "paths too small for the smallest alpha");
        if (!per_asset && !portfolio) detail::fail(ErrorKind::config, "no targets: enable per_asset or a portfolio");
        if (portfolio)
            for (const auto& t : portfolio->tickers())
                if (std::find(panel.tickers().begin(), panel.tickers().end(), t) == panel.tickers().end())
                    detail::fail(ErrorKind::config, "portfolio ticker '" + t + "' not in the price panel");
    }
};

struct FitDiagnostics {
    int n_components = 0;
    InitMode init_mode = InitMode::kmeans;
    int iterations = 0;
    double loglik = 0.0;
    bool converged = false;
    int reseeds = 0;
};

struct DayRecord {
    std::string date;            // date of the realized (out-of-sample) return
    std::string train_end_date;  // last date inside the training window
    std::string target;
    Eigen::Index anchor = 0;
    double realized = 0.0;
    std::vector<RiskEstimate> estimates;
    std::vector<FitDiagnostics> fits;
    std::vector<std::string> errors;  // "<model_tag>: <message>"
};

struct BacktestRow {
    std::string model_tag;
    std::string ticker;
    double alpha = 0.0;
    std::size_t n = 0;
    std::size_t x = 0;
    double lr_uc = 0.0, p_uc = 1.0;
    double lr_ind = 0.0, p_ind = 1.0;
    double lr_cc = 0.0, p_cc = 1.0;
    double quadratic_loss = 0.0;
    Verdict verdict = Verdict::insufficient;
};

struct BacktestRun {
    std::vector<std::string> targets;
    std::vector<DayRecord> records;  // target-major, then day
    std::vector<BacktestRow> report;
    /// Last successful fit per "<target>/<n_components>".
    std::map<std::string, GaussianMixtureModel> final_models;
};

/// One backtest target: a weighted combination of panel columns.
struct Target {
    std::string name;
    std::vector<Eigen::Index> columns;
    Eigen::VectorXd weights;
    std::vector<std::string> tickers;
};

struct CachedFit {
    std::optional<GaussianMixtureModel> model;
    FitDiagnostics diagnostics;
    std::string error;
};

/// fits[target][n_components index][day]
struct FitCache {
    std::vector<Target> targets;
    std::vector<std::vector<std::vector<CachedFit>>> fits;
};

/// Observer for the simulated (rescaled) GMM scenarios of the final evaluation day.
using ScenarioSink = std::function<void(const std::string& target, int n_components, const std::string& date,
                                        const ScenarioMatrix& scenarios)>;

namespace detail {

enum ModelId : std::uint64_t { model_gmm = 1, model_gbm = 2, model_kmeans = 3 };

inline std::uint64_t stream_seed(std::uint64_t seed, Eigen::Index day, std::size_t target, ModelId model,
                                 int n_components = 0) {
    const std::uint64_t d = derive_seed(seed, static_cast<std::uint64_t>(day));
    const std::uint64_t m = derive_seed(d, static_cast<std::uint64_t>(target) * 16 + model);
    return derive_seed(m, static_cast<std::uint64_t>(n_components));
}

inline std::vector<Target> make_targets(const ReturnPanel& panel, const RunConfig& config) {
    std::vector<Target> out;
    if (config.per_asset)
        for (Eigen::Index j = 0; j < panel.cols(); ++j)
            out.push_back({panel.tickers()[static_cast<std::size_t>(j)], {j}, Eigen::VectorXd::Ones(1),
                           {panel.tickers()[static_cast<std::size_t>(j)]}});
    if (config.portfolio) {
        Target t{"portfolio", {}, config.portfolio->weight_vector(), config.portfolio->tickers()};
        for (const auto& name : config.portfolio->tickers())
            t.columns.push_back(std::find(panel.tickers().begin(), panel.tickers().end(), name) -
                                panel.tickers().begin());
        out.push_back(std::move(t));
    }
    return out;
}

inline Eigen::MatrixXd target_block(const ReturnPanel& panel, const Target& target, Eigen::Index begin,
                                    Eigen::Index end) {
    Eigen::MatrixXd out(end - begin, static_cast<Eigen::Index>(target.columns.size()));
    for (std::size_t c = 0; c < target.columns.size(); ++c)
        out.col(static_cast<Eigen::Index>(c)) = panel.returns().col(target.columns[c]).segment(begin, end - begin);
    return out;
}

inline std::vector<double> weighted_series(const Eigen::MatrixXd& block, const Eigen::VectorXd& weights) {
    const Eigen::VectorXd s = block * weights;
    return {s.data(), s.data() + s.size()};
}

/// Run fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                      : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::string model_tag(const std::string& model, int n_components) {
    return model == "gmm" ? "gmm" + std::to_string(n_components) : model;
}

}  // namespace detail

inline Eigen::Index first_anchor(const RunConfig& config) { return config.long_len; }

/// Daily GMM calibrations for every target and N_c: k-means on the first day
/// (or after a failed day), warm start from the previous day otherwise.
inline FitCache build_fit_cache(const ReturnPanel& panel, const RunConfig& config) {
    config.validate(panel);
    FitCache cache;
    cache.targets = detail::make_targets(panel, config);
    cache.fits.resize(cache.targets.size());
    if (!config.has_model("gmm")) return cache;

    detail::parallel_for(cache.targets.size(), config.threads, [&](std::size_t ti) {
        const Target& target = cache.targets[ti];
        auto& per_nc = cache.fits[ti];
        per_nc.resize(config.n_components.size());
        for (std::size_t ci = 0; ci < config.n_components.size(); ++ci) {
            const int nc = config.n_components[ci];
            std::optional<GaussianMixtureModel> previous;
            if (auto it = config.initial_models.find(target.name + "/" + std::to_string(nc));
                it != config.initial_models.end())
                previous = it->second;
            auto& days = per_nc[ci];
            days.resize(static_cast<std::size_t>(config.eval_days));
            for (Eigen::Index d = 0; d < config.eval_days; ++d) {
                const Eigen::Index anchor = first_anchor(config) + d;
                const Eigen::MatrixXd train = detail::target_block(panel, target, anchor - config.long_len, anchor);
                EmSettings em = config.em;
                em.seed = detail::stream_seed(config.seed, d, ti, detail::model_kmeans, nc);
                CachedFit& slot = days[static_cast<std::size_t>(d)];
                slot.diagnostics.n_components = nc;
                try {
                    FitResult res = previous ? fit(train, *previous, em) : fit(train, nc, em);
                    slot.diagnostics.init_mode = res.report.init_mode;
                    slot.diagnostics.iterations = res.report.iterations;
                    slot.diagnostics.loglik = res.report.final_loglik;
                    slot.diagnostics.converged = res.report.converged;
                    slot.diagnostics.reseeds = res.report.reseeds;
                    slot.model = res.model;
                    previous = std::move(res.model);
                } catch (const Error& e) {
                    slot.error = e.what();
                    previous.reset();
                }
            }
        }
    });
    return cache;
}

/// Backtest rows from the day records. Days without an estimate for a
/// model are skipped for that model.
inline std::vector<BacktestRow> summarize(const std::vector<DayRecord>& records, const std::vector<Target>& targets,
                                          const RunConfig& config) {
    std::vector<std::string> tags;
    for (const auto& m : config.models) {
        if (m == "gmm")
            for (int nc : config.n_components) tags.push_back(detail::model_tag(m, nc));
        else
            tags.push_back(m);
    }
    std::vector<BacktestRow> out;
    for (const auto& tag : tags)
        for (const auto& target : targets)
            for (double alpha : config.alphas) {
                std::vector<double> realized, var;
                for (const auto& rec : records) {
                    if (rec.target != target.name) continue;
                    for (const auto& est : rec.estimates)
                        if (est.model_tag == tag && est.alpha == alpha) {
                            realized.push_back(rec.realized);
                            var.push_back(est.var);
                        }
                }
                BacktestRow row;
                row.model_tag = tag;
                row.ticker = target.name;
                row.alpha = alpha;
                row.n = realized.size();
                const auto seq = hits(realized, var, alpha);
                row.x = static_cast<std::size_t>(std::count(seq.hits.begin(), seq.hits.end(), true));
                row.quadratic_loss = realized.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                      : quadratic_loss(realized, var).total;
                if (row.n >= 2) {
                    const auto c = christoffersen(seq, config.christoffersen);
                    row.lr_uc = c.lr_uc;
                    row.p_uc = c.p_uc;
                    row.lr_ind = c.lr_ind;
                    row.p_ind = c.p_ind;
                    row.lr_cc = c.lr_cc;
                    row.p_cc = c.p_cc;
                    row.verdict = c.verdict;
                } else {
                    const double nan = std::numeric_limits<double>::quiet_NaN();
                    row.lr_uc = row.p_uc = row.lr_ind = row.p_ind = row.lr_cc = row.p_cc = nan;
                    row.verdict = Verdict::insufficient;
                }
                out.push_back(row);
            }
    return out;
}

/// Scores every model on every evaluation day using cached GMM fits.
inline BacktestRun evaluate(const ReturnPanel& panel, const RunConfig& config, const FitCache& cache,
                            const ScenarioSink& sink = {}) {
    config.validate(panel);
    const std::size_t n_targets = cache.targets.size();
    std::vector<std::vector<DayRecord>> per_target(n_targets);

    detail::parallel_for(n_targets, config.threads, [&](std::size_t ti) {
        const Target& target = cache.targets[ti];
        const PortfolioSpec spec(target.tickers, std::vector<double>(target.weights.data(),
                                                                     target.weights.data() + target.weights.size()));
        auto& out = per_target[ti];
        out.resize(static_cast<std::size_t>(config.eval_days));
        for (Eigen::Index d = 0; d < config.eval_days; ++d) {
            const Eigen::Index anchor = first_anchor(config) + d;
            DayRecord& rec = out[static_cast<std::size_t>(d)];
            rec.target = target.name;
            rec.anchor = anchor;
            rec.date = panel.dates()[static_cast<std::size_t>(anchor)];
            rec.train_end_date = panel.dates()[static_cast<std::size_t>(anchor - 1)];
            const Eigen::MatrixXd train = detail::target_block(panel, target, anchor - config.long_len, anchor);
            rec.realized = (detail::target_block(panel, target, anchor, anchor + 1) * target.weights)(0);
            const std::vector<double> series = detail::weighted_series(train, target.weights);

            for (const auto& model : config.models) {
                if (model == "gmm") {
                    std::vector<VolRatio> ratios;
                    std::string ratio_error;
                    try {
                        for (Eigen::Index c = 0; c < train.cols(); ++c) {
                            const Eigen::VectorXd col = train.col(c);
                            const std::span<const double> all(col.data(), static_cast<std::size_t>(col.size()));
                            ratios.push_back(VolRatio::from(
                                population_std(all.subspan(all.size() - static_cast<std::size_t>(config.short_len))),
                                population_std(all)));
                        }
                    } catch (const Error& e) {
                        ratio_error = e.what();
                    }
                    for (std::size_t ci = 0; ci < config.n_components.size(); ++ci) {
                        const int nc = config.n_components[ci];
                        const std::string tag = detail::model_tag(model, nc);
                        const CachedFit& cf = cache.fits[ti][ci][static_cast<std::size_t>(d)];
                        rec.fits.push_back(cf.diagnostics);
                        if (!cf.model) {
                            rec.errors.push_back(tag + ": " + cf.error);
                            continue;
                        }
                        if (!ratio_error.empty()) {
                            rec.errors.push_back(tag + ": " + ratio_error);
                            continue;
                        }
                        try {
                            const std::uint64_t seed = detail::stream_seed(config.seed, d, ti, detail::model_gmm, nc);
                            ScenarioMatrix sims =
                                rescale(simulate_gmm(*cf.model, config.paths, config.horizon, Rng(seed)), ratios);
                            sims.set_tickers(target.tickers);
                            if (sink && d + 1 == config.eval_days) sink(target.name, nc, rec.date, sims);
                            const auto r = portfolio_returns(sims, spec);
                            for (double alpha : config.alphas) rec.estimates.push_back(var_es(r, alpha, tag, seed));
                        } catch (const Error& e) {
                            rec.errors.push_back(tag + ": " + e.what());
                        }
                    }
                } else {
                    try {
                        if (model == "hs") {
                            for (double alpha : config.alphas)
                                rec.estimates.push_back(historical_var(series, alpha, config.hs_min_length));
                        } else if (model == "param") {
                            for (double alpha : config.alphas) rec.estimates.push_back(parametric_var(series, alpha));
                        } else {
                            const std::uint64_t seed = detail::stream_seed(config.seed, d, ti, detail::model_gbm);
                            const auto r = gbm_mc_returns(train, spec, config.paths, seed, config.horizon);
                            for (double alpha : config.alphas) rec.estimates.push_back(var_es(r, alpha, "gbm_mc", seed));
                        }
                    } catch (const Error& e) {
                        rec.errors.push_back(model + ": " + e.what());
                    }
                }
            }
        }
    });

    BacktestRun run;
    for (const auto& t : cache.targets) run.targets.push_back(t.name);
    for (auto& days : per_target)
        for (auto& rec : days) run.records.push_back(std::move(rec));

    // Invalid-day accounting per (target, model tag).
    for (const auto& row_target : run.targets)
        for (const auto& model : config.models) {
            std::vector<std::string> tags;
            if (model == "gmm")
                for (int nc : config.n_components) tags.push_back(detail::model_tag(model, nc));
            else
                tags.push_back(model);
            for (const auto& tag : tags) {
                std::size_t invalid = 0;
                for (const auto& rec : run.records) {
                    if (rec.target != row_target) continue;
                    const bool ok = std::any_of(rec.estimates.begin(), rec.estimates.end(),
                                                [&](const RiskEstimate& e) { return e.model_tag == tag; });
                    invalid += ok ? 0 : 1;
                }
                if (static_cast<double>(invalid) > config.max_invalid_fraction * static_cast<double>(config.eval_days))
                    detail::fail(ErrorKind::run, std::to_string(invalid) + " invalid days for " + tag + " on " +
                                                     row_target + " exceed the allowed fraction");
            }
        }

    run.report = summarize(run.records, cache.targets, config);
    for (std::size_t ti = 0; ti < cache.fits.size(); ++ti)
        for (std::size_t ci = 0; ci < cache.fits[ti].size(); ++ci)
            for (auto it = cache.fits[ti][ci].rbegin(); it != cache.fits[ti][ci].rend(); ++it)
                if (it->model) {
                    run.final_models.emplace(cache.targets[ti].name + "/" + std::to_string(config.n_components[ci]),
                                             *it->model);
                    break;
                }
    return run;
}

inline BacktestRun run_backtest(const ReturnPanel& panel, const RunConfig& config, const ScenarioSink& sink = {}) {
    return evaluate(panel, config, build_fit_cache(panel, config), sink);
}

struct SweepEntry {
    Eigen::Index short_len = 0;
    BacktestRun run;
};

/// One backtest per sigma_short window length on shared GMM fits.
inline std::vector<SweepEntry> sweep_sigma_short(const ReturnPanel& panel, const RunConfig& config,
                                                 const std::vector<Eigen::Index>& grid) {
    if (grid.empty()) detail::fail(ErrorKind::config, "empty sigma_short grid");
    for (Eigen::Index g : grid)
        if (g < 2 || g > config.long_len)
            detail::fail(ErrorKind::config, "sigma_short grid value " + std::to_string(g) + " outside [2, long_len]");
    const FitCache cache = build_fit_cache(panel, config);
    std::vector<SweepEntry> out;
    for (Eigen::Index g : grid) {
        RunConfig c = config;
        c.short_len = g;
        out.push_back({g, evaluate(panel, c, cache)});
    }
    return out;
}

}  // namespace gmmrisk
