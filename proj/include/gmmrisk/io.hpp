#pragma once

// File formats: GMM checkpoints and run configuration as JSON, per-day
// estimates / backtest summary / fit diagnostics as CSV, and the run
// manifest. Reports are written to temporary files first and renamed into
// place only after every file was written.

#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gmmrisk/engine.hpp"
#include "gmmrisk/error.hpp"
#include "gmmrisk/gmm.hpp"
#include "gmmrisk/scenario.hpp"
#include "gmmrisk/timeseries.hpp"

namespace gmmrisk {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------- JSON

inline nlohmann::json to_json(const GaussianMixtureModel& model) {
    nlohmann::json j;
    j["dim"] = model.dim();
    j["weights"] = model.weights();
    auto& means = j["means"] = nlohmann::json::array();
    auto& covs = j["covariances"] = nlohmann::json::array();
    for (int c = 0; c < model.n_components(); ++c) {
        const auto& mu = model.means()[static_cast<std::size_t>(c)];
        const auto& cov = model.covariances()[static_cast<std::size_t>(c)];
        means.push_back(std::vector<double>(mu.data(), mu.data() + mu.size()));
        auto rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < cov.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(cov.cols()));
            for (Eigen::Index c2 = 0; c2 < cov.cols(); ++c2) row[static_cast<std::size_t>(c2)] = cov(r, c2);
            rows.push_back(row);
        }
        covs.push_back(rows);
    }
    return j;
}

inline GaussianMixtureModel model_from_json(const nlohmann::json& j) {
    try {
        const auto dim = j.at("dim").get<Eigen::Index>();
        auto weights = j.at("weights").get<std::vector<double>>();
        std::vector<Eigen::VectorXd> means;
        std::vector<Eigen::MatrixXd> covs;
        for (const auto& m : j.at("means")) {
            const auto v = m.get<std::vector<double>>();
            if (static_cast<Eigen::Index>(v.size()) != dim) detail::fail(ErrorKind::shape, "mean length != dim");
            means.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), dim));
        }
        for (const auto& c : j.at("covariances")) {
            Eigen::MatrixXd cov(dim, dim);
            if (static_cast<Eigen::Index>(c.size()) != dim) detail::fail(ErrorKind::shape, "covariance rows != dim");
            for (Eigen::Index r = 0; r < dim; ++r) {
                const auto row = c.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
                if (static_cast<Eigen::Index>(row.size()) != dim)
                    detail::fail(ErrorKind::shape, "covariance cols != dim");
                for (Eigen::Index k = 0; k < dim; ++k) cov(r, k) = row[static_cast<std::size_t>(k)];
            }
            covs.push_back(std::move(cov));
        }
        return GaussianMixtureModel(std::move(weights), std::move(means), std::move(covs));
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorKind::parse, std::string("mixture JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["models"] = c.models;
    j["n_components"] = c.n_components;
    j["alphas"] = c.alphas;
    j["window_long"] = c.long_len;
    j["window_short"] = c.short_len;
    j["paths"] = c.paths;
    j["horizon"] = c.horizon;
    j["eval_days"] = c.eval_days;
    j["seed"] = c.seed;
    j["per_asset"] = c.per_asset;
    j["hs_min_length"] = c.hs_min_length;
    j["max_invalid_fraction"] = c.max_invalid_fraction;
    j["em"] = {{"tolerance", c.em.tolerance},
               {"max_iter", c.em.max_iter},
               {"kmeans_iter", c.em.kmeans_iter},
               {"floor_relative", c.em.floor_relative},
               {"floor_absolute", c.em.floor_absolute}};
    j["christoffersen"] = {{"df_uc", c.christoffersen.df_uc},
                           {"df_ind", c.christoffersen.df_ind},
                           {"df_cc", c.christoffersen.df_cc},
                           {"threshold", c.christoffersen.threshold}};
    if (c.portfolio)
        j["portfolio"] = {{"tickers", c.portfolio->tickers()}, {"weights", c.portfolio->weights()}};
    else
        j["portfolio"] = nullptr;
    return j;
}

/// Fields missing from `j` keep the values already in `base`.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("models", base.models);
        get("n_components", base.n_components);
        get("alphas", base.alphas);
        get("window_long", base.long_len);
        get("window_short", base.short_len);
        get("paths", base.paths);
        get("horizon", base.horizon);
        get("eval_days", base.eval_days);
        get("seed", base.seed);
        get("per_asset", base.per_asset);
        get("hs_min_length", base.hs_min_length);
        get("max_invalid_fraction", base.max_invalid_fraction);
        if (j.contains("em")) {
            const auto& e = j.at("em");
            if (e.contains("tolerance")) base.em.tolerance = e.at("tolerance").get<double>();
            if (e.contains("max_iter")) base.em.max_iter = e.at("max_iter").get<int>();
            if (e.contains("kmeans_iter")) base.em.kmeans_iter = e.at("kmeans_iter").get<int>();
            if (e.contains("floor_relative")) base.em.floor_relative = e.at("floor_relative").get<double>();
            if (e.contains("floor_absolute")) base.em.floor_absolute = e.at("floor_absolute").get<double>();
        }
        if (j.contains("christoffersen")) {
            const auto& c = j.at("christoffersen");
            if (c.contains("df_uc")) base.christoffersen.df_uc = c.at("df_uc").get<double>();
            if (c.contains("df_ind")) base.christoffersen.df_ind = c.at("df_ind").get<double>();
            if (c.contains("df_cc")) base.christoffersen.df_cc = c.at("df_cc").get<double>();
            if (c.contains("threshold")) base.christoffersen.threshold = c.at("threshold").get<double>();
        }
        if (j.contains("portfolio") && !j.at("portfolio").is_null()) {
            const auto& p = j.at("portfolio");
            base.portfolio = PortfolioSpec(p.at("tickers").get<std::vector<std::string>>(),
                                           p.at("weights").get<std::vector<double>>());
        }
        return base;
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorKind::config, std::string("config JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------- CSV

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        detail::fail(ErrorKind::parse, "cannot parse number '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        detail::fail(ErrorKind::parse, "cannot parse integer '" + std::string(s) + "'");
    return v;
}

inline const char* estimates_header() { return "date,ticker,model_tag,alpha,var,es,n_tail,seed,realized"; }
inline const char* summary_header() {
    return "model_tag,ticker,alpha,n,x,lr_uc,p_uc,lr_ind,p_ind,lr_cc,p_cc,quadratic_loss,verdict";
}
inline const char* fits_header() { return "date,ticker,n_components,init_mode,iterations,loglik,converged,reseeds"; }

/// One row of the per-day estimates file.
struct EstimateRow {
    std::string date;
    std::string ticker;
    RiskEstimate estimate;
    double realized = 0.0;

    bool operator==(const EstimateRow& o) const {
        return date == o.date && ticker == o.ticker && estimate.model_tag == o.estimate.model_tag &&
               estimate.alpha == o.estimate.alpha && estimate.var == o.estimate.var && estimate.es == o.estimate.es &&
               estimate.n_tail == o.estimate.n_tail && estimate.seed == o.estimate.seed && realized == o.realized;
    }
};

struct FitRow {
    std::string date;
    std::string ticker;
    FitDiagnostics fit;

    bool operator==(const FitRow& o) const {
        return date == o.date && ticker == o.ticker && fit.n_components == o.fit.n_components &&
               fit.init_mode == o.fit.init_mode && fit.iterations == o.fit.iterations && fit.loglik == o.fit.loglik &&
               fit.converged == o.fit.converged && fit.reseeds == o.fit.reseeds;
    }
};

inline std::vector<EstimateRow> estimate_rows(const std::vector<DayRecord>& records) {
    std::vector<EstimateRow> out;
    for (const auto& r : records)
        for (const auto& e : r.estimates) out.push_back({r.date, r.target, e, r.realized});
    return out;
}

inline std::vector<FitRow> fit_rows(const std::vector<DayRecord>& records) {
    std::vector<FitRow> out;
    for (const auto& r : records)
        for (const auto& f : r.fits)
            if (f.iterations > 0) out.push_back({r.date, r.target, f});
    return out;
}

inline void write_estimates_csv(std::ostream& out, const std::vector<EstimateRow>& rows) {
    out << estimates_header() << '\n';
    for (const auto& r : rows)
        out << r.date << ',' << r.ticker << ',' << r.estimate.model_tag << ',' << format_double(r.estimate.alpha) << ','
            << format_double(r.estimate.var) << ',' << format_double(r.estimate.es) << ',' << r.estimate.n_tail << ','
            << r.estimate.seed << ',' << format_double(r.realized) << '\n';
}

inline void write_summary_csv(std::ostream& out, const std::vector<BacktestRow>& rows) {
    out << summary_header() << '\n';
    for (const auto& r : rows)
        out << r.model_tag << ',' << r.ticker << ',' << format_double(r.alpha) << ',' << r.n << ',' << r.x << ','
            << format_double(r.lr_uc) << ',' << format_double(r.p_uc) << ',' << format_double(r.lr_ind) << ','
            << format_double(r.p_ind) << ',' << format_double(r.lr_cc) << ',' << format_double(r.p_cc) << ','
            << format_double(r.quadratic_loss) << ',' << to_string(r.verdict) << '\n';
}

inline void write_fits_csv(std::ostream& out, const std::vector<FitRow>& rows) {
    out << fits_header() << '\n';
    for (const auto& r : rows)
        out << r.date << ',' << r.ticker << ',' << r.fit.n_components << ',' << to_string(r.fit.init_mode) << ','
            << r.fit.iterations << ',' << format_double(r.fit.loglik) << ',' << (r.fit.converged ? 1 : 0) << ','
            << r.fit.reseeds << '\n';
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_body(std::istream& in, std::string_view expected_header) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::parse, "empty CSV");
    if (trim(line) != expected_header) fail(ErrorKind::parse, "unexpected CSV header '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    const std::size_t width = split_csv_line(expected_header).size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(trim(line));
        if (fields.size() != width) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": wrong field count");
        rows.emplace_back(fields.begin(), fields.end());
    }
    return rows;
}

inline Verdict parse_verdict(const std::string& s) {
    if (s == "not_rejected") return Verdict::not_rejected;
    if (s == "rejected") return Verdict::rejected;
    if (s == "insufficient") return Verdict::insufficient;
    fail(ErrorKind::parse, "unknown verdict '" + s + "'");
}

}  // namespace detail

inline std::vector<EstimateRow> read_estimates_csv(std::istream& in) {
    std::vector<EstimateRow> out;
    for (const auto& f : detail::read_csv_body(in, estimates_header())) {
        EstimateRow r;
        r.date = f[0];
        r.ticker = f[1];
        r.estimate.model_tag = f[2];
        r.estimate.alpha = parse_double(f[3]);
        r.estimate.var = parse_double(f[4]);
        r.estimate.es = parse_double(f[5]);
        r.estimate.n_tail = parse_u64(f[6]);
        r.estimate.seed = parse_u64(f[7]);
        r.realized = parse_double(f[8]);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<BacktestRow> read_summary_csv(std::istream& in) {
    std::vector<BacktestRow> out;
    for (const auto& f : detail::read_csv_body(in, summary_header())) {
        BacktestRow r;
        r.model_tag = f[0];
        r.ticker = f[1];
        r.alpha = parse_double(f[2]);
        r.n = parse_u64(f[3]);
        r.x = parse_u64(f[4]);
        r.lr_uc = parse_double(f[5]);
        r.p_uc = parse_double(f[6]);
        r.lr_ind = parse_double(f[7]);
        r.p_ind = parse_double(f[8]);
        r.lr_cc = parse_double(f[9]);
        r.p_cc = parse_double(f[10]);
        r.quadratic_loss = parse_double(f[11]);
        r.verdict = detail::parse_verdict(f[12]);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<FitRow> read_fits_csv(std::istream& in) {
    std::vector<FitRow> out;
    for (const auto& f : detail::read_csv_body(in, fits_header())) {
        FitRow r;
        r.date = f[0];
        r.ticker = f[1];
        r.fit.n_components = static_cast<int>(parse_u64(f[2]));
        if (f[3] == "kmeans")
            r.fit.init_mode = InitMode::kmeans;
        else if (f[3] == "warm_start")
            r.fit.init_mode = InitMode::warm_start;
        else
            detail::fail(ErrorKind::parse, "unknown init mode '" + f[3] + "'");
        r.fit.iterations = static_cast<int>(parse_u64(f[4]));
        r.fit.loglik = parse_double(f[5]);
        r.fit.converged = f[6] == "1";
        r.fit.reseeds = static_cast<int>(parse_u64(f[7]));
        out.push_back(std::move(r));
    }
    return out;
}

/// Audit dump of a scenario matrix: path,step,ticker,log_return.
inline void write_scenarios_csv(std::ostream& out, const ScenarioMatrix& s) {
    out << "path,step,ticker,log_return\n";
    for (Eigen::Index p = 0; p < s.paths(); ++p)
        for (Eigen::Index t = 0; t < s.steps(); ++t)
            for (Eigen::Index j = 0; j < s.assets(); ++j) {
                const std::string ticker =
                    s.tickers().empty() ? std::to_string(j) : s.tickers()[static_cast<std::size_t>(j)];
                out << p << ',' << t + 1 << ',' << ticker << ',' << format_double(s(p, t, j)) << '\n';
            }
}

// ---------------------------------------------------------------- report

struct ReportFiles {
    std::filesystem::path estimates;
    std::filesystem::path summary;
    std::filesystem::path fits;
    std::filesystem::path manifest;
};

struct ReportOptions {
    double wall_clock_seconds = 0.0;
    bool include_timestamp = true;
};

/// Writes estimates.csv, backtest_summary.csv, fit_diagnostics.csv and
/// manifest.json. With no records only the manifest is written.
inline ReportFiles report(const BacktestRun& run, const RunConfig& config, const std::filesystem::path& out_dir,
                          const ReportOptions& options = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) detail::fail(ErrorKind::io, "cannot create output directory " + out_dir.string());

    const bool empty = run.records.empty();
    std::map<std::string, std::string> contents;
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config"] = to_json(config);
    manifest["seed"] = config.seed;
    manifest["wall_clock_seconds"] = options.wall_clock_seconds;
    if (options.include_timestamp) {
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        manifest["generated_at"] = buf;
    }
    manifest["targets"] = run.targets;
    manifest["empty"] = empty;
    auto invalid = nlohmann::json::array();
    for (const auto& r : run.records)
        for (const auto& e : r.errors) invalid.push_back({{"date", r.date}, {"ticker", r.target}, {"error", e}});
    manifest["invalid_days"] = invalid;

    if (!empty) {
        std::ostringstream est, sum, fits;
        const auto est_rows = estimate_rows(run.records);
        const auto fit_list = fit_rows(run.records);
        write_estimates_csv(est, est_rows);
        write_summary_csv(sum, run.report);
        write_fits_csv(fits, fit_list);
        contents["estimates.csv"] = est.str();
        contents["backtest_summary.csv"] = sum.str();
        contents["fit_diagnostics.csv"] = fits.str();
        manifest["files"] = {"estimates.csv", "backtest_summary.csv", "fit_diagnostics.csv"};
        manifest["counts"] = {{"records", run.records.size()},
                              {"estimates", est_rows.size()},
                              {"report_rows", run.report.size()},
                              {"fit_rows", fit_list.size()}};
    } else {
        manifest["files"] = nlohmann::json::array();
        manifest["counts"] = {{"records", 0}, {"estimates", 0}, {"report_rows", 0}, {"fit_rows", 0}};
    }
    contents["manifest.json"] = manifest.dump(2) + "\n";

    std::vector<std::pair<fs::path, fs::path>> staged;
    auto cleanup = [&] {
        for (const auto& [tmp, _] : staged) fs::remove(tmp, ec);
    };
    for (const auto& [name, text] : contents) {
        const fs::path final_path = out_dir / name;
        const fs::path tmp = out_dir / (name + ".tmp");
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (f) {
            staged.emplace_back(tmp, final_path);
            f << text;
            f.close();
        }
        if (!f) {
            cleanup();
            detail::fail(ErrorKind::io, "cannot write " + tmp.string());
        }
    }
    for (const auto& [tmp, final_path] : staged) {
        fs::rename(tmp, final_path, ec);
        if (ec) {
            cleanup();
            detail::fail(ErrorKind::io, "cannot rename " + tmp.string() + ": " + ec.message());
        }
    }
    return {empty ? fs::path{} : out_dir / "estimates.csv", empty ? fs::path{} : out_dir / "backtest_summary.csv",
            empty ? fs::path{} : out_dir / "fit_diagnostics.csv", out_dir / "manifest.json"};
}

}  // namespace gmmrisk
