// riskengine: rolling GMM Monte Carlo VaR/ES backtests from the command line.
//
//   riskengine run      --prices FILE [--config FILE] [flags...] --out DIR
//   riskengine sweep    --prices FILE --param sigma-short --grid 10:90:10 --out DIR
//   riskengine gof      --prices FILE --components 3,4,5,6
//   riskengine describe --prices FILE
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 run-level failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gmmrisk/gmmrisk.hpp"

namespace {

using namespace gmmrisk;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRun = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return kExitConfig;
        case ErrorKind::parse:
        case ErrorKind::validation:
        case ErrorKind::insufficient:
        case ErrorKind::shape:
        case ErrorKind::degenerate: return kExitData;
        default: return kExitRun;
    }
}

struct RunFlags {
    std::string prices;
    std::string config_path;
    std::string models;
    std::string components;
    std::string alphas;
    long window_long = 0;
    long window_short = 0;
    long paths = 0;
    long days = 0;
    std::uint64_t seed = 0;
    std::string portfolio;
    bool no_per_asset = false;
    int threads = 0;
    std::string out;
    std::string warm_start;
    std::string save_models;
    std::string dump_scenarios;
    std::map<std::string, CLI::Option*> opts;

    bool given(const std::string& name) const {
        auto it = opts.find(name);
        return it != opts.end() && it->second->count() > 0;
    }
};

template <class T>
std::vector<T> split_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            if constexpr (std::is_same_v<T, std::string>)
                out.push_back(item);
            else if constexpr (std::is_same_v<T, int>)
                out.push_back(std::stoi(item));
            else
                out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error(ErrorKind::config, "cannot parse list item '" + item + "'");
        }
    }
    return out;
}

void add_run_flags(CLI::App* app, RunFlags& f, bool needs_out) {
    f.opts["prices"] = app->add_option("--prices", f.prices, "Wide CSV of close prices")->required();
    f.opts["config"] = app->add_option("--config", f.config_path, "JSON run configuration (flags override it)");
    f.opts["models"] = app->add_option("--models", f.models, "Comma list of gmm,hs,param,gbm_mc");
    f.opts["components"] = app->add_option("--components", f.components, "Comma list of GMM component counts");
    f.opts["alpha"] = app->add_option("--alpha", f.alphas, "Comma list of tail levels");
    f.opts["window-long"] = app->add_option("--window-long", f.window_long, "Long window (days)");
    f.opts["window-short"] = app->add_option("--window-short", f.window_short, "Short window (days)");
    f.opts["paths"] = app->add_option("--paths", f.paths, "Monte Carlo paths per day");
    f.opts["days"] = app->add_option("--days", f.days, "Evaluation days");
    f.opts["seed"] = app->add_option("--seed", f.seed, "Root random seed");
    f.opts["portfolio"] =
        app->add_option("--portfolio", f.portfolio, "'equal' for an equal-weight portfolio of all tickers, or a JSON "
                                                    "file {tickers:[...], weights:[...]}");
    f.opts["no-per-asset"] = app->add_flag("--no-per-asset", f.no_per_asset, "Skip the per-ticker backtests");
    f.opts["threads"] = app->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
    auto* out = app->add_option("--out", f.out, "Output directory");
    if (needs_out) out->required();
    f.opts["out"] = out;
    f.opts["warm-start"] = app->add_option("--warm-start", f.warm_start, "JSON checkpoint of day-1 mixtures");
    f.opts["save-models"] = app->add_option("--save-models", f.save_models, "Write final mixtures as JSON checkpoint");
    f.opts["dump-scenarios"] =
        app->add_option("--dump-scenarios", f.dump_scenarios, "CSV dump of the final day's GMM scenarios");
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, path + ": " + e.what());
    }
}

RunConfig build_config(const RunFlags& f, const std::vector<std::string>& tickers) {
    RunConfig c;
    if (f.given("config")) c = config_from_json(read_json(f.config_path));
    if (f.given("models")) c.models = split_list<std::string>(f.models);
    if (f.given("components")) c.n_components = split_list<int>(f.components);
    if (f.given("alpha")) c.alphas = split_list<double>(f.alphas);
    if (f.given("window-long")) c.long_len = f.window_long;
    if (f.given("window-short")) c.short_len = f.window_short;
    if (f.given("paths")) c.paths = f.paths;
    if (f.given("days")) c.eval_days = f.days;
    if (f.given("seed")) c.seed = f.seed;
    if (f.given("no-per-asset")) c.per_asset = !f.no_per_asset;
    if (f.given("threads")) c.threads = f.threads;
    if (f.given("portfolio")) {
        if (f.portfolio == "equal") {
            c.portfolio = PortfolioSpec::equal_weight(tickers);
        } else if (f.portfolio == "none") {
            c.portfolio.reset();
        } else {
            const auto j = read_json(f.portfolio);
            try {
                c.portfolio = PortfolioSpec(j.at("tickers").get<std::vector<std::string>>(),
                                            j.at("weights").get<std::vector<double>>());
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::config, f.portfolio + ": " + e.what());
            }
        }
    }
    if (f.given("warm-start")) {
        const auto j = read_json(f.warm_start);
        for (const auto& [key, value] : j.at("models").items()) c.initial_models.emplace(key, model_from_json(value));
    }
    return c;
}

ReturnPanel load_returns(const std::string& path) {
    try {
        return log_returns(load_prices(path));
    } catch (const Error& e) {
        // A missing or unreadable input is a data problem, not a run failure.
        if (e.kind() == ErrorKind::io) throw Error(ErrorKind::validation, e.what());
        throw;
    }
}

void save_models(const std::string& path, const BacktestRun& run) {
    nlohmann::json j;
    j["models"] = nlohmann::json::object();
    for (const auto& [key, model] : run.final_models) j["models"][key] = to_json(model);
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out << j.dump(2) << '\n';
}

int cmd_run(const RunFlags& f) {
    const ReturnPanel panel = load_returns(f.prices);
    const RunConfig config = build_config(f, panel.tickers());
    config.validate(panel);

    std::ofstream dump;
    ScenarioSink sink;
    if (!f.dump_scenarios.empty()) {
        dump.open(f.dump_scenarios);
        if (!dump) throw Error(ErrorKind::io, "cannot write " + f.dump_scenarios);
        dump << "target,n_components,date,";
        bool header_done = false;
        sink = [&](const std::string& target, int nc, const std::string& date, const ScenarioMatrix& s) {
            std::ostringstream body;
            write_scenarios_csv(body, s);
            std::string text = body.str();
            const auto first_newline = text.find('\n');
            if (!header_done) {
                dump << text.substr(0, first_newline + 1);
                header_done = true;
            }
            std::istringstream lines(text.substr(first_newline + 1));
            std::string line;
            while (std::getline(lines, line)) dump << target << ',' << nc << ',' << date << ',' << line << '\n';
        };
    }

    const auto start = std::chrono::steady_clock::now();
    const BacktestRun run = run_backtest(panel, config, sink);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report(run, config, f.out, {seconds, true});
    if (!f.save_models.empty()) save_models(f.save_models, run);

    std::size_t rejected = 0;
    for (const auto& row : run.report) rejected += row.verdict == Verdict::rejected ? 1 : 0;
    std::cerr << "riskengine: " << run.records.size() << " day records, " << run.report.size() << " backtests ("
              << rejected << " rejected) in " << seconds << " s -> " << f.out << '\n';
    return 0;
}

std::vector<Eigen::Index> parse_grid(const std::string& text) {
    std::vector<Eigen::Index> grid;
    if (text.find(':') != std::string::npos) {
        std::vector<int> p;
        std::stringstream ss(text);
        std::string item;
        try {
            while (std::getline(ss, item, ':')) p.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw Error(ErrorKind::config, "cannot parse grid '" + text + "'");
        }
        if (p.size() != 3 || p[2] <= 0 || p[1] < p[0]) throw Error(ErrorKind::config, "grid must be start:stop:step");
        for (int v = p[0]; v <= p[1]; v += p[2]) grid.push_back(v);
    } else {
        for (int v : split_list<int>(text)) grid.push_back(v);
    }
    if (grid.empty()) throw Error(ErrorKind::config, "empty grid");
    return grid;
}

int cmd_sweep(const RunFlags& f, const std::string& param, const std::string& grid_text) {
    if (param != "sigma-short") throw Error(ErrorKind::config, "only --param sigma-short is supported");
    const ReturnPanel panel = load_returns(f.prices);
    const RunConfig config = build_config(f, panel.tickers());
    config.validate(panel);
    const auto grid = parse_grid(grid_text);
    const auto sweep = sweep_sigma_short(panel, config, grid);

    std::ostringstream table;
    table << "window_short,model_tag,ticker,alpha,n,x,p_uc,p_ind,verdict\n";
    for (const auto& entry : sweep) {
        RunConfig c = config;
        c.short_len = entry.short_len;
        report(entry.run, c, std::filesystem::path(f.out) / ("sigma_short_" + std::to_string(entry.short_len)));
        for (const auto& row : entry.run.report)
            table << entry.short_len << ',' << row.model_tag << ',' << row.ticker << ',' << format_double(row.alpha)
                  << ',' << row.n << ',' << row.x << ',' << format_double(row.p_uc) << ','
                  << format_double(row.p_ind) << ',' << to_string(row.verdict) << '\n';
    }
    std::ofstream out(std::filesystem::path(f.out) / "sweep_verdicts.csv");
    if (!out) throw Error(ErrorKind::io, "cannot write sweep_verdicts.csv");
    out << table.str();
    return 0;
}

int cmd_gof(const std::string& prices, const std::string& components, std::uint64_t seed, const std::string& out_path) {
    const ReturnPanel panel = load_returns(prices);
    const auto ncs = split_list<int>(components);
    if (ncs.empty()) throw Error(ErrorKind::config, "no component counts given");
    std::ostringstream table;
    table << "ticker,model,loglik_per_sample,rmse,ks_stat,ks_pvalue\n";
    EmSettings em;
    em.seed = seed;
    for (Eigen::Index j = 0; j < panel.cols(); ++j) {
        const auto series = panel.column(j);
        std::vector<FitQuality> rows{normal_quality(series)};
        for (int nc : ncs) rows.push_back(gmm_quality(series, nc, em));
        for (const auto& q : rows)
            table << panel.tickers()[static_cast<std::size_t>(j)] << ',' << q.model << ','
                  << format_double(q.loglik_per_sample) << ',' << format_double(q.gof.rmse) << ','
                  << format_double(q.gof.ks_stat) << ',' << format_double(q.gof.ks_pvalue) << '\n';
    }
    if (out_path.empty()) {
        std::cout << table.str();
    } else {
        std::ofstream out(out_path);
        if (!out) throw Error(ErrorKind::io, "cannot write " + out_path);
        out << table.str();
    }
    return 0;
}

int cmd_describe(const std::string& prices) {
    const ReturnPanel panel = load_returns(prices);
    std::cout << "ticker,n,mean,std,skewness,excess_kurtosis,jarque_bera,jb_pvalue,max,min\n";
    for (Eigen::Index j = 0; j < panel.cols(); ++j) {
        const auto series = panel.column(j);
        const auto s = describe(series);
        std::cout << panel.tickers()[static_cast<std::size_t>(j)] << ',' << series.size() << ','
                  << format_double(s.mean) << ',' << format_double(s.std) << ',' << format_double(s.skewness) << ','
                  << format_double(s.excess_kurtosis) << ',' << format_double(s.jarque_bera) << ','
                  << format_double(s.jb_pvalue) << ',' << format_double(s.max) << ',' << format_double(s.min) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GMM Monte Carlo VaR/ES engine with rolling backtests"};
    app.require_subcommand(1);

    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "Rolling backtest of the configured models");
    add_run_flags(run, run_flags, true);

    RunFlags sweep_flags;
    std::string sweep_param = "sigma-short";
    std::string sweep_grid = "10:90:10";
    auto* sweep = app.add_subcommand("sweep", "Backtests over a grid of short-window lengths");
    add_run_flags(sweep, sweep_flags, true);
    sweep->add_option("--param", sweep_param, "Swept parameter (sigma-short)");
    sweep->add_option("--grid", sweep_grid, "start:stop:step or comma list");

    std::string gof_prices, gof_components = "3,4,5,6", gof_out;
    std::uint64_t gof_seed = 0;
    auto* gof = app.add_subcommand("gof", "Goodness of fit of GMMs vs a normal on each ticker");
    gof->add_option("--prices", gof_prices, "Wide CSV of close prices")->required();
    gof->add_option("--components", gof_components, "Comma list of component counts");
    gof->add_option("--seed", gof_seed, "k-means seed");
    gof->add_option("--out", gof_out, "Output CSV (default stdout)");

    std::string describe_prices;
    auto* desc = app.add_subcommand("describe", "Descriptive statistics of each return series");
    desc->add_option("--prices", describe_prices, "Wide CSV of close prices")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(run_flags);
        if (*sweep) return cmd_sweep(sweep_flags, sweep_param, sweep_grid);
        if (*gof) return cmd_gof(gof_prices, gof_components, gof_seed, gof_out);
        if (*desc) return cmd_describe(describe_prices);
    } catch (const Error& e) {
        std::cerr << "riskengine: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "riskengine: " << e.what() << '\n';
        return kExitRun;
    }
    return 0;
}
