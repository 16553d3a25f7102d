#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rsdpe/approximation.hpp"
#include "rsdpe/common.hpp"
#include "rsdpe/config_io.hpp"
#include "rsdpe/dpe_solver.hpp"
#include "rsdpe/model.hpp"
#include "rsdpe/simulation.hpp"
#include "rsdpe/solution_io.hpp"
#include "rsdpe/strategy.hpp"

namespace rsdpe {

namespace detail {

struct InitCondition {
    double t = 0.0;
    int label = 1;
    std::string bits;
    double x = 1.0;
};

// Parses "t=0,i=1,z=00,x=1"; t and x are optional.
inline InitCondition parse_init(const std::string& text, int n_stocks) {
    InitCondition init;
    init.bits = std::string(static_cast<size_t>(n_stocks), '0');
    std::istringstream is(text);
    std::string kv;
    while (std::getline(is, kv, ',')) {
        const size_t eq = kv.find('=');
        require(eq != std::string::npos, "invalid_argument",
                "init entry \"" + kv + "\" is not key=value");
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        try {
            if (key == "t")
                init.t = std::stod(val);
            else if (key == "i")
                init.label = std::stoi(val);
            else if (key == "z")
                init.bits = val;
            else if (key == "x")
                init.x = std::stod(val);
            else
                fail("invalid_argument", "unknown init key \"" + key + "\"");
        } catch (const std::invalid_argument&) {
            fail("invalid_argument", "cannot parse init value \"" + kv + "\"");
        } catch (const std::out_of_range&) {
            fail("invalid_argument", "init value out of range in \"" + kv + "\"");
        }
    }
    return init;
}

inline FiniteMarket build_market(const LoadedConfig& cfg, int level) {
    if (!cfg.countable) return materialize(cfg.spec);
    require(level >= 1, "invalid_argument",
            "countable model: pass --level to choose the truncation");
    return truncate_model(cfg.spec, level);
}

inline nlohmann::json layer_report(const FiniteMarket& market, const SolutionGrid& sol) {
    nlohmann::json layers = nlohmann::json::object();
    for (int mask = 0; mask < market.n_states(); ++mask) {
        const DefaultState z(static_cast<std::uint32_t>(mask), market.n_stocks);
        const LayerSolution& layer = sol.layers[static_cast<size_t>(mask)];
        nlohmann::json entry;
        entry["epsilon"] = layer.epsilon;
        entry["min_value"] = layer.min_value;
        entry["max_foc_residual"] = layer.max_foc_residual;
        layers[z.bitstring()] = entry;
    }
    return layers;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Risk-sensitive default-contagion portfolio solver"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string solution_dir;
    std::string init_text = "t=0,i=1,x=1";
    std::string strategy_kind = "solution";
    std::string paths_csv;
    std::vector<int> levels;
    int steps_override = 0;
    int level = 0;
    int bound_n = 8;
    double bound_horizon = -1.0;
    double tol_override = 0.0;
    long n_paths = 100000;
    std::uint64_t seed = 0;
    int substeps_override = 0;

    CLI::App* solve = app.add_subcommand("solve", "Solve the layered ODE system");
    solve->add_option("--config", config_path, "model config JSON")->required();
    solve->add_option("--out", out_dir, "output directory")->required();
    solve->add_option("--steps", steps_override, "time grid steps");
    solve->add_option("--level", level, "truncation level (countable models)");

    CLI::App* approx = app.add_subcommand("approximate", "Run the truncation ladder");
    approx->add_option("--config", config_path, "model config JSON")->required();
    approx->add_option("--out", out_dir, "output directory")->required();
    approx->add_option("--levels", levels, "truncation levels")->delimiter(',');
    approx->add_option("--tol", tol_override, "sup-gap convergence tolerance");
    approx->add_option("--steps", steps_override, "time grid steps");

    CLI::App* strat = app.add_subcommand("strategy", "Extract the feedback strategy");
    strat->add_option("--solution", solution_dir, "solved output directory")->required();
    strat->add_option("--out", out_dir, "output directory")->required();

    CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo check of the value");
    sim->add_option("--solution", solution_dir, "solved output directory")->required();
    sim->add_option("--paths", n_paths, "number of paths");
    sim->add_option("--seed", seed, "RNG seed");
    sim->add_option("--init", init_text, "initial point, e.g. t=0,i=1,z=00,x=1");
    sim->add_option("--strategy", strategy_kind, "strategy source: solution or zero")
        ->check(CLI::IsMember({"solution", "zero"}));
    sim->add_option("--substeps", substeps_override, "quadrature substeps per interval");
    sim->add_option("--out", paths_csv, "optional per-path CSV file");

    CLI::App* bound = app.add_subcommand("bound", "Escape-probability error bound");
    bound->add_option("--config", config_path, "model config JSON")->required();
    bound->add_option("--n", bound_n, "retained regime count")->required();
    bound->add_option("--horizon", bound_horizon, "time horizon (default: config T)");

    CLI::App* validate = app.add_subcommand("validate", "Validate a model config");
    validate->add_option("--config", config_path, "model config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        nlohmann::json err;
        err["error"] = {{"type", "usage"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }

    try {
        if (solve->parsed()) {
            LoadedConfig cfg = load_config(config_path);
            if (steps_override > 0) cfg.solver.steps = steps_override;
            const FiniteMarket market = detail::build_market(cfg, level);
            const SolutionGrid sol = solve_finite(market, cfg.solver);
            save_solution(out_dir, market, sol, cfg.raw);

            nlohmann::json report;
            report["kind"] = market.has_absorbing ? "truncated" : "finite";
            report["steps"] = sol.grid.steps;
            report["out"] = out_dir;
            report["layers"] = detail::layer_report(market, sol);
            std::cout << report.dump(2) << "\n";
            return 0;
        }

        if (approx->parsed()) {
            LoadedConfig cfg = load_config(config_path);
            if (steps_override > 0) cfg.solver.steps = steps_override;
            if (tol_override > 0.0) cfg.approx.tol_sup = tol_override;
            if (!levels.empty()) cfg.levels = levels;
            cfg.approx.solver = cfg.solver;
            require(cfg.countable, "invalid_argument",
                    "approximate needs a countable-generator config");

            const auto start = std::chrono::steady_clock::now();
            const ApproximationRun run = run_sequence(cfg.spec, cfg.levels, cfg.approx);
            const auto stop = std::chrono::steady_clock::now();

            namespace fs = std::filesystem;
            fs::create_directories(out_dir);
            for (const LevelSolution& lvl : run.runs)
                save_solution((fs::path(out_dir) / ("level_" + std::to_string(lvl.level))).string(),
                              lvl.market, lvl.solution, cfg.raw);

            nlohmann::json report;
            report["levels"] = run.levels;
            report["sup_deltas"] = run.sup_deltas;
            report["monotone"] = run.monotone;
            report["monotone_violations"] = run.monotone_violations;
            report["converged"] = run.converged;
            report["tol_sup"] = cfg.approx.tol_sup;
            report["wall_time_ms"] = run.wall_ms;
            report["total_wall_time_ms"] =
                std::chrono::duration<double, std::milli>(stop - start).count();

            nlohmann::json bounds = nlohmann::json::object();
            const int cap = cfg.approx.window > 0
                                ? std::min(cfg.approx.window, cfg.levels.front())
                                : cfg.levels.front();
            for (int lbl = 1; lbl <= cap; ++lbl)
                bounds[std::to_string(lbl)] = error_bound(cfg.spec.generator, cfg.levels.back(),
                                                          lbl, cfg.spec.horizon);
            report["error_bound"] = bounds;

            std::ofstream rep_out(fs::path(out_dir) / "approximation.json");
            require(rep_out.good(), "io_error", "cannot write approximation.json in " + out_dir);
            rep_out << report.dump(2) << "\n";
            std::cout << report.dump(2) << "\n";
            return 0;
        }

        if (strat->parsed()) {
            SavedSolution saved = load_solution(solution_dir);
            const StrategyGrid grid =
                extract_strategy(saved.market, saved.solution, saved.config.solver.minimize);
            const AdmissibilityReport rep =
                admissibility_report(saved.market, grid, saved.config.margin_threshold);
            save_strategy(out_dir, saved.market, grid, rep);

            nlohmann::json report;
            report["out"] = out_dir;
            report["b_sigma"] = rep.b_sigma;
            report["b_lambda"] = rep.b_lambda;
            report["exp_bound"] = rep.exp_bound;
            report["min_margin"] = rep.min_margin;
            report["max_foc_residual"] = rep.max_foc_residual;
            report["margins_ok"] = rep.margins_ok;
            std::cout << report.dump(2) << "\n";
            return 0;
        }

        if (sim->parsed()) {
            SavedSolution saved = load_solution(solution_dir);
            const detail::InitCondition init =
                detail::parse_init(init_text, saved.market.n_stocks);
            require(!init.bits.empty(), "invalid_argument", "init needs z=<bitstring>");
            const DefaultState z0 = DefaultState::from_bitstring(init.bits);
            require(z0.n_stocks == saved.market.n_stocks, "invalid_argument",
                    "init bitstring length does not match the model");
            require(init.x > 0.0, "invalid_argument", "initial wealth must be positive");
            require(init.t >= 0.0 && init.t < saved.market.horizon, "invalid_argument",
                    "initial time must lie in [0, T)");

            SimulationJob job;
            job.t0 = init.t;
            job.regime_idx = saved.market.index_of_label(init.label);
            job.z0 = z0;
            job.x0 = init.x;
            job.n_paths = n_paths;
            job.seed = seed;
            job.wealth = saved.config.simulation;
            if (substeps_override > 0) job.wealth.substeps = substeps_override;

            StrategyGrid grid;
            StrategySource source;
            if (strategy_kind == "zero") {
                source = zero_strategy(saved.market.n_stocks);
            } else {
                grid = extract_strategy(saved.market, saved.solution,
                                        saved.config.solver.minimize);
                source = grid_strategy(grid);
            }

            const std::vector<double> sample =
                detail::sample_log_wealth(saved.market, source, job);
            const ObjectiveEstimate est =
                estimate_from_sample(sample, saved.market.theta, job.x0);
            const double solver_value = saved.solution.value_at(init.t, job.regime_idx, z0);
            const double z_score = est.std_error > 0.0
                                       ? (est.value_form - solver_value) / est.std_error
                                       : 0.0;

            if (!paths_csv.empty()) {
                std::ofstream csv(paths_csv);
                require(csv.good(), "io_error", "cannot write " + paths_csv);
                csv << "path,log_wealth\n";
                for (size_t p = 0; p < sample.size(); ++p)
                    csv << p << "," << full_precision(sample[p]) << "\n";
            }

            nlohmann::json report;
            report["estimate"] = est.objective;
            report["se"] = est.std_error;
            report["value_form"] = est.value_form;
            report["solver_value"] = solver_value;
            report["z_score"] = z_score;
            report["n_paths"] = est.n_paths;
            report["degenerate"] = est.degenerate;
            report["strategy"] = strategy_kind;
            report["seed"] = seed;
            std::cout << report.dump(2) << "\n";
            return 0;
        }

        if (bound->parsed()) {
            LoadedConfig cfg = load_config(config_path);
            const double s = bound_horizon >= 0.0 ? bound_horizon : cfg.spec.horizon;
            nlohmann::json bounds = nlohmann::json::object();
            for (int lbl = 1; lbl <= bound_n; ++lbl)
                bounds[std::to_string(lbl)] = error_bound(cfg.spec.generator, bound_n, lbl, s);
            nlohmann::json report;
            report["n"] = bound_n;
            report["horizon"] = s;
            report["bounds"] = bounds;
            std::cout << report.dump(2) << "\n";
            return 0;
        }

        if (validate->parsed()) {
            LoadedConfig cfg = load_config(config_path);
            nlohmann::json report;
            report["ok"] = true;
            report["kind"] = cfg.countable ? "countable" : "finite";
            report["N"] = cfg.spec.n_stocks;
            report["theta"] = cfg.spec.theta;
            report["T"] = cfg.spec.horizon;
            std::cout << report.dump(2) << "\n";
            return 0;
        }
    } catch (const Error& e) {
        nlohmann::json err;
        err["error"] = {{"type", e.type()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = {{"type", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace rsdpe
