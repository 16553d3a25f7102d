#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsdpe/common.hpp"
#include "rsdpe/config_io.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/dpe_solver.hpp"
#include "rsdpe/model.hpp"
#include "rsdpe/strategy.hpp"

namespace rsdpe {

inline constexpr int solution_format_version = 1;

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    return out;
}

inline double parse_double(const std::string& s, const std::string& file) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    require(end != begin && *end == '\0', "corrupt_solution",
            file + ": cannot parse number \"" + s + "\"");
    return v;
}

inline std::string layer_file(const std::string& bits) { return "layer_" + bits + ".csv"; }
inline std::string value_file(const std::string& bits) { return "value_" + bits + ".csv"; }
inline std::string strategy_file(const std::string& bits) { return "strategy_" + bits + ".csv"; }

}  // namespace detail

// Writes one directory: manifest.json, a bit-exact hex-float CSV per default
// state, and a decimal value-function CSV per state for plotting. The model
// document is embedded in the manifest so a reload can rebuild the market.
inline void save_solution(const std::string& dir, const FiniteMarket& market,
                          const SolutionGrid& sol, const nlohmann::json& model_doc) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format_version"] = solution_format_version;
    manifest["kind"] = market.has_absorbing ? "truncated" : "finite";
    manifest["theta"] = market.theta;
    manifest["horizon"] = market.horizon;
    manifest["steps"] = sol.grid.steps;
    manifest["n_stocks"] = market.n_stocks;
    manifest["labels"] = market.labels;
    manifest["truncation_level"] = market.truncation_level;
    manifest["model"] = model_doc;

    nlohmann::json layers = nlohmann::json::object();
    for (int mask = 0; mask < market.n_states(); ++mask) {
        const DefaultState z(static_cast<std::uint32_t>(mask), market.n_stocks);
        const std::string bits = z.bitstring();
        const LayerSolution& layer = sol.layers[static_cast<size_t>(mask)];

        nlohmann::json entry;
        entry["epsilon"] = layer.epsilon;
        entry["floor"] = layer.floor;
        entry["min_value"] = layer.min_value;
        entry["max_foc_residual"] = layer.max_foc_residual;
        entry["file"] = detail::layer_file(bits);
        layers[bits] = entry;

        std::ofstream csv(fs::path(dir) / detail::layer_file(bits));
        require(csv.good(), "io_error", "cannot write " + detail::layer_file(bits));
        csv << "t";
        for (int label : market.labels) csv << ",z=" << bits << ":i=" << label;
        csv << "\n";
        for (int m = 0; m <= sol.grid.steps; ++m) {
            csv << hex_float(sol.grid.node(m));
            for (int i = 0; i < market.n_regimes(); ++i) csv << "," << hex_float(layer.phi(m, i));
            csv << "\n";
        }

        std::ofstream val(fs::path(dir) / detail::value_file(bits));
        require(val.good(), "io_error", "cannot write " + detail::value_file(bits));
        val << "t";
        for (int label : market.labels) val << ",z=" << bits << ":i=" << label;
        val << "\n";
        for (int m = 0; m <= sol.grid.steps; ++m) {
            val << full_precision(sol.grid.node(m));
            for (int i = 0; i < market.n_regimes(); ++i)
                val << "," << full_precision(-(2.0 / market.theta) * std::log(layer.phi(m, i)));
            val << "\n";
        }
    }
    manifest["layers"] = layers;

    std::ofstream out(fs::path(dir) / "manifest.json");
    require(out.good(), "io_error", "cannot write manifest.json in " + dir);
    out << manifest.dump(2) << "\n";
}

struct SavedSolution {
    FiniteMarket market;
    SolutionGrid solution;
    LoadedConfig config;
};

// Rebuilds the market from the embedded model document and reads the phi
// tables back bit-exactly. Every mismatch names the offending file.
inline SavedSolution load_solution(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(manifest_path);
    require(in.good(), "io_error", "cannot open " + manifest_path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail("corrupt_solution", manifest_path + " is not valid JSON: " + e.what());
    }

    require(manifest.contains("format_version"), "corrupt_solution",
            manifest_path + " has no format_version");
    const int version = manifest["format_version"].get<int>();
    require(version == solution_format_version, "unsupported_version",
            manifest_path + " has format_version " + std::to_string(version) + ", expected " +
                std::to_string(solution_format_version));

    SavedSolution out;
    out.config = parse_config(detail::member(manifest, "model", "manifest"));
    const std::string kind = detail::member(manifest, "kind", "manifest").get<std::string>();
    if (kind == "finite") {
        out.market = materialize(out.config.spec);
    } else if (kind == "truncated") {
        const int level = detail::integer_in(manifest, "truncation_level", "manifest");
        out.market = truncate_model(out.config.spec, level);
    } else {
        fail("corrupt_solution", manifest_path + " has unknown kind \"" + kind + "\"");
    }

    const int steps = detail::integer_in(manifest, "steps", "manifest");
    require(steps >= 2, "corrupt_solution", manifest_path + " has invalid steps");
    out.solution.grid = TimeGrid{out.market.horizon, steps};
    out.solution.n_stocks = out.market.n_stocks;
    out.solution.theta = out.market.theta;
    out.solution.labels = out.market.labels;
    out.solution.layers.resize(static_cast<size_t>(out.market.n_states()));

    const nlohmann::json& layers = detail::member(manifest, "layers", "manifest");
    for (int mask = 0; mask < out.market.n_states(); ++mask) {
        const DefaultState z(static_cast<std::uint32_t>(mask), out.market.n_stocks);
        const std::string bits = z.bitstring();
        require(layers.contains(bits), "corrupt_solution",
                manifest_path + " is missing layer \"" + bits + "\"");
        const nlohmann::json& entry = layers[bits];

        LayerSolution& layer = out.solution.layers[static_cast<size_t>(mask)];
        layer.epsilon = detail::number_in(entry, "epsilon", "layer " + bits);
        layer.floor = detail::number_in(entry, "floor", "layer " + bits);
        layer.min_value = detail::number_in(entry, "min_value", "layer " + bits);
        layer.max_foc_residual = detail::number_in(entry, "max_foc_residual", "layer " + bits);

        const std::string fname = detail::member(entry, "file", "layer " + bits).get<std::string>();
        const std::string path = (fs::path(dir) / fname).string();
        std::ifstream csv(path);
        require(csv.good(), "io_error", "cannot open " + path);

        std::string line;
        require(static_cast<bool>(std::getline(csv, line)), "corrupt_solution",
                path + " is empty");
        const std::vector<std::string> header = detail::split_csv(line);
        require(static_cast<int>(header.size()) == out.market.n_regimes() + 1, "corrupt_solution",
                path + " header has wrong column count");

        layer.phi.resize(steps + 1, out.market.n_regimes());
        for (int m = 0; m <= steps; ++m) {
            require(static_cast<bool>(std::getline(csv, line)), "corrupt_solution",
                    path + " ends early at row " + std::to_string(m));
            const std::vector<std::string> cells = detail::split_csv(line);
            require(static_cast<int>(cells.size()) == out.market.n_regimes() + 1,
                    "corrupt_solution", path + " row " + std::to_string(m) + " has wrong width");
            for (int i = 0; i < out.market.n_regimes(); ++i)
                layer.phi(m, i) = detail::parse_double(cells[static_cast<size_t>(i) + 1], path);
        }
        layer.min_value = layer.phi.minCoeff();
    }
    return out;
}

// Strategy tables: one CSV per default state with a row per (node, regime),
// plus a summary of the admissibility diagnostics.
inline void save_strategy(const std::string& dir, const FiniteMarket& market,
                          const StrategyGrid& strat, const AdmissibilityReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    for (int mask = 0; mask < market.n_states(); ++mask) {
        const DefaultState z(static_cast<std::uint32_t>(mask), market.n_stocks);
        const std::string bits = z.bitstring();
        std::ofstream csv(fs::path(dir) / detail::strategy_file(bits));
        require(csv.good(), "io_error", "cannot write " + detail::strategy_file(bits));
        csv << "t,regime";
        for (int j = 1; j <= market.n_stocks; ++j) csv << ",pi_" << j;
        csv << ",foc_residual,margin\n";
        for (int m = 0; m <= strat.grid.steps; ++m) {
            for (int i = 0; i < market.n_regimes(); ++i) {
                const NodeStrategy& node = strat.at(mask, m, i);
                csv << full_precision(strat.grid.node(m)) << ","
                    << market.labels[static_cast<size_t>(i)];
                for (int j = 0; j < market.n_stocks; ++j)
                    csv << "," << full_precision(node.pi(j));
                csv << "," << full_precision(node.foc_residual) << ","
                    << full_precision(node.margin) << "\n";
            }
        }
    }

    nlohmann::json summary;
    summary["b_sigma"] = report.b_sigma;
    summary["b_lambda"] = report.b_lambda;
    summary["exp_bound"] = report.exp_bound;
    summary["min_margin"] = report.min_margin;
    summary["max_foc_residual"] = report.max_foc_residual;
    summary["margins_ok"] = report.margins_ok;
    std::ofstream out(fs::path(dir) / "summary.json");
    require(out.good(), "io_error", "cannot write summary.json in " + dir);
    out << summary.dump(2) << "\n";
}

}  // namespace rsdpe
