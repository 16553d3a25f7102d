#pragma once

#include <cmath>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rsdpe/approximation.hpp"
#include "rsdpe/common.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/dpe_solver.hpp"
#include "rsdpe/generator.hpp"
#include "rsdpe/model.hpp"
#include "rsdpe/simulation.hpp"

namespace rsdpe {

// Everything a CLI run needs, assembled from one JSON document. `raw` keeps
// the original document so solution manifests can embed and later replay it.
struct LoadedConfig {
    ModelSpec spec;
    SolverOptions solver;
    ApproximationOptions approx;
    std::vector<int> levels{4, 8, 16, 32};
    WealthSimOptions simulation;
    double margin_threshold = 1e-6;  // admissibility margin check
    bool countable = false;
    nlohmann::json raw;
};

namespace detail {

using nlohmann::json;

inline const json& member(const json& j, const std::string& key, const std::string& where) {
    auto it = j.find(key);
    require(it != j.end(), "invalid_config", where + " is missing key \"" + key + "\"");
    return *it;
}

inline double number_in(const json& j, const std::string& key, const std::string& where) {
    const json& v = member(j, key, where);
    require(v.is_number(), "invalid_config", where + " key \"" + key + "\" must be a number");
    return v.get<double>();
}

inline int integer_in(const json& j, const std::string& key, const std::string& where) {
    const json& v = member(j, key, where);
    require(v.is_number_integer(), "invalid_config",
            where + " key \"" + key + "\" must be an integer");
    return v.get<int>();
}

inline Eigen::VectorXd vector_of(const json& v, int expected, const std::string& where) {
    require(v.is_array(), "invalid_config", where + " must be an array");
    require(static_cast<int>(v.size()) == expected, "invalid_config",
            where + " must have " + std::to_string(expected) + " entries, got " +
                std::to_string(v.size()));
    Eigen::VectorXd out(expected);
    for (int k = 0; k < expected; ++k) {
        require(v[static_cast<size_t>(k)].is_number(), "invalid_config",
                where + " entry " + std::to_string(k) + " must be a number");
        out(k) = v[static_cast<size_t>(k)].get<double>();
    }
    return out;
}

inline Eigen::MatrixXd matrix_of(const json& v, int rows, int cols, const std::string& where) {
    require(v.is_array(), "invalid_config", where + " must be an array of rows");
    require(static_cast<int>(v.size()) == rows, "invalid_config",
            where + " must have " + std::to_string(rows) + " rows, got " +
                std::to_string(v.size()));
    Eigen::MatrixXd out(rows, cols);
    for (int i = 0; i < rows; ++i)
        out.row(i) =
            vector_of(v[static_cast<size_t>(i)], cols, where + " row " + std::to_string(i))
                .transpose();
    return out;
}

// Checks one lambda bitstring key and returns its mask.
inline std::uint32_t lambda_mask(const std::string& key, int n_stocks, const std::string& where) {
    require(static_cast<int>(key.size()) == n_stocks, "invalid_config",
            where + " key \"" + key + "\" must be a bitstring of length " +
                std::to_string(n_stocks));
    for (char c : key)
        require(c == '0' || c == '1', "invalid_config",
                where + " key \"" + key + "\" contains a character other than 0/1");
    return DefaultState::from_bitstring(key).mask;
}

// Dense per-regime coefficient tables for the finite-generator schema.
struct FiniteTables {
    int n_stocks = 0;
    std::vector<double> r;
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> sigma;
    std::vector<std::vector<Eigen::VectorXd>> lambda;  // [regime][mask]
};

inline CoefficientProvider finite_provider(std::shared_ptr<const FiniteTables> tab) {
    CoefficientProvider coef;
    coef.r = [tab](int label) { return tab->r[static_cast<size_t>(label - 1)]; };
    coef.mu = [tab](int label) { return tab->mu[static_cast<size_t>(label - 1)]; };
    coef.sigma = [tab](int label) { return tab->sigma[static_cast<size_t>(label - 1)]; };
    coef.lambda = [tab](int label, const DefaultState& z) {
        return tab->lambda[static_cast<size_t>(label - 1)][z.mask];
    };
    return coef;
}

// One-parameter geometric profile: value(i) = limit + scale * decay^(i-1).
struct DecayProfile {
    double limit = 0.0;
    double scale = 0.0;
    double decay = 0.5;

    double at(int label) const { return limit + scale * std::pow(decay, label - 1); }
};

inline DecayProfile decay_profile(const json& j, const std::string& where) {
    DecayProfile p;
    p.limit = number_in(j, "limit", where);
    p.scale = number_in(j, "scale", where);
    p.decay = number_in(j, "decay", where);
    require(p.decay > 0.0 && p.decay <= 1.0, "invalid_config",
            where + " decay must lie in (0, 1]");
    return p;
}

struct CountableTables {
    int n_stocks = 0;
    DecayProfile r;
    std::vector<DecayProfile> premium;  // per stock
    Eigen::MatrixXd sigma;              // fixed across regimes
    double lambda_decay = 0.5;
    std::vector<Eigen::VectorXd> lambda_limit;  // [mask]
    std::vector<Eigen::VectorXd> lambda_scale;  // [mask]
};

inline CoefficientProvider countable_provider(std::shared_ptr<const CountableTables> tab) {
    CoefficientProvider coef;
    coef.r = [tab](int label) { return tab->r.at(label); };
    coef.mu = [tab](int label) {
        Eigen::VectorXd out(tab->n_stocks);
        const double r = tab->r.at(label);
        for (int j = 0; j < tab->n_stocks; ++j)
            out(j) = r + tab->premium[static_cast<size_t>(j)].at(label);
        return out;
    };
    coef.sigma = [tab](int) { return tab->sigma; };
    coef.lambda = [tab](int label, const DefaultState& z) {
        const double w = std::pow(tab->lambda_decay, label - 1);
        return (tab->lambda_limit[z.mask] + w * tab->lambda_scale[z.mask]).eval();
    };
    return coef;
}

}  // namespace detail

// Parses and validates one configuration document. Throws Error with type
// "invalid_config" on schema problems and "invalid_model" when the assembled
// model fails validation.
inline LoadedConfig parse_config(const nlohmann::json& doc) {
    using detail::json;
    require(doc.is_object(), "invalid_config", "config root must be a JSON object");

    LoadedConfig cfg;
    cfg.raw = doc;
    const int N = detail::integer_in(doc, "N", "config");
    require(N >= 1 && N <= 20, "invalid_config", "N must be in [1, 20]");
    const double theta = detail::number_in(doc, "theta", "config");
    require(theta > 0.0, "invalid_config", "theta must be positive");
    const double horizon = detail::number_in(doc, "T", "config");
    require(horizon > 0.0, "invalid_config", "T must be positive");
    const int d = doc.contains("d") ? detail::integer_in(doc, "d", "config") : N;
    require(d >= N, "invalid_config", "d must be at least N");

    cfg.spec.n_stocks = N;
    cfg.spec.theta = theta;
    cfg.spec.horizon = horizon;
    cfg.spec.brownian_dim = d;

    const json& regimes = detail::member(doc, "regimes", "config");
    require(regimes.is_object(), "invalid_config", "\"regimes\" must be an object");

    if (regimes.contains("Q")) {
        const json& qj = regimes["Q"];
        require(qj.is_array() && !qj.empty(), "invalid_config",
                "\"regimes.Q\" must be a nonempty array of rows");
        const int n = static_cast<int>(qj.size());
        const Eigen::MatrixXd q = detail::matrix_of(qj, n, n, "regimes.Q");
        cfg.spec.generator = RegimeGenerator::finite(q);

        auto tab = std::make_shared<detail::FiniteTables>();
        tab->n_stocks = N;
        const json& rj = detail::member(doc, "r", "config");
        const Eigen::VectorXd rv = detail::vector_of(rj, n, "\"r\"");
        for (int i = 0; i < n; ++i) tab->r.push_back(rv(i));

        const json& muj = detail::member(doc, "mu", "config");
        require(muj.is_array() && static_cast<int>(muj.size()) == n, "invalid_config",
                "\"mu\" must list one vector per regime");
        for (int i = 0; i < n; ++i)
            tab->mu.push_back(
                detail::vector_of(muj[static_cast<size_t>(i)], N, "mu regime " + std::to_string(i + 1)));

        const json& sj = detail::member(doc, "sigma", "config");
        require(sj.is_array() && static_cast<int>(sj.size()) == n, "invalid_config",
                "\"sigma\" must list one matrix per regime");
        for (int i = 0; i < n; ++i)
            tab->sigma.push_back(detail::matrix_of(sj[static_cast<size_t>(i)], N, d,
                                                   "sigma regime " + std::to_string(i + 1)));

        const json& lj = detail::member(doc, "lambda", "config");
        require(lj.is_array() && static_cast<int>(lj.size()) == n, "invalid_config",
                "\"lambda\" must list one state table per regime");
        const std::uint32_t all_ones = (1u << N) - 1u;
        for (int i = 0; i < n; ++i) {
            const json& per = lj[static_cast<size_t>(i)];
            const std::string where = "lambda regime " + std::to_string(i + 1);
            require(per.is_object(), "invalid_config", where + " must be an object");
            std::vector<Eigen::VectorXd> table(1u << N);
            std::vector<bool> seen(1u << N, false);
            for (auto it = per.begin(); it != per.end(); ++it) {
                const std::uint32_t mask = detail::lambda_mask(it.key(), N, where);
                table[mask] = detail::vector_of(it.value(), N, where + " state " + it.key());
                seen[mask] = true;
            }
            for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
                if (seen[mask]) continue;
                if (mask == all_ones) {
                    table[mask] = Eigen::VectorXd::Ones(N);  // unused: nothing alive
                    continue;
                }
                fail("invalid_config",
                     where + " is missing state \"" +
                         DefaultState(mask, N).bitstring() + "\"");
            }
            tab->lambda.push_back(std::move(table));
        }
        cfg.spec.coef = detail::finite_provider(std::move(tab));
    } else if (regimes.contains("family")) {
        const std::string family = detail::member(regimes, "family", "\"regimes\"").get<std::string>();
        require(family == "geometric", "invalid_config",
                "unknown regime family \"" + family + "\"");
        cfg.spec.generator = RegimeGenerator::geometric();
        cfg.spec.n_max =
            regimes.contains("n_max") ? detail::integer_in(regimes, "n_max", "\"regimes\"") : 64;
        require(cfg.spec.n_max >= 1, "invalid_config", "n_max must be positive");
        cfg.countable = true;

        const json& co = detail::member(doc, "coefficients", "config");
        require(co.is_object(), "invalid_config", "\"coefficients\" must be an object");
        auto tab = std::make_shared<detail::CountableTables>();
        tab->n_stocks = N;
        tab->r = detail::decay_profile(detail::member(co, "r", "\"coefficients\""),
                                       "coefficients.r");

        const json& pj = detail::member(co, "premium", "\"coefficients\"");
        require(pj.is_array() && static_cast<int>(pj.size()) == N, "invalid_config",
                "\"coefficients.premium\" must list one profile per stock");
        for (int j = 0; j < N; ++j)
            tab->premium.push_back(detail::decay_profile(
                pj[static_cast<size_t>(j)], "coefficients.premium stock " + std::to_string(j + 1)));

        tab->sigma = detail::matrix_of(detail::member(co, "sigma", "\"coefficients\""), N, d,
                                       "coefficients.sigma");

        const json& laj = detail::member(co, "lambda", "\"coefficients\"");
        require(laj.is_object(), "invalid_config", "\"coefficients.lambda\" must be an object");
        tab->lambda_decay = detail::number_in(laj, "decay", "coefficients.lambda");
        require(tab->lambda_decay > 0.0 && tab->lambda_decay <= 1.0, "invalid_config",
                "coefficients.lambda decay must lie in (0, 1]");
        const json& states = detail::member(laj, "states", "coefficients.lambda");
        require(states.is_object(), "invalid_config",
                "coefficients.lambda \"states\" must be an object");
        const std::uint32_t all_ones = (1u << N) - 1u;
        tab->lambda_limit.resize(1u << N);
        tab->lambda_scale.resize(1u << N);
        std::vector<bool> seen(1u << N, false);
        for (auto it = states.begin(); it != states.end(); ++it) {
            const std::string where = "coefficients.lambda.states";
            const std::uint32_t mask = detail::lambda_mask(it.key(), N, where);
            const json& entry = it.value();
            tab->lambda_limit[mask] =
                detail::vector_of(detail::member(entry, "limit", where + " " + it.key()), N,
                                  where + " " + it.key() + " limit");
            tab->lambda_scale[mask] =
                detail::vector_of(detail::member(entry, "scale", where + " " + it.key()), N,
                                  where + " " + it.key() + " scale");
            seen[mask] = true;
        }
        for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
            if (seen[mask]) continue;
            if (mask == all_ones) {
                tab->lambda_limit[mask] = Eigen::VectorXd::Ones(N);
                tab->lambda_scale[mask] = Eigen::VectorXd::Zero(N);
                continue;
            }
            fail("invalid_config", "coefficients.lambda.states is missing state \"" +
                                       DefaultState(mask, N).bitstring() + "\"");
        }
        cfg.spec.coef = detail::countable_provider(std::move(tab));
    } else {
        fail("invalid_config", "\"regimes\" must contain either \"Q\" or \"family\"");
    }

    if (doc.contains("solver")) {
        const json& s = doc["solver"];
        require(s.is_object(), "invalid_config", "\"solver\" must be an object");
        if (s.contains("steps")) {
            cfg.solver.steps = detail::integer_in(s, "steps", "solver");
            require(cfg.solver.steps >= 2, "invalid_config", "solver steps must be at least 2");
        }
        if (s.contains("foc_tol")) {
            cfg.solver.minimize.foc_tol = detail::number_in(s, "foc_tol", "solver");
            require(cfg.solver.minimize.foc_tol > 0.0, "invalid_config",
                    "foc_tol must be positive");
        }
        if (s.contains("floor_slack")) {
            cfg.solver.floor_slack = detail::number_in(s, "floor_slack", "solver");
            require(cfg.solver.floor_slack > 0.0, "invalid_config",
                    "floor_slack must be positive");
        }
        if (s.contains("margin_floor")) {
            cfg.margin_threshold = detail::number_in(s, "margin_floor", "solver");
            require(cfg.margin_threshold > 0.0, "invalid_config",
                    "margin_floor must be positive");
        }
        if (s.contains("tol_sup")) {
            cfg.approx.tol_sup = detail::number_in(s, "tol_sup", "solver");
            require(cfg.approx.tol_sup > 0.0, "invalid_config", "tol_sup must be positive");
        }
        if (s.contains("monotone_slack")) {
            cfg.approx.monotone_slack = detail::number_in(s, "monotone_slack", "solver");
            require(cfg.approx.monotone_slack > 0.0, "invalid_config",
                    "monotone_slack must be positive");
        }
        if (s.contains("window")) {
            cfg.approx.window = detail::integer_in(s, "window", "solver");
            require(cfg.approx.window >= 0, "invalid_config", "window must be nonnegative");
        }
        if (s.contains("levels")) {
            const json& lv = s["levels"];
            require(lv.is_array() && !lv.empty(), "invalid_config",
                    "solver levels must be a nonempty array");
            cfg.levels.clear();
            for (const auto& e : lv) {
                require(e.is_number_integer(), "invalid_config",
                        "solver levels must be integers");
                cfg.levels.push_back(e.get<int>());
            }
        }
    }
    if (doc.contains("simulation")) {
        const json& s = doc["simulation"];
        require(s.is_object(), "invalid_config", "\"simulation\" must be an object");
        if (s.contains("substeps")) {
            cfg.simulation.substeps = detail::integer_in(s, "substeps", "simulation");
            require(cfg.simulation.substeps >= 1, "invalid_config",
                    "substeps must be at least 1");
        }
    }
    cfg.approx.solver = cfg.solver;

    ValidationReport rep = validate_model(cfg.spec);
    require(rep.ok(), "invalid_model", "model validation failed:\n" + rep.to_string());
    return cfg;
}

inline LoadedConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "io_error", "cannot open config file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail("invalid_config", "config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

}  // namespace rsdpe
