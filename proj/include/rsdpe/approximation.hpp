#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"
#include "rsdpe/dpe_solver.hpp"
#include "rsdpe/generator.hpp"
#include "rsdpe/matrix_exp.hpp"
#include "rsdpe/model.hpp"

namespace rsdpe {

// One rung of the truncation ladder: the finite market retaining regimes
// 1..level plus the absorbing remainder state, and its solved value table.
struct LevelSolution {
    int level = 0;
    FiniteMarket market;
    SolutionGrid solution;
};

inline LevelSolution solve_level(const ModelSpec& spec, int level, const SolverOptions& opt = {}) {
    LevelSolution out;
    out.level = level;
    out.market = truncate_model(spec, level);
    out.solution = solve_finite(out.market, opt);
    return out;
}

struct ApproximationOptions {
    SolverOptions solver;
    double tol_sup = 1e-6;        // convergence target for the last level gap
    double monotone_slack = 1e-10;
    int window = 0;               // labels tracked in sup gaps; 0 = first level
};

struct ApproximationRun {
    std::vector<int> levels;
    std::vector<LevelSolution> runs;
    std::vector<double> sup_deltas;     // sup |phi| gap between consecutive levels
    std::vector<double> wall_ms;        // solve time per level
    long monotone_violations = 0;
    bool monotone = true;
    bool converged = false;
};

namespace detail {

// Largest transformed-value gap between two levels over the shared labels
// 1..label_cap, all default states, all grid nodes.
inline double sup_phi_delta(const LevelSolution& lo, const LevelSolution& hi, int label_cap) {
    double sup = 0.0;
    for (int label = 1; label <= label_cap; ++label) {
        const int ia = lo.market.index_of_label(label);
        const int ib = hi.market.index_of_label(label);
        for (size_t mask = 0; mask < lo.solution.layers.size(); ++mask) {
            const Eigen::MatrixXd& pa = lo.solution.layers[mask].phi;
            const Eigen::MatrixXd& pb = hi.solution.layers[mask].phi;
            for (int m = 0; m < pa.rows(); ++m)
                sup = std::max(sup, std::abs(pa(m, ia) - pb(m, ib)));
        }
    }
    return sup;
}

// Counts nodes where the finer level fails to dominate: enlarging the
// retained set can only lower phi (raise the value), up to slack.
inline long monotone_breaks(const LevelSolution& lo, const LevelSolution& hi, double slack) {
    long breaks = 0;
    for (int label = 1; label <= lo.level; ++label) {
        const int ia = lo.market.index_of_label(label);
        const int ib = hi.market.index_of_label(label);
        for (size_t mask = 0; mask < lo.solution.layers.size(); ++mask) {
            const Eigen::MatrixXd& pa = lo.solution.layers[mask].phi;
            const Eigen::MatrixXd& pb = hi.solution.layers[mask].phi;
            for (int m = 0; m < pa.rows(); ++m)
                if (pb(m, ib) > pa(m, ia) + slack) ++breaks;
        }
    }
    return breaks;
}

}  // namespace detail

// Solves the model at each truncation level in turn and reports the level
// gaps. Never throws on a missed tolerance; `converged` carries the verdict.
inline ApproximationRun run_sequence(const ModelSpec& spec, const std::vector<int>& levels,
                                     const ApproximationOptions& opt = {}) {
    require(!levels.empty(), "invalid_argument", "at least one truncation level is required");
    for (size_t k = 0; k + 1 < levels.size(); ++k)
        require(levels[k] < levels[k + 1], "invalid_argument",
                "truncation levels must be strictly increasing");
    require(levels.front() >= 1, "invalid_argument", "truncation levels must be positive");

    ApproximationRun run;
    run.levels = levels;
    run.runs.reserve(levels.size());
    for (int n : levels) {
        const auto start = std::chrono::steady_clock::now();
        run.runs.push_back(solve_level(spec, n, opt.solver));
        const auto stop = std::chrono::steady_clock::now();
        run.wall_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }

    const int cap = opt.window > 0 ? std::min(opt.window, levels.front()) : levels.front();
    for (size_t k = 0; k + 1 < run.runs.size(); ++k) {
        run.sup_deltas.push_back(detail::sup_phi_delta(run.runs[k], run.runs[k + 1], cap));
        run.monotone_violations +=
            detail::monotone_breaks(run.runs[k], run.runs[k + 1], opt.monotone_slack);
    }
    run.monotone = run.monotone_violations == 0;
    run.converged = !run.sup_deltas.empty() && run.sup_deltas.back() <= opt.tol_sup;
    return run;
}

// Probability that the regime chain started at `label` leaves the retained
// set {1..n} within time s: one minus the corresponding row sum of the
// propagator of the retained block (whose diagonal keeps the full exit
// rates, so the row deficit is exactly the escape mass).
inline double error_bound(const RegimeGenerator& gen, int n, int label, double s) {
    require(n >= 1, "invalid_argument", "retained size must be positive");
    require(label >= 1 && label <= n, "index_out_of_range",
            "start label must lie in the retained set");
    require(s >= 0.0, "invalid_argument", "time must be nonnegative");

    const TruncatedGenerator trunc = truncate_generator(gen, n);
    const Eigen::MatrixXd block = trunc.retained_block();
    const Eigen::MatrixXd prop = matrix_exponential(block, s);
    const double inside = prop.row(label - 1).sum();
    return std::min(1.0, std::max(0.0, 1.0 - inside));
}

// Same escape probability through the Taylor series of the propagator acting
// on the all-ones vector, kept as an independent cross-check of the matrix
// exponential route. Terms are added until the rigorous tail bound
// sum_{k>K} |Qs|_inf^k / k!  drops below tol.
inline double error_bound_series(const RegimeGenerator& gen, int n, int label, double s,
                                 double tol = 1e-12) {
    require(n >= 1, "invalid_argument", "retained size must be positive");
    require(label >= 1 && label <= n, "index_out_of_range",
            "start label must lie in the retained set");
    require(s >= 0.0, "invalid_argument", "time must be nonnegative");

    const TruncatedGenerator trunc = truncate_generator(gen, n);
    const Eigen::MatrixXd block = trunc.retained_block() * s;
    const double norm = block.cwiseAbs().rowwise().sum().maxCoeff();

    Eigen::VectorXd term = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd acc = term;
    double tail_scale = 1.0;  // |Qs|^k / k! for the current k
    bool certified = false;
    for (int k = 1; k <= 400; ++k) {
        term = (block * term) / static_cast<double>(k);
        acc += term;
        tail_scale *= norm / static_cast<double>(k);
        if (static_cast<double>(k) + 2.0 > norm) {
            const double next = tail_scale * norm / (static_cast<double>(k) + 1.0);
            const double tail = next / (1.0 - norm / (static_cast<double>(k) + 2.0));
            if (tail <= tol) {
                certified = true;
                break;
            }
        }
    }
    require(certified, "series_not_converged",
            "propagator series did not meet its remainder bound within 400 terms");
    return std::min(1.0, std::max(0.0, 1.0 - acc(label - 1)));
}

}  // namespace rsdpe
