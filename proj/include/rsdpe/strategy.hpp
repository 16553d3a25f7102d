#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/dpe_solver.hpp"
#include "rsdpe/hamiltonian.hpp"
#include "rsdpe/model.hpp"

namespace rsdpe {

// Optimal allocation at one (node, regime, state) triple, expanded to full
// stock length with zeros at defaulted entries.
struct NodeStrategy {
    Eigen::VectorXd pi;
    double foc_residual = 0.0;
    double margin = 1.0;  // min over alive stocks of 1 - pi_j
};

// Feedback strategy tabulated on the solver grid, held piecewise constant
// from the left node of each step.
struct StrategyGrid {
    TimeGrid grid;
    int n_stocks = 0;
    double theta = 0.0;
    std::vector<int> labels;
    // nodes[mask][node][regime]
    std::vector<std::vector<std::vector<NodeStrategy>>> nodes;

    const NodeStrategy& at(int mask, int node, int regime_idx) const {
        return nodes[static_cast<size_t>(mask)][static_cast<size_t>(node)]
                    [static_cast<size_t>(regime_idx)];
    }

    Eigen::VectorXd allocation(double t, int regime_idx, const DefaultState& z) const {
        const double u = t * grid.steps / grid.horizon;
        int m = static_cast<int>(std::floor(u + 1e-7));
        m = std::max(0, std::min(grid.steps, m));
        return at(static_cast<int>(z.mask), m, regime_idx).pi;
    }
};

// Recovers the minimizing allocation at every grid node from a solved value
// table, re-running the inner minimization with the stored neighbor values.
inline StrategyGrid extract_strategy(const FiniteMarket& market, const SolutionGrid& sol,
                                     const MinimizeOptions& opt = {}) {
    const int N = market.n_stocks;
    const int n = market.n_regimes();
    StrategyGrid out;
    out.grid = sol.grid;
    out.n_stocks = N;
    out.theta = market.theta;
    out.labels = market.labels;
    out.nodes.resize(static_cast<size_t>(1) << N);

    for (int mask = 0; mask < (1 << N); ++mask) {
        DefaultState z(static_cast<std::uint32_t>(mask), N);
        const std::vector<int> alive = z.survivors();
        auto& per_mask = out.nodes[static_cast<size_t>(mask)];
        per_mask.resize(static_cast<size_t>(sol.grid.steps) + 1);

        if (alive.empty()) {
            NodeStrategy flat;
            flat.pi = Eigen::VectorXd::Zero(N);
            for (auto& per_node : per_mask)
                per_node.assign(static_cast<size_t>(n), flat);
            continue;
        }

        std::vector<const Eigen::MatrixXd*> upstream_tables;
        upstream_tables.reserve(alive.size());
        for (int j : alive) upstream_tables.push_back(&sol.layers[neighbor(z, j).mask].phi);
        const Eigen::MatrixXd& own = sol.layers[static_cast<size_t>(mask)].phi;

        for (int m = 0; m <= sol.grid.steps; ++m) {
            auto& per_node = per_mask[static_cast<size_t>(m)];
            per_node.resize(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                const LayerContext ctx = layer_context(market, i, z);
                Eigen::VectorXd upstream(ctx.dim());
                for (int a = 0; a < ctx.dim(); ++a)
                    upstream(a) = (*upstream_tables[static_cast<size_t>(a)])(m, i);
                MinimizeResult res;
                try {
                    res = inner_minimize(ctx, upstream, own(m, i), opt);
                } catch (const Error& e) {
                    std::ostringstream os;
                    os << "strategy extraction failed at t=" << sol.grid.node(m) << ", regime "
                       << market.labels[static_cast<size_t>(i)] << ", state " << z.bitstring()
                       << ": " << e.what();
                    fail(e.type(), os.str());
                }

                NodeStrategy node;
                node.pi = Eigen::VectorXd::Zero(N);
                node.foc_residual = res.foc_residual;
                for (int a = 0; a < ctx.dim(); ++a) {
                    node.pi(alive[static_cast<size_t>(a)]) = res.pi(a);
                    node.margin = std::min(node.margin, 1.0 - res.pi(a));
                }
                per_node[static_cast<size_t>(i)] = std::move(node);
            }
        }
    }
    return out;
}

// Integrability diagnostics of an extracted strategy: bounds on the Brownian
// and jump exponential moments that keep the wealth change of measure a true
// martingale, plus the worst margin and stationarity residual seen anywhere.
struct AdmissibilityReport {
    double b_sigma = 0.0;        // sup of (theta^2/8) |sigma^T pi|^2
    double b_lambda = 0.0;       // sup of sum ((1-pi_j)^(-theta/2) - 1)^2 lambda_j
    double exp_bound = 1.0;      // exp((b_sigma + b_lambda) * horizon)
    double min_margin = 1.0;
    double max_foc_residual = 0.0;
    bool margins_ok = true;
};

inline AdmissibilityReport admissibility_report(const FiniteMarket& market,
                                                const StrategyGrid& strat,
                                                double margin_threshold = 1e-6) {
    AdmissibilityReport rep;
    const double th = market.theta;
    const int N = market.n_stocks;

    for (int mask = 0; mask < (1 << N); ++mask) {
        DefaultState z(static_cast<std::uint32_t>(mask), N);
        const std::vector<int> alive = z.survivors();
        for (int m = 0; m <= strat.grid.steps; ++m) {
            for (int i = 0; i < market.n_regimes(); ++i) {
                const NodeStrategy& node = strat.at(mask, m, i);
                rep.min_margin = std::min(rep.min_margin, node.margin);
                rep.max_foc_residual = std::max(rep.max_foc_residual, node.foc_residual);

                const double quad =
                    (market.sigma[static_cast<size_t>(i)].transpose() * node.pi).squaredNorm();
                rep.b_sigma = std::max(rep.b_sigma, (th * th / 8.0) * quad);

                const Eigen::VectorXd& lam = market.intensities(i, z);
                double jump = 0.0;
                for (int j : alive) {
                    const double d = std::pow(1.0 - node.pi(j), -th / 2.0) - 1.0;
                    jump += d * d * lam(j);
                }
                rep.b_lambda = std::max(rep.b_lambda, jump);
            }
        }
    }
    rep.exp_bound = std::exp((rep.b_sigma + rep.b_lambda) * market.horizon);
    rep.margins_ok = rep.min_margin >= margin_threshold;
    return rep;
}

}  // namespace rsdpe
