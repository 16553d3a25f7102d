#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/hamiltonian.hpp"
#include "rsdpe/matrix_exp.hpp"
#include "rsdpe/model.hpp"

namespace rsdpe {

struct TimeGrid {
    double horizon = 0.0;
    int steps = 0;

    double dt() const { return horizon / steps; }
    double node(int m) const { return horizon * m / steps; }
};

// 4-point Lagrange interpolation in time of a stored (steps+1) x n table.
// Exact at the nodes; O(dt^4) between them, matching the integrator order.
inline Eigen::VectorXd interpolate_row(const Eigen::MatrixXd& table, const TimeGrid& grid,
                                       double t) {
    const int m_max = grid.steps;
    require(table.rows() == m_max + 1, "invalid_argument", "table rows do not match the grid");
    require(m_max >= 3, "invalid_argument", "interpolation needs at least 4 time nodes");
    const double u = t / grid.dt();
    const int nearest = static_cast<int>(std::lround(u));
    if (nearest >= 0 && nearest <= m_max &&
        std::abs(t - grid.node(nearest)) <= 1e-12 * std::max(1.0, grid.horizon))
        return table.row(nearest);

    int lo = static_cast<int>(std::floor(u)) - 1;
    lo = std::max(0, std::min(lo, m_max - 3));
    Eigen::VectorXd out = Eigen::VectorXd::Zero(table.cols());
    for (int k = 0; k < 4; ++k) {
        double w = 1.0;
        const double xk = grid.node(lo + k);
        for (int l = 0; l < 4; ++l) {
            if (l == k) continue;
            const double xl = grid.node(lo + l);
            w *= (t - xl) / (xk - xl);
        }
        out += w * table.row(lo + k).transpose();
    }
    return out;
}

struct LayerSolution {
    Eigen::MatrixXd phi;           // (steps+1) x n_regimes, row m = values at node m
    double epsilon = 1.0;          // certified positive lower bound for the layer
    double floor = 0.0;            // clamp level used inside the coupling term
    double min_value = 1.0;
    double max_foc_residual = 0.0;
};

struct SolutionGrid {
    TimeGrid grid;
    int n_stocks = 0;
    double theta = 0.0;
    std::vector<int> labels;
    std::vector<LayerSolution> layers;  // indexed by default-state mask

    const LayerSolution& layer(const DefaultState& z) const { return layers[z.mask]; }

    double phi_at(double t, int regime_idx, const DefaultState& z) const {
        const Eigen::MatrixXd& tab = layers[z.mask].phi;
        Eigen::VectorXd row = interpolate_row(tab, grid, t);
        return row(regime_idx);
    }

    double value_at(double t, int regime_idx, const DefaultState& z) const {
        return -(2.0 / theta) * std::log(phi_at(t, regime_idx, z));
    }
};

struct SolverOptions {
    int steps = 400;
    MinimizeOptions minimize;
    double floor_slack = 1e-9;  // tolerated undershoot of the certified bound
};

// All-defaulted layer: the system is linear and is marched with one matrix
// exponential of the step. Strictly positive because the propagator of a
// Metzler matrix is entrywise nonnegative with positive diagonal.
inline LayerSolution solve_terminal_layer(const FiniteMarket& market, const TimeGrid& grid) {
    const int n = market.n_regimes();
    Eigen::MatrixXd a = market.q;
    for (int i = 0; i < n; ++i) a(i, i) -= (market.theta / 2.0) * market.r[static_cast<size_t>(i)];

    const Eigen::MatrixXd step = matrix_exponential(a, grid.dt());
    LayerSolution out;
    out.phi.resize(grid.steps + 1, n);
    out.phi.row(grid.steps).setOnes();
    for (int m = grid.steps - 1; m >= 0; --m)
        out.phi.row(m) = (step * out.phi.row(m + 1).transpose()).transpose();
    out.min_value = out.phi.minCoeff();
    require(out.min_value > 0.0, "positivity_lost",
            "all-defaulted layer lost positivity: min " + full_precision(out.min_value));
    return out;
}

// Certified lower bound for one layer: forward integration of the comparison
// system started at 1, with the quadratic part replaced by its worst-case
// constant beta. Runs on the grid and once more at double resolution; the
// smaller node minimum is returned.
inline double lower_bound_epsilon(const FiniteMarket& market, const DefaultState& z,
                                  const TimeGrid& grid) {
    const int n = market.n_regimes();
    Eigen::VectorXd decay(n), beta(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd& lam = market.intensities(i, z);
        double lam_sum = 0.0;
        for (int j : z.survivors()) lam_sum += lam(j);
        decay(i) = (market.theta / 2.0) * market.r[static_cast<size_t>(i)] + lam_sum;
        beta(i) = beta_i(layer_context(market, i, z));
    }

    auto field = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        Eigen::VectorXd f = market.q * x - decay.cwiseProduct(x);
        for (int i = 0; i < n; ++i) f(i) -= beta(i) * std::max(std::abs(x(i)), 1.0);
        return f;
    };

    auto run = [&](int steps) -> double {
        const double h = market.horizon / steps;
        Eigen::VectorXd psi = Eigen::VectorXd::Ones(n);
        double lo = 1.0;
        for (int m = 0; m < steps; ++m) {
            Eigen::VectorXd k1 = field(psi);
            Eigen::VectorXd k2 = field(psi + 0.5 * h * k1);
            Eigen::VectorXd k3 = field(psi + 0.5 * h * k2);
            Eigen::VectorXd k4 = field(psi + h * k3);
            psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            lo = std::min(lo, psi.minCoeff());
        }
        return lo;
    };

    const double eps = std::min(run(grid.steps), run(2 * grid.steps));
    if (eps <= 0.0)
        fail("nonpositive_epsilon",
             "comparison bound for state " + z.bitstring() + " reached " + full_precision(eps) +
                 "; the model is too stiff for this horizon");
    return eps;
}

// One backward layer sweep. `upstream` holds, per survivor in ascending stock
// order, the already-solved table of the state with that stock defaulted.
inline LayerSolution solve_layer(const FiniteMarket& market, const DefaultState& z,
                                 const TimeGrid& grid,
                                 const std::vector<const Eigen::MatrixXd*>& upstream,
                                 double epsilon, const SolverOptions& opt = {}) {
    const int n = market.n_regimes();
    const std::vector<int> alive = z.survivors();
    const int mm = static_cast<int>(alive.size());
    require(static_cast<int>(upstream.size()) == mm, "invalid_argument",
            "one upstream table per survivor is required");
    require(mm >= 1, "invalid_argument",
            "the all-defaulted layer is handled by solve_terminal_layer");

    std::vector<LayerContext> ctx;
    ctx.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ctx.push_back(layer_context(market, i, z));

    Eigen::MatrixXd a = market.q;
    for (int i = 0; i < n; ++i) a(i, i) += nu_value(market, i, z);

    LayerSolution out;
    out.epsilon = epsilon;
    out.floor = std::min(1.0, epsilon) / 2.0;
    out.phi.resize(grid.steps + 1, n);
    out.phi.row(grid.steps).setOnes();

    // stage_u(i, s) = upstream value of survivor s at regime i for the stage time
    auto coupling = [&](const Eigen::VectorXd& x, const Eigen::MatrixXd& stage_u)
        -> Eigen::VectorXd {
        Eigen::VectorXd g(n);
        for (int i = 0; i < n; ++i) {
            MinimizeResult r = inner_minimize(ctx[static_cast<size_t>(i)],
                                              stage_u.row(i).transpose(),
                                              std::max(x(i), out.floor), opt.minimize);
            out.max_foc_residual = std::max(out.max_foc_residual, r.foc_residual);
            g(i) = r.value;
        }
        return g;
    };

    const double h = -grid.dt();
    Eigen::MatrixXd u_hi(n, mm), u_mid(n, mm), u_lo(n, mm);
    for (int m = grid.steps - 1; m >= 0; --m) {
        const double t_hi = grid.node(m + 1);
        const double t_mid = 0.5 * (grid.node(m + 1) + grid.node(m));
        for (int s = 0; s < mm; ++s) {
            const Eigen::MatrixXd& tab = *upstream[static_cast<size_t>(s)];
            u_hi.col(s) = tab.row(m + 1).transpose();
            u_mid.col(s) = interpolate_row(tab, grid, t_mid);
            u_lo.col(s) = tab.row(m).transpose();
        }
        const Eigen::VectorXd phi1 = out.phi.row(m + 1).transpose();
        Eigen::VectorXd k1 = -(a * phi1) - coupling(phi1, u_hi);
        Eigen::VectorXd x2 = phi1 + 0.5 * h * k1;
        Eigen::VectorXd k2 = -(a * x2) - coupling(x2, u_mid);
        Eigen::VectorXd x3 = phi1 + 0.5 * h * k2;
        Eigen::VectorXd k3 = -(a * x3) - coupling(x3, u_mid);
        Eigen::VectorXd x4 = phi1 + h * k3;
        Eigen::VectorXd k4 = -(a * x4) - coupling(x4, u_lo);
        out.phi.row(m) = (phi1 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).transpose();
    }

    out.min_value = out.phi.minCoeff();
    if (out.min_value < epsilon - opt.floor_slack)
        fail("floor_violation",
             "layer " + z.bitstring() + ": solution minimum " + full_precision(out.min_value) +
                 " undershoots the certified bound " + full_precision(epsilon));
    return out;
}

// Backward recursion over default cardinality: all-defaulted layer first,
// then every state with k defaults consumes the k+1 tables solved before it.
inline SolutionGrid solve_finite(const FiniteMarket& market, const SolverOptions& opt = {}) {
    require(opt.steps >= 4, "invalid_argument", "at least 4 time steps are required");
    SolutionGrid sol;
    sol.grid = TimeGrid{market.horizon, opt.steps};
    sol.n_stocks = market.n_stocks;
    sol.theta = market.theta;
    sol.labels = market.labels;
    sol.layers.resize(static_cast<size_t>(market.n_states()));

    const auto by_card = states_by_cardinality(market.n_stocks);
    for (int k = market.n_stocks; k >= 0; --k) {
        for (const DefaultState& z : by_card[static_cast<size_t>(k)]) {
            const double eps = lower_bound_epsilon(market, z, sol.grid);
            if (k == market.n_stocks) {
                LayerSolution lay = solve_terminal_layer(market, sol.grid);
                lay.epsilon = eps;
                if (lay.min_value < eps - opt.floor_slack)
                    fail("floor_violation", "all-defaulted layer undershoots its certified bound");
                sol.layers[z.mask] = std::move(lay);
            } else {
                std::vector<const Eigen::MatrixXd*> upstream;
                for (int j : z.survivors())
                    upstream.push_back(&sol.layers[neighbor(z, j).mask].phi);
                sol.layers[z.mask] = solve_layer(market, z, sol.grid, upstream, eps, opt);
            }
        }
    }
    return sol;
}

// Value function on the grid for one default state: -(2/theta) log phi.
inline Eigen::MatrixXd value_table(const SolutionGrid& sol, const DefaultState& z) {
    return (-(2.0 / sol.theta)) * sol.layers[z.mask].phi.array().log().matrix();
}

// Total objective of an initial condition: log of initial wealth plus the
// wealth-free value at time 0.
inline double total_value(const SolutionGrid& sol, double x0, int regime_idx,
                          const DefaultState& z) {
    require(x0 > 0.0, "invalid_argument", "initial wealth must be positive");
    return std::log(x0) + sol.value_at(0.0, regime_idx, z);
}

}  // namespace rsdpe
