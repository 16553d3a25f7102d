#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/hamiltonian.hpp"
#include "rsdpe/model.hpp"
#include "rsdpe/rng.hpp"
#include "rsdpe/strategy.hpp"

namespace rsdpe {

// Piecewise-constant regime trajectory on [t0, t1].
struct RegimePath {
    double t0 = 0.0;
    double t1 = 0.0;
    std::vector<double> jump_times;  // strictly inside (t0, t1), increasing
    std::vector<int> states;         // states[k] holds on [jump_times[k-1], jump_times[k])

    int at(double t) const {
        size_t k = 0;
        while (k < jump_times.size() && jump_times[k] <= t) ++k;
        return states[k];
    }
};

// Exact jump-hold simulation of the regime chain given by a rate matrix.
// States are storage indices of the market. A zero exit rate holds forever,
// which is how the absorbing cemetery regime behaves.
inline RegimePath simulate_chain(const Eigen::MatrixXd& q, int start_idx, double t0, double t1,
                                 CounterRng& rng) {
    require(t1 >= t0, "invalid_argument", "time interval is reversed");
    const int n = static_cast<int>(q.rows());
    require(start_idx >= 0 && start_idx < n, "index_out_of_range", "start regime out of range");

    RegimePath path;
    path.t0 = t0;
    path.t1 = t1;
    path.states.push_back(start_idx);
    double t = t0;
    int i = start_idx;
    while (true) {
        double exit_rate = 0.0;
        for (int j = 0; j < n; ++j)
            if (j != i) exit_rate += std::max(q(i, j), 0.0);
        if (exit_rate <= 0.0) break;
        t += rng.exponential(exit_rate);
        if (t >= t1) break;
        const double u = rng.uniform01() * exit_rate;
        double acc = 0.0;
        int target = -1;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            acc += std::max(q(i, j), 0.0);
            if (acc >= u) {
                target = j;
                break;
            }
        }
        if (target < 0) target = i == n - 1 ? n - 2 : n - 1;  // rounding guard
        path.jump_times.push_back(t);
        path.states.push_back(target);
        i = target;
    }
    return path;
}

inline RegimePath simulate_chain(const FiniteMarket& market, int start_idx, double t0, double t1,
                                 CounterRng& rng) {
    return simulate_chain(market.q, start_idx, t0, t1, rng);
}

// Chain simulation directly on a countable generator; states carry 1-based
// labels. The jump target is drawn by walking the row until the cumulative
// rate covers the uniform draw.
inline RegimePath simulate_chain(const RegimeGenerator& gen, int start_label, double t0, double t1,
                                 CounterRng& rng) {
    require(t1 >= t0, "invalid_argument", "time interval is reversed");
    RegimePath path;
    path.t0 = t0;
    path.t1 = t1;
    path.states.push_back(start_label);
    double t = t0;
    int i = start_label;
    while (true) {
        const double exit_rate = -gen.rate(i, i);
        if (exit_rate <= 0.0) break;
        t += rng.exponential(exit_rate);
        if (t >= t1) break;
        const double u = rng.uniform01() * exit_rate;
        double acc = 0.0;
        int target = -1;
        for (int j = 1; j <= 10000000; ++j) {
            if (j == i) continue;
            acc += std::max(gen.rate(i, j), 0.0);
            if (acc >= u) {
                target = j;
                break;
            }
        }
        require(target > 0, "simulation_failed", "countable jump draw did not terminate");
        path.jump_times.push_back(t);
        path.states.push_back(target);
        i = target;
    }
    return path;
}

struct DefaultEvent {
    double time = 0.0;
    int stock = 0;  // 0-based
};

// Exact competing-exponential default cascade along a regime path. After
// every default the surviving intensities are re-read at the new state, so
// contagion feeds back immediately. No thinning is involved.
inline std::vector<DefaultEvent> simulate_defaults(const FiniteMarket& market,
                                                   const RegimePath& path, DefaultState z0,
                                                   CounterRng& rng) {
    std::vector<DefaultEvent> events;
    DefaultState z = z0;
    double t = path.t0;
    size_t seg = 0;
    while (t < path.t1 && !z.all_defaulted()) {
        while (seg < path.jump_times.size() && path.jump_times[seg] <= t) ++seg;
        const double seg_end = seg < path.jump_times.size() ? path.jump_times[seg] : path.t1;
        const int i = path.states[seg];
        const Eigen::VectorXd& lam = market.intensities(i, z);
        const std::vector<int> alive = z.survivors();
        double total = 0.0;
        for (int j : alive) total += lam(j);
        require(total > 0.0, "invalid_coefficients", "alive intensities must be positive");
        const double wait = rng.exponential(total);
        if (t + wait < seg_end) {
            t += wait;
            const double u = rng.uniform01() * total;
            double acc = 0.0;
            int hit = alive.back();
            for (int j : alive) {
                acc += lam(j);
                if (acc >= u) {
                    hit = j;
                    break;
                }
            }
            events.push_back({t, hit});
            z = neighbor(z, hit);
        } else {
            t = seg_end;
        }
    }
    return events;
}

// Feedback allocation source for the wealth simulation. The map must return
// a full allocation vector with zeros at defaulted stocks. When the source
// is piecewise constant between its breakpoints and the path events, the
// integrals below are evaluated exactly with one node per interval.
struct StrategySource {
    std::function<Eigen::VectorXd(double, int, const DefaultState&)> allocation;
    std::vector<double> breakpoints;
    bool piecewise_constant = false;
};

inline StrategySource zero_strategy(int n_stocks) {
    StrategySource s;
    s.allocation = [n_stocks](double, int, const DefaultState&) {
        return Eigen::VectorXd::Zero(n_stocks);
    };
    s.piecewise_constant = true;
    return s;
}

inline StrategySource constant_strategy(const Eigen::VectorXd& pi) {
    StrategySource s;
    s.allocation = [pi](double, int, const DefaultState& z) {
        Eigen::VectorXd out = pi;
        for (int j = 0; j < z.n_stocks; ++j)
            if (z.defaulted(j)) out(j) = 0.0;
        return out;
    };
    s.piecewise_constant = true;
    return s;
}

// The grid is held by pointer: it must outlive the returned source.
inline StrategySource grid_strategy(const StrategyGrid& grid) {
    StrategySource s;
    const StrategyGrid* g = &grid;
    s.allocation = [g](double t, int regime_idx, const DefaultState& z) {
        return g->allocation(t, regime_idx, z);
    };
    s.breakpoints.reserve(static_cast<size_t>(grid.grid.steps));
    for (int m = 1; m < grid.grid.steps; ++m) s.breakpoints.push_back(grid.grid.node(m));
    s.piecewise_constant = true;
    return s;
}

struct WealthSimOptions {
    int substeps = 16;  // quadrature nodes per interval for non-constant sources
};

// Closed-form log-wealth of one path, together with the accumulated
// integrals it is made of (kept for diagnostics and identity tests).
struct WealthPath {
    double log_terminal = 0.0;
    double int_r = 0.0;               // integral of the short rate
    double int_excess = 0.0;          // integral of pi . (mu - r e)
    double int_quad = 0.0;            // integral of |sigma^T pi|^2
    double brownian = 0.0;            // sampled integral of pi^T sigma dW
    double int_lambda_pi = 0.0;       // sum_j integral of lambda_j pi_j while alive
    double int_jump_comp = 0.0;       // sum_j integral of ((1-pi_j)^(-theta/2) - 1) lambda_j
    double sum_log_jumps = 0.0;       // sum over defaults of log(1 - pi_j(tau-))
    double int_cost = 0.0;            // integral of the running cost L
};

inline WealthPath simulate_wealth(const FiniteMarket& market, const RegimePath& path,
                                  const std::vector<DefaultEvent>& defaults, DefaultState z0,
                                  const StrategySource& strategy, double x0, CounterRng& rng,
                                  const WealthSimOptions& opt = {}) {
    require(x0 > 0.0, "invalid_argument", "initial wealth must be positive");
    const int N = market.n_stocks;
    const double th = market.theta;

    // Breakpoints: endpoints, regime jumps, defaults, and strategy nodes.
    std::vector<double> cuts;
    cuts.push_back(path.t0);
    cuts.push_back(path.t1);
    for (double t : path.jump_times) cuts.push_back(t);
    for (const auto& ev : defaults) cuts.push_back(ev.time);
    for (double t : strategy.breakpoints)
        if (t > path.t0 && t < path.t1) cuts.push_back(t);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    WealthPath w;
    DefaultState z = z0;
    size_t next_default = 0;
    const int nsub = strategy.piecewise_constant ? 1 : std::max(1, opt.substeps);

    for (size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double a = cuts[c];
        const double b = cuts[c + 1];
        if (b <= a) continue;
        const int i = path.at(a);
        const auto si = static_cast<size_t>(i);
        const Eigen::VectorXd& lam = market.intensities(i, z);
        Eigen::VectorXd pi_last;

        for (int s = 0; s < nsub; ++s) {
            const double s0 = a + (b - a) * s / nsub;
            const double s1 = a + (b - a) * (s + 1) / nsub;
            const double dt = s1 - s0;
            Eigen::VectorXd pi = strategy.allocation(s0, i, z);
            require(pi.size() == N, "invalid_argument", "allocation has wrong length");
            for (int j = 0; j < N; ++j) {
                if (z.defaulted(j))
                    pi(j) = 0.0;
                else
                    require(pi(j) < 1.0, "allocation_margin",
                            "allocation of an alive stock reached 1");
            }
            pi_last = pi;

            w.int_r += market.r[si] * dt;
            const Eigen::VectorXd excess =
                market.mu[si] - Eigen::VectorXd::Constant(N, market.r[si]);
            w.int_excess += pi.dot(excess) * dt;
            const double quad = (market.sigma[si].transpose() * pi).squaredNorm();
            w.int_quad += quad * dt;
            w.brownian += std::sqrt(quad * dt) * rng.normal();
            for (int j = 0; j < N; ++j) {
                if (z.defaulted(j)) continue;
                w.int_lambda_pi += lam(j) * pi(j) * dt;
                w.int_jump_comp += (std::pow(1.0 - pi(j), -th / 2.0) - 1.0) * lam(j) * dt;
            }
            w.int_cost += cost_l(market, i, z, pi) * dt;
        }

        // A default sitting exactly at the right endpoint jumps with the
        // allocation that was in force just before it.
        if (next_default < defaults.size() && defaults[next_default].time == b) {
            const int j = defaults[next_default].stock;
            w.sum_log_jumps += std::log(1.0 - pi_last(j));
            z = neighbor(z, j);
            ++next_default;
        }
    }

    w.log_terminal = std::log(x0) + w.int_r + w.int_excess + w.brownian - 0.5 * w.int_quad +
                     w.sum_log_jumps + w.int_lambda_pi;
    return w;
}

struct SimulationJob {
    double t0 = 0.0;
    int regime_idx = 0;
    DefaultState z0;
    double x0 = 1.0;
    long n_paths = 100000;
    std::uint64_t seed = 0;
    WealthSimOptions wealth;
};

struct ObjectiveEstimate {
    double objective = 0.0;   // J, includes log of initial wealth
    double value_form = 0.0;  // J - log x0, comparable to the solver value
    double std_error = 0.0;   // delta-method standard error of J
    long n_paths = 0;
    bool degenerate = false;  // all paths identical, std_error pinned at 0
};

namespace detail {

// Deterministic pairwise reduction in index order.
inline double pairwise_sum(const std::vector<double>& v, size_t lo, size_t hi) {
    if (hi - lo <= 8) {
        double s = 0.0;
        for (size_t k = lo; k < hi; ++k) s += v[k];
        return s;
    }
    const size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& v) {
    return v.empty() ? 0.0 : pairwise_sum(v, 0, v.size());
}

inline std::vector<double> sample_log_wealth(const FiniteMarket& market,
                                             const StrategySource& strategy,
                                             const SimulationJob& job) {
    require(job.n_paths >= 2, "invalid_argument", "at least two paths are required");
    std::vector<double> g(static_cast<size_t>(job.n_paths));
    for (long p = 0; p < job.n_paths; ++p) {
        CounterRng rng(job.seed, static_cast<std::uint64_t>(p));
        RegimePath path = simulate_chain(market, job.regime_idx, job.t0, market.horizon, rng);
        std::vector<DefaultEvent> defaults = simulate_defaults(market, path, job.z0, rng);
        WealthPath w =
            simulate_wealth(market, path, defaults, job.z0, strategy, job.x0, rng, job.wealth);
        g[static_cast<size_t>(p)] = w.log_terminal;
    }
    return g;
}

}  // namespace detail

// Certainty-equivalent objective from a log-wealth sample at risk level
// theta, evaluated in shifted exponential space for overflow safety.
inline ObjectiveEstimate estimate_from_sample(const std::vector<double>& log_wealth, double theta,
                                              double x0) {
    const size_t n = log_wealth.size();
    require(n >= 2, "invalid_argument", "at least two paths are required");
    require(theta > 0.0, "invalid_argument", "theta must be positive");

    double y_max = -1e308;
    for (double g : log_wealth) y_max = std::max(y_max, -(theta / 2.0) * g);
    std::vector<double> w(n);
    for (size_t k = 0; k < n; ++k)
        w[k] = std::exp(-(theta / 2.0) * log_wealth[k] - y_max);
    const double mean_w = detail::pairwise_sum(w) / static_cast<double>(n);

    std::vector<double> dev(n);
    for (size_t k = 0; k < n; ++k) dev[k] = (w[k] - mean_w) * (w[k] - mean_w);
    const double var_w = detail::pairwise_sum(dev) / static_cast<double>(n - 1);

    ObjectiveEstimate est;
    est.n_paths = static_cast<long>(n);
    est.objective = -(2.0 / theta) * (y_max + std::log(mean_w));
    est.value_form = est.objective - std::log(x0);
    est.degenerate = var_w == 0.0;
    est.std_error =
        est.degenerate ? 0.0
                       : (2.0 / theta) * std::sqrt(var_w / static_cast<double>(n)) / mean_w;
    return est;
}

inline ObjectiveEstimate estimate_objective(const FiniteMarket& market,
                                            const StrategySource& strategy,
                                            const SimulationJob& job) {
    const std::vector<double> g = detail::sample_log_wealth(market, strategy, job);
    return estimate_from_sample(g, market.theta, job.x0);
}

// Small-theta diagnostics: one common path sample, re-priced at every theta
// and compared against  mean(log X) - (theta/4) var(log X).
struct ExpansionCheck {
    std::vector<double> thetas;
    std::vector<double> estimates;
    std::vector<double> expansions;
    std::vector<double> errors;
    double mean_log = 0.0;
    double var_log = 0.0;
};

inline ExpansionCheck small_theta_expansion_check(const FiniteMarket& market,
                                                  const StrategySource& strategy,
                                                  const std::vector<double>& thetas,
                                                  const SimulationJob& job) {
    const std::vector<double> g = detail::sample_log_wealth(market, strategy, job);
    const size_t n = g.size();

    ExpansionCheck chk;
    chk.thetas = thetas;
    chk.mean_log = detail::pairwise_sum(g) / static_cast<double>(n);
    std::vector<double> dev(n);
    for (size_t k = 0; k < n; ++k) dev[k] = (g[k] - chk.mean_log) * (g[k] - chk.mean_log);
    chk.var_log = detail::pairwise_sum(dev) / static_cast<double>(n - 1);

    for (double th : thetas) {
        ObjectiveEstimate est = estimate_from_sample(g, th, job.x0);
        const double expansion = chk.mean_log - (th / 4.0) * chk.var_log;
        chk.estimates.push_back(est.objective);
        chk.expansions.push_back(expansion);
        chk.errors.push_back(std::abs(est.objective - expansion));
    }
    return chk;
}

}  // namespace rsdpe
