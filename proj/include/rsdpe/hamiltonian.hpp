#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "rsdpe/common.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/model.hpp"

namespace rsdpe {

// Running cost of the criterion. Allocations of defaulted stocks still enter
// the diffusion term; their intensity terms are masked out.
inline double cost_l(const FiniteMarket& m, int regime_idx, const DefaultState& z,
                     const Eigen::VectorXd& pi) {
    require(pi.size() == m.n_stocks, "invalid_argument", "allocation has wrong length");
    const auto i = static_cast<size_t>(regime_idx);
    const double th = m.theta;
    const double r = m.r[i];
    const Eigen::VectorXd& lam = m.intensities(regime_idx, z);

    double val = -r - pi.dot(m.mu[i] - r * Eigen::VectorXd::Ones(m.n_stocks));
    val += 0.5 * (1.0 + th / 2.0) * (m.sigma[i].transpose() * pi).squaredNorm();
    for (int j = 0; j < m.n_stocks; ++j) {
        if (z.defaulted(j)) continue;
        require(pi(j) < 1.0, "invalid_argument",
                "allocation of an alive stock must stay below 1");
        val -= (2.0 / th + pi(j) - (2.0 / th) * std::pow(1.0 - pi(j), -th / 2.0)) * lam(j);
    }
    return val;
}

// The transformed-value Hamiltonian. fvals holds the transformed values with
// fvals[0] for the current default state and fvals[1 + j] for the state with
// stock j flipped.
inline double hamiltonian_tilde_h(const FiniteMarket& m, int regime_idx, const DefaultState& z,
                                  const Eigen::VectorXd& pi, const Eigen::VectorXd& fvals) {
    require(pi.size() == m.n_stocks, "invalid_argument", "allocation has wrong length");
    require(fvals.size() == m.n_stocks + 1, "invalid_argument",
            "fvals must hold the current value plus one per stock");
    const auto i = static_cast<size_t>(regime_idx);
    const double th = m.theta;
    const double r = m.r[i];
    const Eigen::VectorXd& lam = m.intensities(regime_idx, z);

    double brace = -(th / 2.0) * r;
    brace -= (th / 2.0) * pi.dot(m.mu[i] - r * Eigen::VectorXd::Ones(m.n_stocks));
    brace += (th / 4.0) * (1.0 + th / 2.0) * (m.sigma[i].transpose() * pi).squaredNorm();
    double coupling = 0.0;
    for (int j = 0; j < m.n_stocks; ++j) {
        if (z.defaulted(j)) continue;
        brace += (-1.0 - (th / 2.0) * pi(j)) * lam(j);
        coupling += fvals(1 + j) * std::pow(1.0 - pi(j), -th / 2.0) * lam(j);
    }
    return brace * fvals(0) + coupling;
}

// Diagonal loading of the layer ODE: nu_i(z) = -(theta/2) r(i) - sum of alive
// intensities.
inline double nu_value(const FiniteMarket& m, int regime_idx, const DefaultState& z) {
    const Eigen::VectorXd& lam = m.intensities(regime_idx, z);
    double s = 0.0;
    for (int j : z.survivors()) s += lam(j);
    return -(m.theta / 2.0) * m.r[static_cast<size_t>(regime_idx)] - s;
}

// Survivor-dimension data of the inner problem for one (regime, state) pair.
struct LayerContext {
    double theta = 0.0;
    Eigen::VectorXd lambda;  // alive intensities
    Eigen::VectorXd excess;  // mu - r over survivors
    Eigen::MatrixXd gram;    // survivor rows of sigma times their transpose

    int dim() const { return static_cast<int>(lambda.size()); }
};

inline LayerContext layer_context(const FiniteMarket& m, int regime_idx, const DefaultState& z) {
    const auto i = static_cast<size_t>(regime_idx);
    const std::vector<int> alive = z.survivors();
    const int mm = static_cast<int>(alive.size());
    LayerContext ctx;
    ctx.theta = m.theta;
    ctx.lambda.resize(mm);
    ctx.excess.resize(mm);
    Eigen::MatrixXd rows(mm, m.brownian_dim);
    const Eigen::VectorXd& lam = m.intensities(regime_idx, z);
    for (int a = 0; a < mm; ++a) {
        const int j = alive[static_cast<size_t>(a)];
        ctx.lambda(a) = lam(j);
        ctx.excess(a) = m.mu[i](j) - m.r[i];
        rows.row(a) = m.sigma[i].row(j);
    }
    ctx.gram = rows * rows.transpose();
    return ctx;
}

// Pure-quadratic part of the layer Hamiltonian, H(0) = 0.
inline double layer_h_k(const LayerContext& ctx, const Eigen::VectorXd& pi) {
    require(pi.size() == ctx.dim(), "invalid_argument", "allocation has wrong survivor length");
    const double th = ctx.theta;
    return (th / 4.0) * (1.0 + th / 2.0) * pi.dot(ctx.gram * pi) -
           (th / 2.0) * pi.dot(ctx.excess) - (th / 2.0) * pi.dot(ctx.lambda);
}

// beta = -inf over allocations of the pure-quadratic part: a closed-form
// linear solve because the quadratic form is positive definite.
inline double beta_i(const LayerContext& ctx) {
    if (ctx.dim() == 0) return 0.0;
    const Eigen::VectorXd c = ctx.excess + ctx.lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(ctx.gram);
    require(llt.info() == Eigen::Success, "singular_gram",
            "survivor diffusion block is not positive definite");
    const Eigen::VectorXd x = llt.solve(c);
    return (ctx.theta / (2.0 * (2.0 + ctx.theta))) * c.dot(x);
}

struct MinimizeOptions {
    double foc_tol = 1e-10;       // sup-norm gradient target
    double margin_floor = 1e-8;   // iterates keep 1 - pi_j >= margin_floor
    int max_iterations = 100;
    int fallback_iterations = 50;
};

struct MinimizeResult {
    Eigen::VectorXd pi;
    double value = 0.0;
    double foc_residual = 0.0;
    int iterations = 0;
    bool used_fallback = false;
};

namespace detail {

struct InnerProblem {
    const LayerContext& ctx;
    const Eigen::VectorXd& upstream;
    double x;

    double value(const Eigen::VectorXd& pi) const {
        double s = 0.0;
        for (int j = 0; j < ctx.dim(); ++j)
            s += upstream(j) * std::pow(1.0 - pi(j), -ctx.theta / 2.0) * ctx.lambda(j);
        return s + layer_h_k(ctx, pi) * x;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& pi) const {
        const double th = ctx.theta;
        Eigen::VectorXd g = x * ((th / 2.0) * (1.0 + th / 2.0) * (ctx.gram * pi) -
                                 (th / 2.0) * (ctx.excess + ctx.lambda));
        for (int j = 0; j < ctx.dim(); ++j)
            g(j) += (th / 2.0) * upstream(j) * ctx.lambda(j) *
                    std::pow(1.0 - pi(j), -th / 2.0 - 1.0);
        return g;
    }

    Eigen::MatrixXd hessian(const Eigen::VectorXd& pi) const {
        const double th = ctx.theta;
        Eigen::MatrixXd h = x * (th / 2.0) * (1.0 + th / 2.0) * ctx.gram;
        for (int j = 0; j < ctx.dim(); ++j)
            h(j, j) += (th / 2.0) * (th / 2.0 + 1.0) * upstream(j) * ctx.lambda(j) *
                       std::pow(1.0 - pi(j), -th / 2.0 - 2.0);
        return h;
    }
};

inline MinimizeResult projected_gradient(const InnerProblem& prob, Eigen::VectorXd pi,
                                         const MinimizeOptions& opt) {
    MinimizeResult res;
    res.used_fallback = true;
    const double cap = 1.0 - opt.margin_floor;
    double fx = prob.value(pi);
    for (int it = 0; it < opt.fallback_iterations; ++it) {
        Eigen::VectorXd g = prob.gradient(pi);
        res.foc_residual = g.lpNorm<Eigen::Infinity>();
        res.iterations = it;
        if (res.foc_residual <= opt.foc_tol) break;
        double alpha = 1.0;
        while (alpha > 1e-18) {
            Eigen::VectorXd trial = (pi - alpha * g).cwiseMin(cap);
            double ft = prob.value(trial);
            if (std::isfinite(ft) && ft < fx) {
                pi = trial;
                fx = ft;
                break;
            }
            alpha *= 0.5;
        }
        if (alpha <= 1e-18) break;
    }
    res.pi = pi;
    res.value = fx;
    res.foc_residual = prob.gradient(pi).lpNorm<Eigen::Infinity>();
    return res;
}

}  // namespace detail

// Minimizes  sum_j upstream_j (1 - pi_j)^(-theta/2) lambda_j + H(pi) x  over
// allocations below 1. Damped Newton from pi = 0 with an Armijo backtracking
// line search and a domain cap on 1 - pi_j; projected gradient as fallback.
inline MinimizeResult inner_minimize(const LayerContext& ctx, const Eigen::VectorXd& upstream,
                                     double x, const MinimizeOptions& opt = {}) {
    const int mm = ctx.dim();
    if (mm == 0) {
        MinimizeResult res;
        res.pi = Eigen::VectorXd::Zero(0);
        return res;
    }
    require(upstream.size() == mm, "invalid_argument", "upstream values have wrong length");
    require(x > 0.0, "invalid_argument", "current value entering the inner problem must be positive");
    for (int j = 0; j < mm; ++j)
        require(upstream(j) > 0.0, "invalid_argument",
                "upstream value " + std::to_string(j) + " must be positive");

    detail::InnerProblem prob{ctx, upstream, x};
    const double cap = 1.0 - opt.margin_floor;

    MinimizeResult res;
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(mm);
    double fx = prob.value(pi);
    for (int it = 0; it <= opt.max_iterations; ++it) {
        Eigen::VectorXd g = prob.gradient(pi);
        res.foc_residual = g.lpNorm<Eigen::Infinity>();
        res.iterations = it;
        if (res.foc_residual <= opt.foc_tol) {
            res.pi = pi;
            res.value = fx;
            return res;
        }
        if (it == opt.max_iterations) break;

        Eigen::LLT<Eigen::MatrixXd> llt(prob.hessian(pi));
        if (llt.info() != Eigen::Success) {
            res = detail::projected_gradient(prob, pi, opt);
            if (res.foc_residual <= opt.foc_tol) return res;
            break;
        }
        Eigen::VectorXd dp = llt.solve(-g);

        double alpha = 1.0;
        for (int j = 0; j < mm; ++j)
            if (dp(j) > 0.0) alpha = std::min(alpha, (cap - pi(j)) / dp(j));
        const double slope = g.dot(dp);
        const double f_floor =
            16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(fx));
        if (-alpha * slope <= f_floor) {
            // Predicted decrease sits below the objective's rounding floor,
            // so the Armijo test cannot resolve it; the damped Newton step is
            // locally convergent on its own near the unique minimizer.
            pi += alpha * dp;
            fx = prob.value(pi);
            continue;
        }
        while (alpha > 1e-18) {
            Eigen::VectorXd trial = pi + alpha * dp;
            double ft = prob.value(trial);
            if (std::isfinite(ft) && ft <= fx + 1e-4 * alpha * slope + f_floor) {
                pi = trial;
                fx = ft;
                break;
            }
            alpha *= 0.5;
        }
        if (alpha <= 1e-18) {
            res = detail::projected_gradient(prob, pi, opt);
            if (res.foc_residual <= opt.foc_tol) return res;
            break;
        }
    }
    fail("minimize_failed",
         "inner minimization stalled: residual " + full_precision(res.foc_residual) + " after " +
             std::to_string(res.iterations) + " iterations" +
             (res.used_fallback ? " (fallback used)" : ""));
}

// Floor-clamped coupling term of the layer ODE.
inline double g_k(const LayerContext& ctx, const Eigen::VectorXd& upstream, double x,
                  double floor, const MinimizeOptions& opt = {}) {
    return inner_minimize(ctx, upstream, std::max(x, floor), opt).value;
}

// inf over allocations of the transformed-value Hamiltonian, computed through
// the survivor-dimension inner problem.
inline double tilde_h_infimum(const FiniteMarket& m, int regime_idx, const DefaultState& z,
                              const Eigen::VectorXd& fvals, const MinimizeOptions& opt = {}) {
    require(fvals.size() == m.n_stocks + 1, "invalid_argument",
            "fvals must hold the current value plus one per stock");
    LayerContext ctx = layer_context(m, regime_idx, z);
    const std::vector<int> alive = z.survivors();
    Eigen::VectorXd upstream(static_cast<Eigen::Index>(alive.size()));
    for (size_t a = 0; a < alive.size(); ++a)
        upstream(static_cast<Eigen::Index>(a)) = fvals(1 + alive[a]);
    const double g = ctx.dim() == 0 ? 0.0 : inner_minimize(ctx, upstream, fvals(0), opt).value;
    return nu_value(m, regime_idx, z) * fvals(0) + g;
}

}  // namespace rsdpe
