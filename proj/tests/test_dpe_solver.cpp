#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include <rsdpe/dpe_solver.hpp>
#include <rsdpe/hamiltonian.hpp>
#include <rsdpe/model.hpp>
#include <rsdpe/rng.hpp>

using rsdpe::DefaultState;
using rsdpe::Error;
using rsdpe::FiniteMarket;
using rsdpe::LayerContext;
using rsdpe::SolutionGrid;
using rsdpe::SolverOptions;
using rsdpe::TimeGrid;

namespace {

FiniteMarket one_stock_market(double theta, double r, double mu, double sigma, double lambda,
                              double horizon = 1.0) {
    FiniteMarket m;
    m.n_stocks = 1;
    m.theta = theta;
    m.horizon = horizon;
    m.brownian_dim = 1;
    m.labels = {1};
    m.q = Eigen::MatrixXd::Zero(1, 1);
    m.r = {r};
    m.mu = {Eigen::VectorXd::Constant(1, mu)};
    m.sigma = {Eigen::MatrixXd::Constant(1, 1, sigma)};
    m.lambda = {{Eigen::VectorXd::Constant(1, lambda), Eigen::VectorXd::Constant(1, lambda)}};
    return m;
}

FiniteMarket two_regime_market(double theta = 1.0) {
    FiniteMarket m;
    m.n_stocks = 1;
    m.theta = theta;
    m.horizon = 1.0;
    m.brownian_dim = 1;
    m.labels = {1, 2};
    m.q = Eigen::MatrixXd(2, 2);
    m.q << -0.6, 0.6, 0.9, -0.9;
    m.r = {0.04, 0.01};
    m.mu = {Eigen::VectorXd::Constant(1, 0.09), Eigen::VectorXd::Constant(1, 0.03)};
    m.sigma = {Eigen::MatrixXd::Constant(1, 1, 0.35), Eigen::MatrixXd::Constant(1, 1, 0.5)};
    m.lambda = {{Eigen::VectorXd::Constant(1, 0.2), Eigen::VectorXd::Constant(1, 0.2)},
                {Eigen::VectorXd::Constant(1, 0.45), Eigen::VectorXd::Constant(1, 0.45)}};
    return m;
}

FiniteMarket two_stock_market() {
    FiniteMarket m;
    m.n_stocks = 2;
    m.theta = 1.4;
    m.horizon = 1.0;
    m.brownian_dim = 2;
    m.labels = {1, 2};
    m.q = Eigen::MatrixXd(2, 2);
    m.q << -0.5, 0.5, 0.7, -0.7;
    m.r = {0.03, 0.015};
    m.mu = {(Eigen::VectorXd(2) << 0.08, 0.06).finished(),
            (Eigen::VectorXd(2) << 0.05, 0.04).finished()};
    Eigen::MatrixXd s1(2, 2), s2(2, 2);
    s1 << 0.25, 0.0, 0.08, 0.3;
    s2 << 0.4, 0.0, 0.12, 0.45;
    m.sigma = {s1, s2};
    auto lam = [](double a, double b) { return (Eigen::VectorXd(2) << a, b).finished(); };
    m.lambda = {{lam(0.15, 0.2), lam(0.15, 0.4), lam(0.3, 0.2), lam(0.3, 0.4)},
                {lam(0.25, 0.3), lam(0.25, 0.6), lam(0.5, 0.3), lam(0.5, 0.6)}};
    return m;
}

// Golden-section for the oracle integrator: objective evaluations only.
double golden_min(const std::function<double(double)>& f, double lo, double hi) {
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-13) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    const double mid = (a + b) / 2.0;
    return f(mid);
}

}  // namespace

TEST_CASE("terminal layer scalar closed form") {
    FiniteMarket m = one_stock_market(1.2, 0.04, 0.0, 1.0, 0.3);
    TimeGrid grid{1.0, 50};
    auto layer = rsdpe::solve_terminal_layer(m, grid);
    for (int k = 0; k <= 50; ++k) {
        const double t = grid.node(k);
        const double want = std::exp(-(1.2 / 2.0) * 0.04 * (1.0 - t));
        CHECK(std::abs(layer.phi(k, 0) - want) <= 1e-12);
    }
}

TEST_CASE("terminal layer two regimes against a fine Runge-Kutta oracle") {
    FiniteMarket m = two_regime_market(1.7);
    TimeGrid grid{1.0, 40};
    auto layer = rsdpe::solve_terminal_layer(m, grid);

    // independent integrator for u(s) = phi(T - s): u' = A u, u(0) = 1
    Eigen::MatrixXd a = m.q;
    a(0, 0) -= (1.7 / 2.0) * m.r[0];
    a(1, 1) -= (1.7 / 2.0) * m.r[1];
    const int steps = 100000;
    const double h = 1.0 / steps;
    Eigen::VectorXd u = Eigen::VectorXd::Ones(2);
    std::vector<Eigen::VectorXd> at_nodes(41);
    at_nodes[40] = u;
    for (int k = 0; k < steps; ++k) {
        Eigen::VectorXd k1 = a * u;
        Eigen::VectorXd k2 = a * (u + 0.5 * h * k1);
        Eigen::VectorXd k3 = a * (u + 0.5 * h * k2);
        Eigen::VectorXd k4 = a * (u + h * k3);
        u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if ((k + 1) % 2500 == 0) at_nodes[40 - (k + 1) / 2500] = u;
    }
    for (int node = 0; node <= 40; ++node)
        for (int i = 0; i < 2; ++i)
            CHECK(std::abs(layer.phi(node, i) - at_nodes[static_cast<size_t>(node)](i)) <= 1e-9);
}

TEST_CASE("auxiliary floor matches its closed form") {
    // Scalar case: psi' = -a psi - beta while |psi| <= 1, so
    // psi(s) = (1 + beta/a) e^{-a s} - beta/a, and the certified bound is the
    // terminal value.
    SECTION("with quadratic slack") {
        FiniteMarket m = one_stock_market(1.0, 0.05, 0.15, 1.0, 0.1);
        DefaultState z(0, 1);
        LayerContext ctx = rsdpe::layer_context(m, 0, z);
        const double beta = rsdpe::beta_i(ctx);
        const double a = (1.0 / 2.0) * 0.05 + 0.1;
        const double want = (1.0 + beta / a) * std::exp(-a) - beta / a;
        REQUIRE(want > 0.0);
        const double got = rsdpe::lower_bound_epsilon(m, z, TimeGrid{1.0, 400});
        CHECK(std::abs(got - want) <= 1e-9);
    }
    SECTION("with zero slack the bound is a pure exponential") {
        // mu = r - lambda makes the quadratic infimum sit at zero allocation
        FiniteMarket m = one_stock_market(2.0, 0.06, 0.06 - 0.3, 0.8, 0.3);
        DefaultState z(0, 1);
        const double a = 0.06 + 0.3;  // (theta/2) r + lambda
        const double got = rsdpe::lower_bound_epsilon(m, z, TimeGrid{1.0, 400});
        CHECK(std::abs(got - std::exp(-a)) <= 1e-10);
    }
    SECTION("defaulted layer only discounts at the short rate") {
        FiniteMarket m = one_stock_market(2.0, 0.05, 0.1, 0.8, 0.3);
        DefaultState z(1, 1);
        const double got = rsdpe::lower_bound_epsilon(m, z, TimeGrid{1.0, 400});
        CHECK(std::abs(got - std::exp(-0.05)) <= 1e-10);
    }
    SECTION("too-stiff models are rejected") {
        FiniteMarket m = one_stock_market(2.0, 0.1, 4.1, 1.0, 0.3);
        DefaultState z(0, 1);
        try {
            rsdpe::lower_bound_epsilon(m, z, TimeGrid{1.0, 400});
            FAIL("expected the positivity certificate to fail");
        } catch (const Error& e) {
            CHECK(e.type() == "nonpositive_epsilon");
        }
    }
}

TEST_CASE("coupled single-stock solve matches a fine oracle integrator") {
    const double theta = 1.5, r = 0.03, mu = 0.08, sigma = 0.4, lambda = 0.2;
    FiniteMarket m = one_stock_market(theta, r, mu, sigma, lambda);
    SolverOptions opt;
    opt.steps = 400;
    SolutionGrid sol = rsdpe::solve_finite(m, opt);

    // Layer with the stock defaulted: explicit discount.
    for (int k = 0; k <= opt.steps; ++k) {
        const double t = sol.grid.node(k);
        CHECK(std::abs(sol.layers[1].phi(k, 0) - std::exp(-(theta / 2.0) * r * (1.0 - t))) <=
              1e-12);
    }

    // Alive layer: independent backward integration in remaining time with a
    // golden-section inner minimizer.
    const double a_coef = (theta / 2.0) * r + lambda;
    auto upstream = [&](double s) { return std::exp(-(theta / 2.0) * r * s); };
    auto coupling = [&](double u_self, double u_up) {
        auto f = [&](double p) {
            const double jump = u_up * std::pow(1.0 - p, -theta / 2.0) * lambda;
            const double h = (theta / 4.0) * (1.0 + theta / 2.0) * sigma * sigma * p * p -
                             (theta / 2.0) * p * (mu - r) - (theta / 2.0) * p * lambda;
            return jump + u_self * h;
        };
        return golden_min(f, -6.0, 1.0 - 1e-9);
    };
    auto rhs = [&](double s, double u) { return -a_coef * u + coupling(u, upstream(s)); };

    const int steps = 20000;
    const double h = 1.0 / steps;
    double u = 1.0;
    std::vector<double> oracle(static_cast<size_t>(opt.steps) + 1);
    oracle[static_cast<size_t>(opt.steps)] = 1.0;
    for (int k = 0; k < steps; ++k) {
        const double s = k * h;
        const double k1 = rhs(s, u);
        const double k2 = rhs(s + 0.5 * h, u + 0.5 * h * k1);
        const double k3 = rhs(s + 0.5 * h, u + 0.5 * h * k2);
        const double k4 = rhs(s + h, u + h * k3);
        u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if ((k + 1) % (steps / opt.steps) == 0)
            oracle[static_cast<size_t>(opt.steps - (k + 1) / (steps / opt.steps))] = u;
    }
    for (int k = 0; k <= opt.steps; ++k)
        CHECK(std::abs(sol.layers[0].phi(k, 0) - oracle[static_cast<size_t>(k)]) <= 1e-8);
}

TEST_CASE("positivity, upper bound, and certified floors hold layer by layer") {
    FiniteMarket m = two_stock_market();
    SolverOptions opt;
    opt.steps = 200;
    SolutionGrid sol = rsdpe::solve_finite(m, opt);
    REQUIRE(sol.layers.size() == 4);
    for (const auto& layer : sol.layers) {
        CHECK(layer.epsilon > 0.0);
        CHECK(layer.min_value >= layer.epsilon - 1e-9);
        CHECK(layer.phi.minCoeff() > 0.0);
        CHECK(layer.phi.maxCoeff() <= 1.0 + 1e-12);
        CHECK(layer.phi.row(opt.steps).isOnes());
        CHECK(layer.max_foc_residual <= 2e-10);
    }
}

TEST_CASE("interpolation is exact at nodes and accurate between them") {
    FiniteMarket m = two_regime_market();
    SolverOptions coarse, fine;
    coarse.steps = 100;
    fine.steps = 800;
    SolutionGrid lo = rsdpe::solve_finite(m, coarse);
    SolutionGrid hi = rsdpe::solve_finite(m, fine);
    DefaultState z(0, 1);
    for (int k = 0; k <= 100; ++k)
        CHECK(lo.phi_at(lo.grid.node(k), 0, z) == lo.layers[0].phi(k, 0));
    // off-node values agree with the fine solve
    for (double t : {0.1234, 0.456789, 0.9371}) {
        CHECK(std::abs(lo.phi_at(t, 0, z) - hi.phi_at(t, 0, z)) < 1e-9);
        CHECK(std::abs(lo.value_at(t, 1, z) - hi.value_at(t, 1, z)) < 1e-8);
    }
}

TEST_CASE("refinement study shows fourth-order convergence") {
    FiniteMarket m = two_regime_market(1.3);
    SolverOptions o800;
    o800.steps = 800;
    SolutionGrid ref = rsdpe::solve_finite(m, o800);

    auto err = [&](int steps) {
        SolverOptions o;
        o.steps = steps;
        SolutionGrid s = rsdpe::solve_finite(m, o);
        double e = 0.0;
        const int stride = 800 / steps;
        for (size_t mask = 0; mask < 2; ++mask)
            for (int k = 0; k <= steps; ++k)
                for (int i = 0; i < 2; ++i)
                    e = std::max(e, std::abs(s.layers[mask].phi(k, i) -
                                             ref.layers[mask].phi(k * stride, i)));
        return e;
    };
    const double e50 = err(50);
    const double e100 = err(100);
    const double e200 = err(200);
    CHECK(std::log2(e50 / e100) >= 3.5);
    CHECK(std::log2(e100 / e200) >= 3.3);
}

TEST_CASE("relabeling the stocks permutes the solution") {
    FiniteMarket m = two_stock_market();
    FiniteMarket swapped = m;
    for (size_t i = 0; i < 2; ++i) {
        std::swap(swapped.mu[i](0), swapped.mu[i](1));
        Eigen::MatrixXd s = swapped.sigma[i];
        swapped.sigma[i].row(0) = s.row(1);
        swapped.sigma[i].row(1) = s.row(0);
        // masks: 01 <-> 10 under the stock swap
        auto& lam = swapped.lambda[i];
        std::swap(lam[1], lam[2]);
        for (auto& v : lam) std::swap(v(0), v(1));
    }
    SolverOptions opt;
    opt.steps = 120;
    SolutionGrid sa = rsdpe::solve_finite(m, opt);
    SolutionGrid sb = rsdpe::solve_finite(swapped, opt);
    const int perm[4] = {0, 2, 1, 3};
    for (int mask = 0; mask < 4; ++mask)
        CHECK((sa.layers[static_cast<size_t>(mask)].phi -
               sb.layers[static_cast<size_t>(perm[mask])].phi)
                  .cwiseAbs()
                  .maxCoeff() <= 1e-10);
}

TEST_CASE("interior-node residual of the dynamic programming equation shrinks at second order") {
    FiniteMarket m = two_regime_market(1.1);
    auto residual = [&](int steps) {
        SolverOptions opt;
        opt.steps = steps;
        SolutionGrid sol = rsdpe::solve_finite(m, opt);
        const double dt = sol.grid.dt();
        DefaultState z(0, 1);
        double worst = 0.0;
        for (int k = 1; k < steps; ++k) {
            for (int i = 0; i < 2; ++i) {
                const double dphi =
                    (sol.layers[0].phi(k + 1, i) - sol.layers[0].phi(k - 1, i)) / (2.0 * dt);
                const double qcoup = m.q.row(i).dot(sol.layers[0].phi.row(k));
                Eigen::VectorXd fv(2);
                fv << sol.layers[0].phi(k, i), sol.layers[1].phi(k, i);
                const double ham = rsdpe::tilde_h_infimum(m, i, z, fv);
                worst = std::max(worst, std::abs(dphi + qcoup + ham));
            }
        }
        return worst;
    };
    const double r100 = residual(100);
    const double r200 = residual(200);
    CHECK(r100 / r200 >= 3.0);
    CHECK(r200 < 1e-4);
}

TEST_CASE("flat models stay flat") {
    // r identically zero and mu = r: no incentive, phi = 1 everywhere.
    FiniteMarket m = one_stock_market(1.8, 0.0, 0.0, 0.6, 0.25);
    SolverOptions opt;
    opt.steps = 60;
    SolutionGrid sol = rsdpe::solve_finite(m, opt);
    for (const auto& layer : sol.layers)
        CHECK((layer.phi.array() - 1.0).abs().maxCoeff() <= 1e-13);
}

TEST_CASE("value accessors apply the transform") {
    FiniteMarket m = two_regime_market();
    SolverOptions opt;
    opt.steps = 50;
    SolutionGrid sol = rsdpe::solve_finite(m, opt);
    DefaultState z(1, 1);
    const double t = sol.grid.node(20);
    const double phi = sol.phi_at(t, 0, z);
    CHECK(sol.value_at(t, 0, z) == -(2.0 / sol.theta) * std::log(phi));
    // all-defaulted scalar value grows at the short rate mix, stays nonnegative
    CHECK(sol.value_at(0.0, 0, z) >= 0.0);
}

TEST_CASE("comparison and positivity of linear Metzler flows") {
    // Ordering: g1' = B g1 + c, g2' = B g2 + c - p with p >= 0 and equal
    // starts keeps g1 >= g2; positivity: from a strictly positive start the
    // flow stays strictly positive. 500 random systems, RK4 in-test.
    rsdpe::CounterRng rng(83, 0);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform01() * 3);
        Eigen::MatrixXd b(n, n);
        for (int i = 0; i < n; ++i) {
            double row = 0.0;
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                b(i, j) = rng.uniform01();
                row += b(i, j);
            }
            b(i, i) = -row - 0.5 * rng.uniform01();
        }
        Eigen::VectorXd c(n), p(n), g1(n), g2(n), hpos(n);
        for (int i = 0; i < n; ++i) {
            c(i) = -0.5 + rng.uniform01();
            p(i) = 0.5 * rng.uniform01();
            g1(i) = 0.05 + rng.uniform01();
            hpos(i) = 0.01 + rng.uniform01();
        }
        g2 = g1;
        const int steps = 60;
        const double h = 1.0 / steps;
        bool ordered = true, positive = true;
        for (int k = 0; k < steps; ++k) {
            auto step = [&](Eigen::VectorXd& g, const Eigen::VectorXd& rhs_c) {
                Eigen::VectorXd k1 = b * g + rhs_c;
                Eigen::VectorXd k2 = b * (g + 0.5 * h * k1) + rhs_c;
                Eigen::VectorXd k3 = b * (g + 0.5 * h * k2) + rhs_c;
                Eigen::VectorXd k4 = b * (g + h * k3) + rhs_c;
                g += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            };
            step(g1, c);
            step(g2, (c - p).eval());
            step(hpos, Eigen::VectorXd::Zero(n).eval());
            if (((g1 - g2).array() < -1e-12).any()) ordered = false;
            if ((hpos.array() <= 0.0).any()) positive = false;
        }
        CHECK(ordered);
        CHECK(positive);
    }
}
