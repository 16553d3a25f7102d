#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Dense>

#include <rsdpe/model.hpp>
#include <rsdpe/rng.hpp>
#include <rsdpe/simulation.hpp>

using rsdpe::CoefficientProvider;
using rsdpe::DefaultState;
using rsdpe::Error;
using rsdpe::FiniteMarket;
using rsdpe::ModelSpec;
using rsdpe::RegimeGenerator;

namespace {

ModelSpec two_regime_two_stock() {
    ModelSpec spec;
    spec.n_stocks = 2;
    spec.theta = 1.0;
    spec.horizon = 1.0;
    spec.brownian_dim = 2;
    Eigen::MatrixXd q(2, 2);
    q << -0.5, 0.5, 0.8, -0.8;
    spec.generator = RegimeGenerator::finite(q);
    spec.coef.r = [](int label) { return label == 1 ? 0.03 : 0.01; };
    spec.coef.mu = [](int label) {
        return label == 1 ? Eigen::Vector2d(0.08, 0.06) : Eigen::Vector2d(0.04, 0.05);
    };
    spec.coef.sigma = [](int label) {
        Eigen::Matrix2d s;
        if (label == 1)
            s << 0.20, 0.00, 0.06, 0.25;
        else
            s << 0.30, 0.00, 0.10, 0.35;
        return Eigen::MatrixXd(s);
    };
    spec.coef.lambda = [](int label, const DefaultState& z) {
        const double base = label == 1 ? 0.10 : 0.25;
        Eigen::VectorXd lam(2);
        lam << base, base * 1.5;
        // contagion: a default raises the survivor's intensity
        if (z.cardinality() >= 1) lam *= 2.0;
        return lam;
    };
    return spec;
}

ModelSpec geometric_spec(double theta = 1.0) {
    ModelSpec spec;
    spec.n_stocks = 1;
    spec.theta = theta;
    spec.horizon = 1.0;
    spec.brownian_dim = 1;
    spec.generator = RegimeGenerator::geometric();
    spec.n_max = 32;
    spec.coef.r = [](int label) { return 0.02 * std::pow(0.5, label - 1); };
    spec.coef.mu = [](int label) {
        Eigen::VectorXd mu(1);
        mu << 0.02 * std::pow(0.5, label - 1) + 0.05 * std::pow(0.5, label - 1);
        return mu;
    };
    spec.coef.sigma = [](int) {
        Eigen::MatrixXd s(1, 1);
        s << 0.3;
        return s;
    };
    spec.coef.lambda = [](int label, const DefaultState&) {
        Eigen::VectorXd lam(1);
        lam << 0.1 + 0.2 * std::pow(0.5, label - 1);
        return lam;
    };
    return spec;
}

}  // namespace

TEST_CASE("materialize tabulates every regime and default state") {
    FiniteMarket m = rsdpe::materialize(two_regime_two_stock());
    CHECK(m.labels == std::vector<int>{1, 2});
    CHECK_FALSE(m.has_absorbing);
    CHECK(m.n_regimes() == 2);
    CHECK(m.n_states() == 4);
    CHECK(m.r[0] == 0.03);
    CHECK(m.r[1] == 0.01);
    CHECK(m.mu[0](0) == 0.08);
    CHECK(m.q(0, 1) == 0.5);
    CHECK(m.index_of_label(2) == 1);
    CHECK_THROWS_AS(m.index_of_label(3), Error);

    DefaultState none(0, 2), first(0b01, 2);
    CHECK(m.intensities(0, none)(0) == 0.10);
    CHECK(m.intensities(0, first)(1) == 0.10 * 1.5 * 2.0);  // doubled by contagion
}

TEST_CASE("validation passes on a healthy model and pinpoints defects") {
    ModelSpec spec = two_regime_two_stock();
    CHECK(rsdpe::validate_model(spec).ok());

    SECTION("theta") {
        spec.theta = -1.0;
        auto rep = rsdpe::validate_model(spec);
        REQUIRE_FALSE(rep.ok());
        CHECK(rep.to_string().find("theta must be positive") != std::string::npos);
    }
    SECTION("generator row sums") {
        Eigen::MatrixXd q(2, 2);
        q << -0.5, 0.4, 0.8, -0.8;
        spec.generator = RegimeGenerator::finite(q);
        auto rep = rsdpe::validate_model(spec);
        REQUIRE_FALSE(rep.ok());
        CHECK(rep.to_string().find("row sum") != std::string::npos);
    }
    SECTION("negative off-diagonal rate") {
        Eigen::MatrixXd q(2, 2);
        q << 0.5, -0.5, 0.8, -0.8;
        spec.generator = RegimeGenerator::finite(q);
        CHECK_FALSE(rsdpe::validate_model(spec).ok());
    }
    SECTION("degenerate volatility") {
        spec.coef.sigma = [](int) {
            Eigen::MatrixXd s(2, 2);
            s << 0.2, 0.0, 0.2, 0.0;  // rank one
            return s;
        };
        auto rep = rsdpe::validate_model(spec);
        REQUIRE_FALSE(rep.ok());
        CHECK(rep.to_string().find("positive definite") != std::string::npos);
    }
    SECTION("vanishing intensity") {
        spec.coef.lambda = [](int, const DefaultState&) {
            return Eigen::VectorXd::Zero(2).eval();
        };
        CHECK_FALSE(rsdpe::validate_model(spec).ok());
    }
    SECTION("negative rate") {
        spec.coef.r = [](int) { return -0.01; };
        CHECK_FALSE(rsdpe::validate_model(spec).ok());
    }
}

TEST_CASE("truncation adds the absorbing regime with its fixed coefficients") {
    ModelSpec spec = geometric_spec(1.5);
    const int n = 5;
    FiniteMarket m = rsdpe::truncate_model(spec, n);

    CHECK(m.has_absorbing);
    CHECK(m.truncation_level == n);
    REQUIRE(m.labels.size() == static_cast<size_t>(n) + 1);
    CHECK(m.labels[0] == 0);
    CHECK(m.labels[5] == 5);

    // Absorbing row: no exit, calm coefficients, intensities theta/2, and a
    // diffusion normalization that pins the transformed value at one.
    CHECK(m.q.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.r[0] == 0.0);
    CHECK(m.mu[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.intensities(0, DefaultState(0, 1))(0) == spec.theta / 2.0);
    Eigen::MatrixXd gram = m.sigma[0] * m.sigma[0].transpose();
    CHECK(std::abs(gram(0, 0) - 4.0 / (2.0 + spec.theta)) < 1e-15);

    // Escape rates match the generator tail; retained block is verbatim.
    for (int i = 1; i <= n; ++i) {
        CHECK(std::abs(m.q(i, 0) - spec.generator.tail(i, n)) < 1e-13);
        for (int j = 1; j <= n; ++j) CHECK(m.q(i, j) == spec.generator.rate(i, j));
    }

    // The truncated market itself validates.
    CHECK(rsdpe::validate_market(m).ok());

    CHECK_THROWS_AS(rsdpe::truncate_model(spec, spec.n_max + 1), Error);
}

TEST_CASE("consecutive truncations agree on the shared block") {
    ModelSpec spec = geometric_spec();
    FiniteMarket a = rsdpe::truncate_model(spec, 4);
    FiniteMarket b = rsdpe::truncate_model(spec, 5);
    for (int i = 1; i <= 4; ++i) {
        CHECK(a.r[static_cast<size_t>(i)] == b.r[static_cast<size_t>(i)]);
        for (int j = 1; j <= 4; ++j) CHECK(a.q(i, j) == b.q(i, j));
    }
}

TEST_CASE("simulated truncated chain stays inside the retained set") {
    ModelSpec spec = geometric_spec();
    FiniteMarket m = rsdpe::truncate_model(spec, 6);
    int absorbed = 0;
    for (int p = 0; p < 10000; ++p) {
        rsdpe::CounterRng rng(2024, static_cast<std::uint64_t>(p));
        rsdpe::RegimePath path = rsdpe::simulate_chain(m, m.index_of_label(1), 0.0, 2.0, rng);
        bool hit_zero = false;
        for (size_t k = 0; k < path.states.size(); ++k) {
            const int s = path.states[k];
            CHECK(s >= 0);
            CHECK(s <= 6);
            if (hit_zero) FAIL("chain left the absorbing state");
            if (s == 0) hit_zero = true;
        }
        if (hit_zero) ++absorbed;
    }
    CHECK(absorbed > 0);  // the geometric tail at level 6 is reachable by t = 2
}

TEST_CASE("countable validation probes the leading regimes") {
    ModelSpec spec = geometric_spec();
    CHECK(rsdpe::validate_model(spec).ok());
    spec.coef.lambda = [](int label, const DefaultState&) {
        Eigen::VectorXd lam(1);
        lam << (label == 3 ? 0.0 : 0.5);  // dies only at a probed regime
        return lam;
    };
    CHECK_FALSE(rsdpe::validate_model(spec).ok());
}
