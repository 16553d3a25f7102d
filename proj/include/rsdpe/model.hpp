#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/generator.hpp"

namespace rsdpe {

// Per-regime market coefficients, addressed by 1-based regime label.
// lambda(i, z) returns all N intensities; entries for stocks already in
// default are never read.
struct CoefficientProvider {
    std::function<double(int)> r;
    std::function<Eigen::VectorXd(int)> mu;
    std::function<Eigen::MatrixXd(int)> sigma;
    std::function<Eigen::VectorXd(int, const DefaultState&)> lambda;
};

// Full problem description before materialization.
struct ModelSpec {
    int n_stocks = 0;     // N
    double theta = 0.0;   // risk sensitivity, > 0
    double horizon = 0.0; // T
    int brownian_dim = 0; // d >= N
    RegimeGenerator generator;
    CoefficientProvider coef;
    int n_max = 64;       // countable mode: largest level that may be materialized
};

// Fully tabulated finite-regime market, the form all solvers consume.
// `labels` carries the user-facing regime labels in storage order; a leading
// label 0 marks the artificial absorbing regime added by truncation.
struct FiniteMarket {
    int n_stocks = 0;
    double theta = 0.0;
    double horizon = 0.0;
    int brownian_dim = 0;
    std::vector<int> labels;
    bool has_absorbing = false;
    Eigen::MatrixXd q;
    std::vector<double> r;
    std::vector<Eigen::VectorXd> mu;                  // each N
    std::vector<Eigen::MatrixXd> sigma;               // each N x d
    std::vector<std::vector<Eigen::VectorXd>> lambda; // [regime][state mask], each N
    int truncation_level = 0;

    int n_regimes() const { return static_cast<int>(labels.size()); }
    int n_states() const { return 1 << n_stocks; }

    int index_of_label(int label) const {
        for (int i = 0; i < n_regimes(); ++i)
            if (labels[i] == label) return i;
        fail("unknown_regime", "regime label " + std::to_string(label) + " not present");
    }

    const Eigen::VectorXd& intensities(int regime_idx, const DefaultState& z) const {
        return lambda[static_cast<size_t>(regime_idx)][z.mask];
    }
};

namespace detail {

inline std::vector<std::vector<Eigen::VectorXd>> tabulate_lambda(const ModelSpec& spec,
                                                                 const std::vector<int>& labels) {
    std::vector<std::vector<Eigen::VectorXd>> out;
    out.reserve(labels.size());
    const int n_states = 1 << spec.n_stocks;
    for (int label : labels) {
        std::vector<Eigen::VectorXd> per_state;
        per_state.reserve(static_cast<size_t>(n_states));
        for (int m = 0; m < n_states; ++m) {
            DefaultState z(static_cast<std::uint32_t>(m), spec.n_stocks);
            Eigen::VectorXd lam = spec.coef.lambda(label, z);
            require(lam.size() == spec.n_stocks, "invalid_coefficients",
                    "lambda(regime " + std::to_string(label) + ", state " + z.bitstring() +
                        ") has wrong length");
            per_state.push_back(std::move(lam));
        }
        out.push_back(std::move(per_state));
    }
    return out;
}

inline void check_spec_shape(const ModelSpec& spec) {
    require(spec.n_stocks >= 1 && spec.n_stocks <= 20, "invalid_model",
            "stock count must be in [1, 20]");
    require(spec.theta > 0.0, "invalid_model", "theta must be positive");
    require(spec.horizon > 0.0, "invalid_model", "horizon must be positive");
    require(spec.brownian_dim >= spec.n_stocks, "invalid_model",
            "Brownian dimension must be at least the stock count");
}

}  // namespace detail

// Tabulates a finite-generator spec as-is, labels 1..n.
inline FiniteMarket materialize(const ModelSpec& spec) {
    detail::check_spec_shape(spec);
    require(spec.generator.is_finite(), "invalid_model",
            "materialize() needs a finite generator; use truncate_model() for countable ones");
    const int n = spec.generator.size();
    FiniteMarket m;
    m.n_stocks = spec.n_stocks;
    m.theta = spec.theta;
    m.horizon = spec.horizon;
    m.brownian_dim = spec.brownian_dim;
    m.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) m.labels[static_cast<size_t>(i)] = i + 1;
    m.q = spec.generator.matrix();
    for (int label = 1; label <= n; ++label) {
        m.r.push_back(spec.coef.r(label));
        Eigen::VectorXd mu = spec.coef.mu(label);
        require(mu.size() == spec.n_stocks, "invalid_coefficients",
                "mu(regime " + std::to_string(label) + ") has wrong length");
        m.mu.push_back(std::move(mu));
        Eigen::MatrixXd sig = spec.coef.sigma(label);
        require(sig.rows() == spec.n_stocks && sig.cols() == spec.brownian_dim,
                "invalid_coefficients",
                "sigma(regime " + std::to_string(label) + ") has wrong shape");
        m.sigma.push_back(std::move(sig));
    }
    m.lambda = detail::tabulate_lambda(spec, m.labels);
    return m;
}

// Truncates to regimes {1, ..., n} plus an absorbing regime with label 0.
// The absorbing coefficients are chosen so its running cost is nonnegative
// with minimum 0 at zero allocation, which pins its transformed value at 1
// and makes the truncated values decrease monotonically in n.
inline FiniteMarket truncate_model(const ModelSpec& spec, int n, double consistency_tol = 1e-10) {
    detail::check_spec_shape(spec);
    require(n >= 1, "invalid_truncation", "truncation level must be >= 1");
    if (!spec.generator.is_finite())
        require(n <= spec.n_max, "invalid_truncation",
                "truncation level " + std::to_string(n) + " exceeds configured n_max " +
                    std::to_string(spec.n_max));
    TruncatedGenerator tg = truncate_generator(spec.generator, n, consistency_tol);

    FiniteMarket m;
    m.n_stocks = spec.n_stocks;
    m.theta = spec.theta;
    m.horizon = spec.horizon;
    m.brownian_dim = spec.brownian_dim;
    m.has_absorbing = true;
    m.truncation_level = n;
    m.labels.resize(static_cast<size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) m.labels[static_cast<size_t>(i)] = i;
    m.q = tg.a;

    const int N = spec.n_stocks;
    const int d = spec.brownian_dim;
    // Absorbing regime: zero rates and premia, intensities theta/2, and a
    // diffusion with sigma sigma^T = (4 / (2 + theta)) I.
    m.r.push_back(0.0);
    m.mu.push_back(Eigen::VectorXd::Zero(N));
    Eigen::MatrixXd sig0 = Eigen::MatrixXd::Zero(N, d);
    const double s0 = std::sqrt(4.0 / (2.0 + spec.theta));
    for (int j = 0; j < N; ++j) sig0(j, j) = s0;
    m.sigma.push_back(std::move(sig0));

    for (int label = 1; label <= n; ++label) {
        m.r.push_back(spec.coef.r(label));
        Eigen::VectorXd mu = spec.coef.mu(label);
        require(mu.size() == N, "invalid_coefficients",
                "mu(regime " + std::to_string(label) + ") has wrong length");
        m.mu.push_back(std::move(mu));
        Eigen::MatrixXd sig = spec.coef.sigma(label);
        require(sig.rows() == N && sig.cols() == d, "invalid_coefficients",
                "sigma(regime " + std::to_string(label) + ") has wrong shape");
        m.sigma.push_back(std::move(sig));
    }

    m.lambda.reserve(static_cast<size_t>(n) + 1);
    {
        std::vector<Eigen::VectorXd> absorbing_states;
        const Eigen::VectorXd lam0 = Eigen::VectorXd::Constant(N, spec.theta / 2.0);
        for (int s = 0; s < (1 << N); ++s) absorbing_states.push_back(lam0);
        m.lambda.push_back(std::move(absorbing_states));
    }
    {
        std::vector<int> real_labels;
        for (int label = 1; label <= n; ++label) real_labels.push_back(label);
        auto rest = detail::tabulate_lambda(spec, real_labels);
        for (auto& per_state : rest) m.lambda.push_back(std::move(per_state));
    }
    return m;
}

struct ValidationIssue {
    std::string location;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }

    std::string to_string() const {
        std::string out;
        for (const auto& iss : issues) out += iss.location + ": " + iss.message + "\n";
        return out;
    }
};

struct ValidationOptions {
    double row_sum_tol = 1e-12;
    double pd_floor = 1e-10;
    bool strict_c1 = false;   // bounded-coefficient check with user-supplied bands
    double c1_delta = 0.0;
    double c1_upper = 0.0;
    int countable_probe = 8;  // regimes sampled when the generator is countable
};

namespace detail {

inline void validate_regime_block(const FiniteMarket& m, int i, const ValidationOptions& opt,
                                  ValidationReport& rep) {
    // The artificial absorbing regime has fixed synthetic coefficients; the
    // user-facing band checks do not apply to it.
    const bool synthetic = m.has_absorbing && i == 0;
    const std::string tag = "regime " + std::to_string(m.labels[static_cast<size_t>(i)]);
    const auto si = static_cast<size_t>(i);
    if (!(m.r[si] >= 0.0))
        rep.issues.push_back({tag + " r", "short rate must be nonnegative, got " +
                              full_precision(m.r[si])});
    if (!m.mu[si].allFinite()) rep.issues.push_back({tag + " mu", "non-finite entry"});
    if (!m.sigma[si].allFinite()) rep.issues.push_back({tag + " sigma", "non-finite entry"});

    Eigen::MatrixXd gram = m.sigma[si] * m.sigma[si].transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < opt.pd_floor)
        rep.issues.push_back({tag + " sigma",
                              "sigma sigma^T must be positive definite (eigenvalue floor " +
                                  full_precision(opt.pd_floor) + ")"});

    for (int mask = 0; mask < m.n_states(); ++mask) {
        DefaultState z(static_cast<std::uint32_t>(mask), m.n_stocks);
        const Eigen::VectorXd& lam = m.lambda[si][static_cast<size_t>(mask)];
        for (int j : z.survivors()) {
            if (!(lam(j) > 0.0))
                rep.issues.push_back({tag + " lambda[" + z.bitstring() + "][stock " +
                                          std::to_string(j + 1) + "]",
                                      "intensity of an alive stock must be positive"});
            else if (opt.strict_c1 && !synthetic && (lam(j) < opt.c1_delta || lam(j) > opt.c1_upper))
                rep.issues.push_back({tag + " lambda[" + z.bitstring() + "][stock " +
                                          std::to_string(j + 1) + "]",
                                      "intensity outside the [delta, K] band"});
        }
    }
    if (opt.strict_c1 && !synthetic && m.r[si] + m.mu[si].norm() > opt.c1_upper)
        rep.issues.push_back({tag, "r + |mu| exceeds the bound K"});
}

}  // namespace detail

inline ValidationReport validate_market(const FiniteMarket& m, const ValidationOptions& opt = {}) {
    ValidationReport rep;
    if (m.n_stocks < 1 || m.n_stocks > 20)
        rep.issues.push_back({"model", "stock count must be in [1, 20]"});
    if (!(m.theta > 0.0)) rep.issues.push_back({"model", "theta must be positive"});
    if (!(m.horizon > 0.0)) rep.issues.push_back({"model", "horizon must be positive"});
    if (m.brownian_dim < m.n_stocks)
        rep.issues.push_back({"model", "Brownian dimension must be at least the stock count"});
    if (rep.issues.size() > 0) return rep;

    const int n = m.n_regimes();
    for (int i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j != i && m.q(i, j) < 0.0)
                rep.issues.push_back({"generator row " + std::to_string(m.labels[static_cast<size_t>(i)]),
                                      "negative off-diagonal rate"});
            row_sum += m.q(i, j);
        }
        if (std::abs(row_sum) > opt.row_sum_tol)
            rep.issues.push_back({"generator row " + std::to_string(m.labels[static_cast<size_t>(i)]),
                                  "row sum " + full_precision(row_sum) + " exceeds tolerance"});
    }
    for (int i = 0; i < n; ++i) detail::validate_regime_block(m, i, opt, rep);
    return rep;
}

// Validates a spec without solving. Finite generators are checked in full;
// countable ones are probed on regimes 1..countable_probe.
inline ValidationReport validate_model(const ModelSpec& spec, const ValidationOptions& opt = {}) {
    ValidationReport rep;
    if (spec.n_stocks < 1 || spec.n_stocks > 20)
        rep.issues.push_back({"model", "stock count must be in [1, 20]"});
    if (!(spec.theta > 0.0)) rep.issues.push_back({"model", "theta must be positive"});
    if (!(spec.horizon > 0.0)) rep.issues.push_back({"model", "horizon must be positive"});
    if (spec.brownian_dim < spec.n_stocks)
        rep.issues.push_back({"model", "Brownian dimension must be at least the stock count"});
    if (!rep.issues.empty()) return rep;

    try {
        if (spec.generator.is_finite()) {
            FiniteMarket m = materialize(spec);
            auto inner = validate_market(m, opt);
            rep.issues.insert(rep.issues.end(), inner.issues.begin(), inner.issues.end());
        } else {
            const int probe = std::min(opt.countable_probe, spec.n_max);
            for (int i = 1; i <= probe; ++i) {
                double q_ii = spec.generator.rate(i, i);
                if (q_ii > 0.0)
                    rep.issues.push_back({"generator row " + std::to_string(i),
                                          "diagonal rate must be nonpositive"});
                double partial = q_ii;
                for (int j = 1; j <= probe; ++j) {
                    if (j == i) continue;
                    double q = spec.generator.rate(i, j);
                    if (q < 0.0)
                        rep.issues.push_back({"generator row " + std::to_string(i),
                                              "negative off-diagonal rate to " + std::to_string(j)});
                    partial += q;
                }
                double resid = partial + spec.generator.tail(i, probe);
                if (std::abs(resid) > opt.row_sum_tol)
                    rep.issues.push_back({"generator row " + std::to_string(i),
                                          "rates plus tail miss conservativity by " +
                                              full_precision(resid)});
            }
            FiniteMarket m = truncate_model(spec, probe);
            auto inner = validate_market(m, opt);
            rep.issues.insert(rep.issues.end(), inner.issues.begin(), inner.issues.end());
        }
    } catch (const Error& e) {
        rep.issues.push_back({e.type(), e.what()});
    }
    return rep;
}

}  // namespace rsdpe
