#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"

namespace rsdpe {

// Generator of the regime chain. Finite mode stores the full rate matrix.
// Countable mode supplies rates through callbacks over 1-based regime labels
// plus a tail function tail(i, n) = sum_{j > n} q(i, j), which makes exact
// truncation possible without summing an infinite row.
class RegimeGenerator {
public:
    using RateFn = std::function<double(int, int)>;
    using TailFn = std::function<double(int, int)>;

    RegimeGenerator() = default;

    static RegimeGenerator finite(Eigen::MatrixXd q) {
        require(q.rows() == q.cols() && q.rows() >= 1, "invalid_generator",
                "finite generator must be a nonempty square matrix");
        RegimeGenerator g;
        g.finite_ = true;
        g.rates_ = std::move(q);
        return g;
    }

    static RegimeGenerator countable(RateFn rate, TailFn tail) {
        require(static_cast<bool>(rate) && static_cast<bool>(tail), "invalid_generator",
                "countable generator needs both rate and tail callbacks");
        RegimeGenerator g;
        g.finite_ = false;
        g.rate_fn_ = std::move(rate);
        g.tail_fn_ = std::move(tail);
        return g;
    }

    // Built-in countable family: row i has off-diagonal rates 1/2, 1/4, ...
    // reading left to right with the diagonal slot (-1) skipped, i.e.
    // q(i,j) = 2^-j for j < i and 2^-(j-1) for j > i. Off-diagonal rows sum
    // to 1 exactly and tail(i, n) = 2^-(n-1) for i <= n.
    static RegimeGenerator geometric() {
        auto rate = [](int i, int j) -> double {
            if (i == j) return -1.0;
            return j < i ? std::ldexp(1.0, -j) : std::ldexp(1.0, -(j - 1));
        };
        auto tail = [](int i, int n) -> double {
            require(i <= n, "invalid_generator", "geometric tail queried with i > n");
            return std::ldexp(1.0, -(n - 1));
        };
        return countable(rate, tail);
    }

    bool is_finite() const { return finite_; }

    int size() const {
        require(finite_, "invalid_generator", "size() is defined for finite generators only");
        return static_cast<int>(rates_.rows());
    }

    // Rate between 1-based labels.
    double rate(int i, int j) const {
        if (finite_) {
            require(i >= 1 && i <= size() && j >= 1 && j <= size(), "index_out_of_range",
                    "generator rate query outside finite size");
            return rates_(i - 1, j - 1);
        }
        return rate_fn_(i, j);
    }

    // Off-diagonal mass beyond label n for row i <= n.
    double tail(int i, int n) const {
        if (finite_) {
            if (n >= size()) return 0.0;
            double s = 0.0;
            for (int j = n + 1; j <= size(); ++j) s += rates_(i - 1, j - 1);
            return s;
        }
        return tail_fn_(i, n);
    }

    const Eigen::MatrixXd& matrix() const {
        require(finite_, "invalid_generator", "matrix() is defined for finite generators only");
        return rates_;
    }

private:
    bool finite_ = true;
    Eigen::MatrixXd rates_;
    RateFn rate_fn_;
    TailFn tail_fn_;
};

// Generator of the truncated chain on {0, 1, ..., n}: index 0 is an absorbing
// cemetery state collecting all mass that would leave {1, ..., n}.
struct TruncatedGenerator {
    int level = 0;
    Eigen::MatrixXd a;  // (n+1) x (n+1), row 0 zero, rows sum to 0

    // The n x n block over the retained regimes (drops the cemetery).
    Eigen::MatrixXd retained_block() const { return a.block(1, 1, level, level); }
};

inline TruncatedGenerator truncate_generator(const RegimeGenerator& gen, int n,
                                             double consistency_tol = 1e-10) {
    require(n >= 1, "invalid_truncation", "truncation level must be >= 1");
    if (gen.is_finite())
        require(n <= gen.size(), "invalid_truncation",
                "truncation level " + std::to_string(n) + " exceeds finite generator size " +
                    std::to_string(gen.size()));

    TruncatedGenerator out;
    out.level = n;
    out.a = Eigen::MatrixXd::Zero(n + 1, n + 1);
    for (int i = 1; i <= n; ++i) {
        double row_sum = 0.0;
        for (int j = 1; j <= n; ++j) {
            double q = gen.rate(i, j);
            if (j != i)
                require(q >= 0.0, "invalid_generator",
                        "negative off-diagonal rate q(" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
            out.a(i, j) = q;
            row_sum += q;
        }
        double escape = -row_sum;
        double tail = gen.tail(i, n);
        require(std::abs(tail - escape) <= consistency_tol,
                "inconsistent_tail",
                "row " + std::to_string(i) + ": tail(i," + std::to_string(n) + ") = " +
                    full_precision(tail) + " but block row sum implies " +
                    full_precision(escape));
        // The tail is the authoritative escape mass (exact for the built-in
        // families and for finite generators); the negated block sum above
        // only cross-checks it.
        out.a(i, 0) = tail < 0.0 && tail > -consistency_tol ? 0.0 : tail;
        require(out.a(i, 0) >= 0.0, "invalid_generator",
                "row " + std::to_string(i) + " of the truncated generator has negative escape rate");
    }
    return out;
}

}  // namespace rsdpe
