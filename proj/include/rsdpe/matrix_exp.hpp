#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "rsdpe/common.hpp"

namespace rsdpe {

// exp(A s) by scaling-and-squaring with a 13th-order Pade kernel. The input
// is scaled until its 1-norm is at most 0.5, which keeps the kernel well
// inside its accuracy region for generator-sized problems.
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a, double s = 1.0) {
    require(a.rows() == a.cols() && a.rows() >= 1, "invalid_matrix",
            "matrix exponential needs a nonempty square matrix");
    Eigen::MatrixXd b = a * s;
    require(b.allFinite(), "matrix_exp_overflow", "non-finite entries in the scaled matrix");

    const double norm1 = b.cwiseAbs().colwise().sum().maxCoeff();
    require(norm1 <= 1e6, "matrix_exp_overflow",
            "matrix 1-norm " + full_precision(norm1) + " too large for a stable exponential");
    if (norm1 == 0.0) return Eigen::MatrixXd::Identity(a.rows(), a.cols());

    int squarings = 0;
    if (norm1 > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
        b /= std::ldexp(1.0, squarings);
    }

    static const double c[14] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};

    const auto n = b.rows();
    const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd b2 = b * b;
    const Eigen::MatrixXd b4 = b2 * b2;
    const Eigen::MatrixXd b6 = b2 * b4;

    Eigen::MatrixXd u = b * (b6 * (c[13] * b6 + c[11] * b4 + c[9] * b2) + c[7] * b6 + c[5] * b4 +
                             c[3] * b2 + c[1] * ident);
    Eigen::MatrixXd v = b6 * (c[12] * b6 + c[10] * b4 + c[8] * b2) + c[6] * b6 + c[4] * b4 +
                        c[2] * b2 + c[0] * ident;

    Eigen::MatrixXd num = v + u;
    Eigen::MatrixXd den = v - u;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(den);
    Eigen::MatrixXd e = lu.solve(num);

    for (int k = 0; k < squarings; ++k) e = e * e;
    require(e.allFinite(), "matrix_exp_overflow", "overflow while squaring the exponential");
    return e;
}

// exp(A s) v without exposing the full matrix to the caller.
inline Eigen::VectorXd matrix_exponential_apply(const Eigen::MatrixXd& a, double s,
                                                const Eigen::VectorXd& v) {
    require(a.rows() == v.size(), "invalid_matrix",
            "matrix exponential apply: dimension mismatch");
    return matrix_exponential(a, s) * v;
}

}  // namespace rsdpe
