#pragma once

#include <cmath>

#include "marginfit/errors.hpp"
#include "marginfit/mllp.hpp"
#include "marginfit/table.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

template <typename Scalar>
void check_counts(const Vector<Scalar>& y, Index cells) {
    if (y.size() != cells) throw InputError("count vector has wrong length");
    if (!y.allFinite() || (y.array() < Scalar(0)).any()) throw InputError("counts must be finite and nonnegative");
}

// l(theta) = y'G theta - n log(1' exp(G theta)).
template <typename Scalar>
Scalar loglik(const Vector<Scalar>& theta, const Vector<Scalar>& y, const CanonicalBasis<Scalar>& basis) {
    if (!theta.allFinite()) throw InputError("theta has non-finite entries");
    check_counts(y, basis.cells());
    const Vector<Scalar> g = basis.G * theta;
    return y.dot(g) - y.sum() * log_sum_exp(g);
}

template <typename Scalar>
struct LikelihoodParts {
    Scalar loglik{};
    Scalar n{};
    Vector<Scalar> pi;
    Vector<Scalar> score;  // G'(y - n pi)
    Matrix<Scalar> info;   // n G' Omega G

    Matrix<Scalar> omega() const {
        Matrix<Scalar> om = -pi * pi.transpose();
        om.diagonal() += pi;
        return om;
    }
};

template <typename Scalar>
LikelihoodParts<Scalar> score_and_info(const Vector<Scalar>& theta, const Vector<Scalar>& y,
                                       const CanonicalBasis<Scalar>& basis) {
    LikelihoodParts<Scalar> p;
    p.loglik = loglik(theta, y, basis);
    p.n = y.sum();
    p.pi = theta_to_pi(theta, basis);
    p.score = basis.G.transpose() * (y - p.n * p.pi);
    const Vector<Scalar> gp = basis.G.transpose() * p.pi;
    p.info = p.n * (basis.G.transpose() * p.pi.asDiagonal() * basis.G - gp * gp.transpose());
    return p;
}

// F^-1 = n^-1 [diag(pi_)^-1 + 1 1' / (1 - 1'pi_)], pi_ = pi without its first cell.
// Only valid for the default basis.
template <typename Scalar>
Matrix<Scalar> explicit_F_inverse(const Vector<Scalar>& pi, Scalar n, const CanonicalBasis<Scalar>& basis) {
    if (!basis.is_default) throw InputError("explicit inverse of F requires the default canonical basis");
    if (pi.size() != basis.cells()) throw InputError("probability vector has wrong length");
    if ((pi.array() <= Scalar(0)).any()) throw ConditioningError("explicit inverse of F needs interior pi");
    const Index k = pi.size() - 1;
    const Vector<Scalar> rest = pi.tail(k);
    Matrix<Scalar> inv = Matrix<Scalar>::Constant(k, k, Scalar(1) / (Scalar(1) - rest.sum()));
    inv.diagonal() += rest.cwiseInverse();
    return inv / n;
}

// d/dx' diag(A y) b = diag(b) A (dy/du') (du/dx'), for constant A and b.
template <typename Scalar>
Matrix<Scalar> diag_chain_jacobian(const Matrix<Scalar>& A, const Vector<Scalar>& b, const Matrix<Scalar>& dy_du,
                                   const Matrix<Scalar>& du_dx) {
    return b.asDiagonal() * (A * (dy_du * du_dx));
}

// Observed information with respect to beta for the map
// beta -> theta(eta0 + X (beta - beta0)), evaluated at theta:
//   n X'R'G' Omega G R X + X'R'G' [diag(M'D^-1 C'b) - diag(pi) M' diag(C'b) D^-2 M] Omega G R X
// with D = diag(M pi) and b = R'G'(y - n pi).
template <typename Scalar>
Matrix<Scalar> observed_info(const Vector<Scalar>& theta, const Matrix<Scalar>& X, const MllpMatrices<Scalar>& mats,
                             const CanonicalBasis<Scalar>& basis, const Vector<Scalar>& y) {
    check_counts(y, basis.cells());
    if (X.rows() != mats.dim()) throw InputError("design matrix has wrong number of rows");
    const Scalar n = y.sum();
    const Vector<Scalar> pi = theta_to_pi(theta, basis);
    const Vector<Scalar> mp = checked_margins(mats.M, pi);
    const Matrix<Scalar> R = jacobian_R(mats, basis, pi);
    Matrix<Scalar> omega = -pi * pi.transpose();
    omega.diagonal() += pi;

    const Matrix<Scalar> GRX = basis.G * (R * X);
    const Matrix<Scalar> omega_GRX = omega * GRX;
    const Vector<Scalar> b = R.transpose() * (basis.G.transpose() * (y - n * pi));
    const Vector<Scalar> cb = mats.C.transpose() * b;
    const Vector<Scalar> inv_mp = mp.cwiseInverse();

    // bracket * Omega G R X without forming the t x t bracket
    const Vector<Scalar> first_diag = mats.M.transpose() * inv_mp.cwiseProduct(cb);
    Matrix<Scalar> corr = first_diag.asDiagonal() * omega_GRX;
    const Vector<Scalar> second_scale = cb.cwiseProduct(inv_mp).cwiseProduct(inv_mp);
    corr -= pi.asDiagonal() * (mats.M.transpose() * (second_scale.asDiagonal() * (mats.M * omega_GRX)));

    return n * GRX.transpose() * omega_GRX + GRX.transpose() * corr;
}

}  // namespace marginfit
