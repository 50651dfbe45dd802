#pragma once

#include <algorithm>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "marginfit/errors.hpp"
#include "marginfit/mllp.hpp"
#include "marginfit/table.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

// Orthonormal basis of the orthogonal complement of span(K).
template <typename Scalar>
Matrix<Scalar> null_space_X(const Matrix<Scalar>& K) {
    const Index m = K.rows();
    const Index r = K.cols();
    if (r == 0) return Matrix<Scalar>::Identity(m, m);
    if (r > m) throw RankDeficientError("K has more columns than rows");
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(K);
    if (qr.rank() < r) {
        throw RankDeficientError("K has rank " + std::to_string(qr.rank()) + " but " + std::to_string(r) +
                                 " columns; constraint matrix must have full column rank");
    }
    const Matrix<Scalar> Q = qr.householderQ() * Matrix<Scalar>::Identity(m, m);
    return Q.rightCols(m - r);
}

// Orthonormal basis of span(X), X of full column rank.
template <typename Scalar>
Matrix<Scalar> orthonormal_columns(const Matrix<Scalar>& X) {
    const Index m = X.rows();
    const Index q = X.cols();
    if (q == 0) return Matrix<Scalar>(m, 0);
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(X);
    if (qr.rank() < q) {
        throw RankDeficientError("X has rank " + std::to_string(qr.rank()) + " but " + std::to_string(q) +
                                 " columns; design matrix must have full column rank");
    }
    const Matrix<Scalar> Q = qr.householderQ() * Matrix<Scalar>::Identity(m, m);
    return Q.leftCols(q);
}

// K'eta = 0, equivalently eta = X beta with K'X = 0.
template <typename Scalar>
struct LinearConstraint {
    Matrix<Scalar> K;       // (t-1) x r
    Matrix<Scalar> X;       // (t-1) x (t-1-r); the design beta refers to
    Matrix<Scalar> X_orth;  // orthonormal basis of span(X)
};

// A log(M pi) = 0; A need not be a contrast matrix.
template <typename Scalar>
struct GeneralConstraint {
    Matrix<Scalar> A;
    Matrix<Scalar> M;
};

template <typename Scalar>
using ModelConstraint = std::variant<LinearConstraint<Scalar>, GeneralConstraint<Scalar>>;

template <typename Scalar>
LinearConstraint<Scalar> unconstrained(Index dim) {
    return {Matrix<Scalar>(dim, 0), Matrix<Scalar>::Identity(dim, dim), Matrix<Scalar>::Identity(dim, dim)};
}

template <typename Scalar>
LinearConstraint<Scalar> linear_from_K(Matrix<Scalar> K) {
    Matrix<Scalar> X = null_space_X(K);
    Matrix<Scalar> X_orth = X;
    return {std::move(K), std::move(X), std::move(X_orth)};
}

template <typename Scalar>
LinearConstraint<Scalar> linear_from_X(Matrix<Scalar> X) {
    Matrix<Scalar> X_orth = orthonormal_columns(X);
    Matrix<Scalar> K = null_space_X(X_orth);
    return {std::move(K), std::move(X), std::move(X_orth)};
}

// Sets the listed eta coordinates to zero; beta is the vector of the remaining coordinates.
template <typename Scalar>
LinearConstraint<Scalar> zero_constraint(Index dim, const std::vector<Index>& coords) {
    std::vector<bool> zero(static_cast<std::size_t>(dim), false);
    for (Index c : coords) {
        if (c < 0 || c >= dim) throw InputError("constrained coordinate out of range");
        zero[static_cast<std::size_t>(c)] = true;
    }
    const auto r = static_cast<Index>(std::count(zero.begin(), zero.end(), true));
    LinearConstraint<Scalar> out{Matrix<Scalar>::Zero(dim, r), Matrix<Scalar>::Zero(dim, dim - r), {}};
    Index kz = 0, kx = 0;
    for (Index i = 0; i < dim; ++i) {
        if (zero[static_cast<std::size_t>(i)])
            out.K(i, kz++) = Scalar(1);
        else
            out.X(i, kx++) = Scalar(1);
    }
    out.X_orth = out.X;
    return out;
}

template <typename Scalar>
GeneralConstraint<Scalar> general_constraint(Matrix<Scalar> A, Matrix<Scalar> M) {
    if (A.cols() != M.rows()) throw InputError("A and M have inconsistent shapes");
    if ((M.array() != Scalar(0) && M.array() != Scalar(1)).any()) throw InputError("M must be a 0/1 matrix");
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(A.transpose());
    if (qr.rank() < A.rows()) throw RankDeficientError("A must have full row rank");
    return {std::move(A), std::move(M)};
}

template <typename Scalar>
Index constraint_count(const ModelConstraint<Scalar>& c) {
    return std::visit([](const auto& v) -> Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, LinearConstraint<Scalar>>)
            return v.K.cols();
        else
            return v.A.rows();
    }, c);
}

// h(theta) only.
template <typename Scalar>
Vector<Scalar> constraint_value(const Vector<Scalar>& pi, const ModelConstraint<Scalar>& c,
                                const MllpMatrices<Scalar>& mats) {
    if (const auto* lin = std::get_if<LinearConstraint<Scalar>>(&c)) {
        if (lin->K.cols() == 0) return Vector<Scalar>(0);
        return lin->K.transpose() * eta_of_pi(mats, pi);
    }
    const auto& gen = std::get<GeneralConstraint<Scalar>>(c);
    return gen.A * checked_margins(gen.M, pi).array().log().matrix();
}

template <typename Scalar>
struct ConstraintEval {
    Vector<Scalar> h;  // length r
    Matrix<Scalar> H;  // (t-1) x r, H' = dh/dtheta'
};

// h and H for K'eta = 0 with KtC = K'C computed once per fit.
template <typename Scalar>
ConstraintEval<Scalar> linear_h_and_H(const Vector<Scalar>& pi, const Matrix<Scalar>& KtC,
                                      const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis) {
    if (KtC.rows() == 0) return {Vector<Scalar>(0), Matrix<Scalar>(basis.dim(), 0)};
    const Vector<Scalar> mp = checked_margins(mats.M, pi);
    ConstraintEval<Scalar> out;
    out.h = KtC * mp.array().log().matrix();
    out.H = ((KtC * mp.cwiseInverse().asDiagonal()) * (mats.M * (pi.asDiagonal() * basis.G))).transpose();
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(out.H);
    if (qr.rank() < out.H.cols()) throw SingularError("constraint Jacobian H is rank deficient (non-smooth point)");
    return out;
}

// h and H at pi. Linear: H' = K'C diag(M pi)^-1 M diag(pi) G.
// General: H' = A diag(M pi)^-1 M Omega G (no homogeneity, so Omega stays).
template <typename Scalar>
ConstraintEval<Scalar> constraint_h_and_H(const Vector<Scalar>& pi, const ModelConstraint<Scalar>& c,
                                          const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis) {
    ConstraintEval<Scalar> out;
    if (const auto* lin = std::get_if<LinearConstraint<Scalar>>(&c)) {
        if (lin->K.cols() == 0) return {Vector<Scalar>(0), Matrix<Scalar>(basis.dim(), 0)};
        out.h = lin->K.transpose() * eta_of_pi(mats, pi);
        out.H = eta_jacobian(mats, basis, pi).transpose() * lin->K;
    } else {
        const auto& gen = std::get<GeneralConstraint<Scalar>>(c);
        const Vector<Scalar> mp = checked_margins(gen.M, pi);
        out.h = gen.A * mp.array().log().matrix();
        Matrix<Scalar> omega = -pi * pi.transpose();
        omega.diagonal() += pi;
        out.H = (gen.A * (mp.cwiseInverse().asDiagonal() * (gen.M * (omega * basis.G)))).transpose();
    }
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(out.H);
    if (qr.rank() < out.H.cols()) {
        throw SingularError("constraint Jacobian H is rank deficient (non-smooth point)");
    }
    return out;
}

}  // namespace marginfit
