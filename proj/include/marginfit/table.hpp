#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "marginfit/errors.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

// Shape of a d-way contingency table. Cells are stored in lexicographic
// order with the last variable varying fastest.
class TableSchema {
public:
    TableSchema() = default;

    explicit TableSchema(std::vector<int> dims) : dims_(std::move(dims)) {
        if (dims_.empty()) throw InputError("table schema needs at least one variable");
        cells_ = 1;
        for (std::size_t j = 0; j < dims_.size(); ++j) {
            if (dims_[j] < 2) {
                throw InputError("variable " + std::to_string(j + 1) + " has " +
                                 std::to_string(dims_[j]) + " categories; at least 2 required");
            }
            cells_ *= dims_[j];
        }
        strides_.assign(dims_.size(), 1);
        for (std::size_t j = dims_.size() - 1; j > 0; --j) strides_[j - 1] = strides_[j] * dims_[j];
    }

    int num_vars() const { return static_cast<int>(dims_.size()); }
    Index cells() const { return cells_; }
    const std::vector<int>& dims() const { return dims_; }
    int dim(int var) const { return dims_[static_cast<std::size_t>(var)]; }

    // Zero-based category tuple -> cell index.
    Index index_of(std::span<const int> levels) const {
        if (levels.size() != dims_.size()) throw InputError("cell tuple has wrong length");
        Index idx = 0;
        for (std::size_t j = 0; j < dims_.size(); ++j) {
            if (levels[j] < 0 || levels[j] >= dims_[j]) throw InputError("category out of range");
            idx += levels[j] * strides_[j];
        }
        return idx;
    }

    std::vector<int> cell_of(Index idx) const {
        if (idx < 0 || idx >= cells_) throw InputError("cell index out of range");
        std::vector<int> levels(dims_.size());
        for (std::size_t j = 0; j < dims_.size(); ++j) {
            levels[j] = static_cast<int>(idx / strides_[j]);
            idx %= strides_[j];
        }
        return levels;
    }

private:
    std::vector<int> dims_;
    std::vector<Index> strides_;
    Index cells_ = 0;
};

inline TableSchema build_schema(std::vector<int> dims) { return TableSchema(std::move(dims)); }

// Design G (t x (t-1)) for the canonical parameters and a contrast matrix L
// with L G = I.
template <typename Scalar>
struct CanonicalBasis {
    Matrix<Scalar> G;
    Matrix<Scalar> L;
    // G = I_t without its first column and L = (-1 | I).
    bool is_default = false;

    Index cells() const { return G.rows(); }
    Index dim() const { return G.cols(); }
};

template <typename Scalar>
CanonicalBasis<Scalar> default_basis(Index cells) {
    if (cells < 2) throw InputError("a table needs at least two cells");
    CanonicalBasis<Scalar> basis;
    basis.G = Matrix<Scalar>::Zero(cells, cells - 1);
    basis.G.bottomRows(cells - 1).setIdentity();
    basis.L = Matrix<Scalar>::Zero(cells - 1, cells);
    basis.L.col(0).setConstant(Scalar(-1));
    basis.L.rightCols(cells - 1).setIdentity();
    basis.is_default = true;
    return basis;
}

template <typename Scalar>
CanonicalBasis<Scalar> default_basis(const TableSchema& schema) {
    return default_basis<Scalar>(schema.cells());
}

// A user basis; only checked for shape and L G = I.
template <typename Scalar>
CanonicalBasis<Scalar> custom_basis(Matrix<Scalar> G, Matrix<Scalar> L) {
    if (G.cols() != G.rows() - 1 || L.rows() != G.cols() || L.cols() != G.rows()) {
        throw InputError("basis matrices have inconsistent shapes");
    }
    const Matrix<Scalar> LG = L * G;
    if ((LG - Matrix<Scalar>::Identity(LG.rows(), LG.cols())).cwiseAbs().maxCoeff() > Scalar(1e-10)) {
        throw InputError("basis requires L G = I");
    }
    return CanonicalBasis<Scalar>{std::move(G), std::move(L), false};
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
    using std::exp;
    using std::log;
    using Scalar = typename Derived::Scalar;
    const Scalar top = v.maxCoeff();
    return top + log((v.array() - top).exp().sum());
}

template <typename Scalar>
Vector<Scalar> theta_to_pi(const Vector<Scalar>& theta, const CanonicalBasis<Scalar>& basis) {
    if (theta.size() != basis.dim()) throw InputError("theta has wrong length");
    if (!theta.allFinite()) throw InputError("theta has non-finite entries");
    const Vector<Scalar> g = basis.G * theta;
    const Scalar top = g.maxCoeff();
    Vector<Scalar> pi = (g.array() - top).exp().matrix();
    pi /= pi.sum();
    return pi;
}

template <typename Scalar>
Vector<Scalar> pi_to_theta(const Vector<Scalar>& pi, const CanonicalBasis<Scalar>& basis) {
    if (pi.size() != basis.cells()) throw InputError("probability vector has wrong length");
    if (!pi.allFinite() || (pi.array() <= Scalar(0)).any()) {
        throw BoundaryError("cell probabilities must be strictly positive to map to theta");
    }
    return basis.L * pi.array().log().matrix();
}

}  // namespace marginfit
