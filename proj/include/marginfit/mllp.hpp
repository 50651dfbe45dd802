#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "marginfit/errors.hpp"
#include "marginfit/table.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

// Subset of the table variables; bit j set <=> variable j (zero based) is a member.
using VarSet = std::uint32_t;

inline bool is_subset(VarSet a, VarSet b) { return (a & ~b) == 0; }
inline int set_size(VarSet s) { return std::popcount(s); }
inline VarSet full_set(int num_vars) { return num_vars >= 32 ? ~VarSet{0} : (VarSet{1} << num_vars) - 1; }

inline std::vector<int> members(VarSet s) {
    std::vector<int> out;
    for (int j = 0; s != 0; ++j, s >>= 1)
        if (s & 1U) out.push_back(j);
    return out;
}

// "{1,3}" with one-based variable numbers.
inline std::string format_set(VarSet s) {
    std::string out = "{";
    bool first = true;
    for (int v : members(s)) {
        if (!first) out += ",";
        out += std::to_string(v + 1);
        first = false;
    }
    return out + "}";
}

// Ordering used for effects inside a margin: by size, then by bit pattern.
inline bool effect_order(VarSet a, VarSet b) {
    return set_size(a) != set_size(b) ? set_size(a) < set_size(b) : a < b;
}

enum class Coding { baseline, effect };

struct EffectAssignment {
    VarSet effect = 0;
    std::size_t margin = 0;  // index into MllpSpec::margins
};

struct MllpSpec {
    std::vector<VarSet> margins;
    std::vector<EffectAssignment> effects;
    Coding coding = Coding::baseline;
};

// Assign every effect to the first margin that contains it.
inline MllpSpec hierarchical_spec(std::vector<VarSet> margins, Coding coding = Coding::baseline) {
    MllpSpec spec;
    spec.margins = std::move(margins);
    spec.coding = coding;
    VarSet seen_union = 0;
    for (VarSet m : spec.margins) seen_union |= m;
    std::vector<bool> taken(static_cast<std::size_t>(seen_union) + 1, false);
    for (std::size_t k = 0; k < spec.margins.size(); ++k) {
        std::vector<VarSet> own;
        const VarSet m = spec.margins[k];
        // enumerate nonempty subsets of m
        for (VarSet e = m; e != 0; e = (e - 1) & m) {
            if (!taken[e]) {
                taken[e] = true;
                own.push_back(e);
            }
        }
        std::sort(own.begin(), own.end(), effect_order);
        for (VarSet e : own) spec.effects.push_back({e, k});
    }
    return spec;
}

// Ordinary log-linear parameters: a single margin equal to the full table.
inline MllpSpec saturated_spec(int num_vars, Coding coding = Coding::baseline) {
    return hierarchical_spec({full_set(num_vars)}, coding);
}

// Multivariate logistic parameters: every interaction in its own margin.
inline MllpSpec multivariate_logistic_spec(int num_vars, Coding coding = Coding::baseline) {
    std::vector<VarSet> margins;
    for (VarSet s = 1; s <= full_set(num_vars); ++s) margins.push_back(s);
    std::sort(margins.begin(), margins.end(), effect_order);
    return hierarchical_spec(std::move(margins), coding);
}

struct ValidityReport {
    bool complete = true;
    bool hierarchical = true;
    std::vector<VarSet> missing;     // effects defined in no margin
    std::vector<VarSet> duplicated;  // effects defined in more than one margin
    std::vector<std::string> violations;
};

inline ValidityReport validate_spec(const MllpSpec& spec, const TableSchema& schema) {
    ValidityReport rep;
    const VarSet all = full_set(schema.num_vars());
    for (std::size_t k = 0; k < spec.margins.size(); ++k) {
        const VarSet m = spec.margins[k];
        if (m == 0 || !is_subset(m, all)) {
            rep.complete = false;
            rep.violations.push_back("margin " + std::to_string(k + 1) + " " + format_set(m) +
                                     " is not a nonempty subset of the table variables");
        }
    }
    std::map<VarSet, std::vector<std::size_t>> where;
    for (const auto& a : spec.effects) {
        if (a.margin >= spec.margins.size()) {
            rep.complete = false;
            rep.violations.push_back("effect " + format_set(a.effect) + " refers to margin " +
                                     std::to_string(a.margin + 1) + " which does not exist");
            continue;
        }
        if (a.effect == 0 || !is_subset(a.effect, spec.margins[a.margin])) {
            rep.complete = false;
            rep.violations.push_back("effect " + format_set(a.effect) + " is not a subset of its margin " +
                                     format_set(spec.margins[a.margin]));
            continue;
        }
        where[a.effect].push_back(a.margin);
    }
    for (VarSet e = 1; e <= all && e != 0; ++e) {
        auto it = where.find(e);
        if (it == where.end()) {
            rep.complete = false;
            rep.missing.push_back(e);
            rep.violations.push_back("effect " + format_set(e) + " is not defined in any margin");
        } else if (it->second.size() > 1) {
            rep.complete = false;
            rep.duplicated.push_back(e);
            std::string msg = "effect " + format_set(e) + " is defined in " +
                              std::to_string(it->second.size()) + " margins:";
            for (std::size_t k : it->second) msg += " " + format_set(spec.margins[k]);
            rep.violations.push_back(msg);
        }
        if (e == all) break;
    }
    for (std::size_t j = 0; j < spec.margins.size(); ++j) {
        for (const auto& a : spec.effects) {
            if (a.margin < spec.margins.size() && a.margin > j && is_subset(a.effect, spec.margins[j])) {
                rep.hierarchical = false;
                rep.violations.push_back("effect " + format_set(a.effect) + " is a subset of margin " +
                                         format_set(spec.margins[j]) + " but is defined in the later margin " +
                                         format_set(spec.margins[a.margin]));
            }
        }
    }
    return rep;
}

// Identifies one coordinate of eta.
struct EtaLabel {
    VarSet effect = 0;
    std::size_t margin = 0;
    std::vector<int> levels;  // zero-based category for each member of effect
};

// eta = C log(M pi) with C (t-1) x u and M u x t.
template <typename Scalar>
struct MllpMatrices {
    Matrix<Scalar> C;
    Matrix<Scalar> M;
    std::vector<EtaLabel> labels;  // empty for matrices supplied directly

    Index u() const { return M.rows(); }
    Index dim() const { return C.rows(); }

    std::vector<Index> coords_of(VarSet effect) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i].effect == effect) out.push_back(static_cast<Index>(i));
        return out;
    }
};

namespace detail {

template <typename Scalar>
Vector<Scalar> kron(const Vector<Scalar>& a, const Vector<Scalar>& b) {
    Vector<Scalar> out(a.size() * b.size());
    for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

// Marginalization rows for margin `m`, marginal cells in lexicographic order.
template <typename Scalar>
Matrix<Scalar> margin_rows(VarSet m, const TableSchema& schema) {
    const auto vars = members(m);
    Index size = 1;
    for (int v : vars) size *= schema.dim(v);
    Matrix<Scalar> rows = Matrix<Scalar>::Zero(size, schema.cells());
    for (Index cell = 0; cell < schema.cells(); ++cell) {
        const auto lv = schema.cell_of(cell);
        Index idx = 0;
        for (int v : vars) idx = idx * schema.dim(v) + lv[static_cast<std::size_t>(v)];
        rows(idx, cell) = Scalar(1);
    }
    return rows;
}

// Odometer over non-baseline levels 1..c-1, last position fastest.
inline bool next_levels(std::vector<int>& lv, const std::vector<int>& vars, const TableSchema& schema) {
    for (std::size_t pos = lv.size(); pos-- > 0;) {
        if (++lv[pos] < schema.dim(vars[pos])) return true;
        lv[pos] = 1;
    }
    return false;
}

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> eta_jacobian(const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                            const Vector<Scalar>& pi);

// Builds (C, M). Rejects specs that are not complete and hierarchical.
template <typename Scalar>
MllpMatrices<Scalar> build_matrices(const MllpSpec& spec, const TableSchema& schema) {
    const ValidityReport rep = validate_spec(spec, schema);
    if (!rep.complete || !rep.hierarchical) {
        std::string msg = !rep.complete
                              ? "parameterization is not complete (every interaction must be defined in exactly "
                                "one margin; completeness is necessary for a smooth model)"
                              : "parameterization is not hierarchical (margins must be listed in non-decreasing "
                                "order with each effect in the first margin containing it)";
        for (const auto& v : rep.violations) msg += "; " + v;
        throw IncompleteSpecError(msg);
    }

    MllpMatrices<Scalar> out;
    std::vector<Index> offsets;
    Index u = 0;
    std::vector<Matrix<Scalar>> blocks;
    for (VarSet m : spec.margins) {
        blocks.push_back(detail::margin_rows<Scalar>(m, schema));
        offsets.push_back(u);
        u += blocks.back().rows();
    }
    out.M.resize(u, schema.cells());
    for (std::size_t k = 0; k < blocks.size(); ++k) out.M.middleRows(offsets[k], blocks[k].rows()) = blocks[k];

    std::vector<EffectAssignment> order = spec.effects;
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        return a.margin != b.margin ? a.margin < b.margin : effect_order(a.effect, b.effect);
    });

    out.C = Matrix<Scalar>::Zero(schema.cells() - 1, u);
    Index row = 0;
    for (const auto& a : order) {
        const VarSet m = spec.margins[a.margin];
        const auto mvars = members(m);
        const auto evars = members(a.effect);
        // non-baseline level tuples of the effect, last variable fastest
        std::vector<int> lv(evars.size(), 1);
        while (true) {
            Vector<Scalar> r = Vector<Scalar>::Ones(1);
            std::size_t e_pos = 0;
            for (int v : mvars) {
                const int c = schema.dim(v);
                Vector<Scalar> f = Vector<Scalar>::Zero(c);
                const bool in_effect = (a.effect >> v) & 1U;
                if (spec.coding == Coding::baseline) {
                    f(0) = in_effect ? Scalar(-1) : Scalar(1);
                    if (in_effect) f(lv[e_pos]) += Scalar(1);
                } else {
                    f.setConstant(in_effect ? Scalar(-1) / Scalar(c) : Scalar(1) / Scalar(c));
                    if (in_effect) f(lv[e_pos]) += Scalar(1);
                }
                if (in_effect) ++e_pos;
                r = detail::kron<Scalar>(r, f);
            }
            out.C.block(row, offsets[a.margin], 1, r.size()) = r.transpose();
            out.labels.push_back({a.effect, a.margin, lv});
            ++row;

            if (!detail::next_levels(lv, evars, schema)) break;
        }
    }
    if (row != schema.cells() - 1) throw IncompleteSpecError("parameterization does not have t-1 coordinates");

    const Vector<Scalar> uniform = Vector<Scalar>::Constant(schema.cells(), Scalar(1) / Scalar(schema.cells()));
    const auto basis = default_basis<Scalar>(schema);
    Eigen::FullPivLU<Matrix<Scalar>> lu(eta_jacobian(out, basis, uniform));
    if (!lu.isInvertible()) throw SingularError("parameterization Jacobian is singular at the uniform table");
    return out;
}

// Wraps explicitly supplied (C, M).
template <typename Scalar>
MllpMatrices<Scalar> matrices_from(Matrix<Scalar> C, Matrix<Scalar> M) {
    if (C.cols() != M.rows()) throw InputError("C and M have inconsistent shapes");
    if (C.rows() != M.cols() - 1) throw InputError("C must have t-1 rows");
    if ((M.array() != Scalar(0) && M.array() != Scalar(1)).any()) throw InputError("M must be a 0/1 matrix");
    if ((C.rowwise().sum().cwiseAbs().array() > Scalar(1e-10)).any()) throw InputError("rows of C must sum to zero");
    return MllpMatrices<Scalar>{std::move(C), std::move(M), {}};
}

template <typename Scalar>
Vector<Scalar> checked_margins(const Matrix<Scalar>& M, const Vector<Scalar>& pi) {
    Vector<Scalar> mp = M * pi;
    if (!mp.allFinite() || mp.minCoeff() < Scalar(kMarginFloor)) {
        throw ConditioningError("a marginal probability is below 1e-12; diag(M pi) is ill-conditioned");
    }
    return mp;
}

template <typename Scalar>
Vector<Scalar> eta_of_pi(const MllpMatrices<Scalar>& mats, const Vector<Scalar>& pi) {
    if (pi.size() != mats.M.cols()) throw InputError("probability vector has wrong length");
    return mats.C * checked_margins(mats.M, pi).array().log().matrix();
}

// d eta / d theta' = C diag(M pi)^-1 M diag(pi) G, the inverse of R.
template <typename Scalar>
Matrix<Scalar> eta_jacobian(const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                            const Vector<Scalar>& pi) {
    const Vector<Scalar> mp = checked_margins(mats.M, pi);
    const Matrix<Scalar> weighted = mats.M * (pi.asDiagonal() * basis.G);
    return mats.C * (mp.cwiseInverse().asDiagonal() * weighted);
}

// R = d theta / d eta'.
template <typename Scalar>
Matrix<Scalar> jacobian_R(const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                          const Vector<Scalar>& pi) {
    Eigen::FullPivLU<Matrix<Scalar>> lu(eta_jacobian(mats, basis, pi));
    if (!lu.isInvertible()) {
        throw SingularError("Jacobian of eta with respect to theta is singular (non-smooth point or incomplete "
                            "parameterization)");
    }
    return lu.inverse();
}

// Newton iteration for theta with eta(theta) = target.
template <typename Scalar>
Vector<Scalar> theta_of_eta(const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                            const Vector<Scalar>& target, Vector<Scalar> theta, double tol = 1e-13,
                            int max_iter = 200) {
    using std::abs;
    if (target.size() != mats.dim()) throw InputError("eta has wrong length");
    auto residual = [&](const Vector<Scalar>& th) {
        return Vector<Scalar>(target - eta_of_pi(mats, theta_to_pi(th, basis)));
    };
    Vector<Scalar> res = residual(theta);
    for (int it = 0; it < max_iter; ++it) {
        const Scalar norm = res.cwiseAbs().maxCoeff();
        if (norm <= Scalar(tol)) return theta;
        const Vector<Scalar> step = jacobian_R(mats, basis, theta_to_pi(theta, basis)) * res;
        Scalar scale(1);
        bool moved = false;
        for (int h = 0; h < 40; ++h, scale /= Scalar(2)) {
            try {
                Vector<Scalar> trial = theta + scale * step;
                Vector<Scalar> tres = residual(trial);
                if (tres.cwiseAbs().maxCoeff() < norm) {
                    theta = std::move(trial);
                    res = std::move(tres);
                    moved = true;
                    break;
                }
            } catch (const Error&) {
            }
        }
        if (!moved) break;
    }
    if (res.cwiseAbs().maxCoeff() <= Scalar(tol) * Scalar(100)) return theta;
    throw SingularError("no probability table has the requested eta (values may not be compatible)");
}

}  // namespace marginfit
