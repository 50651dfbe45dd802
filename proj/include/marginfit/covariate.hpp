#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "marginfit/errors.hpp"
#include "marginfit/likelihood.hpp"
#include "marginfit/mllp.hpp"
#include "marginfit/solver.hpp"
#include "marginfit/table.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

// One individual (one-hot y) or one covariate stratum (frequency table y),
// with eta_i = X_i beta.
template <typename Scalar>
struct Stratum {
    std::string id;
    Vector<Scalar> y;  // length t
    Matrix<Scalar> X;  // (t-1) x q
};

template <typename Scalar>
struct StratifiedData {
    std::vector<Stratum<Scalar>> units;
    Index q = 0;
    std::vector<std::string> column_names;  // optional, length q

    std::string column_name(Index j) const {
        if (static_cast<std::size_t>(j) < column_names.size()) return column_names[static_cast<std::size_t>(j)];
        return "column " + std::to_string(j + 1);
    }
};

template <typename Scalar>
void validate_data(const StratifiedData<Scalar>& data, const CanonicalBasis<Scalar>& basis) {
    if (data.units.empty()) throw InputError("no strata in data");
    for (const auto& u : data.units) {
        check_counts(u.y, basis.cells());
        if (u.X.rows() != basis.dim() || u.X.cols() != data.q) {
            throw InputError("design for unit '" + u.id + "' must be " + std::to_string(basis.dim()) + " x " +
                             std::to_string(data.q));
        }
    }
}

namespace detail {

template <typename Scalar>
struct UnitEval {
    Vector<Scalar> pi, eta, score;
    Matrix<Scalar> R, W;  // W = R' F R with F = n_i G' Omega G
    Scalar loglik{};
};

template <typename Scalar>
UnitEval<Scalar> evaluate_unit(const Vector<Scalar>& theta, const Vector<Scalar>& y, const MllpMatrices<Scalar>& mats,
                               const CanonicalBasis<Scalar>& basis) {
    auto parts = score_and_info(theta, y, basis);
    UnitEval<Scalar> ev;
    ev.R = jacobian_R(mats, basis, parts.pi);
    ev.eta = eta_of_pi(mats, parts.pi);
    ev.W = ev.R.transpose() * parts.info * ev.R;
    ev.score = std::move(parts.score);
    ev.pi = std::move(parts.pi);
    ev.loglik = parts.loglik;
    return ev;
}

// Lists the columns a rank-revealing factorization leaves out of the normal matrix.
template <typename Scalar>
std::string deficient_columns(const Matrix<Scalar>& normal, const StratifiedData<Scalar>& data) {
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(normal);
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Index k = qr.rank(); k < normal.cols(); ++k) {
        if (!names.empty()) names += ", ";
        names += data.column_name(perm(k));
    }
    return names;
}

template <typename Scalar>
Vector<Scalar> solve_normal(const Matrix<Scalar>& normal, const Vector<Scalar>& rhs, const StratifiedData<Scalar>& data) {
    try {
        return spd_solve<Scalar>(normal, rhs, "");
    } catch (const SingularError&) {
        throw SingularError("covariate design is collinear; deficient columns: " + deficient_columns(normal, data));
    }
}

}  // namespace detail

template <typename Scalar>
struct CovariateStep {
    Vector<Scalar> beta;
    std::vector<Vector<Scalar>> thetas;
    Matrix<Scalar> normal;  // sum_i X_i' W_i X_i
};

namespace detail {

template <typename Scalar>
struct CovariatePass {
    CovariateStep<Scalar> step;
    std::vector<UnitEval<Scalar>> evals;  // at the incoming thetas
};

template <typename Scalar>
CovariatePass<Scalar> covariate_pass(const std::vector<Vector<Scalar>>& thetas, const StratifiedData<Scalar>& data,
                                     const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                                     const Vector<Scalar>& beta0, Scalar step) {
    if (thetas.size() != data.units.size()) throw InputError("one theta per unit required");
    if (beta0.size() != data.q) throw InputError("beta0 has wrong length");
    CovariatePass<Scalar> out;
    Matrix<Scalar> normal = Matrix<Scalar>::Zero(data.q, data.q);
    Vector<Scalar> rhs = Vector<Scalar>::Zero(data.q);
    out.evals.reserve(data.units.size());
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        const auto& u = data.units[i];
        out.evals.push_back(evaluate_unit(thetas[i], u.y, mats, basis));
        const auto& ev = out.evals.back();
        const Matrix<Scalar> WX = ev.W * u.X;
        normal.noalias() += u.X.transpose() * WX;
        rhs.noalias() += u.X.transpose() * (ev.W * (ev.eta - u.X * beta0) + ev.R.transpose() * ev.score);
    }
    out.step.beta = beta0 + solve_normal(normal, rhs, data);
    out.step.thetas.reserve(thetas.size());
    for (std::size_t i = 0; i < thetas.size(); ++i) {
        const auto& ev = out.evals[i];
        out.step.thetas.push_back(thetas[i] + step * (ev.R * (data.units[i].X * out.step.beta - ev.eta)));
    }
    out.step.normal = std::move(normal);
    return out;
}

}  // namespace detail

// beta1 - beta0 = (sum X_i'W_i X_i)^-1 sum X_i'(W_i gamma_i + R_i's_i), gamma_i = eta_i - X_i beta0,
// followed by theta_i1 - theta_i0 = R_i (X_i beta1 - eta_i).
template <typename Scalar>
CovariateStep<Scalar> covariate_update(const std::vector<Vector<Scalar>>& thetas, const StratifiedData<Scalar>& data,
                                       const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                                       const Vector<Scalar>& beta0, Scalar step = Scalar(1)) {
    return detail::covariate_pass(thetas, data, mats, basis, beta0, step).step;
}

template <typename Scalar>
struct CovariateFitResult {
    FitStatus status = FitStatus::max_iter;
    bool converged = false;
    std::string message;
    int iterations = 0;
    Vector<Scalar> beta;
    Matrix<Scalar> covariance;  // inverse of sum X_i'W_i X_i at the final point
    std::vector<std::string> ids;  // units that entered the fit
    std::vector<Vector<Scalar>> thetas, pis;
    Scalar loglik{};
    Scalar constraint_norm{};  // max_i ||eta_i - X_i beta||_inf
    Scalar stationarity{};     // ||sum X_i'R_i's_i||_inf
    Vector<Scalar> observed_info_eigenvalues;
    bool local_max = false;
    std::vector<TraceEntry> trace;

    Vector<Scalar> standard_errors() const { return covariance.diagonal().cwiseSqrt(); }
};

template <typename Scalar>
CovariateFitResult<Scalar> fit_covariates(const StratifiedData<Scalar>& data, const MllpMatrices<Scalar>& mats,
                                          const CanonicalBasis<Scalar>& basis, const FitOptions<Scalar>& opt = {}) {
    validate_data(data, basis);
    // strata without observations carry no information
    StratifiedData<Scalar> used{{}, data.q, data.column_names};
    for (const auto& u : data.units)
        if (u.y.sum() > Scalar(0)) used.units.push_back(u);
    if (used.units.empty()) throw InputError("all strata are empty");

    Vector<Scalar> pooled = Vector<Scalar>::Zero(basis.cells());
    for (const auto& u : used.units) pooled += u.y;
    Scalar total = pooled.sum();
    FitOptions<Scalar> start_opt = opt;
    if (opt.start == StartKind::user) start_opt.start = StartKind::smoothed;
    const Vector<Scalar> theta0 = start_theta(pooled, basis, start_opt);
    std::vector<Vector<Scalar>> thetas(used.units.size(), theta0);
    const Scalar weight = Scalar(opt.merit_weight) * total;

    auto total_loglik = [&](const std::vector<Vector<Scalar>>& ths) {
        Scalar l(0);
        for (std::size_t i = 0; i < ths.size(); ++i) l += loglik(ths[i], used.units[i].y, basis);
        return l;
    };
    auto residual_sq = [&](const std::vector<Vector<Scalar>>& ths, const Vector<Scalar>& beta) {
        Scalar r(0);
        for (std::size_t i = 0; i < ths.size(); ++i) {
            const Vector<Scalar> eta = eta_of_pi(mats, theta_to_pi(ths[i], basis));
            r += (eta - used.units[i].X * beta).squaredNorm();
        }
        return r;
    };

    CovariateFitResult<Scalar> res;
    Vector<Scalar> beta = Vector<Scalar>::Zero(used.q);
    double last_step = 0;
    int last_halvings = 0;
    for (int iter = 0;; ++iter) {
        res.iterations = iter;
        CovariateStep<Scalar> step;
        Scalar stationarity(0), cnorm(0), ll(0);
        try {
            for (const auto& th : thetas) {
                if (theta_to_pi(th, basis).minCoeff() < Scalar(kBoundaryFloor)) throw BoundaryError("boundary");
            }
            auto pass = detail::covariate_pass(thetas, used, mats, basis, beta, Scalar(1));
            step = std::move(pass.step);
            Vector<Scalar> grad = Vector<Scalar>::Zero(used.q);
            for (std::size_t i = 0; i < thetas.size(); ++i) {
                const auto& ev = pass.evals[i];
                grad += used.units[i].X.transpose() * (ev.R.transpose() * ev.score);
                cnorm = std::max(cnorm, (ev.eta - used.units[i].X * step.beta).cwiseAbs().maxCoeff());
                ll += ev.loglik;
            }
            stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : Scalar(0);
        } catch (const BoundaryError&) {
            res.status = FitStatus::boundary;
            res.message = "a stratum's fitted probabilities approach zero (boundary estimate)";
            break;
        } catch (const ConditioningError& e) {
            res.status = FitStatus::boundary;
            res.message = e.what();
            break;
        } catch (const SingularError& e) {
            res.status = FitStatus::singular;
            res.message = e.what();
            break;
        }
        res.beta = step.beta;
        res.covariance = detail::spd_solve<Scalar>(step.normal, Matrix<Scalar>::Identity(used.q, used.q), "");
        res.thetas = thetas;
        res.loglik = ll;
        res.constraint_norm = cnorm;
        res.stationarity = stationarity;
        if (opt.keep_trace)
            res.trace.push_back({iter, double(ll), double(cnorm), double(stationarity), last_step, last_halvings});
        if (cnorm <= Scalar(opt.tol_constraint) && stationarity <= Scalar(opt.tol_score)) {
            res.status = FitStatus::converged;
            break;
        }
        if (iter >= opt.max_iter) {
            res.status = FitStatus::max_iter;
            res.message = "no convergence after " + std::to_string(opt.max_iter) + " iterations";
            break;
        }

        Scalar scale(1);
        int halvings = 0;
        std::vector<Vector<Scalar>> next = step.thetas;
        if (opt.step_halving) {
            const Scalar m0 = ll - weight * residual_sq(thetas, step.beta);
            const Scalar slack = Scalar(1e-12) * (Scalar(1) + std::abs(m0));
            bool accepted = false;
            for (; halvings <= opt.max_halvings; ++halvings, scale /= Scalar(2)) {
                std::vector<Vector<Scalar>> trial(thetas.size());
                for (std::size_t i = 0; i < thetas.size(); ++i)
                    trial[i] = thetas[i] + scale * (step.thetas[i] - thetas[i]);
                try {
                    const Scalar m1 = total_loglik(trial) - weight * residual_sq(trial, step.beta);
                    if (std::isfinite(double(m1)) && m1 >= m0 - slack) {
                        next = std::move(trial);
                        accepted = true;
                        break;
                    }
                } catch (const Error&) {
                }
            }
            if (!accepted) {
                scale = Scalar(1);
                next = step.thetas;
            }
        }
        thetas = std::move(next);
        beta = step.beta;
        last_step = double(scale);
        last_halvings = halvings;
    }
    res.converged = res.status == FitStatus::converged;
    if (res.thetas.empty()) res.thetas = thetas;
    for (const auto& th : res.thetas) res.pis.push_back(theta_to_pi(th, basis));
    for (const auto& u : used.units) res.ids.push_back(u.id);
    if (res.converged && used.q > 0) {
        Matrix<Scalar> obs = Matrix<Scalar>::Zero(used.q, used.q);
        for (std::size_t i = 0; i < used.units.size(); ++i)
            obs += observed_info(res.thetas[i], used.units[i].X, mats, basis, used.units[i].y);
        const Matrix<Scalar> sym = (obs + obs.transpose()) / Scalar(2);
        res.observed_info_eigenvalues = Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(sym).eigenvalues();
        res.local_max = res.observed_info_eigenvalues.minCoeff() > Scalar(0);
    }
    return res;
}

}  // namespace marginfit
