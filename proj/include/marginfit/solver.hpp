#pragma once

#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "marginfit/constraint.hpp"
#include "marginfit/errors.hpp"
#include "marginfit/likelihood.hpp"
#include "marginfit/mllp.hpp"
#include "marginfit/table.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

template <typename Scalar>
struct MarginalModel {
    TableSchema schema;
    CanonicalBasis<Scalar> basis;
    MllpMatrices<Scalar> mllp;
    ModelConstraint<Scalar> constraint;
};

// Default basis, matrices from `spec`, and no constraint.
template <typename Scalar>
MarginalModel<Scalar> make_model(const TableSchema& schema, const MllpSpec& spec) {
    auto mats = build_matrices<Scalar>(spec, schema);
    const Index dim = mats.dim();
    return {schema, default_basis<Scalar>(schema), std::move(mats), unconstrained<Scalar>(dim)};
}

enum class Algorithm { lagrangian, regression };
enum class StartKind { smoothed, uniform, user };

template <typename Scalar>
struct FitOptions {
    Algorithm algorithm = Algorithm::lagrangian;
    int max_iter = 200;
    double tol_constraint = 1e-8;
    double tol_score = 1e-8;
    bool step_halving = true;
    int max_halvings = 20;
    double merit_weight = 10.0;  // penalty on ||h||^2 is merit_weight * n
    StartKind start = StartKind::smoothed;
    Vector<Scalar> start_theta;  // used when start == user
    bool fd_observed_info = false;
    bool keep_trace = true;
};

enum class FitStatus { converged, max_iter, boundary, singular };

inline const char* to_string(FitStatus s) {
    switch (s) {
        case FitStatus::converged: return "converged";
        case FitStatus::max_iter: return "max_iter";
        case FitStatus::boundary: return "boundary";
        case FitStatus::singular: return "singular";
    }
    return "unknown";
}

struct TraceEntry {
    int iteration = 0;
    double loglik = 0;
    double constraint_norm = 0;
    double stationarity = 0;
    double step = 0;  // scale applied to reach this point (0 for the start)
    int halvings = 0;
};

template <typename Scalar>
struct FitResult {
    FitStatus status = FitStatus::max_iter;
    bool converged = false;
    std::string message;
    int iterations = 0;
    Vector<Scalar> theta, pi, eta, beta, lambda;
    Scalar loglik{};
    Scalar constraint_norm{};
    Scalar stationarity{};
    Vector<Scalar> observed_info_eigenvalues;
    bool local_max = false;
    std::vector<TraceEntry> trace;
};

template <typename Scalar>
struct FitState {
    Vector<Scalar> theta;
    LikelihoodParts<Scalar> parts;

    const Vector<Scalar>& pi() const { return parts.pi; }
};

template <typename Scalar>
FitState<Scalar> make_state(const Vector<Scalar>& theta, const Vector<Scalar>& y, const CanonicalBasis<Scalar>& basis) {
    return {theta, score_and_info(theta, y, basis)};
}

template <typename Scalar>
Vector<Scalar> start_theta(const Vector<Scalar>& y, const CanonicalBasis<Scalar>& basis, const FitOptions<Scalar>& opt) {
    switch (opt.start) {
        case StartKind::uniform: return Vector<Scalar>::Zero(basis.dim());
        case StartKind::user:
            if (opt.start_theta.size() != basis.dim()) throw InputError("starting theta has wrong length");
            return opt.start_theta;
        case StartKind::smoothed: break;
    }
    const Scalar t = Scalar(y.size());
    const Vector<Scalar> p = (y.array() + Scalar(0.5)).matrix() / (y.sum() + t / Scalar(2));
    return pi_to_theta(p, basis);
}

namespace detail {

// A^-1 B for symmetric positive definite A; throws when A is numerically singular.
template <typename Scalar>
Matrix<Scalar> spd_solve(const Matrix<Scalar>& A, const Matrix<Scalar>& B, const char* what) {
    using std::abs;
    if (A.rows() == 0) return Matrix<Scalar>(0, B.cols());
    Eigen::LDLT<Matrix<Scalar>> ldlt(A);
    const Vector<Scalar> d = ldlt.vectorD();
    const Scalar top = d.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !(d.minCoeff() > top * Scalar(1e-14))) throw SingularError(what);
    return ldlt.solve(B);
}

template <typename Scalar>
Matrix<Scalar> info_inverse_times(const FitState<Scalar>& st, const CanonicalBasis<Scalar>& basis,
                                  const Matrix<Scalar>& B) {
    if (basis.is_default) return explicit_F_inverse(st.pi(), st.parts.n, basis) * B;
    return spd_solve(st.parts.info, B, "expected information is singular");
}

template <typename Scalar>
Vector<Scalar> least_squares(const Matrix<Scalar>& X, const Vector<Scalar>& v) {
    if (X.cols() == 0) return Vector<Scalar>(0);
    return X.colPivHouseholderQr().solve(v);
}

}  // namespace detail

template <typename Scalar>
struct LagrangeStep {
    Vector<Scalar> theta;
    Vector<Scalar> lambda;
};

// theta0 + F^-1 s - F^-1 H (H'F^-1 H)^-1 (H'F^-1 s + h), scaled by `step`.
template <typename Scalar>
LagrangeStep<Scalar> as_update(const FitState<Scalar>& st, const ConstraintEval<Scalar>& con,
                               const CanonicalBasis<Scalar>& basis, Scalar step = Scalar(1)) {
    const Index r = con.H.cols();
    Matrix<Scalar> rhs(basis.dim(), 1 + r);
    rhs.col(0) = st.parts.score;
    rhs.rightCols(r) = con.H;
    const Matrix<Scalar> finv = detail::info_inverse_times(st, basis, rhs);
    const Vector<Scalar> finv_s = finv.col(0);
    LagrangeStep<Scalar> out;
    if (r == 0) {
        out.theta = st.theta + step * finv_s;
        out.lambda = Vector<Scalar>(0);
        return out;
    }
    const Matrix<Scalar> finv_H = finv.rightCols(r);
    const Matrix<Scalar> hfh = con.H.transpose() * finv_H;
    const Vector<Scalar> v = con.H.transpose() * finv_s + con.h;
    const Vector<Scalar> mult = detail::spd_solve<Scalar>(hfh, v, "H'F^-1 H is singular (model not smooth here)");
    out.lambda = -mult;
    out.theta = st.theta + step * (finv_s - finv_H * mult);
    return out;
}

template <typename Scalar>
struct RegressionStep {
    Vector<Scalar> beta;
    Vector<Scalar> theta;
};

// beta1 - beta0 = (X'Fb X)^-1 X'(Fb gamma0 + sb), theta1 - theta0 = R [X (beta1 - beta0) - gamma0]
// with sb = R's, Fb = R'F R and gamma0 = eta0 - X beta0.
template <typename Scalar>
RegressionStep<Scalar> regression_update(const FitState<Scalar>& st, const Matrix<Scalar>& X,
                                         const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis,
                                         Scalar step = Scalar(1)) {
    const Matrix<Scalar> R = jacobian_R(mats, basis, st.pi());
    const Vector<Scalar> eta0 = eta_of_pi(mats, st.pi());
    const Vector<Scalar> beta0 = detail::least_squares(X, eta0);
    const Vector<Scalar> gamma = eta0 - X * beta0;
    const Vector<Scalar> sbar = R.transpose() * st.parts.score;
    const Matrix<Scalar> fbar = R.transpose() * st.parts.info * R;
    const Matrix<Scalar> normal = X.transpose() * fbar * X;
    const Vector<Scalar> delta = detail::spd_solve<Scalar>(
        normal, X.transpose() * (fbar * gamma + sbar), "X'FX is singular (collinear design)");
    return {beta0 + delta, st.theta + step * (R * (X * delta - gamma))};
}

// Regression form of the update for h(theta) = A log(M pi) = 0, with K0 = H at theta0,
// Kbar0 = K0 (K0'K0)^-1 and X0 spanning the complement of K0:
//   beta1 = (X0'F X0)^-1 X0'[s + F Kbar0 h0],  theta1 - theta0 = X0 beta1 - Kbar0 h0.
template <typename Scalar>
RegressionStep<Scalar> general_constraint_update(const FitState<Scalar>& st, const ConstraintEval<Scalar>& con,
                                                 Scalar step = Scalar(1)) {
    const Matrix<Scalar>& K0 = con.H;
    const Matrix<Scalar> X0 = null_space_X(K0);
    Vector<Scalar> kbar_h = Vector<Scalar>::Zero(K0.rows());
    if (K0.cols() > 0) {
        kbar_h = K0 * detail::spd_solve<Scalar>(K0.transpose() * K0, con.h, "constraint Jacobian is rank deficient");
    }
    const Matrix<Scalar> normal = X0.transpose() * st.parts.info * X0;
    const Vector<Scalar> beta = detail::spd_solve<Scalar>(
        normal, X0.transpose() * (st.parts.score + st.parts.info * kbar_h), "X0'F X0 is singular");
    return {beta, st.theta + step * (X0 * beta - kbar_h)};
}

namespace detail {

template <typename Scalar>
Scalar stationarity(const FitState<Scalar>& st, const ConstraintEval<Scalar>& con, const ModelConstraint<Scalar>& c,
                    const MllpMatrices<Scalar>& mats, const CanonicalBasis<Scalar>& basis) {
    if (const auto* lin = std::get_if<LinearConstraint<Scalar>>(&c)) {
        if (lin->X_orth.cols() == 0) return Scalar(0);
        const Matrix<Scalar> R = jacobian_R(mats, basis, st.pi());
        return (lin->X_orth.transpose() * (R.transpose() * st.parts.score)).cwiseAbs().maxCoeff();
    }
    const Matrix<Scalar> X0 = null_space_X(con.H);
    if (X0.cols() == 0) return Scalar(0);
    return (X0.transpose() * st.parts.score).cwiseAbs().maxCoeff();
}

template <typename Scalar>
Scalar max_abs(const Vector<Scalar>& v) {
    return v.size() == 0 ? Scalar(0) : v.cwiseAbs().maxCoeff();
}

}  // namespace detail

// Central differences of the analytic beta-score X'R's along theta(eta0 + X delta).
template <typename Scalar>
Matrix<Scalar> observed_info_fd(const Vector<Scalar>& theta, const Matrix<Scalar>& X, const MllpMatrices<Scalar>& mats,
                                const CanonicalBasis<Scalar>& basis, const Vector<Scalar>& y,
                                Scalar h = Scalar(1e-6)) {
    const Vector<Scalar> eta0 = eta_of_pi(mats, theta_to_pi(theta, basis));
    auto beta_score = [&](const Vector<Scalar>& delta) {
        const Vector<Scalar> th = theta_of_eta(mats, basis, Vector<Scalar>(eta0 + X * delta), theta);
        const auto parts = score_and_info(th, y, basis);
        const Matrix<Scalar> R = jacobian_R(mats, basis, parts.pi);
        return Vector<Scalar>(X.transpose() * (R.transpose() * parts.score));
    };
    const Index q = X.cols();
    Matrix<Scalar> out(q, q);
    for (Index j = 0; j < q; ++j) {
        Vector<Scalar> e = Vector<Scalar>::Zero(q);
        e(j) = h;
        out.col(j) = -(beta_score(e) - beta_score(-e)) / (Scalar(2) * h);
    }
    return out;
}

// -X0' [Hessian of l + lambda'h] X0 with X0 spanning the tangent space of A log(M pi) = 0.
template <typename Scalar>
Matrix<Scalar> general_observed_info(const Vector<Scalar>& theta, const Vector<Scalar>& lambda,
                                     const GeneralConstraint<Scalar>& gen, const MllpMatrices<Scalar>& mats,
                                     const CanonicalBasis<Scalar>& basis, const Vector<Scalar>& y,
                                     Scalar h = Scalar(1e-6)) {
    const ModelConstraint<Scalar> c = gen;
    auto grad = [&](const Vector<Scalar>& th) {
        const auto parts = score_and_info(th, y, basis);
        const auto con = constraint_h_and_H(parts.pi, c, mats, basis);
        return Vector<Scalar>(parts.score + con.H * lambda);
    };
    const auto con0 = constraint_h_and_H(theta_to_pi(theta, basis), c, mats, basis);
    const Matrix<Scalar> X0 = null_space_X(con0.H);
    const Index k = theta.size();
    Matrix<Scalar> hess(k, k);
    for (Index j = 0; j < k; ++j) {
        Vector<Scalar> e = Vector<Scalar>::Zero(k);
        e(j) = h;
        hess.col(j) = (grad(theta + e) - grad(theta - e)) / (Scalar(2) * h);
    }
    const Matrix<Scalar> sym = (hess + hess.transpose()) / Scalar(2);
    return -X0.transpose() * sym * X0;
}

template <typename Scalar>
FitResult<Scalar> fit(const Vector<Scalar>& y, const MarginalModel<Scalar>& model, const FitOptions<Scalar>& opt = {}) {
    check_counts(y, model.schema.cells());
    if (y.sum() <= Scalar(0)) throw InputError("counts sum to zero");
    if (opt.max_iter < 1 || !(opt.tol_constraint > 0) || !(opt.tol_score > 0)) throw InputError("invalid fit options");

    const auto& basis = model.basis;
    const auto& mats = model.mllp;
    const auto& cons = model.constraint;
    const Scalar n = y.sum();
    const Scalar weight = Scalar(opt.merit_weight) * n;
    auto merit = [&](const Vector<Scalar>& th) {
        const Vector<Scalar> pi = theta_to_pi(th, basis);
        const Vector<Scalar> h = constraint_value(pi, cons, mats);
        return loglik(th, y, basis) - weight * h.squaredNorm();
    };

    const auto* lin_cons = std::get_if<LinearConstraint<Scalar>>(&cons);
    const Matrix<Scalar> KtC = lin_cons ? Matrix<Scalar>(lin_cons->K.transpose() * mats.C) : Matrix<Scalar>();
    auto evaluate = [&](const Vector<Scalar>& pi) {
        return lin_cons ? linear_h_and_H(pi, KtC, mats, basis) : constraint_h_and_H(pi, cons, mats, basis);
    };

    FitResult<Scalar> res;
    Vector<Scalar> theta = start_theta(y, basis, opt);
    double last_step = 0;
    int last_halvings = 0;
    for (int iter = 0;; ++iter) {
        res.iterations = iter;
        FitState<Scalar> st;
        ConstraintEval<Scalar> con;
        try {
            st = make_state(theta, y, basis);
            if (st.pi().minCoeff() < Scalar(kBoundaryFloor)) {
                res.status = FitStatus::boundary;
                res.message = "fitted probabilities approach zero (boundary estimate; the MLE may not exist)";
                break;
            }
            con = evaluate(st.pi());
            res.constraint_norm = detail::max_abs(con.h);
            res.stationarity = detail::stationarity(st, con, cons, mats, basis);
        } catch (const ConditioningError& e) {
            res.status = FitStatus::boundary;
            res.message = e.what();
            break;
        } catch (const SingularError& e) {
            res.status = FitStatus::singular;
            res.message = e.what();
            break;
        }
        res.theta = theta;
        res.loglik = st.parts.loglik;
        if (opt.keep_trace) {
            res.trace.push_back({iter, double(st.parts.loglik), double(res.constraint_norm),
                                 double(res.stationarity), last_step, last_halvings});
        }
        const bool stationary =
            res.constraint_norm <= Scalar(opt.tol_constraint) && res.stationarity <= Scalar(opt.tol_score);
        if (stationary && st.pi().minCoeff() >= Scalar(kDriftCheck)) {
            res.status = FitStatus::converged;
            break;
        }
        if (iter >= opt.max_iter) {
            res.status = FitStatus::max_iter;
            res.message = "no convergence after " + std::to_string(opt.max_iter) + " iterations";
            break;
        }

        Vector<Scalar> proposal;
        try {
            const auto* lin = std::get_if<LinearConstraint<Scalar>>(&cons);
            if (opt.algorithm == Algorithm::lagrangian)
                proposal = as_update(st, con, basis).theta;
            else if (lin)
                proposal = regression_update(st, lin->X, mats, basis).theta;
            else
                proposal = general_constraint_update(st, con).theta;
        } catch (const SingularError& e) {
            res.status = FitStatus::singular;
            res.message = e.what();
            break;
        }
        const Vector<Scalar> dir = proposal - theta;
        if (stationary) {
            // score is small only because some pi is; theta keeps drifting
            if (detail::max_abs(dir) > Scalar(kDriftStep)) {
                res.status = FitStatus::boundary;
                res.message = "fitted probabilities drift towards zero (boundary estimate; the MLE may not exist)";
                break;
            }
            res.status = FitStatus::converged;
            break;
        }

        Scalar scale(1);
        int halvings = 0;
        Vector<Scalar> next = proposal;
        if (opt.step_halving) {
            const Scalar m0 = st.parts.loglik - weight * con.h.squaredNorm();
            const Scalar slack = Scalar(1e-12) * (Scalar(1) + std::abs(m0));
            bool accepted = false;
            for (; halvings <= opt.max_halvings; ++halvings, scale /= Scalar(2)) {
                Vector<Scalar> trial = theta + scale * dir;
                try {
                    const Scalar m1 = merit(trial);
                    if (std::isfinite(double(m1)) && m1 >= m0 - slack) {
                        next = std::move(trial);
                        accepted = true;
                        break;
                    }
                } catch (const Error&) {
                }
            }
            if (!accepted) {
                // no improvement found; fall back to the undamped step
                scale = Scalar(1);
                next = proposal;
            }
        }
        if (!next.allFinite()) {
            res.status = FitStatus::boundary;
            res.message = "theta diverged (boundary estimate)";
            break;
        }
        theta = std::move(next);
        last_step = double(scale);
        last_halvings = halvings;
    }

    res.converged = res.status == FitStatus::converged;
    if (res.theta.size() == 0) res.theta = theta;
    try {
        res.pi = theta_to_pi(res.theta, basis);
        res.eta = eta_of_pi(mats, res.pi);
    } catch (const Error&) {
    }
    if (!res.converged) return res;

    const FitState<Scalar> st = make_state(res.theta, y, basis);
    const ConstraintEval<Scalar> con = constraint_h_and_H(st.pi(), cons, mats, basis);
    if (opt.algorithm == Algorithm::lagrangian) res.lambda = as_update(st, con, basis).lambda;
    Matrix<Scalar> obs;
    if (const auto* lin = std::get_if<LinearConstraint<Scalar>>(&cons)) {
        res.beta = detail::least_squares(lin->X, res.eta);
        obs = opt.fd_observed_info ? observed_info_fd(res.theta, lin->X, mats, basis, y)
                                   : observed_info(res.theta, lin->X, mats, basis, y);
    } else {
        const Vector<Scalar> lambda = as_update(st, con, basis).lambda;
        obs = general_observed_info(res.theta, lambda, std::get<GeneralConstraint<Scalar>>(cons), mats, basis, y);
    }
    if (obs.rows() > 0) {
        const Matrix<Scalar> sym = (obs + obs.transpose()) / Scalar(2);
        res.observed_info_eigenvalues = Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(sym).eigenvalues();
        res.local_max = res.observed_info_eigenvalues.minCoeff() > Scalar(0);
    } else {
        res.observed_info_eigenvalues = Vector<Scalar>(0);
        res.local_max = true;
    }
    return res;
}

template <typename Scalar>
struct MultiStartResult {
    std::vector<FitResult<Scalar>> runs;  // runs[0] uses the configured start
    std::size_t best = 0;                 // highest loglik among converged runs
};

// The configured start plus `extra` random starts theta0 ~ N(0, 1).
template <typename Scalar>
MultiStartResult<Scalar> fit_multistart(const Vector<Scalar>& y, const MarginalModel<Scalar>& model,
                                        const FitOptions<Scalar>& opt, int extra, std::uint64_t seed) {
    std::vector<FitOptions<Scalar>> configs{opt};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < extra; ++k) {
        FitOptions<Scalar> o = opt;
        o.start = StartKind::user;
        o.start_theta.resize(model.basis.dim());
        for (Index i = 0; i < o.start_theta.size(); ++i) o.start_theta(i) = Scalar(normal(rng));
        configs.push_back(std::move(o));
    }
    std::vector<std::future<FitResult<Scalar>>> jobs;
    for (const auto& o : configs)
        jobs.push_back(std::async(std::launch::async, [&y, &model, o] { return fit(y, model, o); }));
    MultiStartResult<Scalar> out;
    for (auto& j : jobs) out.runs.push_back(j.get());
    bool found = false;
    for (std::size_t k = 0; k < out.runs.size(); ++k) {
        if (!out.runs[k].converged) continue;
        if (!found || out.runs[k].loglik > out.runs[out.best].loglik) out.best = k;
        found = true;
    }
    return out;
}

}  // namespace marginfit
