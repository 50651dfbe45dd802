#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "marginfit/constraint.hpp"
#include "marginfit/errors.hpp"
#include "marginfit/likelihood.hpp"
#include "marginfit/mllp.hpp"
#include "marginfit/solver.hpp"
#include "marginfit/types.hpp"

namespace marginfit {

// sign(a) (|a| - nu)_+
template <typename Scalar>
Scalar soft_threshold(Scalar a, Scalar nu) {
    using std::abs;
    const Scalar mag = abs(a) - nu;
    if (!(mag > Scalar(0))) return Scalar(0);
    return a > Scalar(0) ? mag : -mag;
}

// Q(x) = -1/2 x'P x + c'x, up to a constant.
template <typename Scalar>
struct Quadratic {
    Matrix<Scalar> P;
    Vector<Scalar> c;

    Vector<Scalar> gradient(const Vector<Scalar>& x) const { return c - P * x; }
    Scalar value(const Vector<Scalar>& x) const { return c.dot(x) - x.dot(P * x) / Scalar(2); }
};

// The local quadratic of the log-likelihood in eta = X beta around eta0:
// -1/2 [R0 (eta - eta0) - F0^-1 s0]' F0 [R0 (eta - eta0) - F0^-1 s0]
// = -1/2 beta'X'Fb X beta + beta'X'(Fb eta0 + sb) + const, Fb = R0'F0 R0, sb = R0's0.
template <typename Scalar>
Quadratic<Scalar> local_quadratic(const Matrix<Scalar>& R0, const Matrix<Scalar>& F0, const Vector<Scalar>& s0,
                                  const Vector<Scalar>& eta0, const Matrix<Scalar>& X) {
    const Matrix<Scalar> fbar = R0.transpose() * F0 * R0;
    Quadratic<Scalar> q;
    q.P = X.transpose() * fbar * X;
    q.P = (q.P + q.P.transpose()) / Scalar(2);
    q.c = X.transpose() * (fbar * eta0 + R0.transpose() * s0);
    return q;
}

template <typename Scalar>
Quadratic<Scalar> local_quadratic(const Matrix<Scalar>& R0, const Matrix<Scalar>& F0, const Vector<Scalar>& s0,
                                  const Vector<Scalar>& eta0) {
    return local_quadratic(R0, F0, s0, eta0, Matrix<Scalar>::Identity(eta0.size(), eta0.size()).eval());
}

template <typename Scalar>
struct AscentResult {
    Vector<Scalar> x;
    int sweeps = 0;
    bool converged = false;
};

// Cyclic coordinate ascent on Q(x) - sum nu_j |x_j|. The one-dimensional
// problem in x_j has curvature P_jj, so the unpenalized coordinate optimum is
// thresholded at nu_j / P_jj.
template <typename Scalar>
AscentResult<Scalar> coordinate_ascent(const Quadratic<Scalar>& quad, const Vector<Scalar>& nu, Vector<Scalar> start,
                                       int max_sweeps = 10000, double tol = 1e-10) {
    using std::abs;
    const Index m = quad.c.size();
    if (nu.size() != m || start.size() != m) throw InputError("penalty vector has wrong length");
    if ((nu.array() < Scalar(0)).any()) throw InputError("penalties must be nonnegative");
    for (Index j = 0; j < m; ++j) {
        if (!(quad.P(j, j) > Scalar(0))) throw SingularError("quadratic approximation is not positive definite");
    }
    AscentResult<Scalar> out;
    out.x = std::move(start);
    Vector<Scalar> grad;  // c - P x, kept current within a sweep
    for (out.sweeps = 1; out.sweeps <= max_sweeps; ++out.sweeps) {
        grad = quad.gradient(out.x);
        Scalar biggest(0);
        for (Index j = 0; j < m; ++j) {
            const Scalar pjj = quad.P(j, j);
            const Scalar old = out.x(j);
            const Scalar check = old + grad(j) / pjj;
            const Scalar updated = soft_threshold(check, nu(j) / pjj);
            const Scalar change = updated - old;
            if (change != Scalar(0)) {
                out.x(j) = updated;
                grad.noalias() -= quad.P.col(j) * change;
                biggest = std::max(biggest, Scalar(abs(change)));
            }
        }
        if (biggest < Scalar(tol)) {
            out.converged = true;
            return out;
        }
    }
    out.sweeps = max_sweeps;
    return out;
}

template <typename Scalar>
struct PenaltySpec {
    Vector<Scalar> weights;     // per penalized coordinate; zero leaves a coordinate free
    double nu = 0;              // global multiplier
    bool adaptive = false;      // divide weights by |pilot estimate|
    std::vector<double> grid;   // ascending global values for a path

    Vector<Scalar> penalties() const { return Scalar(nu) * weights; }
};

template <typename Scalar>
struct PenalizedResult {
    FitResult<Scalar> fit;
    Vector<Scalar> penalties;
    std::vector<bool> zero;     // exact zeros of beta
    Scalar objective{};         // l - sum nu_j |beta_j|
    std::vector<double> objective_trace;
    bool inner_sweep_limit_hit = false;
};

namespace detail {

template <typename Scalar>
Scalar l1_term(const Vector<Scalar>& nu, const Vector<Scalar>& beta) {
    Scalar p(0);
    for (Index j = 0; j < beta.size(); ++j)
        if (beta(j) != Scalar(0)) p += nu(j) * std::abs(beta(j));
    return p;
}

template <typename Scalar>
const LinearConstraint<Scalar>& penalized_constraint(const MarginalModel<Scalar>& model) {
    const auto* lin = std::get_if<LinearConstraint<Scalar>>(&model.constraint);
    if (!lin) throw InputError("penalized fits support linear constraints only");
    return *lin;
}

}  // namespace detail

// Maximizes l(theta) - sum nu_j |beta_j| with eta = X beta (X = I when unconstrained)
// by repeated quadratic approximation and coordinate ascent.
template <typename Scalar>
PenalizedResult<Scalar> penalized_fit(const Vector<Scalar>& y, const MarginalModel<Scalar>& model,
                                      const Vector<Scalar>& nu, const FitOptions<Scalar>& opt = {},
                                      const Vector<Scalar>* warm_beta = nullptr, double outer_tol = 1e-8) {
    check_counts(y, model.schema.cells());
    const auto& lin = detail::penalized_constraint(model);
    const auto& basis = model.basis;
    const auto& mats = model.mllp;
    const Matrix<Scalar>& X = lin.X;
    if (nu.size() != X.cols()) throw InputError("penalty vector must have one entry per free coordinate");
    if ((nu.array() < Scalar(0)).any()) throw InputError("penalties must be nonnegative");

    const Scalar n = y.sum();
    const Scalar weight = Scalar(opt.merit_weight) * n;
    auto objective = [&](const Vector<Scalar>& th, Vector<Scalar>* beta_out = nullptr) {
        const Vector<Scalar> pi = theta_to_pi(th, basis);
        const Vector<Scalar> eta = eta_of_pi(mats, pi);
        const Vector<Scalar> beta = detail::least_squares(X, eta);
        if (beta_out) *beta_out = beta;
        const Scalar h = lin.K.cols() ? Scalar((lin.K.transpose() * eta).squaredNorm()) : Scalar(0);
        return loglik(th, y, basis) - detail::l1_term(nu, beta) - weight * h;
    };

    PenalizedResult<Scalar> out;
    out.penalties = nu;
    auto& res = out.fit;
    Vector<Scalar> theta = start_theta(y, basis, opt);
    Vector<Scalar> prev;
    objective(theta, &prev);
    if (warm_beta && warm_beta->size() == X.cols()) prev = *warm_beta;
    Vector<Scalar> beta = prev;

    for (int iter = 0;; ++iter) {
        res.iterations = iter;
        FitState<Scalar> st;
        Matrix<Scalar> R;
        Vector<Scalar> eta0;
        try {
            st = make_state(theta, y, basis);
            if (st.pi().minCoeff() < Scalar(kBoundaryFloor)) throw BoundaryError("boundary");
            R = jacobian_R(mats, basis, st.pi());
            eta0 = eta_of_pi(mats, st.pi());
        } catch (const Error& e) {
            res.status = dynamic_cast<const SingularError*>(&e) ? FitStatus::singular : FitStatus::boundary;
            res.message = "penalized fit stopped: " + std::string(e.what());
            break;
        }
        const Scalar phi0 = objective(theta);
        out.objective_trace.push_back(double(phi0));
        if (iter >= opt.max_iter) {
            res.status = FitStatus::max_iter;
            res.message = "no convergence after " + std::to_string(opt.max_iter) + " iterations";
            break;
        }

        const auto quad = local_quadratic(R, st.parts.info, st.parts.score, eta0, X);
        auto inner = coordinate_ascent(quad, nu, beta);
        if (!inner.converged) out.inner_sweep_limit_hit = true;
        const Scalar change = inner.x.size() ? (inner.x - prev).cwiseAbs().maxCoeff() : Scalar(0);
        beta = inner.x;
        prev = beta;
        const Vector<Scalar> dir = R * (X * beta - eta0);
        if (change < Scalar(outer_tol) && dir.cwiseAbs().maxCoeff() < Scalar(1e-6)) {
            res.status = FitStatus::converged;
            break;
        }

        Scalar scale(1);
        Vector<Scalar> next = theta + dir;
        int halvings = 0;
        if (opt.step_halving) {
            const Scalar slack = Scalar(1e-12) * (Scalar(1) + std::abs(phi0));
            bool accepted = false;
            for (; halvings <= opt.max_halvings; ++halvings, scale /= Scalar(2)) {
                Vector<Scalar> trial = theta + scale * dir;
                try {
                    const Scalar phi1 = objective(trial);
                    if (std::isfinite(double(phi1)) && phi1 >= phi0 - slack) {
                        next = std::move(trial);
                        accepted = true;
                        break;
                    }
                } catch (const Error&) {
                }
            }
            if (!accepted) {
                scale = Scalar(1);
                next = theta + dir;
            }
        }
        if (opt.keep_trace) res.trace.push_back({iter, double(st.parts.loglik), 0.0, double(change), double(scale), halvings});
        theta = std::move(next);
    }

    res.converged = res.status == FitStatus::converged;
    res.beta = beta;
    res.eta = X * beta;
    try {
        // put theta exactly on the returned eta so exact zeros carry through to pi
        res.theta = theta_of_eta(mats, basis, res.eta, theta);
    } catch (const Error&) {
        res.theta = theta;
        if (res.converged) {
            res.converged = false;
            res.status = FitStatus::singular;
            res.message = "penalized eta has no matching probability table";
        }
    }
    res.pi = theta_to_pi(res.theta, basis);
    res.loglik = loglik(res.theta, y, basis);
    res.constraint_norm = lin.K.cols() ? (lin.K.transpose() * res.eta).cwiseAbs().maxCoeff() : Scalar(0);
    out.objective = res.loglik - detail::l1_term(nu, beta);
    out.zero.resize(static_cast<std::size_t>(beta.size()));
    for (Index j = 0; j < beta.size(); ++j) out.zero[static_cast<std::size_t>(j)] = beta(j) == Scalar(0);
    return out;
}

// Penalty vector for `spec` at global value `nu`; adaptive weights use `pilot`.
template <typename Scalar>
Vector<Scalar> penalty_vector(const PenaltySpec<Scalar>& spec, double nu, const Vector<Scalar>* pilot) {
    Vector<Scalar> w = spec.weights;
    if (spec.adaptive) {
        if (!pilot || pilot->size() != w.size()) throw InputError("adaptive weights need a converged pilot fit");
        for (Index j = 0; j < w.size(); ++j) {
            if (w(j) == Scalar(0)) continue;
            w(j) = (*pilot)(j) == Scalar(0) ? std::numeric_limits<Scalar>::infinity() : w(j) / std::abs((*pilot)(j));
        }
    }
    Vector<Scalar> out = Vector<Scalar>::Zero(w.size());
    if (nu == 0) return out;
    for (Index j = 0; j < w.size(); ++j) out(j) = w(j) == Scalar(0) ? Scalar(0) : Scalar(nu) * w(j);
    return out;
}

template <typename Scalar>
struct PathPoint {
    double nu = 0;
    std::vector<bool> zero;
    Scalar loglik{};
    Scalar objective{};
    Vector<Scalar> eta;
    Vector<Scalar> beta;
    bool converged = false;
    int iterations = 0;
    std::string message;
};

// Fits along an ascending grid, each point warm-started from the previous solution.
template <typename Scalar>
std::vector<PathPoint<Scalar>> penalty_path(const Vector<Scalar>& y, const MarginalModel<Scalar>& model,
                                            const PenaltySpec<Scalar>& spec, const FitOptions<Scalar>& opt = {}) {
    if (spec.grid.empty()) throw InputError("penalty grid is empty");
    if (!std::is_sorted(spec.grid.begin(), spec.grid.end())) throw InputError("penalty grid must be ascending");
    if (spec.grid.front() < 0) throw InputError("penalties must be nonnegative");
    const auto& lin = detail::penalized_constraint(model);
    if (spec.weights.size() != lin.X.cols()) throw InputError("penalty weights have wrong length");

    Vector<Scalar> pilot;
    if (spec.adaptive) {
        const auto unpen = penalized_fit(y, model, Vector<Scalar>::Zero(lin.X.cols()).eval(), opt);
        if (!unpen.fit.converged) throw InputError("adaptive weights need a converged pilot fit");
        pilot = unpen.fit.beta;
    }
    std::vector<PathPoint<Scalar>> path;
    FitOptions<Scalar> o = opt;
    Vector<Scalar> warm;
    for (double nu : spec.grid) {
        const Vector<Scalar> pen = penalty_vector(spec, nu, spec.adaptive ? &pilot : nullptr);
        const auto r = penalized_fit(y, model, pen, o, warm.size() ? &warm : nullptr);
        path.push_back({nu, r.zero, r.fit.loglik, r.objective, r.fit.eta, r.fit.beta, r.fit.converged,
                        r.fit.iterations, r.fit.message});
        if (r.fit.converged) {
            o.start = StartKind::user;
            o.start_theta = r.fit.theta;
            warm = r.fit.beta;
        }
    }
    return path;
}

}  // namespace marginfit
