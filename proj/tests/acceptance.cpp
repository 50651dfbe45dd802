// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "marginfit/marginfit.hpp"
#include "oracles.hpp"

using namespace marginfit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

class Check {
public:
    void require(bool ok, const std::string& what) {
        if (!ok && failures_++ < 3) first_ += (first_.empty() ? "" : "; ") + what;
    }
    void track(double value) { worst_ = std::max(worst_, value); }
    Verdict verdict(const std::string& summary) const {
        std::ostringstream s;
        s << summary;
        if (worst_ > 0) s << ", worst " << worst_;
        if (failures_) s << ", " << failures_ << " failure(s): " << first_;
        return {failures_ == 0, s.str()};
    }

private:
    int failures_ = 0;
    std::string first_;
    double worst_ = 0;
};

double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

struct RandomModel {
    TableSchema schema;
    CanonicalBasis<double> basis;
    MllpMatrices<double> mats;
};

RandomModel random_model(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dd(2, 3);
    const int d = dd(rng);
    const auto schema = build_schema(oracle::random_dims(rng, d));
    std::bernoulli_distribution effect(0.3);
    const auto spec = hierarchical_spec(oracle::random_margins(rng, d), effect(rng) ? Coding::effect : Coding::baseline);
    return {schema, default_basis<double>(schema), build_matrices<double>(spec, schema)};
}

MarginalModel<double> independence_model(int r, int c) {
    auto model = make_model<double>(build_schema({r, c}), saturated_spec(2));
    model.constraint = zero_constraint<double>(model.mllp.dim(), model.mllp.coords_of(0b11));
    return model;
}

Verdict update_equivalence() {
    std::mt19937_64 rng(1001);
    Check c;
    for (int k = 0; k < 50; ++k) {
        const auto m = random_model(rng);
        const Index t = m.schema.cells();
        std::uniform_int_distribution<Index> rd(1, t - 2);
        const auto lin = linear_from_K<double>(oracle::random_matrix(rng, t - 1, rd(rng)));
        const ModelConstraint<double> con = lin;
        const VectorXd y = oracle::random_counts(rng, t);
        const auto st = make_state(pi_to_theta(oracle::random_pi(rng, t), m.basis), y, m.basis);
        const auto as = as_update(st, constraint_h_and_H(st.pi(), con, m.mats, m.basis), m.basis);
        const auto reg = regression_update<double>(st, lin.X, m.mats, m.basis);
        const double full = max_abs(as.theta - reg.theta);
        const VectorXd half_as = st.theta + 0.5 * (as.theta - st.theta);
        const VectorXd half_reg = st.theta + 0.5 * (reg.theta - st.theta);
        const double half = max_abs(half_as - half_reg);
        c.track(std::max(full, half));
        c.require(full <= 1e-9, "instance " + std::to_string(k) + " full step differs by " + std::to_string(full));
        c.require(half <= 1e-9, "instance " + std::to_string(k) + " half step differs");
    }
    return c.verdict("50 instances, max-norm tolerance 1e-9 at step 1 and 0.5");
}

Verdict projection_identity() {
    std::mt19937_64 rng(1002);
    Check c;
    std::uniform_int_distribution<Index> md(3, 12);
    for (int k = 0; k < 100; ++k) {
        const Index m = md(rng);
        std::uniform_int_distribution<Index> rd(1, m - 1);
        const MatrixXd W = oracle::random_spd(rng, m);
        const MatrixXd K = oracle::random_matrix(rng, m, rd(rng));
        const MatrixXd X = null_space_X(K);
        const MatrixXd Wi = W.inverse();
        const MatrixXd lhs = Wi - Wi * K * (K.transpose() * Wi * K).inverse() * K.transpose() * Wi;
        const MatrixXd rhs = X * (X.transpose() * W * X).inverse() * X.transpose();
        const double err = (lhs - rhs).norm() / rhs.norm();
        c.track(err);
        c.require(err <= 1e-10, "triple " + std::to_string(k));
    }
    return c.verdict("100 (W, K, X) triples, relative Frobenius tolerance 1e-10");
}

struct IndependenceRun {
    VectorXd y;
    int rows, cols;
    FitResult<double> lag, reg;
};

std::vector<IndependenceRun> independence_runs() {
    std::mt19937_64 rng(1003);
    std::vector<IndependenceRun> runs;
    for (int k = 0; k < 20; ++k) {
        const int r = k < 10 ? 2 : 3, cdim = r;
        const auto model = independence_model(r, cdim);
        IndependenceRun run{oracle::random_counts(rng, r * cdim, 1, 80), r, cdim, {}, {}};
        FitOptions<double> opt;
        run.lag = fit(run.y, model, opt);
        opt.algorithm = Algorithm::regression;
        run.reg = fit(run.y, model, opt);
        runs.push_back(std::move(run));
    }
    return runs;
}

Verdict independence_oracle(const std::vector<IndependenceRun>& runs) {
    Check c;
    int most = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& run = runs[k];
        const VectorXd closed = oracle::closed_form_independence(run.y, run.rows, run.cols);
        const VectorXd ipf = oracle::ipf_independence(run.y, {run.rows, run.cols}, 200);
        c.require(max_abs(closed - ipf) <= 1e-12, "oracles disagree on table " + std::to_string(k));
        for (const auto* res : {&run.lag, &run.reg}) {
            const std::string tag = "table " + std::to_string(k) + (res == &run.lag ? " lagrangian" : " regression");
            c.require(res->converged, tag + " did not converge");
            const double err = max_abs(res->pi - closed);
            c.track(err);
            c.require(err <= 1e-8, tag + " pi error");
            c.require(res->iterations <= 30, tag + " needed " + std::to_string(res->iterations) + " iterations");
            most = std::max(most, res->iterations);
        }
    }
    return c.verdict("20 tables (2x2, 3x3), both algorithms, tolerance 1e-8, most iterations " + std::to_string(most));
}

Verdict derivative_checks() {
    std::mt19937_64 rng(1004);
    Check c;
    for (int k = 0; k < 10; ++k) {
        const auto m = random_model(rng);
        const Index t = m.schema.cells();
        const VectorXd y = oracle::random_counts(rng, t);
        const VectorXd theta = pi_to_theta(oracle::random_pi(rng, t), m.basis);
        const std::string at = " at point " + std::to_string(k);

        const auto parts = score_and_info(theta, y, m.basis);
        auto l = [&](const VectorXd& th) { return loglik(th, y, m.basis); };
        const double e_score = oracle::rel_err(parts.score, oracle::fd_gradient(l, theta));
        c.require(e_score <= 1e-6, "score" + at);

        std::uniform_int_distribution<Index> rd(1, t - 2);
        const ModelConstraint<double> con = linear_from_K<double>(oracle::random_matrix(rng, t - 1, rd(rng)));
        const auto ev = constraint_h_and_H(parts.pi, con, m.mats, m.basis);
        auto h = [&](const VectorXd& th) { return constraint_value(theta_to_pi(th, m.basis), con, m.mats); };
        const double e_H = oracle::rel_err(ev.H.transpose(), oracle::fd_jacobian(h, theta));
        c.require(e_H <= 1e-5, "H" + at);

        std::uniform_int_distribution<Index> qd(1, t - 1);
        const MatrixXd X = oracle::random_matrix(rng, t - 1, qd(rng));
        const VectorXd eta0 = eta_of_pi(m.mats, parts.pi);
        auto profile = [&](const VectorXd& beta) {
            const VectorXd th = theta_of_eta(m.mats, m.basis, VectorXd(eta0 + X * beta), theta);
            const auto p = score_and_info(th, y, m.basis);
            return VectorXd(X.transpose() * jacobian_R(m.mats, m.basis, p.pi).transpose() * p.score);
        };
        const MatrixXd obs = observed_info(theta, X, m.mats, m.basis, y);
        const double e_obs = oracle::rel_err(obs, -oracle::fd_jacobian(profile, VectorXd::Zero(X.cols())));
        c.require(e_obs <= 1e-4, "observed information" + at);
        c.track(std::max({e_score / 1e-6, e_H / 1e-5, e_obs / 1e-4}));
    }
    return c.verdict("score 1e-6, H 1e-5, observed information 1e-4 at 10 points (worst is error/tolerance)");
}

Verdict fast_paths() {
    std::mt19937_64 rng(1005);
    Check c;
    double worst_inv = 0, worst_omega = 0, worst_lemma = 0;
    for (int k = 0; k < 10; ++k) {
        const auto m = random_model(rng);
        const Index t = m.schema.cells();
        const VectorXd pi = oracle::random_pi(rng, t);
        const double n = 25.0 + k;
        const auto parts = score_and_info(pi_to_theta(pi, m.basis), VectorXd(n * pi), m.basis);
        const double e_inv = oracle::rel_err(explicit_F_inverse(parts.pi, n, m.basis), parts.info.inverse());
        worst_inv = std::max(worst_inv, e_inv);
        c.require(e_inv <= 1e-9, "explicit inverse");

        MatrixXd omega = -pi * pi.transpose();
        omega.diagonal() += pi;
        const VectorXd mp = m.mats.M * pi;
        const MatrixXd with_omega = m.mats.C * mp.cwiseInverse().asDiagonal() * m.mats.M * omega * m.basis.G;
        const MatrixXd with_diag = m.mats.C * mp.cwiseInverse().asDiagonal() * m.mats.M * pi.asDiagonal() * m.basis.G;
        const double e_omega = (with_omega - with_diag).cwiseAbs().maxCoeff();
        worst_omega = std::max(worst_omega, e_omega);
        c.require(e_omega <= 1e-12, "Omega substitution");

        const MatrixXd A = oracle::random_matrix(rng, 4, 5);
        const VectorXd b = oracle::random_normal(rng, 4);
        const VectorXd x = oracle::random_normal(rng, 5, 0.5);
        auto f = [&](const VectorXd& z) { return VectorXd((A * z.array().exp().matrix()).cwiseProduct(b)); };
        const MatrixXd dy = x.array().exp().matrix().asDiagonal();
        const double e_lemma =
            oracle::rel_err(diag_chain_jacobian<double>(A, b, dy, MatrixXd::Identity(5, 5)), oracle::fd_jacobian(f, x));
        worst_lemma = std::max(worst_lemma, e_lemma);
        c.require(e_lemma <= 1e-6, "diag chain rule");
    }
    std::ostringstream s;
    s << "10 instances; inverse " << worst_inv << " (1e-9), Omega " << worst_omega << " (1e-12), lemma " << worst_lemma
      << " (1e-6)";
    return c.verdict(s.str());
}

StratifiedData<double> singletons(const VectorXd& y, const MatrixXd& X) {
    StratifiedData<double> data;
    data.q = X.cols();
    for (Index cell = 0; cell < y.size(); ++cell)
        for (int k = 0; k < static_cast<int>(y(cell)); ++k) {
            VectorXd e = VectorXd::Zero(y.size());
            e(cell) = 1.0;
            data.units.push_back({std::to_string(cell) + "." + std::to_string(k), e, X});
        }
    return data;
}

// 3 x 3 response with per-unit designs built from `covs` covariates on every coordinate.
StratifiedData<double> timing_data(std::mt19937_64& rng, int units, const MllpMatrices<double>& mats) {
    const Index dim = mats.dim();
    const int covs = 3;
    StratifiedData<double> data;
    data.q = dim * (covs + 1);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < units; ++i) {
        MatrixXd X = MatrixXd::Zero(dim, data.q);
        std::vector<double> x(covs);
        for (auto& v : x) v = z(rng);
        for (Index r = 0; r < dim; ++r) {
            X(r, r * (covs + 1)) = 1.0;
            for (int j = 0; j < covs; ++j) X(r, r * (covs + 1) + 1 + j) = x[static_cast<std::size_t>(j)];
        }
        data.units.push_back({std::to_string(i), oracle::random_counts(rng, 9, 2, 12), X});
    }
    return data;
}

double seconds_per_update(const StratifiedData<double>& data, const MllpMatrices<double>& mats,
                          const CanonicalBasis<double>& basis) {
    const std::vector<VectorXd> thetas(data.units.size(), VectorXd::Zero(basis.dim()));
    const VectorXd beta0 = VectorXd::Zero(data.q);
    const int reps = 20;
    double best = 1e300;
    for (int trial = 0; trial < 7; ++trial) {
        const auto start = std::chrono::steady_clock::now();
        double sink = 0;
        for (int r = 0; r < reps; ++r) sink += covariate_update<double>(thetas, data, mats, basis, beta0).beta(0);
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        if (!std::isfinite(sink)) return -1;
        best = std::min(best, dt.count() / reps);
    }
    return best;
}

Verdict covariate_module() {
    std::mt19937_64 rng(1006);
    Check c;
    const auto schema = build_schema({2, 3});
    auto model = make_model<double>(schema, multivariate_logistic_spec(2));
    const auto lin = zero_constraint<double>(5, model.mllp.coords_of(0b11));
    model.constraint = lin;
    FitOptions<double> opt;
    opt.algorithm = Algorithm::regression;
    double worst = 0;
    for (int k = 0; k < 5; ++k) {
        const VectorXd y = oracle::random_counts(rng, 6, 2, 9);
        const auto pooled = fit(y, model, opt);
        const auto indiv = fit_covariates(singletons(y, lin.X), model.mllp, model.basis, opt);
        c.require(pooled.converged && indiv.converged, "pooled or per-unit fit did not converge");
        if (!pooled.converged || !indiv.converged) continue;
        const double err = max_abs(indiv.beta - pooled.beta);
        worst = std::max(worst, err);
        c.require(err <= 1e-8, "pooled equivalence");
    }

    const auto schema3 = build_schema({3, 3});
    const auto basis3 = default_basis<double>(schema3);
    const auto mats3 = build_matrices<double>(multivariate_logistic_spec(2), schema3);
    const auto small = timing_data(rng, 10, mats3);
    const auto large = timing_data(rng, 100, mats3);
    const double t10 = seconds_per_update(small, mats3, basis3);
    const double t100 = seconds_per_update(large, mats3, basis3);
    const double ratio = t100 / t10;
    c.require(t10 > 0 && t100 > 0, "timing produced non-finite updates");
    c.require(ratio <= 15.0, "per-iteration time ratio " + std::to_string(ratio) + " exceeds 15");
    std::ostringstream s;
    s << "pooled equivalence worst " << worst << " (1e-8); per-iteration " << t10 * 1e3 << " ms at n=10, " << t100 * 1e3
      << " ms at n=100, ratio " << ratio << " (limit 15)";
    return c.verdict(s.str());
}

bool subgradient_ok(const Quadratic<double>& q, const VectorXd& nu, const VectorXd& x, double tol) {
    const VectorXd g = q.gradient(x);
    for (Index j = 0; j < x.size(); ++j) {
        if (x(j) != 0.0) {
            if (std::abs(g(j) - nu(j) * (x(j) > 0 ? 1.0 : -1.0)) > tol) return false;
        } else if (std::abs(g(j)) > nu(j) + tol) {
            return false;
        }
    }
    return true;
}

Verdict l1_module() {
    std::mt19937_64 rng(1007);
    Check c;

    const auto model = make_model<double>(build_schema({2, 3}), multivariate_logistic_spec(2));
    for (int k = 0; k < 5; ++k) {
        const VectorXd y = oracle::random_counts(rng, 6);
        const auto res = penalized_fit<double>(y, model, VectorXd::Zero(5));
        const VectorXd mle = eta_of_pi<double>(model.mllp, y / y.sum());
        c.require(res.fit.converged && max_abs(res.fit.eta - mle) <= 1e-8, "nu = 0 does not reproduce the MLE");
    }

    {
        const VectorXd y = oracle::random_counts(rng, 6);
        const auto res = penalized_fit<double>(y, model, VectorXd::Constant(5, 1e6));
        c.require(res.fit.converged && max_abs(res.fit.eta) == 0.0, "full shrinkage does not give eta = 0");
    }

    std::uniform_int_distribution<int> md(1, 8);
    std::uniform_real_distribution<double> nd(0.0, 3.0);
    for (int k = 0; k < 100; ++k) {
        const Index m = md(rng);
        const Quadratic<double> q{oracle::random_spd(rng, m), oracle::random_normal(rng, m, 2.0)};
        VectorXd nu(m);
        for (Index j = 0; j < m; ++j) nu(j) = nd(rng);
        const auto res = coordinate_ascent<double>(q, nu, oracle::random_normal(rng, m));
        c.require(res.converged && subgradient_ok(q, nu, res.x, 1e-6), "subgradient conditions");
    }

    double worst_lattice = 0;
    for (int k = 0; k < 3; ++k) {
        const Quadratic<double> q{oracle::random_spd(rng, 3), oracle::random_normal(rng, 3, 2.0)};
        const VectorXd nu = VectorXd::Constant(3, 0.5);
        const auto res = coordinate_ascent<double>(q, nu, VectorXd::Zero(3));
        auto phi = [&](const VectorXd& x) { return q.value(x) - nu.dot(x.cwiseAbs()); };
        const double err = max_abs(res.x - oracle::lattice_max(phi, VectorXd::Zero(3), 1.0, 1e-3));
        worst_lattice = std::max(worst_lattice, err);
        c.require(err <= 2e-3, "lattice oracle");
    }

    {
        const auto m22 = make_model<double>(build_schema({2, 2}), multivariate_logistic_spec(2));
        VectorXd pi(4);
        pi << 0.6 * 0.3, 0.6 * 0.7, 0.4 * 0.3, 0.4 * 0.7;
        const int n = 400;
        const VectorXd y = oracle::sample_counts(rng, pi, n);
        VectorXd nu = VectorXd::Zero(3);
        nu(2) = std::sqrt(n * std::log(n));
        const auto res = penalized_fit(y, m22, nu);
        c.require(res.fit.converged && res.fit.eta(2) == 0.0, "interaction-only penalty does not give an exact zero");
    }
    std::ostringstream s;
    s << "nu = 0, full shrinkage, 100 subgradient checks, lattice worst " << worst_lattice << " (2e-3), exact zero";
    return c.verdict(s.str());
}

Verdict stationarity(const std::vector<IndependenceRun>& runs) {
    Check c;
    double smallest = 1e300;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        for (const auto* res : {&runs[k].lag, &runs[k].reg}) {
            const std::string tag = "table " + std::to_string(k);
            if (!res->converged) {
                c.require(false, tag + " not converged");
                continue;
            }
            c.require(res->constraint_norm <= 1e-8, tag + " constraint norm");
            c.require(res->stationarity <= 1e-8, tag + " projected score");
            c.require(res->observed_info_eigenvalues.size() > 0, tag + " no eigenvalues");
            if (res->observed_info_eigenvalues.size()) smallest = std::min(smallest, res->observed_info_eigenvalues.minCoeff());
            c.require(res->local_max, tag + " not a local maximum");
        }
    }
    std::ostringstream s;
    s << "40 fits; smallest observed-information eigenvalue " << smallest;
    return c.verdict(s.str());
}

// Synthetic analogue of a 3 x 3 response (two ordinal outcomes) with 12
// covariates and 2000 individuals: father logits on intercept + age, every
// other coordinate on intercept + 11 covariates, 76 coefficients in all.
Verdict synthetic_recovery() {
    const std::uint64_t seed = 20240611;
    std::mt19937_64 rng(seed);
    const auto schema = build_schema({3, 3});
    const auto basis = default_basis<double>(schema);
    const auto mats = build_matrices<double>(multivariate_logistic_spec(2), schema);
    const Index dim = mats.dim();  // father logits 0-1, son logits 2-3, association 4-7
    const int n = 2000, others = 11;
    const Index q = 2 * 2 + 6 * (others + 1);

    VectorXd beta = VectorXd::Zero(q);
    std::uniform_real_distribution<double> slope(-0.35, 0.35);
    const double intercepts[] = {0.3, -0.4, 0.2, -0.3, 0.9, 0.4, 0.5, 1.1};
    Index j = 0;
    for (Index r = 0; r < dim; ++r) {
        beta(j++) = intercepts[r];
        const int covs = r < 2 ? 1 : others;
        for (int k = 0; k < covs; ++k) beta(j++) = slope(rng);
    }

    std::normal_distribution<double> z(0.0, 1.0);
    std::bernoulli_distribution coin(0.4);
    StratifiedData<double> data;
    data.q = q;
    for (int i = 0; i < n; ++i) {
        const double age = z(rng);
        std::vector<double> x(others);
        for (int k = 0; k < others; ++k) x[static_cast<std::size_t>(k)] = k % 2 ? z(rng) : (coin(rng) ? 1.0 : 0.0);
        MatrixXd X = MatrixXd::Zero(dim, q);
        Index col = 0;
        for (Index r = 0; r < dim; ++r) {
            X(r, col++) = 1.0;
            if (r < 2) {
                X(r, col++) = age;
            } else {
                for (int k = 0; k < others; ++k) X(r, col++) = x[static_cast<std::size_t>(k)];
            }
        }
        const VectorXd theta = theta_of_eta(mats, basis, VectorXd(X * beta), VectorXd(VectorXd::Zero(dim)));
        data.units.push_back({std::to_string(i), oracle::sample_counts(rng, theta_to_pi(theta, basis), 1), X});
    }

    FitOptions<double> opt;
    opt.algorithm = Algorithm::regression;
    const auto res = fit_covariates(data, mats, basis, opt);
    Check c;
    c.require(res.converged, "fit did not converge: " + res.message);
    if (!res.converged) return c.verdict("seed " + std::to_string(seed));
    const VectorXd se = res.standard_errors();
    double worst = 0;
    int outside = 0;
    for (Index k = 0; k < q; ++k) {
        const double zscore = std::abs(res.beta(k) - beta(k)) / se(k);
        worst = std::max(worst, zscore);
        if (zscore > 3.0) ++outside;
    }
    c.require(outside == 0, std::to_string(outside) + " coefficient(s) outside 3 SE");
    c.require(res.local_max, "not a local maximum");
    std::ostringstream s;
    s << "n = " << n << ", " << q << " coefficients, seed " << seed << ", " << res.iterations
      << " iterations, largest |error|/SE " << worst << " (limit 3)";
    return c.verdict(s.str());
}

}  // namespace

int main() {
    std::vector<IndependenceRun> runs;
    bool all = true;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& f) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = f();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        all = all && v.pass;
        std::printf("%s criterion %d %s: %s [%.2fs]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), dt.count());
        std::fflush(stdout);
    };
    report(1, "update equivalence", update_equivalence);
    report(2, "projection identity", projection_identity);
    report(3, "independence oracle", [&] {
        runs = independence_runs();
        return independence_oracle(runs);
    });
    report(4, "derivative checks", derivative_checks);
    report(5, "fast paths", fast_paths);
    report(6, "covariate module", covariate_module);
    report(7, "L1 module", l1_module);
    report(8, "stationarity and verification", [&] {
        if (runs.empty()) runs = independence_runs();
        return stationarity(runs);
    });
    report(9, "synthetic covariate recovery", synthetic_recovery);
    return all ? 0 : 1;
}
