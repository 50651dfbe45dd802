#include <doctest.h>

#include <random>

#include "marginfit/covariate.hpp"
#include "oracles.hpp"

using namespace marginfit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Splits a table into one-hot individuals sharing design X.
StratifiedData<double> singletons(const VectorXd& y, const MatrixXd& X) {
    StratifiedData<double> data;
    data.q = X.cols();
    for (Index c = 0; c < y.size(); ++c) {
        for (int k = 0; k < static_cast<int>(y(c)); ++k) {
            VectorXd e = VectorXd::Zero(y.size());
            e(c) = 1.0;
            data.units.push_back({std::to_string(c) + "." + std::to_string(k), e, X});
        }
    }
    return data;
}

}  // namespace

TEST_CASE("covariate_update with a shared design equals the pooled regression update") {
    std::mt19937_64 rng(61);
    const auto schema = build_schema({2, 3});
    const auto basis = default_basis<double>(schema);
    const auto mats = build_matrices<double>(multivariate_logistic_spec(2), schema);
    const VectorXd y = oracle::random_counts(rng, 6, 1, 6);
    const MatrixXd X = oracle::random_matrix(rng, 5, 3);
    const auto data = singletons(y, X);
    const VectorXd theta0 = oracle::random_normal(rng, 5, 0.4);
    const std::vector<VectorXd> thetas(data.units.size(), theta0);

    const auto pooled = regression_update<double>(make_state(theta0, y, basis), X, mats, basis);
    const auto step = covariate_update<double>(thetas, data, mats, basis, VectorXd::Zero(3));
    CHECK((step.beta - pooled.beta).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((step.thetas.front() - pooled.theta).cwiseAbs().maxCoeff() < 1e-9);

    // the proposal does not depend on beta0
    const auto shifted = covariate_update<double>(thetas, data, mats, basis, oracle::random_normal(rng, 3));
    CHECK((shifted.beta - step.beta).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("identity design and one stratum reduce to regression_update") {
    std::mt19937_64 rng(62);
    const auto schema = build_schema({2, 2});
    const auto basis = default_basis<double>(schema);
    const auto mats = build_matrices<double>(multivariate_logistic_spec(2), schema);
    const VectorXd y = oracle::random_counts(rng, 4);
    const MatrixXd I = MatrixXd::Identity(3, 3);
    StratifiedData<double> data{{{"all", y, I}}, 3, {}};
    const VectorXd theta0 = oracle::random_normal(rng, 3, 0.4);
    const auto a = covariate_update<double>({theta0}, data, mats, basis, VectorXd::Zero(3));
    const auto b = regression_update<double>(make_state(theta0, y, basis), I, mats, basis);
    CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.thetas[0] - b.theta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_covariates: pooled equivalence, single stratum, count scaling") {
    std::mt19937_64 rng(63);
    const auto schema = build_schema({2, 3});
    const auto spec = multivariate_logistic_spec(2);
    auto model = make_model<double>(schema, spec);
    // main effects only
    const auto lin = zero_constraint<double>(5, model.mllp.coords_of(0b11));
    model.constraint = lin;
    FitOptions<double> opt;
    opt.algorithm = Algorithm::regression;

    const VectorXd y = oracle::random_counts(rng, 6, 3, 9);
    const auto pooled = fit(y, model, opt);
    REQUIRE(pooled.converged);

    const auto indiv = fit_covariates(singletons(y, lin.X), model.mllp, model.basis, opt);
    REQUIRE(indiv.converged);
    CHECK((indiv.beta - pooled.beta).cwiseAbs().maxCoeff() < 1e-8);

    // three strata with the same design, cells split at random
    StratifiedData<double> strata{{}, lin.X.cols(), {}};
    VectorXd remaining = y;
    for (int s = 0; s < 3; ++s) {
        VectorXd part = VectorXd::Zero(6);
        for (Index c = 0; c < 6; ++c) {
            std::uniform_int_distribution<int> d(0, static_cast<int>(remaining(c)));
            part(c) = s == 2 ? remaining(c) : d(rng);
            remaining(c) -= part(c);
        }
        strata.units.push_back({"s" + std::to_string(s), part, lin.X});
    }
    const auto split = fit_covariates(strata, model.mllp, model.basis, opt);
    REQUIRE(split.converged);
    CHECK((split.beta - pooled.beta).cwiseAbs().maxCoeff() < 1e-8);

    StratifiedData<double> one{{{"all", y, lin.X}}, lin.X.cols(), {}};
    const auto single = fit_covariates(one, model.mllp, model.basis, opt);
    REQUIRE(single.converged);
    CHECK((single.beta - pooled.beta).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((single.pis[0] - pooled.pi).cwiseAbs().maxCoeff() < 1e-10);

    auto doubled = strata;
    for (auto& u : doubled.units) u.y *= 2.0;
    const auto twice = fit_covariates(doubled, model.mllp, model.basis, opt);
    REQUIRE(twice.converged);
    CHECK((twice.beta - split.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("binary covariate recovery") {
    std::mt19937_64 rng(64);
    const auto schema = build_schema({2, 2});
    const auto basis = default_basis<double>(schema);
    const auto mats = build_matrices<double>(multivariate_logistic_spec(2), schema);
    // eta = (a + b x, c, d)
    VectorXd beta(4);
    beta << 0.2, -0.6, 0.4, 0.8;
    StratifiedData<double> data{{}, 4, {"a", "b", "c", "d"}};
    for (int x = 0; x < 2; ++x) {
        MatrixXd X = MatrixXd::Zero(3, 4);
        X(0, 0) = 1;
        X(0, 1) = x;
        X(1, 2) = 1;
        X(2, 3) = 1;
        const VectorXd th = theta_of_eta(mats, basis, VectorXd(X * beta), VectorXd(VectorXd::Zero(3)));
        data.units.push_back({"x" + std::to_string(x), oracle::sample_counts(rng, theta_to_pi(th, basis), 500), X});
    }
    FitOptions<double> opt;
    const auto res = fit_covariates(data, mats, basis, opt);
    REQUIRE(res.converged);
    const VectorXd se = res.standard_errors();
    for (Index j = 0; j < 4; ++j) CHECK(std::abs(res.beta(j) - beta(j)) < 3.0 * se(j));
    CHECK(res.stationarity <= 1e-8);
}

TEST_CASE("collinear covariate design names the deficient column") {
    const auto schema = build_schema({2, 2});
    const auto basis = default_basis<double>(schema);
    const auto mats = build_matrices<double>(multivariate_logistic_spec(2), schema);
    StratifiedData<double> data{{}, 4, {"int1", "int2", "int3", "dup"}};
    for (int s = 0; s < 3; ++s) {
        MatrixXd X = MatrixXd::Zero(3, 4);
        X(0, 0) = X(1, 1) = X(2, 2) = 1;
        X(0, 3) = 1;  // copy of the first intercept
        data.units.push_back({"s", VectorXd::Constant(4, 5.0), X});
    }
    try {
        covariate_update<double>(std::vector<VectorXd>(3, VectorXd::Zero(3)), data, mats, basis, VectorXd::Zero(4));
        FAIL("expected SingularError");
    } catch (const SingularError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("collinear") != std::string::npos);
        CHECK((msg.find("int1") != std::string::npos || msg.find("dup") != std::string::npos));
    }
}

TEST_CASE("empty strata are skipped and bad shapes rejected") {
    const auto schema = build_schema({2, 2});
    const auto basis = default_basis<double>(schema);
    const auto mats = build_matrices<double>(saturated_spec(2), schema);
    const MatrixXd I = MatrixXd::Identity(3, 3);
    StratifiedData<double> data{{{"a", VectorXd::Constant(4, 3.0), I}, {"b", VectorXd::Zero(4), I}}, 3, {}};
    const auto res = fit_covariates(data, mats, basis);
    CHECK(res.converged);
    CHECK(res.pis.size() == 1);

    StratifiedData<double> bad{{{"a", VectorXd::Constant(4, 3.0), MatrixXd::Identity(3, 2)}}, 3, {}};
    CHECK_THROWS_AS(fit_covariates(bad, mats, basis), InputError);
}
