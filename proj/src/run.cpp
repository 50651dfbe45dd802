#include "marginfit/io/run.hpp"

#include <fstream>
#include <ostream>

#include "marginfit/covariate.hpp"
#include "marginfit/io/data.hpp"
#include "marginfit/io/model_file.hpp"
#include "marginfit/penalty.hpp"

namespace marginfit::io {

namespace {

Json numbers(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

std::string cell_label(const ModelFile& mf, Index cell) {
    const auto lv = mf.schema.cell_of(cell);
    std::string s;
    for (std::size_t j = 0; j < lv.size(); ++j) s += (j ? "," : "") + mf.variables[j] + "=" + std::to_string(lv[j] + 1);
    return s;
}

Json labelled(const std::vector<std::string>& names, const Eigen::VectorXd& v, const char* key = "name") {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) {
        Json row;
        row[key] = static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)]
                                                               : "beta" + std::to_string(i + 1);
        row["value"] = v(i);
        a.push_back(row);
    }
    return a;
}

Json pi_table(const ModelFile& mf, const Eigen::VectorXd& pi) {
    Json a = Json::array();
    for (Index i = 0; i < pi.size(); ++i) a.push_back({{"cell", cell_label(mf, i)}, {"value", pi(i)}});
    return a;
}

Json trace_table(const std::vector<TraceEntry>& trace) {
    Json a = Json::array();
    for (const auto& e : trace)
        a.push_back({{"iteration", e.iteration},
                     {"loglik", e.loglik},
                     {"constraint_norm", e.constraint_norm},
                     {"stationarity", e.stationarity},
                     {"step", e.step},
                     {"halvings", e.halvings}});
    return a;
}

const char* algorithm_name(Algorithm a) { return a == Algorithm::lagrangian ? "lagrangian" : "regression"; }

// beta names for a linear model: eta labels for selection columns, beta1.. otherwise
std::vector<std::string> beta_names(const Eigen::MatrixXd& X, const std::vector<std::string>& eta) {
    std::vector<std::string> out;
    for (Index j = 0; j < X.cols(); ++j) {
        Index hit = -1;
        bool unit = true;
        for (Index i = 0; i < X.rows(); ++i) {
            if (X(i, j) == 0.0) continue;
            if (X(i, j) != 1.0 || hit >= 0) unit = false;
            hit = i;
        }
        out.push_back(unit && hit >= 0 ? eta[static_cast<std::size_t>(hit)] : "beta" + std::to_string(j + 1));
    }
    return out;
}

// the eta coordinate each beta selects, or -1
std::vector<Index> beta_coords(const Eigen::MatrixXd& X) {
    std::vector<Index> out;
    for (Index j = 0; j < X.cols(); ++j) {
        Index hit = -1;
        int nonzero = 0;
        for (Index i = 0; i < X.rows(); ++i)
            if (X(i, j) != 0.0) {
                ++nonzero;
                hit = X(i, j) == 1.0 ? i : -1;
            }
        out.push_back(nonzero == 1 ? hit : -1);
    }
    return out;
}

FitOptions<double> effective_options(const ModelFile& mf, const RunFlags& flags) {
    FitOptions<double> o = mf.options;
    if (flags.algorithm) o.algorithm = *flags.algorithm;
    if (flags.max_iter) {
        if (*flags.max_iter < 1) throw InputError("--max-iter must be at least 1");
        o.max_iter = *flags.max_iter;
    }
    if (flags.tol) {
        if (!(*flags.tol > 0)) throw InputError("--tol must be positive");
        o.tol_constraint = o.tol_score = *flags.tol;
    }
    return o;
}

Json header(const ModelFile& mf, const std::string& model_path, const std::string& data_path, const char* mode) {
    Json r;
    r["model"] = model_path;
    r["data"] = data_path;
    r["mode"] = mode;
    r["cells"] = mf.schema.cells();
    return r;
}

int exit_for(bool ok) { return ok ? 0 : 2; }

RunOutcome run_plain(const ModelFile& mf, const MarginalModel<double>& model, const Eigen::VectorXd& y,
                     const FitOptions<double>& opt, const RunFlags& flags, Json r) {
    const int extra = flags.multi_start.value_or(mf.multi_start);
    if (extra < 0) throw InputError("--multi-start must be nonnegative");
    const std::uint64_t seed = flags.seed.value_or(mf.seed);
    FitResult<double> res;
    Json starts = Json::array();
    if (extra > 0) {
        auto ms = fit_multistart(y, model, opt, extra, seed);
        for (std::size_t k = 0; k < ms.runs.size(); ++k) {
            const auto& run = ms.runs[k];
            starts.push_back({{"start", k == 0 ? std::string("configured") : "random " + std::to_string(k)},
                              {"status", to_string(run.status)},
                              {"iterations", run.iterations},
                              {"loglik", run.loglik}});
        }
        res = std::move(ms.runs[ms.best]);
    } else {
        res = fit(y, model, opt);
    }
    const auto eta_names = eta_labels(mf, model.mllp);
    r["algorithm"] = algorithm_name(opt.algorithm);
    r["status"] = to_string(res.status);
    r["converged"] = res.converged;
    r["message"] = res.message;
    r["iterations"] = res.iterations;
    r["loglik"] = res.loglik;
    r["constraint_norm"] = res.constraint_norm;
    r["stationarity"] = res.stationarity;
    r["local_max"] = res.local_max;
    r["observed_info_eigenvalues"] = numbers(res.observed_info_eigenvalues);
    if (extra > 0) {
        r["seed"] = seed;
        r["multi_start"] = starts;
    }
    r["eta"] = labelled(eta_names, res.eta, "coordinate");
    if (const auto* lin = std::get_if<LinearConstraint<double>>(&model.constraint))
        r["beta"] = labelled(beta_names(lin->X, eta_names), res.beta);
    if (res.lambda.size()) r["lambda"] = numbers(res.lambda);
    r["pi"] = pi_table(mf, res.pi);
    if (flags.trace || mf.trace) r["trace"] = trace_table(res.trace);
    return {exit_for(res.converged), r};
}

RunOutcome run_covariates(const ModelFile& mf, const MarginalModel<double>& model, const std::string& data_path,
                          const FitOptions<double>& opt, const RunFlags& flags, Json r) {
    const auto data = read_strata(data_path, mf, model.mllp);
    const auto res = fit_covariates(data, model.mllp, model.basis, opt);
    r["algorithm"] = "regression";
    r["status"] = to_string(res.status);
    r["converged"] = res.converged;
    r["message"] = res.message;
    r["iterations"] = res.iterations;
    r["units"] = res.ids.size();
    r["loglik"] = res.loglik;
    r["constraint_norm"] = res.constraint_norm;
    r["stationarity"] = res.stationarity;
    r["local_max"] = res.local_max;
    r["observed_info_eigenvalues"] = numbers(res.observed_info_eigenvalues);
    Json beta = Json::array();
    const Eigen::VectorXd se = res.covariance.size() ? res.standard_errors() : Eigen::VectorXd();
    for (Index j = 0; j < res.beta.size(); ++j) {
        Json row;
        row["name"] = static_cast<std::size_t>(j) < data.column_names.size() ? data.column_names[static_cast<std::size_t>(j)]
                                                                          : "beta" + std::to_string(j + 1);
        row["value"] = res.beta(j);
        if (se.size()) row["se"] = se(j);
        beta.push_back(row);
    }
    r["beta"] = beta;
    Json strata = Json::array();
    for (std::size_t i = 0; i < res.pis.size(); ++i) {
        Json row;
        row["id"] = res.ids[i];
        row["pi"] = numbers(res.pis[i]);
        strata.push_back(row);
    }
    r["strata"] = strata;
    if (flags.trace || mf.trace) r["trace"] = trace_table(res.trace);
    return {exit_for(res.converged), r};
}

PenaltySpec<double> penalty_spec(const ModelFile& mf, const MarginalModel<double>& model) {
    const auto& lin = detail::penalized_constraint(model);
    PenaltySpec<double> spec;
    spec.nu = mf.penalty.nu;
    spec.adaptive = mf.penalty.adaptive;
    spec.grid = mf.penalty.grid;
    const auto coords = beta_coords(lin.X);
    spec.weights = Eigen::VectorXd::Constant(lin.X.cols(), mf.penalty.default_weight);
    if (!mf.penalty.weights.empty()) {
        for (std::size_t j = 0; j < coords.size(); ++j) {
            if (coords[j] < 0)
                throw InputError(mf.path + ": per-effect penalty weights need zero-type constraints (or none)");
            const VarSet e = model.mllp.labels[static_cast<std::size_t>(coords[j])].effect;
            const auto it = mf.penalty.weights.find(e);
            if (it != mf.penalty.weights.end()) spec.weights(static_cast<Index>(j)) = it->second;
        }
        for (const auto& [e, w] : mf.penalty.weights) {
            bool found = false;
            for (Index c : coords)
                found = found || (c >= 0 && model.mllp.labels[static_cast<std::size_t>(c)].effect == e);
            if (!found) throw InputError(mf.path + ": penalty effect " + mf.effect_name(e) + " has no free coordinate");
        }
    }
    return spec;
}

RunOutcome run_penalized(const ModelFile& mf, const MarginalModel<double>& model, const Eigen::VectorXd& y,
                         const FitOptions<double>& opt, const RunFlags& flags, Json r) {
    const auto spec = penalty_spec(mf, model);
    const auto& lin = detail::penalized_constraint(model);
    const auto eta_names = eta_labels(mf, model.mllp);
    const auto names = beta_names(lin.X, eta_names);
    r["algorithm"] = "regression";
    r["adaptive"] = spec.adaptive;
    if (flags.path) {
        if (spec.grid.empty()) throw InputError(mf.path + ": --path needs a penalty grid");
        const auto path = penalty_path(y, model, spec, opt);
        bool all = true;
        Json rows = Json::array();
        for (const auto& p : path) {
            all = all && p.converged;
            std::string zeros;
            std::size_t count = 0;
            for (std::size_t j = 0; j < p.zero.size(); ++j)
                if (p.zero[j]) {
                    zeros += (count++ ? " " : "") + names[j];
                }
            rows.push_back({{"nu", p.nu},
                            {"converged", p.converged},
                            {"iterations", p.iterations},
                            {"loglik", p.loglik},
                            {"objective", p.objective},
                            {"zeros", count},
                            {"zero_coordinates", zeros}});
        }
        r["status"] = all ? "converged" : "not converged";
        r["converged"] = all;
        r["path"] = rows;
        Json etas = Json::array();
        for (const auto& p : path) etas.push_back({{"nu", p.nu}, {"eta", numbers(p.eta)}});
        r["path_eta"] = etas;
        return {exit_for(all), r};
    }
    Eigen::VectorXd pilot;
    if (spec.adaptive) {
        const auto unpen = penalized_fit<double>(y, model, Eigen::VectorXd::Zero(lin.X.cols()), opt);
        if (!unpen.fit.converged) throw InputError(mf.path + ": adaptive weights need a converged pilot fit");
        pilot = unpen.fit.beta;
    }
    const Eigen::VectorXd nu = penalty_vector(spec, spec.nu, spec.adaptive ? &pilot : nullptr);
    const auto res = penalized_fit(y, model, nu, opt);
    r["nu"] = spec.nu;
    r["status"] = to_string(res.fit.status);
    r["converged"] = res.fit.converged;
    r["message"] = res.fit.message;
    r["iterations"] = res.fit.iterations;
    r["loglik"] = res.fit.loglik;
    r["objective"] = res.objective;
    r["constraint_norm"] = res.fit.constraint_norm;
    r["inner_sweep_limit_hit"] = res.inner_sweep_limit_hit;
    Json sparse = Json::array();
    for (Index j = 0; j < res.fit.beta.size(); ++j)
        sparse.push_back({{"name", names[static_cast<std::size_t>(j)]},
                          {"value", res.fit.beta(j)},
                          {"penalty", nu(j)},
                          {"zero", static_cast<bool>(res.zero[static_cast<std::size_t>(j)])}});
    r["beta"] = sparse;
    r["eta"] = labelled(eta_names, res.fit.eta, "coordinate");
    r["pi"] = pi_table(mf, res.fit.pi);
    if (flags.trace || mf.trace) r["trace"] = trace_table(res.fit.trace);
    return {exit_for(res.fit.converged), r};
}

}  // namespace

RunOutcome run_report(const std::string& model_path, const std::string& data_path, const RunFlags& flags) {
    const ModelFile mf = parse_model_file(model_path);
    const auto model = build_model(mf);
    FitOptions<double> opt = effective_options(mf, flags);
    if (mf.covariates.present) {
        if (opt.algorithm == Algorithm::lagrangian && (flags.algorithm || mf.algorithm_set))
            throw InputError("covariate models are fitted with the regression algorithm; --algorithm lagrangian "
                             "is not available");
        if (flags.path) throw InputError("--path needs a penalty block");
        if (flags.multi_start.value_or(0) > 0) throw InputError("--multi-start is not available for covariate models");
        opt.algorithm = Algorithm::regression;
        return run_covariates(mf, model, data_path, opt, flags, header(mf, model_path, data_path, "covariates"));
    }
    const Eigen::VectorXd y = read_counts(data_path, mf);
    if (y.sum() <= 0) throw InputError(data_path + ": counts sum to zero");
    if (mf.penalty.present) {
        if (flags.algorithm == Algorithm::lagrangian)
            throw InputError("penalized fits use the regression quadratic; --algorithm lagrangian is not available");
        return run_penalized(mf, model, y, opt, flags,
                             header(mf, model_path, data_path, flags.path ? "penalty_path" : "penalized"));
    }
    if (flags.path) throw InputError("--path needs a penalty block in the model file");
    return run_plain(mf, model, y, opt, flags, header(mf, model_path, data_path, "fit"));
}

int run(const std::string& model_path, const std::string& data_path, const std::string& output_path,
        const RunFlags& flags, std::ostream& out, std::ostream& err) {
    RunOutcome outcome;
    try {
        outcome = run_report(model_path, data_path, flags);
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    const std::string structured = outcome.report.dump(2) + "\n";
    const std::string text = render_text(outcome.report);
    if (output_path == "-") {
        out << structured;
    } else {
        std::ofstream f(output_path, std::ios::binary);
        if (!f) {
            err << "error: " << output_path << ": cannot write report\n";
            return 1;
        }
        f << structured;
    }
    if (!flags.text_path.empty()) {
        std::ofstream f(flags.text_path, std::ios::binary);
        if (!f) {
            err << "error: " << flags.text_path << ": cannot write text report\n";
            return 1;
        }
        f << text;
    } else if (!flags.quiet && output_path != "-") {
        out << text;
    }
    if (outcome.exit_code != 0) {
        err << "warning: fit did not converge";
        if (outcome.report.contains("message") && !outcome.report["message"].get<std::string>().empty())
            err << ": " << outcome.report["message"].get<std::string>();
        err << '\n';
    }
    return outcome.exit_code;
}

int validate(const std::string& model_path, std::ostream& out, std::ostream& err) {
    try {
        const ModelFile mf = parse_model_file(model_path);
        const auto rep = validate_spec(mf.spec, mf.schema);
        out << "complete: " << (rep.complete ? "true" : "false") << '\n';
        out << "hierarchical: " << (rep.hierarchical ? "true" : "false") << '\n';
        for (const auto& v : rep.violations) out << "violation: " << mf.named(v) << '\n';
        if (!rep.complete || !rep.hierarchical) return 1;
        build_model(mf);
        out << "model: ok\n";
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace marginfit::io
