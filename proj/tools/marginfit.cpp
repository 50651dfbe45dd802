#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "marginfit/io/run.hpp"

int main(int argc, char** argv) {
    using marginfit::Algorithm;
    CLI::App app{"Maximum likelihood fitting of marginal log-linear models for contingency tables"};
    app.require_subcommand(1);

    marginfit::io::RunFlags flags;
    std::string model_path, data_path, output_path = "-";
    std::optional<std::string> algorithm;
    std::optional<int> max_iter, multi_start;
    std::optional<double> tol;
    std::optional<std::uint64_t> seed;

    auto* fit = app.add_subcommand("fit", "fit a model to data");
    fit->add_option("model", model_path, "model file (YAML)")->required()->check(CLI::ExistingFile);
    fit->add_option("data", data_path, "data file (CSV)")->required()->check(CLI::ExistingFile);
    fit->add_option("-o,--output", output_path, "JSON report path, - for stdout");
    fit->add_option("--algorithm", algorithm, "lagrangian or regression")
        ->check(CLI::IsMember({"lagrangian", "regression"}));
    fit->add_option("--max-iter", max_iter, "iteration limit");
    fit->add_option("--tol", tol, "convergence tolerance on constraint and score");
    fit->add_option("--multi-start", multi_start, "number of extra random starts");
    fit->add_option("--seed", seed, "seed for random starts")->envname("MARGINFIT_SEED");
    fit->add_flag("--path", flags.path, "fit along the penalty grid");
    fit->add_flag("--trace", flags.trace, "include the iteration trace");
    fit->add_option("--text", flags.text_path, "write the text report to a file");
    fit->add_flag("-q,--quiet", flags.quiet, "no text report on stdout");

    std::string validate_path;
    auto* val = app.add_subcommand("validate", "check a model file");
    val->add_option("model", validate_path, "model file (YAML)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*val) return marginfit::io::validate(validate_path, std::cout, std::cerr);

    if (algorithm) flags.algorithm = *algorithm == "lagrangian" ? Algorithm::lagrangian : Algorithm::regression;
    flags.max_iter = max_iter;
    flags.tol = tol;
    flags.multi_start = multi_start;
    flags.seed = seed;
    return marginfit::io::run(model_path, data_path, output_path, flags, std::cout, std::cerr);
}
