#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "marginfit/mllp.hpp"
#include "marginfit/solver.hpp"
#include "marginfit/table.hpp"

namespace marginfit::io {

// Where a block starts in the model file, for error messages.
struct Mark {
    std::size_t line = 0;
    std::size_t column = 0;
};

enum class ConstraintKind { none, zero, K, X, general };

struct ConstraintBlock {
    ConstraintKind kind = ConstraintKind::none;
    std::vector<VarSet> zero_effects;
    Eigen::MatrixXd matrix;         // K, X, or A
    std::vector<VarSet> margins;    // general: margins stacked into M
    Mark mark;
};

struct CovariateBlock {
    bool present = false;
    std::string stratum;                       // empty: every row is a unit
    std::vector<std::string> columns;
    std::map<VarSet, std::vector<std::string>> formula;
    std::string design_path;                   // explicit per-stratum X_i rows
    Mark mark;
};

struct PenaltyBlock {
    bool present = false;
    double nu = 0;
    double default_weight = 1;
    std::map<VarSet, double> weights;          // by effect
    bool adaptive = false;
    std::vector<double> grid;
    Mark mark;
};

struct ModelFile {
    std::string path;
    std::vector<std::string> variables;
    TableSchema schema;
    MllpSpec spec;
    Mark mllp_mark;
    ConstraintBlock constraint;
    CovariateBlock covariates;
    PenaltyBlock penalty;
    FitOptions<double> options;
    bool algorithm_set = false;
    int multi_start = 0;
    std::uint64_t seed = 1;
    bool trace = false;

    // "A:B" style name of an effect
    std::string effect_name(VarSet e) const;
    // replaces "{1,2}" style sets in a message by effect names
    std::string named(std::string msg) const;
};

// Parses and checks a model file. Errors are InputError with "path:line:col:" prefixes.
ModelFile parse_model_file(const std::string& path);
ModelFile parse_model_text(const std::string& text, const std::string& path, const std::string& base_dir);

// Builds the fitting model; throws located errors for invalid specs or constraints.
MarginalModel<double> build_model(const ModelFile& mf);

}  // namespace marginfit::io
