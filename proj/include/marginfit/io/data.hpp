#pragma once

#include <string>

#include <Eigen/Dense>

#include "marginfit/covariate.hpp"
#include "marginfit/io/model_file.hpp"

namespace marginfit::io {

// Counts from a CSV: a single row of t counts in lexicographic order, or long
// format with one column per variable (levels 1..c) and a `count` column.
Eigen::VectorXd read_counts(const std::string& path, const ModelFile& mf);

// Stratified data for a covariate model. Each row holds an optional stratum id,
// covariate values, the response as variable columns or a 1-based `cell`, and
// an optional `count` (default 1).
StratifiedData<double> read_strata(const std::string& path, const ModelFile& mf, const MllpMatrices<double>& mats);

// Names of the beta coordinates for a non-covariate linear model.
std::vector<std::string> eta_labels(const ModelFile& mf, const MllpMatrices<double>& mats);

}  // namespace marginfit::io
