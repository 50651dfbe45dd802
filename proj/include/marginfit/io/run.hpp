#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "marginfit/io/report.hpp"
#include "marginfit/solver.hpp"

namespace marginfit::io {

struct RunFlags {
    std::optional<Algorithm> algorithm;
    std::optional<int> max_iter;
    std::optional<double> tol;
    std::optional<int> multi_start;
    std::optional<std::uint64_t> seed;
    bool path = false;
    bool trace = false;
    std::string text_path;  // empty: text report goes to `out`
    bool quiet = false;
};

struct RunOutcome {
    int exit_code = 1;
    Json report;
};

// Fits the model and writes the structured report to `output_path` ("-" for
// `out`). Exit codes: 0 converged, 2 not converged (report still written),
// 1 input error (message on `err`).
int run(const std::string& model_path, const std::string& data_path, const std::string& output_path,
        const RunFlags& flags, std::ostream& out, std::ostream& err);

// The same without touching the filesystem for output.
RunOutcome run_report(const std::string& model_path, const std::string& data_path, const RunFlags& flags);

// Prints the validity report for the model's parameterization; 0 when valid.
int validate(const std::string& model_path, std::ostream& out, std::ostream& err);

}  // namespace marginfit::io
