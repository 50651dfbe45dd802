#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "marginfit/errors.hpp"

namespace marginfit::io {

// An input problem tied to a position in a file.
class LocatedError : public InputError {
public:
    LocatedError(const std::string& file, std::size_t line, const std::string& msg)
        : InputError(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg) {}
};

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> cells;
};

struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<CsvRow> rows;
    std::size_t header_line = 0;

    // -1 when absent
    int column(const std::string& name) const;
    int require_column(const std::string& name) const;
};

// Comma-separated, optional double quotes, '#' comment lines and blank lines skipped.
CsvTable read_csv(const std::string& path, bool has_header);

double parse_number(const std::string& text, const std::string& file, std::size_t line);

// A numeric matrix; a first row that is not numeric is taken as a header and skipped.
Eigen::MatrixXd read_matrix(const std::string& path);

}  // namespace marginfit::io
