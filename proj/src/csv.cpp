#include "marginfit/io/csv.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>

namespace marginfit::io {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_line(const std::string& line, const std::string& file, std::size_t lineno) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = was_quoted = true;
        } else if (ch == ',') {
            out.push_back(was_quoted ? cur : trim(cur));
            cur.clear();
            was_quoted = false;
        } else {
            cur += ch;
        }
    }
    if (quoted) throw LocatedError(file, lineno, "unterminated quoted field");
    out.push_back(was_quoted ? cur : trim(cur));
    return out;
}

bool numeric(const std::string& s) {
    if (s.empty()) return false;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return end && *end == '\0';
}

}  // namespace

int CsvTable::column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return static_cast<int>(j);
    return -1;
}

int CsvTable::require_column(const std::string& name) const {
    const int j = column(name);
    if (j < 0) throw LocatedError(path, header_line, "missing column '" + name + "'");
    return j;
}

CsvTable read_csv(const std::string& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw InputError(path + ": cannot open file");
    CsvTable table;
    table.path = path;
    std::string line;
    std::size_t lineno = 0;
    bool need_header = has_header;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto cells = split_line(line, path, lineno);
        if (need_header) {
            table.header = std::move(cells);
            table.header_line = lineno;
            need_header = false;
            continue;
        }
        const std::size_t width = has_header ? table.header.size() : (table.rows.empty() ? cells.size() : table.rows[0].cells.size());
        if (cells.size() != width) {
            throw LocatedError(path, lineno, "expected " + std::to_string(width) + " fields, found " +
                                                 std::to_string(cells.size()));
        }
        table.rows.push_back({lineno, std::move(cells)});
    }
    if (need_header) throw InputError(path + ": file is empty");
    return table;
}

double parse_number(const std::string& text, const std::string& file, std::size_t line) {
    if (text.empty()) throw LocatedError(file, line, "empty numeric field");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(text.c_str(), &end);
    if (!end || *end != '\0' || errno == ERANGE) throw LocatedError(file, line, "'" + text + "' is not a number");
    return v;
}

Eigen::MatrixXd read_matrix(const std::string& path) {
    CsvTable t = read_csv(path, false);
    if (!t.rows.empty()) {
        bool all_numeric = true;
        for (const auto& c : t.rows[0].cells) all_numeric = all_numeric && numeric(c);
        if (!all_numeric) t.rows.erase(t.rows.begin());
    }
    if (t.rows.empty()) throw InputError(path + ": matrix file has no rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.rows[0].cells.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        if (r.cells.size() != static_cast<std::size_t>(m.cols())) {
            throw LocatedError(path, r.line, "expected " + std::to_string(m.cols()) + " fields");
        }
        for (std::size_t j = 0; j < r.cells.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_number(r.cells[j], path, r.line);
    }
    return m;
}

}  // namespace marginfit::io
