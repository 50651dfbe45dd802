#include "marginfit/io/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "marginfit/io/csv.hpp"

namespace marginfit::io {

namespace {

int parse_level(const CsvTable& t, const CsvRow& r, int col, int levels) {
    const double v = parse_number(r.cells[static_cast<std::size_t>(col)], t.path, r.line);
    if (v != std::floor(v) || v < 1 || v > levels) {
        throw LocatedError(t.path, r.line, "level '" + r.cells[static_cast<std::size_t>(col)] + "' of '" +
                                               t.header[static_cast<std::size_t>(col)] + "' must be an integer in 1.." +
                                               std::to_string(levels));
    }
    return static_cast<int>(v) - 1;
}

double parse_count(const CsvTable& t, const CsvRow& r, int col) {
    const double v = parse_number(r.cells[static_cast<std::size_t>(col)], t.path, r.line);
    if (!(v >= 0) || !std::isfinite(v)) throw LocatedError(t.path, r.line, "counts must be nonnegative");
    return v;
}

// Cell index from variable columns or a `cell` column.
struct CellReader {
    std::vector<int> var_cols;
    int cell_col = -1;

    CellReader(const CsvTable& t, const ModelFile& mf) {
        cell_col = t.column("cell");
        if (cell_col >= 0) return;
        for (const auto& v : mf.variables) {
            const int j = t.column(v);
            if (j < 0)
                throw LocatedError(t.path, t.header_line,
                                   "missing column for variable '" + v + "' (or give a 'cell' column)");
            var_cols.push_back(j);
        }
    }

    Index operator()(const CsvTable& t, const CsvRow& r, const ModelFile& mf) const {
        if (cell_col >= 0) {
            const Index cells = mf.schema.cells();
            const double v = parse_number(r.cells[static_cast<std::size_t>(cell_col)], t.path, r.line);
            if (v != std::floor(v) || v < 1 || v > static_cast<double>(cells))
                throw LocatedError(t.path, r.line, "cell must be an integer in 1.." + std::to_string(cells));
            return static_cast<Index>(v) - 1;
        }
        std::vector<int> lv;
        for (std::size_t k = 0; k < var_cols.size(); ++k)
            lv.push_back(parse_level(t, r, var_cols[k], mf.schema.dim(static_cast<int>(k))));
        return mf.schema.index_of(lv);
    }
};

std::string coord_label(const ModelFile& mf, const EtaLabel& l) {
    std::string s = mf.effect_name(l.effect) + "[";
    for (std::size_t k = 0; k < l.levels.size(); ++k) s += (k ? "," : "") + std::to_string(l.levels[k] + 1);
    return s + "]";
}

}  // namespace

Eigen::VectorXd read_counts(const std::string& path, const ModelFile& mf) {
    const Index t = mf.schema.cells();
    CsvTable probe = read_csv(path, true);
    if (probe.column("count") < 0) {
        // a single row of t counts, optionally preceded by a header
        CsvTable raw = read_csv(path, false);
        std::vector<CsvRow> rows = raw.rows;
        if (rows.size() == 2) rows.erase(rows.begin());
        if (rows.size() != 1)
            throw InputError(path + ": expected a single row of " + std::to_string(t) +
                             " counts or long format with a 'count' column");
        const auto& r = rows[0];
        if (static_cast<Index>(r.cells.size()) != t)
            throw LocatedError(path, r.line, "expected " + std::to_string(t) + " counts, found " +
                                                 std::to_string(r.cells.size()));
        Eigen::VectorXd y(t);
        for (Index i = 0; i < t; ++i) y(i) = parse_count(raw, r, static_cast<int>(i));
        return y;
    }
    const int count_col = probe.require_column("count");
    const CellReader cell(probe, mf);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(t);
    for (const auto& r : probe.rows) y(cell(probe, r, mf)) += parse_count(probe, r, count_col);
    if (probe.rows.empty()) throw InputError(path + ": no data rows");
    return y;
}

std::vector<std::string> eta_labels(const ModelFile& mf, const MllpMatrices<double>& mats) {
    std::vector<std::string> out;
    for (const auto& l : mats.labels) out.push_back(coord_label(mf, l));
    return out;
}

StratifiedData<double> read_strata(const std::string& path, const ModelFile& mf, const MllpMatrices<double>& mats) {
    const auto& cb = mf.covariates;
    const CsvTable t = read_csv(path, true);
    if (t.rows.empty()) throw InputError(path + ": no data rows");
    const int stratum_col = cb.stratum.empty() ? -1 : t.require_column(cb.stratum);
    const int count_col = t.column("count");
    std::vector<int> cov_cols;
    for (const auto& name : cb.columns) cov_cols.push_back(t.require_column(name));
    const CellReader cell(t, mf);
    const Index t_cells = mf.schema.cells();

    struct Unit {
        std::string id;
        std::vector<double> cov;
        Eigen::VectorXd y;
        std::size_t line;
    };
    std::vector<Unit> units;
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        const auto& r = t.rows[k];
        std::vector<double> cov;
        for (int j : cov_cols) cov.push_back(parse_number(r.cells[static_cast<std::size_t>(j)], t.path, r.line));
        const std::string id = stratum_col >= 0 ? r.cells[static_cast<std::size_t>(stratum_col)] : std::to_string(k + 1);
        auto it = index.find(id);
        if (it == index.end()) {
            it = index.emplace(id, units.size()).first;
            units.push_back({id, cov, Eigen::VectorXd::Zero(t_cells), r.line});
        } else if (units[it->second].cov != cov) {
            throw LocatedError(t.path, r.line, "covariates differ within stratum '" + id + "' (first seen on line " +
                                                   std::to_string(units[it->second].line) + ")");
        }
        units[it->second].y(cell(t, r, mf)) += count_col >= 0 ? parse_count(t, r, count_col) : 1.0;
    }

    StratifiedData<double> data;
    const Index dim = mats.dim();
    std::vector<bool> zeroed(static_cast<std::size_t>(dim), false);
    for (VarSet e : mf.constraint.zero_effects)
        for (Index c : mats.coords_of(e)) zeroed[static_cast<std::size_t>(c)] = true;

    if (!cb.design_path.empty()) {
        // rows: stratum id followed by q values, t-1 rows per stratum in eta order
        const CsvTable d = read_csv(cb.design_path, true);
        if (d.header.size() < 2) throw LocatedError(d.path, d.header_line, "design needs a stratum column and values");
        data.q = static_cast<Index>(d.header.size()) - 1;
        data.column_names.assign(d.header.begin() + 1, d.header.end());
        std::map<std::string, std::vector<const CsvRow*>> rows;
        for (const auto& r : d.rows) rows[r.cells[0]].push_back(&r);
        for (const auto& u : units) {
            auto it = rows.find(u.id);
            if (it == rows.end()) throw LocatedError(t.path, u.line, "no design rows for stratum '" + u.id + "'");
            if (static_cast<Index>(it->second.size()) != dim)
                throw LocatedError(d.path, it->second.front()->line, "stratum '" + u.id + "' needs " +
                                                                         std::to_string(dim) + " design rows");
            Eigen::MatrixXd X(dim, data.q);
            for (Index i = 0; i < dim; ++i) {
                const CsvRow& r = *it->second[static_cast<std::size_t>(i)];
                for (Index j = 0; j < data.q; ++j)
                    X(i, j) = parse_number(r.cells[static_cast<std::size_t>(j + 1)], d.path, r.line);
                if (zeroed[static_cast<std::size_t>(i)] && X.row(i).cwiseAbs().maxCoeff() > 0)
                    throw LocatedError(d.path, r.line, "design row for a zeroed effect must be zero");
            }
            data.units.push_back({u.id, u.y, X});
        }
        return data;
    }

    // formula: every free coordinate gets an intercept plus its effect's covariates
    struct Column {
        Index coord;
        int cov;  // -1 for the intercept
    };
    std::vector<Column> cols;
    for (Index i = 0; i < dim; ++i) {
        if (zeroed[static_cast<std::size_t>(i)]) continue;
        const auto& l = mats.labels[static_cast<std::size_t>(i)];
        const std::string base = coord_label(mf, l);
        cols.push_back({i, -1});
        data.column_names.push_back(base + ":(Intercept)");
        auto f = cb.formula.find(l.effect);
        if (f == cb.formula.end()) continue;
        for (const auto& name : f->second) {
            const auto pos = std::find(cb.columns.begin(), cb.columns.end(), name) - cb.columns.begin();
            cols.push_back({i, static_cast<int>(pos)});
            data.column_names.push_back(base + ":" + name);
        }
    }
    for (const auto& [e, covs] : cb.formula) {
        if (mats.coords_of(e).empty()) throw InputError(mf.path + ": formula effect " + mf.effect_name(e) + " is not in the model");
        bool any_free = false;
        for (Index c : mats.coords_of(e)) any_free = any_free || !zeroed[static_cast<std::size_t>(c)];
        if (!any_free) throw InputError(mf.path + ": formula effect " + mf.effect_name(e) + " is constrained to zero");
    }
    data.q = static_cast<Index>(cols.size());
    for (const auto& u : units) {
        Eigen::MatrixXd X = Eigen::MatrixXd::Zero(dim, data.q);
        for (Index j = 0; j < data.q; ++j) {
            const auto& c = cols[static_cast<std::size_t>(j)];
            X(c.coord, j) = c.cov < 0 ? 1.0 : u.cov[static_cast<std::size_t>(c.cov)];
        }
        data.units.push_back({u.id, u.y, X});
    }
    return data;
}

}  // namespace marginfit::io
