#include "marginfit/io/model_file.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "marginfit/io/csv.hpp"

namespace marginfit::io {

namespace {

struct Ctx {
    std::string path;
    std::string base;
    std::vector<std::string> names;
};

Mark mark_of(const YAML::Node& n) {
    const auto m = n.Mark();
    if (m.line < 0) return {};
    return {static_cast<std::size_t>(m.line) + 1, static_cast<std::size_t>(m.column) + 1};
}

std::string where(const Ctx& c, Mark m) {
    if (m.line == 0) return c.path;
    return c.path + ":" + std::to_string(m.line) + ":" + std::to_string(m.column);
}

[[noreturn]] void fail(const Ctx& c, const YAML::Node& n, const std::string& msg) {
    throw InputError(where(c, mark_of(n)) + ": " + msg);
}

void allow_keys(const Ctx& c, const YAML::Node& n, const std::string& block, std::initializer_list<const char*> keys) {
    if (!n.IsMap()) fail(c, n, "'" + block + "' must be a mapping");
    for (const auto& kv : n) {
        const std::string k = kv.first.as<std::string>();
        if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
            fail(c, kv.first, "unknown key '" + k + "' in '" + block + "'");
    }
}

std::string get_string(const Ctx& c, const YAML::Node& n, const std::string& what) {
    if (!n.IsScalar()) fail(c, n, what + " must be a scalar");
    return n.Scalar();
}

double get_double(const Ctx& c, const YAML::Node& n, const std::string& what) {
    if (!n.IsScalar()) fail(c, n, what + " must be a number");
    const std::string s = n.Scalar();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || !end || *end != '\0' || !std::isfinite(v)) fail(c, n, what + ": '" + s + "' is not a number");
    return v;
}

long long get_int(const Ctx& c, const YAML::Node& n, const std::string& what) {
    const double v = get_double(c, n, what);
    if (v != std::floor(v)) fail(c, n, what + " must be an integer");
    return static_cast<long long>(v);
}

bool get_bool(const Ctx& c, const YAML::Node& n, const std::string& what) {
    const std::string s = get_string(c, n, what);
    if (s == "true" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "no" || s == "off") return false;
    fail(c, n, what + ": '" + s + "' is not a boolean");
}

int variable_index(const Ctx& c, const YAML::Node& n, const std::string& name) {
    for (std::size_t j = 0; j < c.names.size(); ++j)
        if (c.names[j] == name) return static_cast<int>(j);
    fail(c, n, "unknown variable '" + name + "'");
}

// "A:B" or [A, B]
VarSet parse_set(const Ctx& c, const YAML::Node& n, const std::string& what) {
    std::vector<std::pair<std::string, YAML::Node>> parts;
    if (n.IsSequence()) {
        for (const auto& e : n) parts.emplace_back(get_string(c, e, what), e);
    } else if (n.IsScalar()) {
        std::stringstream ss(n.Scalar());
        std::string tok;
        while (std::getline(ss, tok, ':')) parts.emplace_back(tok, n);
        if (!n.Scalar().empty() && n.Scalar().back() == ':') parts.emplace_back("", n);
    } else {
        fail(c, n, what + " must be a list of variable names or a name like A:B");
    }
    if (parts.empty()) fail(c, n, what + " is empty");
    VarSet s = 0;
    for (const auto& [name, node] : parts) {
        if (name.empty()) fail(c, node, what + " contains an empty variable name");
        const int v = variable_index(c, node, name);
        if ((s >> v) & 1U) fail(c, node, "variable '" + name + "' repeated in " + what);
        s |= VarSet{1} << v;
    }
    return s;
}

std::vector<VarSet> parse_set_list(const Ctx& c, const YAML::Node& n, const std::string& what) {
    if (!n.IsSequence()) fail(c, n, what + " must be a list");
    std::vector<VarSet> out;
    for (const auto& e : n) out.push_back(parse_set(c, e, what));
    return out;
}

std::string resolve(const Ctx& c, const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_relative()) fp = std::filesystem::path(c.base) / fp;
    return fp.string();
}

Eigen::MatrixXd load_matrix(const Ctx& c, const YAML::Node& n, const std::string& what) {
    const std::string p = resolve(c, get_string(c, n, what));
    try {
        return read_matrix(p);
    } catch (const InputError& e) {
        fail(c, n, what + ": " + e.what());
    }
}

void parse_schema(Ctx& c, const YAML::Node& n, ModelFile& mf) {
    allow_keys(c, n, "schema", {"variables"});
    const auto vars = n["variables"];
    if (!vars) fail(c, n, "'schema' needs 'variables'");
    if (!vars.IsSequence() || vars.size() == 0) fail(c, vars, "'variables' must be a nonempty list");
    if (vars.size() > 16) fail(c, vars, "at most 16 variables are supported");
    std::vector<int> dims;
    for (const auto& v : vars) {
        allow_keys(c, v, "variable", {"name", "levels"});
        if (!v["name"]) fail(c, v, "variable needs 'name'");
        if (!v["levels"]) fail(c, v, "variable needs 'levels'");
        const std::string name = get_string(c, v["name"], "variable name");
        if (name.empty() || name.find_first_of(":, \t") != std::string::npos)
            fail(c, v["name"], "invalid variable name '" + name + "'");
        if (std::find(c.names.begin(), c.names.end(), name) != c.names.end())
            fail(c, v["name"], "duplicate variable name '" + name + "'");
        const long long levels = get_int(c, v["levels"], "levels");
        if (levels < 2) fail(c, v["levels"], "variable '" + name + "' needs at least 2 levels");
        if (levels > 64) fail(c, v["levels"], "variable '" + name + "' has too many levels");
        c.names.push_back(name);
        dims.push_back(static_cast<int>(levels));
    }
    long long cells = 1;
    for (int d : dims) cells *= d;
    if (cells > 4096) fail(c, vars, "table has " + std::to_string(cells) + " cells; dense fitting supports at most 4096");
    mf.variables = c.names;
    mf.schema = build_schema(dims);
}

void parse_mllp(const Ctx& c, const YAML::Node& n, ModelFile& mf) {
    allow_keys(c, n, "mllp", {"margins", "effects", "coding", "preset"});
    mf.mllp_mark = mark_of(n);
    Coding coding = Coding::baseline;
    if (n["coding"]) {
        const std::string s = get_string(c, n["coding"], "coding");
        if (s == "baseline")
            coding = Coding::baseline;
        else if (s == "effect")
            coding = Coding::effect;
        else
            fail(c, n["coding"], "coding must be 'baseline' or 'effect', not '" + s + "'");
    }
    const int d = mf.schema.num_vars();
    if (n["preset"]) {
        if (n["margins"] || n["effects"]) fail(c, n["preset"], "'preset' cannot be combined with 'margins' or 'effects'");
        const std::string s = get_string(c, n["preset"], "preset");
        if (s == "saturated")
            mf.spec = saturated_spec(d, coding);
        else if (s == "logistic")
            mf.spec = multivariate_logistic_spec(d, coding);
        else
            fail(c, n["preset"], "preset must be 'saturated' or 'logistic', not '" + s + "'");
        return;
    }
    if (!n["margins"]) fail(c, n, "'mllp' needs 'margins' or 'preset'");
    const auto margins = parse_set_list(c, n["margins"], "margin");
    if (!n["effects"]) {
        mf.spec = hierarchical_spec(margins, coding);
        return;
    }
    mf.spec.margins = margins;
    mf.spec.coding = coding;
    const auto effs = n["effects"];
    if (!effs.IsSequence()) fail(c, effs, "'effects' must be a list");
    for (const auto& e : effs) {
        allow_keys(c, e, "effect", {"effect", "margin"});
        if (!e["effect"] || !e["margin"]) fail(c, e, "each effect needs 'effect' and 'margin'");
        const VarSet eff = parse_set(c, e["effect"], "effect");
        const VarSet m = parse_set(c, e["margin"], "margin");
        const auto it = std::find(margins.begin(), margins.end(), m);
        if (it == margins.end()) fail(c, e["margin"], "margin " + mf.effect_name(m) + " is not listed in 'margins'");
        mf.spec.effects.push_back({eff, static_cast<std::size_t>(it - margins.begin())});
    }
}

void parse_constraint(const Ctx& c, const YAML::Node& n, ModelFile& mf) {
    allow_keys(c, n, "constraint", {"zero", "K", "X", "general"});
    auto& cb = mf.constraint;
    cb.mark = mark_of(n);
    int count = 0;
    if (n["zero"]) {
        ++count;
        cb.kind = ConstraintKind::zero;
        cb.zero_effects = parse_set_list(c, n["zero"], "constrained effect");
    }
    if (n["K"]) {
        ++count;
        cb.kind = ConstraintKind::K;
        cb.matrix = load_matrix(c, n["K"], "K");
    }
    if (n["X"]) {
        ++count;
        cb.kind = ConstraintKind::X;
        cb.matrix = load_matrix(c, n["X"], "X");
    }
    if (n["general"]) {
        ++count;
        const auto g = n["general"];
        allow_keys(c, g, "general", {"A", "margins"});
        if (!g["A"] || !g["margins"]) fail(c, g, "'general' needs 'A' and 'margins'");
        cb.kind = ConstraintKind::general;
        cb.matrix = load_matrix(c, g["A"], "A");
        cb.margins = parse_set_list(c, g["margins"], "margin");
    }
    if (count != 1) fail(c, n, "'constraint' must contain exactly one of zero, K, X, general");
}

void parse_covariates(const Ctx& c, const YAML::Node& n, ModelFile& mf) {
    allow_keys(c, n, "covariates", {"stratum", "columns", "formula", "design"});
    auto& cb = mf.covariates;
    cb.present = true;
    cb.mark = mark_of(n);
    if (n["stratum"]) cb.stratum = get_string(c, n["stratum"], "stratum");
    if (n["columns"]) {
        if (!n["columns"].IsSequence()) fail(c, n["columns"], "'columns' must be a list");
        for (const auto& col : n["columns"]) {
            const std::string name = get_string(c, col, "covariate column");
            if (std::find(c.names.begin(), c.names.end(), name) != c.names.end())
                fail(c, col, "covariate '" + name + "' clashes with a table variable");
            cb.columns.push_back(name);
        }
    }
    if (n["design"]) {
        if (n["formula"]) fail(c, n["design"], "'design' and 'formula' are mutually exclusive");
        cb.design_path = resolve(c, get_string(c, n["design"], "design"));
    }
    if (n["formula"]) {
        const auto f = n["formula"];
        if (!f.IsMap()) fail(c, f, "'formula' must map effects to covariate lists");
        for (const auto& kv : f) {
            const VarSet e = parse_set(c, kv.first, "formula effect");
            if (cb.formula.count(e)) fail(c, kv.first, "effect " + mf.effect_name(e) + " listed twice in formula");
            std::vector<std::string> covs;
            const auto list = kv.second;
            if (list.IsScalar()) {
                covs.push_back(list.Scalar());
            } else if (list.IsSequence()) {
                for (const auto& x : list) covs.push_back(get_string(c, x, "covariate"));
            } else {
                fail(c, list, "formula entries must be covariate names");
            }
            for (const auto& cov : covs) {
                if (std::find(cb.columns.begin(), cb.columns.end(), cov) == cb.columns.end())
                    fail(c, list, "unknown covariate '" + cov + "' (not listed in 'columns')");
            }
            cb.formula[e] = covs;
        }
    }
}

void parse_penalty(const Ctx& c, const YAML::Node& n, ModelFile& mf) {
    allow_keys(c, n, "penalty", {"nu", "weights", "adaptive", "grid"});
    auto& pb = mf.penalty;
    pb.present = true;
    pb.mark = mark_of(n);
    if (n["nu"]) {
        pb.nu = get_double(c, n["nu"], "nu");
        if (pb.nu < 0) fail(c, n["nu"], "nu must be nonnegative");
    }
    if (n["adaptive"]) pb.adaptive = get_bool(c, n["adaptive"], "adaptive");
    if (n["weights"]) {
        const auto w = n["weights"];
        if (!w.IsMap()) fail(c, w, "'weights' must map effect names to numbers");
        for (const auto& kv : w) {
            const double v = get_double(c, kv.second, "weight");
            if (v < 0) fail(c, kv.second, "weights must be nonnegative");
            if (kv.first.IsScalar() && kv.first.Scalar() == "default") {
                pb.default_weight = v;
                continue;
            }
            const VarSet e = parse_set(c, kv.first, "penalty effect");
            if (pb.weights.count(e)) fail(c, kv.first, "effect " + mf.effect_name(e) + " weighted twice");
            pb.weights[e] = v;
        }
    }
    if (n["grid"]) {
        const auto g = n["grid"];
        if (g.IsSequence()) {
            for (const auto& x : g) {
                const double v = get_double(c, x, "grid value");
                if (v < 0) fail(c, x, "grid values must be nonnegative");
                if (!pb.grid.empty() && v < pb.grid.back()) fail(c, x, "grid must be ascending");
                pb.grid.push_back(v);
            }
            if (pb.grid.empty()) fail(c, g, "grid is empty");
        } else if (g.IsMap()) {
            allow_keys(c, g, "grid", {"min", "max", "points"});
            if (!g["min"] || !g["max"] || !g["points"]) fail(c, g, "grid needs 'min', 'max' and 'points'");
            const double lo = get_double(c, g["min"], "min"), hi = get_double(c, g["max"], "max");
            const long long k = get_int(c, g["points"], "points");
            if (!(lo > 0) || hi < lo) fail(c, g, "log-spaced grid needs 0 < min <= max");
            if (k < 1 || k > 1000) fail(c, g["points"], "points must be between 1 and 1000");
            for (long long i = 0; i < k; ++i) {
                const double f = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
                pb.grid.push_back(lo * std::pow(hi / lo, f));
            }
        } else {
            fail(c, g, "grid must be a list or {min, max, points}");
        }
    }
}

void parse_options(const Ctx& c, const YAML::Node& n, ModelFile& mf) {
    allow_keys(c, n, "options", {"algorithm", "max_iter", "tol", "tol_constraint", "tol_score", "start",
                                 "step_halving", "max_halvings", "merit_weight", "multi_start", "seed", "trace",
                                 "fd_observed_info"});
    auto& o = mf.options;
    if (n["algorithm"]) {
        const std::string s = get_string(c, n["algorithm"], "algorithm");
        if (s == "lagrangian")
            o.algorithm = Algorithm::lagrangian;
        else if (s == "regression")
            o.algorithm = Algorithm::regression;
        else
            fail(c, n["algorithm"], "algorithm must be 'lagrangian' or 'regression', not '" + s + "'");
        mf.algorithm_set = true;
    }
    auto positive = [&](const char* key) {
        const double v = get_double(c, n[key], key);
        if (!(v > 0)) fail(c, n[key], std::string(key) + " must be positive");
        return v;
    };
    if (n["max_iter"]) {
        const long long v = get_int(c, n["max_iter"], "max_iter");
        if (v < 1 || v > 1000000) fail(c, n["max_iter"], "max_iter must be between 1 and 1000000");
        o.max_iter = static_cast<int>(v);
    }
    if (n["tol"]) o.tol_constraint = o.tol_score = positive("tol");
    if (n["tol_constraint"]) o.tol_constraint = positive("tol_constraint");
    if (n["tol_score"]) o.tol_score = positive("tol_score");
    if (n["start"]) {
        const std::string s = get_string(c, n["start"], "start");
        if (s == "smoothed")
            o.start = StartKind::smoothed;
        else if (s == "uniform")
            o.start = StartKind::uniform;
        else
            fail(c, n["start"], "start must be 'smoothed' or 'uniform', not '" + s + "'");
    }
    if (n["step_halving"]) o.step_halving = get_bool(c, n["step_halving"], "step_halving");
    if (n["max_halvings"]) {
        const long long v = get_int(c, n["max_halvings"], "max_halvings");
        if (v < 0 || v > 60) fail(c, n["max_halvings"], "max_halvings must be between 0 and 60");
        o.max_halvings = static_cast<int>(v);
    }
    if (n["merit_weight"]) o.merit_weight = positive("merit_weight");
    if (n["multi_start"]) {
        const long long v = get_int(c, n["multi_start"], "multi_start");
        if (v < 0 || v > 1000) fail(c, n["multi_start"], "multi_start must be between 0 and 1000");
        mf.multi_start = static_cast<int>(v);
    }
    if (n["seed"]) {
        const long long v = get_int(c, n["seed"], "seed");
        if (v < 0) fail(c, n["seed"], "seed must be nonnegative");
        mf.seed = static_cast<std::uint64_t>(v);
    }
    if (n["trace"]) mf.trace = get_bool(c, n["trace"], "trace");
    if (n["fd_observed_info"]) o.fd_observed_info = get_bool(c, n["fd_observed_info"], "fd_observed_info");
}

}  // namespace

std::string ModelFile::effect_name(VarSet e) const {
    std::string out;
    for (int v : members(e)) {
        if (!out.empty()) out += ":";
        out += static_cast<std::size_t>(v) < variables.size() ? variables[static_cast<std::size_t>(v)]
                                                              : std::to_string(v + 1);
    }
    return out;
}

std::string ModelFile::named(std::string msg) const {
    for (VarSet e = full_set(schema.num_vars()); e != 0; --e) {
        const std::string from = format_set(e);
        for (std::size_t pos; (pos = msg.find(from)) != std::string::npos;) msg.replace(pos, from.size(), effect_name(e));
    }
    return msg;
}

ModelFile parse_model_text(const std::string& text, const std::string& path, const std::string& base_dir) {
    Ctx c{path, base_dir, {}};
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw InputError(path + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                         ": " + e.msg);
    }
    if (!root || !root.IsMap()) throw InputError(path + ": model file must be a mapping of blocks");
    ModelFile mf;
    mf.path = path;
    try {
        allow_keys(c, root, "model file", {"schema", "mllp", "constraint", "covariates", "penalty", "options"});
        if (!root["schema"]) fail(c, root, "missing 'schema' block");
        parse_schema(c, root["schema"], mf);
        if (root["mllp"])
            parse_mllp(c, root["mllp"], mf);
        else
            mf.spec = saturated_spec(mf.schema.num_vars());
        if (root["constraint"]) parse_constraint(c, root["constraint"], mf);
        if (root["covariates"]) parse_covariates(c, root["covariates"], mf);
        if (root["penalty"]) parse_penalty(c, root["penalty"], mf);
        if (root["options"]) parse_options(c, root["options"], mf);
    } catch (const YAML::Exception& e) {
        throw InputError(path + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                         ": " + e.msg);
    }
    if (mf.covariates.present && mf.penalty.present)
        throw InputError(where(c, mf.penalty.mark) + ": penalties cannot be combined with covariates");
    if (mf.covariates.present && (mf.constraint.kind == ConstraintKind::K || mf.constraint.kind == ConstraintKind::X ||
                                  mf.constraint.kind == ConstraintKind::general))
        throw InputError(where(c, mf.constraint.mark) +
                         ": covariate models take constraints as zeroed effects only (or an explicit design)");
    if (mf.penalty.present && mf.constraint.kind == ConstraintKind::general)
        throw InputError(where(c, mf.penalty.mark) + ": penalties need a linear constraint");
    return mf;
}

ModelFile parse_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError(path + ": cannot open model file");
    std::stringstream ss;
    ss << in.rdbuf();
    const auto base = std::filesystem::path(path).parent_path().string();
    return parse_model_text(ss.str(), path, base.empty() ? "." : base);
}

MarginalModel<double> build_model(const ModelFile& mf) {
    const Ctx c{mf.path, "", mf.variables};
    MarginalModel<double> model;
    try {
        model = make_model<double>(mf.schema, mf.spec);
    } catch (const Error& e) {
        throw InputError(where(c, mf.mllp_mark) + ": " + mf.named(e.what()));
    }
    const Index dim = model.mllp.dim();
    const auto& cb = mf.constraint;
    try {
        switch (cb.kind) {
            case ConstraintKind::none: break;
            case ConstraintKind::zero: {
                std::vector<Index> coords;
                for (VarSet e : cb.zero_effects) {
                    const auto cs = model.mllp.coords_of(e);
                    if (cs.empty()) throw InputError("effect " + mf.effect_name(e) + " has no coordinates");
                    coords.insert(coords.end(), cs.begin(), cs.end());
                }
                std::sort(coords.begin(), coords.end());
                if (std::adjacent_find(coords.begin(), coords.end()) != coords.end())
                    throw InputError("an effect is listed twice in 'zero'");
                model.constraint = zero_constraint<double>(dim, coords);
                break;
            }
            case ConstraintKind::K:
                if (cb.matrix.rows() != dim)
                    throw InputError("K must have " + std::to_string(dim) + " rows (one per eta coordinate), found " +
                                     std::to_string(cb.matrix.rows()));
                model.constraint = linear_from_K<double>(cb.matrix);
                break;
            case ConstraintKind::X:
                if (cb.matrix.rows() != dim)
                    throw InputError("X must have " + std::to_string(dim) + " rows (one per eta coordinate), found " +
                                     std::to_string(cb.matrix.rows()));
                model.constraint = linear_from_X<double>(cb.matrix);
                break;
            case ConstraintKind::general: {
                std::vector<Eigen::MatrixXd> blocks;
                Index u = 0;
                for (VarSet m : cb.margins) {
                    blocks.push_back(detail::margin_rows<double>(m, mf.schema));
                    u += blocks.back().rows();
                }
                if (cb.matrix.cols() != u)
                    throw InputError("A must have " + std::to_string(u) + " columns (stacked marginal cells), found " +
                                     std::to_string(cb.matrix.cols()));
                Eigen::MatrixXd M(u, mf.schema.cells());
                Index row = 0;
                for (const auto& b : blocks) {
                    M.middleRows(row, b.rows()) = b;
                    row += b.rows();
                }
                model.constraint = general_constraint<double>(cb.matrix, M);
                break;
            }
        }
    } catch (const Error& e) {
        throw InputError(where(c, cb.mark) + ": " + e.what());
    }
    return model;
}

}  // namespace marginfit::io
