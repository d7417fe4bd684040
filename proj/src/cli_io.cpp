#include "mspp/cli_io.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mspp {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config helpers

[[noreturn]] void bad_key(const std::string& key, const std::string& what) {
    throw ConfigError("config key '" + key + "': " + what);
}

template <class T>
T read_key(const Json& obj, const std::string& scope, const std::string& key, T fallback) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const Json::exception& e) {
        bad_key(scope + key, e.what());
    }
}

void check_keys(const Json& obj, const std::string& scope, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) bad_key(scope.empty() ? "<root>" : scope.substr(0, scope.size() - 1), "expected an object");
    for (const auto& item : obj.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* a) { return item.key() == a; });
        if (!known) bad_key(scope + item.key(), "unknown key");
    }
}

std::string resolve_path(const fs::path& base, const std::string& path) {
    if (path.empty()) return path;
    const fs::path p(path);
    return p.is_absolute() || base.empty() ? p.string() : (base / p).string();
}

ResponseKind parse_kind(const std::string& key, const std::string& value) {
    if (value == "binary") return ResponseKind::binary;
    if (value == "count") return ResponseKind::count;
    bad_key(key, "expected \"binary\" or \"count\", got \"" + value + "\"");
}

SimulateSpec parse_simulate(const Json& sim, std::uint64_t seed) {
    const std::string scope = "simulate.";
    check_keys(sim, scope,
               {"n_cells", "cell_area", "covariance", "correlation", "x_names", "z_names", "species",
                "delta", "n_sites", "survey_kind", "n_background"});
    SimulateSpec out;
    SimulationConfig& cfg = out.simulation;
    cfg.n_cells = read_key<std::size_t>(sim, scope, "n_cells", 40000);
    cfg.cell_area = read_key<double>(sim, scope, "cell_area", 1.0);
    cfg.rng_seed = seed;

    const auto species = sim.find("species");
    if (species == sim.end() || !species->is_array() || species->empty())
        bad_key(scope + "species", "expected a non-empty array of {name, alpha, beta, gamma}");
    const auto delta = read_key<std::vector<double>>(sim, scope, "delta", {});
    const std::size_t m = species->size();
    const std::size_t p = read_key<std::vector<double>>((*species)[0], scope + "species[0].", "beta", {}).size();
    const std::size_t r = delta.size();
    cfg.true_theta = CoefficientSet::zeros(ParameterLayout(m, p, r));
    for (std::size_t k = 0; k < m; ++k) {
        const Json& s = (*species)[k];
        const std::string sc = scope + "species[" + std::to_string(k) + "].";
        check_keys(s, sc, {"name", "alpha", "beta", "gamma"});
        cfg.species.push_back(read_key<std::string>(s, sc, "name", "sp" + std::to_string(k + 1)));
        const auto ki = static_cast<Eigen::Index>(k);
        cfg.true_theta.alpha[ki] = read_key<double>(s, sc, "alpha", 0.0);
        cfg.true_theta.gamma[ki] = read_key<double>(s, sc, "gamma", 0.0);
        const auto beta = read_key<std::vector<double>>(s, sc, "beta", {});
        if (beta.size() != p) bad_key(sc + "beta", "every species needs " + std::to_string(p) + " slopes");
        for (std::size_t j = 0; j < p; ++j) cfg.true_theta.beta(ki, static_cast<Eigen::Index>(j)) = beta[j];
    }
    for (std::size_t j = 0; j < r; ++j) cfg.true_theta.delta[static_cast<Eigen::Index>(j)] = delta[j];

    cfg.x_names = read_key<std::vector<std::string>>(sim, scope, "x_names", {});
    cfg.z_names = read_key<std::vector<std::string>>(sim, scope, "z_names", {});
    if (cfg.x_names.empty())
        for (std::size_t j = 0; j < p; ++j) cfg.x_names.push_back("x" + std::to_string(j + 1));
    if (cfg.z_names.empty())
        for (std::size_t j = 0; j < r; ++j) cfg.z_names.push_back("z" + std::to_string(j + 1));
    if (cfg.x_names.size() != p) bad_key(scope + "x_names", "expected " + std::to_string(p) + " names");
    if (cfg.z_names.size() != r) bad_key(scope + "z_names", "expected " + std::to_string(r) + " names");

    const auto d = static_cast<Eigen::Index>(p + r);
    if (sim.contains("covariance")) {
        const auto rows = read_key<std::vector<std::vector<double>>>(sim, scope, "covariance", {});
        if (rows.size() != p + r) bad_key(scope + "covariance", "expected a (p+r) square matrix");
        cfg.covariance.resize(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            if (rows[static_cast<std::size_t>(i)].size() != p + r)
                bad_key(scope + "covariance", "expected a (p+r) square matrix");
            for (Eigen::Index j = 0; j < d; ++j)
                cfg.covariance(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    } else if (sim.contains("correlation")) {
        if (p != 2 || r != 1) bad_key(scope + "correlation", "only defined for two x and one z covariate");
        cfg.covariance = correlated_covariance(read_key<double>(sim, scope, "correlation", 0.95));
    } else {
        cfg.covariance = Matrix::Identity(d, d);
    }

    out.design.n_sites = read_key<std::size_t>(sim, scope, "n_sites", 500);
    out.design.kind = parse_kind(scope + "survey_kind", read_key<std::string>(sim, scope, "survey_kind", "binary"));
    out.design.n_background = read_key<std::size_t>(sim, scope, "n_background", 0);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        bad_key("simulate", e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tables

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
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
            quoted = true;
        } else if (ch == delim) {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return fields;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan"; }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Raw covariate columns by name plus the cell geometry.
struct RawGrid {
    std::vector<std::int64_t> ids;
    RowMatrix coords;
    Vector areas;
    std::map<std::string, std::vector<double>> columns;
};

CovariateField build_field(const RawGrid& raw, const ModelSpec& model) {
    for (const auto& [name, d] : model.degree) {
        if (d < 1) bad_key("model.degree." + name, "degree must be at least 1");
        const bool used = std::count(model.x_columns.begin(), model.x_columns.end(), name) +
                          std::count(model.z_columns.begin(), model.z_columns.end(), name);
        if (!used) bad_key("model.degree." + name, "column is not a model covariate");
    }
    const auto n = static_cast<Eigen::Index>(raw.ids.size());
    auto assemble = [&](const std::vector<std::string>& cols, const char* key) {
        const std::vector<std::string> names = expanded_names(cols, model.degree);
        RowMatrix mat(n, static_cast<Eigen::Index>(names.size()));
        Eigen::Index out_col = 0;
        for (const auto& col : cols) {
            const auto it = raw.columns.find(col);
            if (it == raw.columns.end())
                bad_key(std::string("model.") + key, "column '" + col + "' is not in the grid");
            const auto dit = model.degree.find(col);
            const int degree = dit == model.degree.end() ? 1 : dit->second;
            for (int power = 1; power <= degree; ++power, ++out_col)
                for (Eigen::Index c = 0; c < n; ++c)
                    mat(c, out_col) = std::pow(it->second[static_cast<std::size_t>(c)], power);
        }
        return std::make_pair(std::move(mat), names);
    };
    auto [x, x_names] = assemble(model.x_columns, "x");
    auto [z, z_names] = assemble(model.z_columns, "z");
    return CovariateField(raw.ids, raw.coords, raw.areas, std::move(x), std::move(z), std::move(x_names),
                          std::move(z_names));
}

RawGrid raw_from_table(const Table& grid) {
    const std::size_t c_id = grid.column("cell_id");
    const std::size_t c_x = grid.column("x");
    const std::size_t c_y = grid.column("y");
    const std::size_t c_area = grid.column("area");
    RawGrid raw;
    const auto n = static_cast<Eigen::Index>(grid.rows.size());
    raw.coords.resize(n, 2);
    raw.areas.resize(n);
    for (std::size_t j = 0; j < grid.header.size(); ++j)
        if (j != c_id && j != c_x && j != c_y && j != c_area) raw.columns[grid.header[j]].resize(grid.rows.size());
    for (std::size_t i = 0; i < grid.rows.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        raw.ids.push_back(grid.integer(i, c_id));
        raw.coords(ii, 0) = grid.number(i, c_x);
        raw.coords(ii, 1) = grid.number(i, c_y);
        raw.areas[ii] = grid.number(i, c_area);
        for (std::size_t j = 0; j < grid.header.size(); ++j) {
            auto it = raw.columns.find(grid.header[j]);
            if (j != c_id && j != c_x && j != c_y && j != c_area && it != raw.columns.end())
                it->second[i] = grid.number(i, j);
        }
    }
    return raw;
}

RawGrid raw_from_field(const CovariateField& field) {
    RawGrid raw;
    raw.ids = field.ids();
    raw.coords = field.coords();
    raw.areas = field.areas();
    for (std::size_t j = 0; j < field.p(); ++j) {
        const Vector col = field.x_matrix().col(static_cast<Eigen::Index>(j));
        raw.columns[field.x_names()[j]] = std::vector<double>(col.data(), col.data() + col.size());
    }
    for (std::size_t j = 0; j < field.r(); ++j) {
        const Vector col = field.z_matrix().col(static_cast<Eigen::Index>(j));
        raw.columns[field.z_names()[j]] = std::vector<double>(col.data(), col.data() + col.size());
    }
    return raw;
}

CellIndex cell_of(const CovariateField& field, const Table& t, std::size_t row, std::size_t col) {
    const std::int64_t id = t.integer(row, col);
    const auto c = field.find(id);
    if (!c)
        throw DataError(t.source + ":" + std::to_string(t.lines[row]) + ": column '" + t.header[col] +
                        "': unknown cell_id " + std::to_string(id));
    return *c;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void emit_json(const Json& v, int indent, int depth, std::string& out) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    switch (v.type()) {
    case Json::value_t::object: {
        if (v.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        bool first = true;
        for (const auto& item : v.items()) {
            if (!first) out += ",\n";
            first = false;
            out += pad + Json(item.key()).dump() + ": ";
            emit_json(item.value(), indent, depth + 1, out);
        }
        out += "\n" + close_pad + "}";
        return;
    }
    case Json::value_t::array: {
        const bool flat = std::none_of(v.begin(), v.end(), [](const Json& e) { return e.is_structured(); });
        if (v.empty() || flat) {
            out += "[";
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) out += ", ";
                emit_json(v[i], indent, depth + 1, out);
            }
            out += "]";
            return;
        }
        out += "[\n";
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ",\n";
            out += pad;
            emit_json(v[i], indent, depth + 1, out);
        }
        out += "\n" + close_pad + "]";
        return;
    }
    case Json::value_t::number_float: {
        const double d = v.get<double>();
        out += std::isfinite(d) ? format_double(d) : "null";
        return;
    }
    default:
        out += v.dump();
    }
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

} // namespace

// ---------------------------------------------------------------------------

RunConfig parse_config(const Json& doc, const fs::path& base_dir) {
    check_keys(doc, "", {"seed", "threads", "deterministic", "out", "data", "simulate", "model", "solver",
                         "resample", "predict"});
    RunConfig cfg;
    cfg.document = doc;
    cfg.base_dir = base_dir;
    cfg.seed = read_key<std::uint64_t>(doc, "", "seed", 1);
    cfg.threads = read_key<unsigned>(doc, "", "threads", 0);
    cfg.deterministic = read_key<bool>(doc, "", "deterministic", true);
    cfg.out_dir = resolve_path(base_dir, read_key<std::string>(doc, "", "out", "out"));

    if (doc.contains("data")) {
        const Json& d = doc["data"];
        check_keys(d, "data.", {"grid", "survey", "survey_kind", "presence_only", "background", "species"});
        cfg.grid_path = resolve_path(base_dir, read_key<std::string>(d, "data.", "grid", ""));
        if (cfg.grid_path.empty()) bad_key("data.grid", "a covariate grid is required");
        cfg.survey_path = resolve_path(base_dir, read_key<std::string>(d, "data.", "survey", ""));
        cfg.survey_kind = parse_kind("data.survey_kind", read_key<std::string>(d, "data.", "survey_kind", "binary"));
        if (d.contains("presence_only") && d["presence_only"].is_string())
            cfg.presence_paths = {read_key<std::string>(d, "data.", "presence_only", "")};
        else
            cfg.presence_paths = read_key<std::vector<std::string>>(d, "data.", "presence_only", {});
        for (auto& p : cfg.presence_paths) p = resolve_path(base_dir, p);
        cfg.background_path = resolve_path(base_dir, read_key<std::string>(d, "data.", "background", ""));
        cfg.species = read_key<std::vector<std::string>>(d, "data.", "species", {});
    }
    if (doc.contains("simulate")) {
        if (doc.contains("data")) bad_key("simulate", "give either a data block or a simulate block, not both");
        cfg.simulate = parse_simulate(doc["simulate"], cfg.seed);
    }

    if (doc.contains("model")) {
        const Json& m = doc["model"];
        check_keys(m, "model.", {"x", "z", "degree", "interactions", "bias_terms"});
        cfg.model.x_columns = read_key<std::vector<std::string>>(m, "model.", "x", {});
        cfg.model.z_columns = read_key<std::vector<std::string>>(m, "model.", "z", {});
        cfg.model.degree = read_key<std::map<std::string, int>>(m, "model.", "degree", {});
        cfg.model.bias_terms = read_key<bool>(m, "model.", "bias_terms", true);
        if (m.contains("interactions")) {
            if (!m["interactions"].is_array()) bad_key("model.interactions", "expected an array");
            for (const Json& t : m["interactions"]) {
                check_keys(t, "model.interactions[].", {"species", "bias_var"});
                cfg.model.interactions.emplace_back(read_key<std::string>(t, "model.interactions[].", "species", ""),
                                                    read_key<std::string>(t, "model.interactions[].", "bias_var", ""));
            }
        }
    }
    if (!cfg.simulate && cfg.model.x_columns.empty() && doc.contains("data"))
        bad_key("model.x", "list the grid columns used as environmental covariates");

    if (doc.contains("solver")) {
        const Json& s = doc["solver"];
        check_keys(s, "solver.", {"nu", "max_iterations", "objective_tolerance", "gradient_tolerance",
                                  "max_step_halvings"});
        cfg.solver.nu = read_key<double>(s, "solver.", "nu", cfg.solver.nu);
        cfg.solver.max_iterations = read_key<int>(s, "solver.", "max_iterations", cfg.solver.max_iterations);
        cfg.solver.objective_tolerance =
            read_key<double>(s, "solver.", "objective_tolerance", cfg.solver.objective_tolerance);
        cfg.solver.gradient_tolerance =
            read_key<double>(s, "solver.", "gradient_tolerance", cfg.solver.gradient_tolerance);
        cfg.solver.max_step_halvings =
            read_key<int>(s, "solver.", "max_step_halvings", cfg.solver.max_step_halvings);
    }
    cfg.solver.validate();

    if (doc.contains("resample")) {
        const Json& r = doc["resample"];
        const std::string sc = "resample.";
        check_keys(r, sc, {"block_size", "replicates", "folds", "levels", "methods", "species", "tgb_pixel",
                           "quantiles"});
        if (r.contains("block_size")) {
            if (r["block_size"].is_array()) {
                const auto sides = read_key<std::vector<double>>(r, sc, "block_size", {});
                if (sides.size() != 2) bad_key(sc + "block_size", "expected a number or [x, y]");
                cfg.resample.block_x = sides[0];
                cfg.resample.block_y = sides[1];
            } else {
                cfg.resample.block_x = cfg.resample.block_y = read_key<double>(r, sc, "block_size", 0.0);
            }
            if (!(cfg.resample.block_x > 0.0) || !(cfg.resample.block_y > 0.0))
                bad_key(sc + "block_size", "block sides must be positive");
        }
        cfg.resample.replicates = read_key<std::size_t>(r, sc, "replicates", cfg.resample.replicates);
        cfg.resample.folds = read_key<std::size_t>(r, sc, "folds", cfg.resample.folds);
        cfg.resample.levels = read_key<std::vector<long>>(r, sc, "levels", cfg.resample.levels);
        cfg.resample.methods = read_key<std::vector<std::string>>(r, sc, "methods", {});
        for (const auto& name : cfg.resample.methods) parse_method(name);
        cfg.resample.species = read_key<std::vector<std::string>>(r, sc, "species", {});
        cfg.resample.tgb_pixel = read_key<double>(r, sc, "tgb_pixel", 0.0);
        const auto q = read_key<std::vector<double>>(r, sc, "quantiles", {});
        if (!q.empty()) {
            if (q.size() != 2 || !(0.0 <= q[0] && q[0] < q[1] && q[1] <= 1.0))
                bad_key(sc + "quantiles", "expected [lower, upper] within [0, 1]");
            cfg.resample.lower_quantile = q[0];
            cfg.resample.upper_quantile = q[1];
        }
    }

    if (doc.contains("predict")) {
        const Json& p = doc["predict"];
        check_keys(p, "predict.", {"coefficients", "area"});
        cfg.coefficients_path = resolve_path(base_dir, read_key<std::string>(p, "predict.", "coefficients", ""));
        cfg.predict_area = read_key<double>(p, "predict.", "area", 1.0);
        if (!(cfg.predict_area > 0.0)) bad_key("predict.area", "must be positive");
    }
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

std::string config_hash(const RunConfig& config) {
    Json canonical = config.document;
    canonical.erase("threads");
    canonical.erase("out");
    canonical.erase("deterministic");
    canonical["seed"] = config.seed;
    // Plain json sorts keys, so the hash ignores key order in the file.
    const std::string text = nlohmann::json::parse(canonical.dump()).dump();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

// ---------------------------------------------------------------------------

std::size_t Table::column(const std::string& name) const {
    const auto c = find_column(name);
    if (!c) throw DataError(source + ": missing column '" + name + "'");
    return *c;
}

std::optional<std::size_t> Table::find_column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
}

double Table::number(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row][col];
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value))
        throw DataError(source + ":" + std::to_string(lines[row]) + ": column '" + header[col] +
                        "': expected a number, got '" + s + "'");
    return value;
}

std::int64_t Table::integer(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row][col];
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw DataError(source + ":" + std::to_string(lines[row]) + ": column '" + header[col] +
                        "': expected an integer, got '" + s + "'");
    return value;
}

Table parse_table(const std::string& text, const std::string& source) {
    Table t;
    t.source = source;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    char delim = ',';
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
        if (t.header.empty()) {
            delim = line.find('\t') != std::string::npos && line.find(',') == std::string::npos ? '\t' : ',';
            t.header = split_line(line, delim);
            std::set<std::string> seen;
            for (const auto& h : t.header)
                if (h.empty() || !seen.insert(h).second)
                    throw DataError(source + ":" + std::to_string(line_no) + ": empty or repeated column name '" +
                                    h + "'");
            continue;
        }
        auto fields = split_line(line, delim);
        if (fields.size() != t.header.size())
            throw DataError(source + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(line_no);
    }
    if (t.header.empty()) throw DataError(source + ": no header row");
    return t;
}

Table read_table(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_table(buf.str(), path.string());
}

std::vector<std::string> expanded_names(const std::vector<std::string>& columns,
                                        const std::map<std::string, int>& degree) {
    std::vector<std::string> names;
    for (const auto& col : columns) {
        const auto it = degree.find(col);
        const int d = it == degree.end() ? 1 : it->second;
        names.push_back(col);
        for (int power = 2; power <= d; ++power) names.push_back(col + "^" + std::to_string(power));
    }
    return names;
}

CovariateField load_grid(const Table& grid, const ModelSpec& model) {
    return build_field(raw_from_table(grid), model);
}

DataBundle load_bundle(const RunConfig& config) {
    DataBundle bundle;
    if (config.simulate) {
        SimulatedData sim = simulate_bundle(config.simulate->simulation, config.simulate->design);
        bundle = std::move(sim.bundle);
        ModelSpec model = config.model;
        if (model.x_columns.empty()) model.x_columns = bundle.field->x_names();
        if (model.z_columns.empty() && !config.document.contains("model"))
            model.z_columns = bundle.field->z_names();
        else if (model.z_columns.empty() && !config.document["model"].contains("z"))
            model.z_columns = bundle.field->z_names();
        bundle.field = std::make_shared<CovariateField>(build_field(raw_from_field(*bundle.field), model));
        bundle.validate();
        return bundle;
    }
    if (config.grid_path.empty()) throw ConfigError("config has neither a data block nor a simulate block");

    auto field = std::make_shared<CovariateField>(load_grid(read_table(config.grid_path), config.model));
    bundle.field = field;

    // Species order: explicit list, else survey columns then presence-only
    // species in order of first appearance.
    std::vector<std::string> species = config.species;
    const bool fixed_species = !species.empty();
    auto species_index = [&](const std::string& name, const std::string& where) -> SpeciesId {
        const auto it = std::find(species.begin(), species.end(), name);
        if (it != species.end()) return static_cast<SpeciesId>(it - species.begin());
        if (fixed_species) throw DataError(where + ": species '" + name + "' is not in data.species");
        species.push_back(name);
        return species.size() - 1;
    };

    struct SurveyColumn {
        SpeciesId species;
        std::size_t column;
    };
    std::optional<Table> survey_table;
    std::vector<SurveyColumn> survey_columns;
    std::optional<std::size_t> c_site, c_cell, c_area;
    if (!config.survey_path.empty()) {
        survey_table = read_table(config.survey_path);
        c_site = survey_table->find_column("site_id");
        c_cell = survey_table->column("cell_id");
        c_area = survey_table->find_column("area");
        for (std::size_t j = 0; j < survey_table->header.size(); ++j) {
            if (j == c_site || j == c_cell || j == c_area) continue;
            survey_columns.push_back({species_index(survey_table->header[j], survey_table->source), j});
        }
    }

    std::vector<std::vector<PresenceRecord>> records;
    std::int64_t record_id = 0;
    for (const auto& path : config.presence_paths) {
        const Table po = read_table(path);
        const std::size_t c_sp = po.column("species");
        const std::size_t c_po_cell = po.column("cell_id");
        for (std::size_t i = 0; i < po.rows.size(); ++i) {
            const SpeciesId k = species_index(po.rows[i][c_sp], po.source + ":" + std::to_string(po.lines[i]));
            if (records.size() <= k) records.resize(k + 1);
            records[k].push_back({++record_id, cell_of(*field, po, i, c_po_cell)});
        }
    }
    if (species.empty()) throw DataError("no species found in the survey or presence-only inputs");
    records.resize(species.size());
    bundle.species = species;
    bundle.presence_only = PresenceOnlyDataset(std::move(records));

    if (survey_table) {
        const Table& t = *survey_table;
        const std::size_t n = t.rows.size();
        const std::size_t m = species.size();
        std::vector<SurveySite> sites(n);
        Matrix responses = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        std::vector<std::uint8_t> mask(n * m, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sites[i].site_id = c_site ? t.integer(i, *c_site) : static_cast<std::int64_t>(i + 1);
            sites[i].cell = cell_of(*field, t, i, *c_cell);
            sites[i].area = c_area ? t.number(i, *c_area) : field->area(sites[i].cell);
            if (!(sites[i].area > 0.0))
                throw DataError(t.source + ":" + std::to_string(t.lines[i]) + ": column 'area': must be positive");
            for (const auto& sc : survey_columns) {
                if (is_missing(t.rows[i][sc.column])) continue;
                const double y = t.number(i, sc.column);
                const bool ok = config.survey_kind == ResponseKind::binary
                                    ? (y == 0.0 || y == 1.0)
                                    : (y >= 0.0 && y == std::floor(y));
                if (!ok)
                    throw DataError(t.source + ":" + std::to_string(t.lines[i]) + ": column '" +
                                    t.header[sc.column] + "': " +
                                    (config.survey_kind == ResponseKind::binary ? "binary response must be 0 or 1"
                                                                                : "count must be a non-negative integer") +
                                    ", got '" + t.rows[i][sc.column] + "'");
                responses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(sc.species)) = y;
                mask[i * m + sc.species] = 1;
            }
        }
        bundle.survey = SurveyDataset(std::move(sites), std::move(responses), config.survey_kind, std::move(mask));
    }

    if (!config.background_path.empty()) {
        const Table bg = read_table(config.background_path);
        const std::size_t c_bg_cell = bg.column("cell_id");
        const std::size_t c_w = bg.column("weight");
        std::vector<BackgroundPoint> points;
        for (std::size_t i = 0; i < bg.rows.size(); ++i) {
            const double w = bg.number(i, c_w);
            if (!(w > 0.0))
                throw DataError(bg.source + ":" + std::to_string(bg.lines[i]) + ": column 'weight': must be positive");
            points.push_back({cell_of(*field, bg, i, c_bg_cell), w});
        }
        bundle.background = BackgroundSample(std::move(points));
    } else if (bundle.presence_only.total() > 0) {
        bundle.background = full_background(*field);
    }
    bundle.validate();
    return bundle;
}

std::vector<InteractionTerm> resolve_interactions(const RunConfig& config, const DataBundle& data) {
    std::vector<InteractionTerm> out;
    for (const auto& [sp, var] : config.model.interactions) {
        const auto k = std::find(data.species.begin(), data.species.end(), sp);
        if (k == data.species.end()) bad_key("model.interactions", "unknown species '" + sp + "'");
        const auto& z = data.field->z_names();
        const auto j = std::find(z.begin(), z.end(), var);
        if (j == z.end()) bad_key("model.interactions", "'" + var + "' is not a bias covariate");
        out.push_back({static_cast<SpeciesId>(k - data.species.begin()), static_cast<std::size_t>(j - z.begin())});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double value) {
    if (std::isnan(value)) return "NA";
    if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string dump_json(const Json& value, int indent) {
    std::string out;
    emit_json(value, indent, 0, out);
    out += "\n";
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << text;
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string provenance_line(const RunConfig& config) {
    return "# config_hash=" + config_hash(config) + " seed=" + std::to_string(config.seed) + "\n";
}

Json provenance(const RunConfig& config) {
    Json p;
    p["config_hash"] = config_hash(config);
    p["seed"] = config.seed;
    return p;
}

Json fit_document(const FitResult& fit, const DataBundle& data, const RunConfig& config) {
    const ParameterLayout& layout = fit.theta.layout;
    const CovariateField& field = *data.field;
    Json doc;
    doc["provenance"] = provenance(config);
    doc["species"] = data.species;
    doc["x_names"] = field.x_names();
    doc["z_names"] = field.z_names();
    Json inter = Json::array();
    for (const auto& t : layout.interactions())
        inter.push_back({{"species", data.species[t.species]}, {"bias_var", field.z_names()[t.bias_var]}});
    doc["interactions"] = inter;

    const Vector flat = fit.theta.flatten();
    Json theta = Json::array();
    Json coefs = Json::array();
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        theta.push_back(flat[ii]);
        Json c;
        c["index"] = i;
        c["name"] = layout.name(i, data.species, field.x_names(), field.z_names());
        c["estimate"] = flat[ii];
        c["estimated"] = static_cast<bool>(fit.estimated[i]);
        c["se"] = number_or_null(fit.standard_errors.size() > ii ? fit.standard_errors[ii] : NAN);
        coefs.push_back(c);
    }
    doc["theta"] = theta;
    doc["coefficients"] = coefs;
    Json anchored = Json::array();
    for (bool a : fit.anchored) anchored.push_back(a);
    doc["anchored"] = anchored;

    Json diag;
    diag["converged"] = fit.converged;
    diag["iterations"] = fit.iterations;
    diag["loglik"] = fit.loglik;
    diag["penalty"] = fit.penalty;
    diag["objective"] = fit.objective;
    diag["gradient_max_norm"] = fit.gradient_max_norm;
    diag["nu"] = config.solver.nu;
    diag["operations_per_iteration"] = fit.operations_per_iteration.total();
    diag["message"] = fit.message;
    doc["fit"] = diag;
    try {
        const Vector rho = relative_sampling_effort(fit);
        doc["relative_sampling_effort"] = std::vector<double>(rho.data(), rho.data() + rho.size());
    } catch (const NumericalError&) {
        doc["relative_sampling_effort"] = nullptr;
    }
    return doc;
}

LoadedCoefficients coefficients_from_json(const Json& doc) {
    LoadedCoefficients out;
    try {
        out.species = doc.at("species").get<std::vector<std::string>>();
        out.x_names = doc.at("x_names").get<std::vector<std::string>>();
        out.z_names = doc.at("z_names").get<std::vector<std::string>>();
        std::vector<InteractionTerm> inter;
        for (const Json& t : doc.at("interactions")) {
            const auto sp = t.at("species").get<std::string>();
            const auto var = t.at("bias_var").get<std::string>();
            const auto k = std::find(out.species.begin(), out.species.end(), sp);
            const auto j = std::find(out.z_names.begin(), out.z_names.end(), var);
            if (k == out.species.end() || j == out.z_names.end())
                throw DataError("coefficient file names an unknown interaction " + sp + ":" + var);
            inter.push_back({static_cast<SpeciesId>(k - out.species.begin()),
                             static_cast<std::size_t>(j - out.z_names.begin())});
        }
        const ParameterLayout layout(out.species.size(), out.x_names.size(), out.z_names.size(), inter);
        const auto values = doc.at("theta").get<std::vector<double>>();
        if (values.size() != layout.size())
            throw DimensionError("coefficient file has " + std::to_string(values.size()) + " values, expected " +
                                 std::to_string(layout.size()));
        out.theta = CoefficientSet::unflatten(layout, Eigen::Map<const Vector>(values.data(),
                                                                               static_cast<Eigen::Index>(values.size())));
        if (doc.contains("anchored")) out.anchored = doc["anchored"].get<std::vector<bool>>();
        out.anchored.resize(out.species.size(), true);
    } catch (const Json::exception& e) {
        throw DataError(std::string("malformed coefficient file: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("malformed coefficient file: ") + e.what());
    }
    return out;
}

LoadedCoefficients load_coefficients(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open coefficient file " + path.string());
    try {
        return coefficients_from_json(Json::parse(in));
    } catch (const Json::exception& e) {
        throw DataError("coefficient file " + path.string() + " is not valid JSON: " + e.what());
    }
}

std::string predictions_csv(const LoadedCoefficients& coefficients, const CovariateField& field, double area,
                            const RunConfig& config) {
    if (coefficients.x_names != field.x_names() || coefficients.z_names != field.z_names())
        throw DataError("coefficient covariates do not match the grid columns selected by the model");
    FitResult fit;
    fit.theta = coefficients.theta;
    fit.anchored = coefficients.anchored;
    std::string out = provenance_line(config);
    out += "cell_id,species,lambda,bias,presence_probability,relative_only\n";
    for (SpeciesId k = 0; k < coefficients.species.size(); ++k) {
        const IntensityPrediction pred = predict_intensity(fit, field, k);
        for (CellIndex c = 0; c < field.size(); ++c) {
            const auto cc = static_cast<Eigen::Index>(c);
            out += std::to_string(field.id(c)) + "," + csv_field(coefficients.species[k]) + "," +
                   format_double(pred.lambda[cc]) + "," + format_double(pred.bias[cc]) + "," +
                   format_double(-std::expm1(-area * pred.lambda[cc])) + "," +
                   (pred.relative_only ? "true" : "false") + "\n";
        }
    }
    return out;
}

std::string bootstrap_csv(const BootstrapResult& result, const FitResult& fit, const DataBundle& data,
                          const RunConfig& config) {
    const ParameterLayout& layout = fit.theta.layout;
    const Vector flat = fit.theta.flatten();
    std::string out = provenance_line(config);
    out += "# replicates=" + std::to_string(result.replicates.size()) + " failed=" + std::to_string(result.failed) +
           "\n";
    out += "index,name,estimate,lower,upper\n";
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const bool have = result.lower.size() > ii && fit.estimated[i];
        out += std::to_string(i) + "," +
               csv_field(layout.name(i, data.species, data.field->x_names(), data.field->z_names())) + "," +
               format_double(flat[ii]) + "," + format_double(have ? result.lower[ii] : NAN) + "," +
               format_double(have ? result.upper[ii] : NAN) + "\n";
    }
    return out;
}

std::string metrics_csv(const ComparisonResult& result, const DataBundle& data, const RunConfig& config) {
    std::string out = provenance_line(config);
    std::size_t leaked = 0;
    for (std::size_t l : result.leaked_rows) leaked += l;
    out += "# leaked_rows=" + std::to_string(leaked) + "\n";
    out += "method,species,level,predictive_loglik,auc,folds_loglik,folds_auc,relative_only,errors\n";
    for (const MetricRow& row : result.rows) {
        std::string errors;
        for (const auto& e : row.errors) errors += (errors.empty() ? "" : "; ") + e;
        out += to_string(row.method) + "," + csv_field(data.species[row.species]) + "," + std::to_string(row.level) +
               "," + format_double(row.predictive_loglik) + "," + format_double(row.auc) + "," +
               std::to_string(row.folds_loglik) + "," + std::to_string(row.folds_auc) + "," +
               (row.relative_only ? "true" : "false") + "," + csv_field(errors) + "\n";
    }
    return out;
}

std::string table_csv(const std::vector<TableRow>& table, const std::vector<Method>& methods, long level,
                      const DataBundle& data, const RunConfig& config) {
    std::string out = provenance_line(config);
    out += "species,method,level,auc,within_0.01_of_best\n";
    for (const TableRow& row : table)
        for (std::size_t i = 0; i < methods.size(); ++i)
            out += csv_field(data.species[row.species]) + "," + to_string(methods[i]) + "," + std::to_string(level) +
                   "," + format_double(row.auc[i]) + "," + (row.near_best[i] ? "true" : "false") + "\n";
    return out;
}

} // namespace mspp
