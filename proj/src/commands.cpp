#include "mspp/commands.hpp"

#include "mspp/parallel.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>

namespace mspp {

namespace fs = std::filesystem;

namespace {

std::optional<unsigned> env_threads() {
    const char* env = std::getenv("MSPP_THREADS");
    if (!env) return std::nullopt;
    try {
        const long value = std::stol(env);
        if (value > 0) return static_cast<unsigned>(value);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("MSPP_THREADS must be a positive integer, got '") + env + "'");
}

fs::path out_path(const RunConfig& config, const std::string& name) { return fs::path(config.out_dir) / name; }

ModelOptions model_options(const RunConfig& config, const DataBundle& data) {
    ModelOptions model;
    model.bias_terms = config.model.bias_terms;
    model.interactions = resolve_interactions(config, data);
    return model;
}

BlockPartition partition_for(const RunConfig& config, const CovariateField& field) {
    double sx = config.resample.block_x;
    double sy = config.resample.block_y;
    if (sx <= 0.0 || sy <= 0.0) {
        const auto& xy = field.coords();
        const double ex = xy.col(0).maxCoeff() - xy.col(0).minCoeff();
        const double ey = xy.col(1).maxCoeff() - xy.col(1).minCoeff();
        sx = ex > 0.0 ? ex / 10.0 : 1.0;
        sy = ey > 0.0 ? ey / 10.0 : 1.0;
    }
    return make_partition(field, sx, sy);
}

std::vector<SpeciesId> target_species(const RunConfig& config, const DataBundle& data) {
    std::vector<SpeciesId> out;
    for (const auto& name : config.resample.species) {
        const auto it = std::find(data.species.begin(), data.species.end(), name);
        if (it == data.species.end()) throw ConfigError("resample.species: unknown species '" + name + "'");
        out.push_back(static_cast<SpeciesId>(it - data.species.begin()));
    }
    return out;
}

ComparisonConfig comparison_config(const RunConfig& config, const DataBundle& data,
                                   std::vector<Method> default_methods) {
    ComparisonConfig cc;
    for (const auto& name : config.resample.methods) cc.methods.push_back(parse_method(name));
    if (cc.methods.empty()) cc.methods = std::move(default_methods);
    cc.species = target_species(config, data);
    cc.partition = partition_for(config, *data.field);
    cc.n_folds = config.resample.folds;
    cc.seed = config.seed;
    cc.levels = config.resample.levels;
    cc.solver = config.solver;
    if (config.resample.tgb_pixel > 0.0)
        cc.tgb_pixels = make_partition(*data.field, config.resample.tgb_pixel, config.resample.tgb_pixel);
    return cc;
}

std::string grid_csv(const CovariateField& field, const RunConfig& config) {
    std::string out = provenance_line(config);
    out += "cell_id,x,y,area";
    for (const auto& n : field.x_names()) out += "," + n;
    for (const auto& n : field.z_names()) out += "," + n;
    out += "\n";
    for (CellIndex c = 0; c < field.size(); ++c) {
        out += std::to_string(field.id(c)) + "," + format_double(field.coord_x(c)) + "," +
               format_double(field.coord_y(c)) + "," + format_double(field.area(c));
        for (std::size_t j = 0; j < field.p(); ++j) out += "," + format_double(field.x(c)[static_cast<Eigen::Index>(j)]);
        for (std::size_t j = 0; j < field.r(); ++j) out += "," + format_double(field.z(c)[static_cast<Eigen::Index>(j)]);
        out += "\n";
    }
    return out;
}

std::string survey_csv(const SurveyDataset& survey, const DataBundle& data, const RunConfig& config) {
    std::string out = provenance_line(config);
    out += "site_id,cell_id,area";
    for (const auto& s : data.species) out += "," + s;
    out += "\n";
    for (std::size_t i = 0; i < survey.n_sites(); ++i) {
        const SurveySite& site = survey.site(i);
        out += std::to_string(site.site_id) + "," + std::to_string(data.field->id(site.cell)) + "," +
               format_double(site.area);
        for (SpeciesId k = 0; k < data.m(); ++k)
            out += "," + (survey.observed(i, k) ? format_double(survey.response(i, k)) : std::string("NA"));
        out += "\n";
    }
    return out;
}

} // namespace

RunConfig resolve_config(const CommandLine& cli) {
    if (cli.config_path.empty()) throw ConfigError("--config is required");
    const fs::path path(cli.config_path);
    std::ifstream probe(path);
    if (!probe) throw ConfigError("cannot open config file " + path.string());
    Json doc;
    try {
        doc = Json::parse(probe);
    } catch (const Json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    if (cli.seed) doc["seed"] = *cli.seed;
    if (cli.deterministic) doc["deterministic"] = true;
    RunConfig config = parse_config(doc, path.parent_path());
    if (cli.out) config.out_dir = *cli.out;
    if (cli.threads) {
        if (*cli.threads == 0) throw ConfigError("--threads must be positive");
        config.threads = *cli.threads;
    } else if (const auto env = env_threads()) {
        config.threads = *env;
    }
    config.solver.threads = resolve_threads(config.threads);
    config.solver.deterministic = config.deterministic;
    return config;
}

int exit_code_for(const Error& error) {
    if (dynamic_cast<const ConfigError*>(&error)) return exit_config;
    if (dynamic_cast<const DataError*>(&error)) return exit_data;
    if (dynamic_cast<const NumericalError*>(&error)) return exit_numerical;
    return exit_failure;
}

std::string error_record(const std::string& kind, int exit_code, const std::string& message) {
    Json rec;
    rec["error"] = {{"kind", kind}, {"exit_code", exit_code}, {"message", message}};
    return rec.dump();
}

int cmd_simulate(const RunConfig& config) {
    if (!config.simulate) throw ConfigError("simulate needs a simulate block in the config");
    const SimulatedData sim = simulate_bundle(config.simulate->simulation, config.simulate->design);
    const DataBundle& data = sim.bundle;
    write_text(out_path(config, "grid.csv"), grid_csv(*data.field, config));
    if (data.survey) write_text(out_path(config, "survey.csv"), survey_csv(*data.survey, data, config));
    std::string po = provenance_line(config) + "species,cell_id\n";
    for (SpeciesId k = 0; k < data.m(); ++k)
        for (const auto& rec : data.presence_only.records(k))
            po += data.species[k] + "," + std::to_string(data.field->id(rec.cell)) + "\n";
    write_text(out_path(config, "presence_only.csv"), po);
    const bool sampled_background = config.simulate->design.n_background > 0;
    if (sampled_background) {
        std::string bg = provenance_line(config) + "cell_id,weight\n";
        for (const auto& pt : data.background.points())
            bg += std::to_string(data.field->id(pt.cell)) + "," + format_double(pt.weight) + "\n";
        write_text(out_path(config, "background.csv"), bg);
    }

    FitResult truth;
    truth.theta = config.simulate->simulation.true_theta;
    truth.estimated.assign(truth.theta.layout.size(), true);
    truth.anchored.assign(data.m(), true);
    truth.standard_errors = Vector::Constant(static_cast<Eigen::Index>(truth.theta.layout.size()), NAN);
    Json truth_doc = fit_document(truth, data, config);
    truth_doc.erase("fit");
    write_text(out_path(config, "truth.json"), dump_json(truth_doc));

    // A config that reads the files just written.
    Json next = config.document;
    next.erase("simulate");
    next.erase("out");
    Json d;
    d["grid"] = "grid.csv";
    if (data.survey) d["survey"] = "survey.csv";
    d["survey_kind"] = config.simulate->design.kind == ResponseKind::binary ? "binary" : "count";
    d["presence_only"] = "presence_only.csv";
    if (sampled_background) d["background"] = "background.csv";
    d["species"] = data.species;
    next["data"] = d;
    if (!next.contains("model")) next["model"] = Json::object();
    if (!next["model"].contains("x")) next["model"]["x"] = data.field->x_names();
    if (!next["model"].contains("z")) next["model"]["z"] = data.field->z_names();
    write_text(out_path(config, "data_config.json"), dump_json(next));
    return exit_ok;
}

int cmd_fit(const RunConfig& config) {
    const DataBundle data = load_bundle(config);
    const FitResult result = fit(data, config.solver, model_options(config, data));
    write_text(out_path(config, "coefficients.json"), dump_json(fit_document(result, data, config)));
    if (!result.converged)
        throw NumericalError("fit did not converge after " + std::to_string(result.iterations) +
                             " iterations: " + result.message);
    return exit_ok;
}

int cmd_predict(const RunConfig& config) {
    const DataBundle data = load_bundle(config);
    const fs::path coef_path =
        config.coefficients_path.empty() ? out_path(config, "coefficients.json") : fs::path(config.coefficients_path);
    const LoadedCoefficients coefficients = load_coefficients(coef_path);
    write_text(out_path(config, "predictions.csv"),
               predictions_csv(coefficients, *data.field, config.predict_area, config));
    return exit_ok;
}

int cmd_bootstrap(const RunConfig& config) {
    const DataBundle data = load_bundle(config);
    const ModelOptions model = model_options(config, data);
    const FitResult full = fit(data, config.solver, model);
    if (!full.converged) throw NumericalError("fit to the full data did not converge: " + full.message);
    const BlockPartition partition = partition_for(config, *data.field);
    SolverOptions inner = config.solver;
    const BootstrapResult boot =
        block_bootstrap(data, partition, config.resample.replicates, inner, model, config.seed,
                        config.resample.lower_quantile, config.resample.upper_quantile);
    write_text(out_path(config, "bootstrap.csv"), bootstrap_csv(boot, full, data, config));
    if (boot.replicates.empty()) throw NumericalError("every bootstrap replicate failed");
    return exit_ok;
}

int cmd_cv(const RunConfig& config) {
    const DataBundle data = load_bundle(config);
    const ComparisonConfig cc = comparison_config(config, data, {Method::pooled_all});
    const ComparisonResult result = run_comparison(data, cc);
    write_text(out_path(config, "cv_metrics.csv"), metrics_csv(result, data, config));

    const FoldAssignment folds = block_cv_folds(cc.partition, cc.n_folds, cc.seed);
    std::string text = provenance_line(config) + "block,fold\n";
    for (std::size_t b = 0; b < folds.fold_of_block.size(); ++b)
        text += std::to_string(b) + "," + std::to_string(folds.fold_of_block[b]) + "\n";
    write_text(out_path(config, "folds.csv"), text);
    return exit_ok;
}

int cmd_compare(const RunConfig& config) {
    const DataBundle data = load_bundle(config);
    const std::vector<Method> table_methods = {Method::pa_only, Method::pa_po_single, Method::pooled_all,
                                               Method::tgb_all};
    const ComparisonConfig cc = comparison_config(config, data, table_methods);
    const ComparisonResult result = run_comparison(data, cc);
    write_text(out_path(config, "compare_metrics.csv"), metrics_csv(result, data, config));

    std::string table;
    for (std::size_t li = 0; li < cc.levels.size(); ++li) {
        const long level = cc.levels[li];
        std::string part = table_csv(summary_table(result.rows, cc.methods, level), cc.methods, level, data, config);
        if (li > 0) part = part.substr(part.find('\n', part.find('\n') + 1) + 1);  // drop repeated header
        table += part;
    }
    write_text(out_path(config, "auc_summary.csv"), table);
    return exit_ok;
}

int run_command(const CommandLine& cli, std::ostream& err) {
    try {
        const RunConfig config = resolve_config(cli);
        if (cli.command == "simulate") return cmd_simulate(config);
        if (cli.command == "fit") return cmd_fit(config);
        if (cli.command == "predict") return cmd_predict(config);
        if (cli.command == "bootstrap") return cmd_bootstrap(config);
        if (cli.command == "cv") return cmd_cv(config);
        if (cli.command == "compare") return cmd_compare(config);
        throw ConfigError("unknown command '" + cli.command + "'");
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        err << error_record(e.kind(), code, e.what()) << "\n";
        return code;
    } catch (const fs::filesystem_error& e) {
        err << error_record("io", exit_data, e.what()) << "\n";
        return exit_data;
    } catch (const std::exception& e) {
        err << error_record("internal", exit_failure, e.what()) << "\n";
        return exit_failure;
    }
}

} // namespace mspp
