#pragma once

// Configuration documents, delimited-text inputs and artifact serialization.

#include "mspp/core_model.hpp"
#include "mspp/evaluate.hpp"
#include "mspp/simulate.hpp"
#include "mspp/solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mspp {

using Json = nlohmann::ordered_json;

struct ModelSpec {
    std::vector<std::string> x_columns;
    std::vector<std::string> z_columns;
    std::map<std::string, int> degree;  // polynomial degree per column, default 1
    std::vector<std::pair<std::string, std::string>> interactions;  // (species, bias column)
    bool bias_terms = true;
};

struct SimulateSpec {
    SimulationConfig simulation;
    SurveyDesign design;
};

struct ResampleSpec {
    double block_x = 0.0;  // block sides; zero picks a tenth of the extent
    double block_y = 0.0;
    std::size_t replicates = 200;
    std::size_t folds = 10;
    std::vector<long> levels = {-1};
    std::vector<std::string> methods;
    std::vector<std::string> species;
    double tgb_pixel = 0.0;  // zero uses the native cells
    double lower_quantile = 0.025;
    double upper_quantile = 0.975;
};

struct RunConfig {
    Json document;  // after flag overrides
    std::filesystem::path base_dir;

    std::string grid_path;
    std::string survey_path;
    ResponseKind survey_kind = ResponseKind::binary;
    std::vector<std::string> presence_paths;
    std::string background_path;
    std::vector<std::string> species;  // optional explicit order
    std::optional<SimulateSpec> simulate;

    ModelSpec model;
    SolverOptions solver;
    ResampleSpec resample;

    std::string coefficients_path;  // input of predict
    double predict_area = 1.0;

    std::string out_dir = "out";
    std::uint64_t seed = 1;
    unsigned threads = 0;
    bool deterministic = true;
};

/// Throws ConfigError naming the offending key.
RunConfig parse_config(const Json& document, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical dump of the document, ignoring keys that cannot
/// change results (threads, deterministic, out). 16 hex digits.
std::string config_hash(const RunConfig& config);

// ---------------------------------------------------------------------------
// Delimited text

struct Table {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;  // 1-based line number of each row

    /// Throws DataError when the column is absent.
    std::size_t column(const std::string& name) const;
    std::optional<std::size_t> find_column(const std::string& name) const;
    /// Parses a number, throwing DataError with file, line and column.
    double number(std::size_t row, std::size_t col) const;
    std::int64_t integer(std::size_t row, std::size_t col) const;
};

/// Comma- or tab-separated text with a header row. Blank lines and lines
/// starting with '#' are skipped; double-quoted fields may contain the
/// delimiter.
Table read_table(const std::filesystem::path& path);
Table parse_table(const std::string& text, const std::string& source);

/// Covariate names after expansion: x1, x1^2, ..., x2.
std::vector<std::string> expanded_names(const std::vector<std::string>& columns,
                                        const std::map<std::string, int>& degree);

/// Grid with columns cell_id, x, y, area and covariates.
CovariateField load_grid(const Table& grid, const ModelSpec& model);

/// Reads (or simulates) every input named by the config and validates the
/// result.
DataBundle load_bundle(const RunConfig& config);

std::vector<InteractionTerm> resolve_interactions(const RunConfig& config, const DataBundle& data);

// ---------------------------------------------------------------------------
// Output

/// printf("%.17g"); NaN and infinities become "NA" / "Inf" / "-Inf".
std::string format_double(double value);

/// JSON text with doubles written to 17 significant digits (non-finite
/// values become null). Deterministic for a given document.
std::string dump_json(const Json& value, int indent = 2);

/// Writes atomically (temporary file then rename).
void write_text(const std::filesystem::path& path, const std::string& text);

/// "# config_hash=<h> seed=<s>\n"
std::string provenance_line(const RunConfig& config);
Json provenance(const RunConfig& config);

/// Coefficients, standard errors and fit diagnostics.
Json fit_document(const FitResult& fit, const DataBundle& data, const RunConfig& config);

struct LoadedCoefficients {
    CoefficientSet theta;
    std::vector<std::string> species;
    std::vector<std::string> x_names;
    std::vector<std::string> z_names;
    std::vector<bool> anchored;
};

/// Reads the `theta` array and layout of a fit document.
LoadedCoefficients load_coefficients(const std::filesystem::path& path);
LoadedCoefficients coefficients_from_json(const Json& document);

std::string predictions_csv(const LoadedCoefficients& coefficients, const CovariateField& field,
                            double area, const RunConfig& config);
std::string bootstrap_csv(const BootstrapResult& result, const FitResult& fit, const DataBundle& data,
                          const RunConfig& config);
std::string metrics_csv(const ComparisonResult& result, const DataBundle& data, const RunConfig& config);
std::string table_csv(const std::vector<TableRow>& table, const std::vector<Method>& methods, long level,
                      const DataBundle& data, const RunConfig& config);

} // namespace mspp
