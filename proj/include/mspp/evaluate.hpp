#pragma once

// Predictions, predictive metrics and the method-comparison harness.

#include "mspp/core_model.hpp"
#include "mspp/resample.hpp"
#include "mspp/solver.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mspp {

struct IntensityPrediction {
    Vector lambda;  // exp(alpha_k + beta_k'x) per cell
    Vector bias;    // exp(gamma_k + delta'z) per cell
    /// alpha_k was not pinned down by survey data, so lambda is only known up
    /// to a constant factor.
    bool relative_only = false;
};

IntensityPrediction predict_intensity(const FitResult& fit, const CovariateField& field, SpeciesId k);

/// 1 - exp(-area * lambda) per cell.
Vector presence_probability(const FitResult& fit, const CovariateField& field, SpeciesId k, double area);

/// Survey log-likelihood of held-out sites at the fitted coefficients.
double predictive_loglik(const FitResult& fit, const SurveyDataset& heldout,
                         const CovariateField& field, SpeciesId k);

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Throws DataError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// rho_k = exp(gamma_k) / min_k' exp(gamma_k'). Throws NumericalError if any
/// gamma_k was not estimated.
Vector relative_sampling_effort(const FitResult& fit);

/// Background restricted to sighted cells: those holding at least one presence
/// record of any species. With `pixels`, sighting is decided per pixel and
/// every cell of a sighted pixel is kept. Weights are equal and sum to the
/// retained area. Throws DataError when nothing was sighted.
BackgroundSample tgb_background(const PresenceOnlyDataset& po, const CovariateField& field,
                                const BlockPartition* pixels = nullptr);

enum class Method { pa_only, po_unadjusted, po_adjusted, pa_po_single, pooled_all, tgb_all };

std::string to_string(Method method);
/// Accepts the upper-case names used in tables, e.g. "POOLED_ALL".
Method parse_method(const std::string& name);

struct MethodSpec {
    Method method = Method::pooled_all;
    SpeciesId species = 0;  // target species
};

/// Fit produced by one method, with the position of the target species inside
/// it.
struct MethodFit {
    FitResult fit;
    SpeciesId species = 0;
};

/// Copy of `data` holding only species k.
DataBundle select_species(const DataBundle& data, SpeciesId k, bool keep_survey, bool keep_presence);

MethodFit fit_method(const DataBundle& data, const MethodSpec& spec, const SolverOptions& options,
                     const BlockPartition* tgb_pixels = nullptr);

struct ComparisonConfig {
    std::vector<Method> methods;
    std::vector<SpeciesId> species;  // empty means every species
    BlockPartition partition;
    std::size_t n_folds = 10;
    std::uint64_t seed = 1;
    /// Training survey sizes for the target species; -1 keeps every site.
    /// Levels above the available count are clipped to it.
    std::vector<long> levels = {-1};
    SolverOptions solver;
    std::optional<BlockPartition> tgb_pixels;
};

struct MetricRow {
    Method method = Method::pooled_all;
    SpeciesId species = 0;
    long level = -1;
    double predictive_loglik = 0.0;  // NaN when skipped
    double auc = 0.0;                // NaN when no fold had both classes
    std::size_t folds_loglik = 0;
    std::size_t folds_auc = 0;
    bool relative_only = false;
    std::vector<std::string> errors;
};

struct ComparisonResult {
    std::vector<MetricRow> rows;
    std::vector<std::size_t> leaked_rows;  // per fold
};

/// Block cross-validation of every method for every target species and
/// downsampling level. Metrics are averaged over folds; predictive
/// log-likelihood is skipped when the method cannot identify alpha_k.
ComparisonResult run_comparison(const DataBundle& data, const ComparisonConfig& config);

/// One row per species: AUC of each method at one level and whether it comes
/// within 0.01 of the best method for that species.
struct TableRow {
    SpeciesId species = 0;
    std::vector<double> auc;        // parallel to the requested methods
    std::vector<bool> near_best;
};

std::vector<TableRow> summary_table(const std::vector<MetricRow>& rows,
                                    const std::vector<Method>& methods, long level);

} // namespace mspp
