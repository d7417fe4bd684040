#pragma once

// Synthetic data on a regular grid of cells: i.i.d. multivariate normal
// covariates, Poisson species counts per cell, binomial thinning into
// presence-only records, and survey quadrats placed on chosen cells.

#include "mspp/core_model.hpp"
#include "mspp/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mspp {

struct SimulationConfig {
    std::size_t n_cells = 40000;
    /// Covariance of (x_1..x_p, z_1..z_r); the covariates have mean zero.
    Matrix covariance;
    CoefficientSet true_theta;
    double cell_area = 1.0;
    std::uint64_t rng_seed = 1;
    std::vector<std::string> species;  // defaults to sp1..spm
    std::vector<std::string> x_names;
    std::vector<std::string> z_names;

    /// Throws ConfigError when dimensions disagree or the covariance is not
    /// symmetric positive definite.
    void validate() const;
};

/// The covariance used in the three-covariate experiment: unit variances,
/// Cov(x1, z) = 0.95, x2 independent of both.
Matrix correlated_covariance(double correlation = 0.95);

/// n_cells cells on a square grid of spacing sqrt(cell_area); covariates drawn
/// from N(0, covariance). Deterministic in rng_seed.
CovariateField simulate_covariates(const SimulationConfig& config);

/// Count in cell c ~ Poisson(area_c * exp(alpha_k + beta_k'x_c)). An alpha of
/// -infinity gives zero intensity. Throws OverflowError naming the cell.
std::vector<std::int64_t> simulate_species_process(const CovariateField& field,
                                                   const CoefficientSet& theta, SpeciesId k,
                                                   Philox& rng);

/// Keeps each individual independently with probability
/// b_k = exp(gamma_k + delta'z). Throws DataError if b_k > 1 on an occupied cell.
std::vector<PresenceRecord> thin_process(std::span<const std::int64_t> counts,
                                         const CovariateField& field, const CoefficientSet& theta,
                                         SpeciesId k, Philox& rng);

/// Survey quadrats covering whole cells. Binary responses record count > 0;
/// count responses copy the count.
SurveyDataset make_survey(const CovariateField& field,
                          const std::vector<std::vector<std::int64_t>>& counts,
                          std::span<const CellIndex> site_cells, ResponseKind kind);

/// n distinct cell indices drawn uniformly from [0, n_cells).
std::vector<CellIndex> sample_cells(std::size_t n_cells, std::size_t n, Philox& rng);

struct SurveyDesign {
    std::size_t n_sites = 500;
    ResponseKind kind = ResponseKind::binary;
    /// Background points drawn uniformly without replacement, each weighted
    /// |D| / n. Zero uses every cell weighted by its area.
    std::size_t n_background = 0;
};

struct SimulatedData {
    DataBundle bundle;
    std::vector<std::vector<std::int64_t>> counts;  // per species, per cell
};

/// Runs the full pipeline with independent streams for covariates, each
/// species, each thinning, site placement and background.
SimulatedData simulate_bundle(const SimulationConfig& config, const SurveyDesign& design);

} // namespace mspp
