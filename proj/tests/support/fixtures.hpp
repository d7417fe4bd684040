#pragma once

// Small synthetic data sets for tests.

#include "mspp/core_model.hpp"
#include "mspp/rng.hpp"
#include "mspp/simulate.hpp"

#include <cstdint>
#include <memory>

namespace mspp::testing {

struct InstanceShape {
    std::size_t m = 3, p = 2, r = 1;
    std::size_t n_cells = 200;
    std::size_t n_sites = 120;
    double survey_share = 0.6;  // probability a species gets survey data
    double po_share = 0.7;      // probability a species gets presence records
    ResponseKind kind = ResponseKind::binary;
};

/// Random field, coefficients and data with every species observed somehow.
/// The background is every cell, weighted by area.
struct Instance {
    DataBundle data;
    CoefficientSet truth;
};

Instance random_instance(std::uint64_t seed, const InstanceShape& shape);

/// Random shape within the bounds used by the solver equivalence check.
InstanceShape random_shape(Philox& rng);

/// Field on an nx x ny unit grid with the given covariates.
std::shared_ptr<const CovariateField> grid_field(std::size_t nx, std::size_t ny, const RowMatrix& x,
                                                 const RowMatrix& z);

/// Two x and one z covariate with Cov(x1, z) = 0.95; true coefficients of the
/// first species are (-2, 1, -0.5, -4, -0.3); the others share delta.
SimulationConfig three_covariate_config(std::size_t m, std::size_t n_cells, double cell_area,
                                        std::uint64_t seed);

} // namespace mspp::testing
