#pragma once

// Penalized maximum likelihood for the joint model by Newton's method, with
// each linear system solved by eliminating the per-species blocks onto the
// shared bias block (a Schur complement). This is the normal-equations form
// of the partitioned least-squares scheme: A_k^{-1} B_k and A_k^{-1} g_k are
// the per-species regression coefficients of the bias columns and of the
// working response on the species columns.

#include "mspp/core_model.hpp"
#include "mspp/design.hpp"

#include <array>
#include <vector>

namespace mspp {

struct SolverOptions {
    double nu = 0.0;                  // ridge multiplier on beta, delta and interactions
    int max_iterations = 100;
    double objective_tolerance = 1e-10;  // relative change of the penalized objective
    double gradient_tolerance = 1e-6;    // max-norm of the penalized gradient
    int max_step_halvings = 30;
    unsigned threads = 1;
    /// Reductions over species are always performed in species order; the flag
    /// is carried so callers can record the request.
    bool deterministic = true;

    /// Throws ConfigError for a negative nu or non-positive tolerances.
    void validate() const;
};

/// Which coefficients the model contains beyond (alpha_k, beta_k).
struct ModelOptions {
    /// When false gamma and delta are fixed at zero: presence-only data are
    /// fitted as an unthinned process.
    bool bias_terms = true;
    std::vector<InteractionTerm> interactions;
};

/// Negative-Hessian blocks and gradient of the penalized objective at one
/// iterate. Curvature blocks exclude the ridge term; newton_step adds it.
struct NormalEquationBlocks {
    std::vector<Matrix> species;       // A_k: (p+2+q_k) square
    std::vector<Matrix> species_bias;  // B_k: (p+2+q_k) x r
    Matrix bias;                       // C: r x r
    std::vector<Vector> species_gradient;  // g_k
    Vector bias_gradient;                  // h
    std::vector<std::vector<std::uint8_t>> species_penalized;
    std::vector<std::vector<std::uint8_t>> species_free;
    std::vector<std::uint8_t> bias_free;
};

struct BlockStep {
    std::vector<Vector> species;
    Vector bias;
};

/// Solves the penalized normal equations by per-species elimination. Fixed
/// coefficients get a zero step. Throws SingularSystemError naming the block.
BlockStep newton_step(const NormalEquationBlocks& blocks, double nu, OperationCount* ops = nullptr);

/// Inverse-information pieces for the penalized blocks.
InformationBlocks invert_information(const NormalEquationBlocks& blocks, double nu,
                                     const ParameterLayout& layout);

/// Which coefficients a fit estimates, following the data that are present.
struct FreeParameters {
    std::vector<bool> coefficient;  // per flattened coefficient
    std::vector<bool> anchored;     // per species: survey data pin down alpha_k
};

/// Throws UnidentifiableError when a species has neither survey rows nor
/// presence records.
FreeParameters free_parameters(const BlockDesign& design, const std::vector<std::string>& species,
                               const ModelOptions& model);

/// Assembles the blocks at theta. Exposed for tests.
NormalEquationBlocks assemble_blocks(const BlockDesign& design, const CoefficientSet& theta,
                                     const FreeParameters& free, double nu, unsigned threads,
                                     OperationCount* ops = nullptr);

/// Fits the joint model. Non-convergence returns the best iterate with
/// converged = false; unidentifiable or singular problems throw.
FitResult fit(const DataBundle& data, const SolverOptions& options, const ModelOptions& model = {});

/// Same as fit() but starting from a supplied coefficient vector.
FitResult fit_from(const DataBundle& data, const SolverOptions& options, const ModelOptions& model,
                   const CoefficientSet& start);

struct WaldRegion {
    std::array<std::size_t, 2> coefficients{};
    Eigen::Vector2d center;
    Eigen::Matrix2d covariance;
    double level = 0.95;

    /// Squared Mahalanobis radius: the chi-square(2) quantile at `level`.
    double radius_squared() const;
    double area() const;
    bool contains(const Eigen::Vector2d& point) const;
};

/// Wald confidence ellipse for two coefficients (flattened indices). Throws
/// NumericalError if either coefficient was not estimated or the 2x2
/// covariance is not positive definite.
WaldRegion wald_region(const FitResult& fit, std::size_t first, std::size_t second, double level = 0.95);

} // namespace mspp
