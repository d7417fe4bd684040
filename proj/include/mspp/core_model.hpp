#pragma once

// Domain types shared by every module: the discretized covariate field, the
// three kinds of observations, the coefficient vector and fit results.
//
// Species are indexed 0..m-1 internally. The flattened coefficient vector is
// ordered (alpha_1, beta_1, gamma_1, ..., alpha_m, beta_m, gamma_m, delta)
// followed by any species-specific bias interactions.

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mspp/error.hpp"

namespace mspp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorRef = Eigen::Ref<const Vector>;

using SpeciesId = std::size_t;
using CellIndex = std::size_t;

// ---------------------------------------------------------------------------
// Covariate field

class CovariateField {
public:
    /// `coords` is n x 2, `x` is n x p and `z` is n x r. Throws DataError when
    /// ids repeat, an area is not positive, or sizes disagree.
    CovariateField(std::vector<std::int64_t> ids, RowMatrix coords, Vector areas, RowMatrix x,
                   RowMatrix z, std::vector<std::string> x_names = {},
                   std::vector<std::string> z_names = {});

    std::size_t size() const { return ids_.size(); }
    std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }
    std::size_t r() const { return static_cast<std::size_t>(z_.cols()); }

    std::int64_t id(CellIndex c) const { return ids_[c]; }
    std::optional<CellIndex> find(std::int64_t id) const;
    /// Throws DataError for an unknown id.
    CellIndex index_of(std::int64_t id) const;

    double area(CellIndex c) const { return areas_[static_cast<Eigen::Index>(c)]; }
    double coord_x(CellIndex c) const { return coords_(static_cast<Eigen::Index>(c), 0); }
    double coord_y(CellIndex c) const { return coords_(static_cast<Eigen::Index>(c), 1); }
    auto x(CellIndex c) const { return x_.row(static_cast<Eigen::Index>(c)); }
    auto z(CellIndex c) const { return z_.row(static_cast<Eigen::Index>(c)); }

    const std::vector<std::int64_t>& ids() const { return ids_; }
    const RowMatrix& coords() const { return coords_; }
    const Vector& areas() const { return areas_; }
    const RowMatrix& x_matrix() const { return x_; }
    const RowMatrix& z_matrix() const { return z_; }
    const std::vector<std::string>& x_names() const { return x_names_; }
    const std::vector<std::string>& z_names() const { return z_names_; }
    double total_area() const { return areas_.sum(); }

private:
    std::vector<std::int64_t> ids_;
    RowMatrix coords_;
    Vector areas_;
    RowMatrix x_;
    RowMatrix z_;
    std::vector<std::string> x_names_;
    std::vector<std::string> z_names_;
    std::unordered_map<std::int64_t, CellIndex> index_;
};

// ---------------------------------------------------------------------------
// Observations

enum class ResponseKind { binary, count };

struct SurveySite {
    std::int64_t site_id = 0;
    CellIndex cell = 0;
    double area = 1.0;  // quadrat area |A_i|
};

/// Presence-absence or count responses for m species at a set of quadrats.
/// Missing (site, species) responses are tracked by a mask.
class SurveyDataset {
public:
    /// `responses` is n_sites x m. `observed` is row-major n_sites x m; empty
    /// means fully observed. Values under the mask are ignored.
    SurveyDataset(std::vector<SurveySite> sites, Matrix responses, ResponseKind kind,
                  std::vector<std::uint8_t> observed = {});

    std::size_t n_sites() const { return sites_.size(); }
    std::size_t n_species() const { return static_cast<std::size_t>(responses_.cols()); }
    ResponseKind kind() const { return kind_; }
    const SurveySite& site(std::size_t i) const { return sites_[i]; }
    const std::vector<SurveySite>& sites() const { return sites_; }
    double response(std::size_t i, SpeciesId k) const {
        return responses_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
    bool observed(std::size_t i, SpeciesId k) const { return observed_[i * n_species() + k] != 0; }
    std::size_t n_observed(SpeciesId k) const;
    const Matrix& responses() const { return responses_; }

    /// Copy with the observation mask of species k replaced.
    SurveyDataset with_species_mask(SpeciesId k, const std::vector<std::uint8_t>& mask) const;
    /// Rows in the given order; repeats are kept.
    SurveyDataset subset(std::span<const std::size_t> rows) const;

private:
    std::vector<SurveySite> sites_;
    Matrix responses_;
    ResponseKind kind_;
    std::vector<std::uint8_t> observed_;
};

struct PresenceRecord {
    std::int64_t record_id = 0;
    CellIndex cell = 0;
};

/// Presence-only records, one list per species.
class PresenceOnlyDataset {
public:
    PresenceOnlyDataset() = default;
    explicit PresenceOnlyDataset(std::size_t n_species) : records_(n_species) {}
    explicit PresenceOnlyDataset(std::vector<std::vector<PresenceRecord>> records)
        : records_(std::move(records)) {}

    std::size_t n_species() const { return records_.size(); }
    const std::vector<PresenceRecord>& records(SpeciesId k) const { return records_[k]; }
    std::size_t size(SpeciesId k) const { return records_[k].size(); }
    std::size_t total() const;

private:
    std::vector<std::vector<PresenceRecord>> records_;
};

struct BackgroundPoint {
    CellIndex cell = 0;
    double weight = 0.0;
};

/// Quadrature points for the presence-only integral.
class BackgroundSample {
public:
    BackgroundSample() = default;
    /// Throws DataError for a non-positive weight.
    explicit BackgroundSample(std::vector<BackgroundPoint> points);

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const BackgroundPoint& operator[](std::size_t i) const { return points_[i]; }
    const std::vector<BackgroundPoint>& points() const { return points_; }
    double total_weight() const;

private:
    std::vector<BackgroundPoint> points_;
};

/// Every cell once, weighted by its area.
BackgroundSample full_background(const CovariateField& field);

/// Everything a fit consumes. The field is shared and never copied by
/// resampling.
struct DataBundle {
    std::shared_ptr<const CovariateField> field;
    std::vector<std::string> species;
    std::optional<SurveyDataset> survey;
    PresenceOnlyDataset presence_only;
    BackgroundSample background;

    std::size_t m() const { return species.size(); }
    /// At least one non-missing survey response for species k.
    bool has_pa(SpeciesId k) const;
    /// Presence records exist for species k and the background is non-empty.
    bool has_po(SpeciesId k) const;
    /// Throws DataError when sizes or cell references are inconsistent.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Coefficients

/// A species-specific bias slope delta_{k,j}, the coefficient of u_k * z_j.
struct InteractionTerm {
    SpeciesId species = 0;
    std::size_t bias_var = 0;
    auto operator<=>(const InteractionTerm&) const = default;
};

/// Index arithmetic for the flattened coefficient vector.
class ParameterLayout {
public:
    ParameterLayout() = default;
    /// Interactions are sorted; duplicates or out-of-range entries throw
    /// ConfigError.
    ParameterLayout(std::size_t m, std::size_t p, std::size_t r,
                    std::vector<InteractionTerm> interactions = {});

    std::size_t m() const { return m_; }
    std::size_t p() const { return p_; }
    std::size_t r() const { return r_; }
    std::size_t size() const { return m_ * (p_ + 2) + r_ + interactions_.size(); }
    std::size_t base_size() const { return m_ * (p_ + 2) + r_; }

    std::size_t alpha(SpeciesId k) const { return k * (p_ + 2); }
    std::size_t beta(SpeciesId k, std::size_t j) const { return k * (p_ + 2) + 1 + j; }
    std::size_t gamma(SpeciesId k) const { return k * (p_ + 2) + p_ + 1; }
    std::size_t delta(std::size_t j) const { return m_ * (p_ + 2) + j; }
    std::size_t interaction(std::size_t n) const { return base_size() + n; }

    const std::vector<InteractionTerm>& interactions() const { return interactions_; }
    /// Positions in interactions() that belong to species k.
    const std::vector<std::size_t>& interactions_of(SpeciesId k) const { return by_species_[k]; }

    /// Global indices of species k's block: alpha, beta, gamma, then its
    /// interaction coefficients.
    std::vector<std::size_t> species_block(SpeciesId k) const;
    /// Global indices of delta.
    std::vector<std::size_t> bias_block() const;

    bool penalized(std::size_t index) const;
    /// Human-readable coefficient name such as "beta[sp1,x2]".
    std::string name(std::size_t index, std::span<const std::string> species = {},
                     std::span<const std::string> x_names = {},
                     std::span<const std::string> z_names = {}) const;

    bool operator==(const ParameterLayout& other) const {
        return m_ == other.m_ && p_ == other.p_ && r_ == other.r_ &&
               interactions_ == other.interactions_;
    }

private:
    std::size_t m_ = 0, p_ = 0, r_ = 0;
    std::vector<InteractionTerm> interactions_;
    std::vector<std::vector<std::size_t>> by_species_;
};

/// theta = (alpha_k, beta_k, gamma_k for each species; shared delta; optional
/// interactions).
struct CoefficientSet {
    ParameterLayout layout;
    Vector alpha;
    Matrix beta;  // m x p
    Vector gamma;
    Vector delta;
    Vector interaction_values;  // parallel to layout.interactions()

    static CoefficientSet zeros(const ParameterLayout& layout);
    static CoefficientSet unflatten(const ParameterLayout& layout, const Vector& flat);
    Vector flatten() const;

    std::size_t m() const { return layout.m(); }
    std::size_t p() const { return layout.p(); }
    std::size_t r() const { return layout.r(); }
};

/// alpha_k + beta_k' x.
double linear_predictor_species(const CoefficientSet& theta, SpeciesId k, const VectorRef& x);
/// gamma_k + delta' z plus any delta_{k,j} z_j interaction terms.
double linear_predictor_bias(const CoefficientSet& theta, SpeciesId k, const VectorRef& z);

// ---------------------------------------------------------------------------
// Fit results

/// Penalized observed information in block form plus the pieces of its
/// inverse. Species blocks carry [alpha, beta, gamma, interactions]; the shared
/// block carries delta. Fixed coefficients are identity rows.
struct InformationBlocks {
    std::vector<std::vector<std::size_t>> species_indices;
    std::vector<std::size_t> bias_indices;
    std::vector<Matrix> species;       // A_k
    std::vector<Matrix> species_bias;  // B_k
    Matrix bias;                       // C
    std::vector<Matrix> species_inverse;  // A_k^{-1}
    std::vector<Matrix> regression;       // A_k^{-1} B_k
    Matrix schur_inverse;                 // (C - sum_k B_k' A_k^{-1} B_k)^{-1}

    /// Entry (i, j) of the inverse information, in global coefficient indices.
    double covariance(std::size_t i, std::size_t j) const;
    Matrix covariance(std::span<const std::size_t> indices) const;
    /// Dense penalized information; intended for small problems and tests.
    Matrix dense(std::size_t n_coefficients) const;

private:
    struct Slot {
        int block = -1;  // -1 for the shared bias block
        std::size_t local = 0;
    };
    Slot locate(std::size_t index) const;
};

struct OperationCount {
    std::uint64_t assembly = 0;
    std::uint64_t factorization = 0;
    std::uint64_t schur = 0;
    std::uint64_t total() const { return assembly + factorization + schur; }
    OperationCount& operator+=(const OperationCount& other) {
        assembly += other.assembly;
        factorization += other.factorization;
        schur += other.schur;
        return *this;
    }
};

struct FitResult {
    CoefficientSet theta;
    double loglik = 0.0;
    double penalty = 0.0;
    double objective = 0.0;  // loglik - penalty
    double negloglik = 0.0;
    Vector standard_errors;           // NaN for coefficients that were not estimated
    std::vector<bool> estimated;      // per coefficient
    std::vector<bool> anchored;       // per species: absolute intensity identified by survey data
    bool converged = false;
    int iterations = 0;
    double gradient_max_norm = 0.0;
    std::vector<double> deviance_trace;  // -2 * penalized objective per accepted iterate
    InformationBlocks information;
    OperationCount operations_per_iteration;  // last Newton iteration
    OperationCount operations_total;
    std::string message;
};

} // namespace mspp
