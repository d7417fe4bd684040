#pragma once

// The joint model viewed as one large GLM. Each species contributes a survey
// row per site (cloglog Bernoulli or Poisson, offset log|A_i|) and a weighted
// Poisson row per background point; presence records enter only through the
// linear term theta'M. The design is kept block-indexed: the per-row features
// are stored once and shared by every species instead of materializing the
// m(n_PA + n_BG) x (m(p+2) + r) matrix.

#include "mspp/core_model.hpp"

#include <vector>

namespace mspp {

class BlockDesign {
public:
    const ParameterLayout& layout() const { return layout_; }
    std::size_t m() const { return layout_.m(); }

    /// Logical row count m(n_PA + n_BG).
    std::size_t n_rows() const { return m() * (n_sites() + n_background()); }
    std::size_t n_columns() const { return layout_.size(); }

    std::size_t n_sites() const { return static_cast<std::size_t>(pa_features_.rows()); }
    std::size_t n_background() const { return static_cast<std::size_t>(bg_features_.rows()); }

    /// [1, x] for each survey site.
    const Matrix& pa_features() const { return pa_features_; }
    /// log|A_i| for each survey site.
    const Vector& pa_offset() const { return pa_offset_; }
    /// Response of site i for species k (0 when missing).
    const Matrix& pa_response() const { return pa_response_; }
    /// 1.0 where (site, species) is observed, else 0.0. n_sites x m.
    const Matrix& pa_observed() const { return pa_observed_; }
    ResponseKind pa_kind() const { return pa_kind_; }

    /// [1, x, 1] for each background point; the last column is the v indicator.
    const Matrix& bg_features() const { return bg_features_; }
    /// z for each background point.
    const Matrix& bg_bias() const { return bg_bias_; }
    const Vector& bg_weight() const { return bg_weight_; }

    bool has_pa(SpeciesId k) const { return n_pa_rows_[k] > 0; }
    /// Species k has presence records and therefore background rows.
    bool po_active(SpeciesId k) const { return po_active_[k] != 0; }
    std::size_t n_presence(SpeciesId k) const { return n_presence_[k]; }

    /// M: the presence records' contribution, linear in theta.
    const Vector& linear_term() const { return linear_term_; }

    /// Background features of species k: [1, x, 1] followed by its
    /// interaction columns u_k z_j.
    Matrix species_bg_features(SpeciesId k) const;

private:
    friend BlockDesign build_design(const DataBundle& data,
                                    std::vector<InteractionTerm> interactions);

    ParameterLayout layout_;
    Matrix pa_features_;
    Vector pa_offset_;
    Matrix pa_response_;
    Matrix pa_observed_;
    ResponseKind pa_kind_ = ResponseKind::binary;
    Matrix bg_features_;
    Matrix bg_bias_;
    Vector bg_weight_;
    std::vector<std::size_t> n_pa_rows_;
    std::vector<std::uint8_t> po_active_;
    std::vector<std::size_t> n_presence_;
    Vector linear_term_;
};

/// Throws ConfigError for duplicate interactions and DataError when presence
/// records exist without a background.
BlockDesign build_design(const DataBundle& data, std::vector<InteractionTerm> interactions = {});

/// Per-species linear predictors of the design rows, offsets included.
struct RowPredictors {
    std::vector<Vector> pa;  // n_sites each
    std::vector<Vector> bg;  // n_background each
};

/// Survey row: alpha_k + beta_k'x + log|A_i|. Background row adds
/// gamma_k + delta'z and interaction terms.
Vector pa_predictor(const BlockDesign& design, const CoefficientSet& theta, SpeciesId k);
Vector bg_predictor(const BlockDesign& design, const CoefficientSet& theta, SpeciesId k);
RowPredictors linear_predictor_rows(const BlockDesign& design, const CoefficientSet& theta);

/// Penalized log-likelihood evaluated through the design rows plus theta'M.
double design_objective(const BlockDesign& design, const CoefficientSet& theta, double nu);

} // namespace mspp
