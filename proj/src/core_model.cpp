#include "mspp/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mspp {

namespace {

void require_finite(const RowMatrix& m, const char* what) {
    if (!m.allFinite()) throw DataError(std::string("non-finite value in ") + what);
}

} // namespace

// ---------------------------------------------------------------------------
// CovariateField

CovariateField::CovariateField(std::vector<std::int64_t> ids, RowMatrix coords, Vector areas,
                               RowMatrix x, RowMatrix z, std::vector<std::string> x_names,
                               std::vector<std::string> z_names)
    : ids_(std::move(ids)), coords_(std::move(coords)), areas_(std::move(areas)),
      x_(std::move(x)), z_(std::move(z)), x_names_(std::move(x_names)),
      z_names_(std::move(z_names)) {
    const auto n = static_cast<Eigen::Index>(ids_.size());
    if (coords_.rows() != n || coords_.cols() != 2)
        throw DimensionError("coordinates must be n x 2");
    if (areas_.size() != n) throw DimensionError("one area per cell required");
    if (x_.rows() != n) throw DimensionError("environmental covariates need one row per cell");
    if (z_.rows() != n) throw DimensionError("bias covariates need one row per cell");
    if (x_names_.empty())
        for (Eigen::Index j = 0; j < x_.cols(); ++j) x_names_.push_back("x" + std::to_string(j + 1));
    if (z_names_.empty())
        for (Eigen::Index j = 0; j < z_.cols(); ++j) z_names_.push_back("z" + std::to_string(j + 1));
    if (x_names_.size() != p() || z_names_.size() != r())
        throw DimensionError("covariate names do not match covariate columns");
    require_finite(coords_, "coordinates");
    require_finite(x_, "environmental covariates");
    require_finite(z_, "bias covariates");
    index_.reserve(ids_.size());
    for (std::size_t c = 0; c < ids_.size(); ++c) {
        if (!(areas_[static_cast<Eigen::Index>(c)] > 0.0) ||
            !std::isfinite(areas_[static_cast<Eigen::Index>(c)]))
            throw DataError("cell " + std::to_string(ids_[c]) + " has non-positive area");
        if (!index_.emplace(ids_[c], c).second)
            throw DataError("duplicate cell id " + std::to_string(ids_[c]));
    }
}

std::optional<CellIndex> CovariateField::find(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

CellIndex CovariateField::index_of(std::int64_t id) const {
    auto found = find(id);
    if (!found) throw DataError("unknown cell id " + std::to_string(id));
    return *found;
}

// ---------------------------------------------------------------------------
// Observations

SurveyDataset::SurveyDataset(std::vector<SurveySite> sites, Matrix responses, ResponseKind kind,
                             std::vector<std::uint8_t> observed)
    : sites_(std::move(sites)), responses_(std::move(responses)), kind_(kind),
      observed_(std::move(observed)) {
    const std::size_t n = sites_.size();
    if (static_cast<std::size_t>(responses_.rows()) != n)
        throw DimensionError("survey responses need one row per site");
    const std::size_t m = n_species();
    if (observed_.empty()) observed_.assign(n * m, 1);
    if (observed_.size() != n * m) throw DimensionError("survey mask has the wrong size");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sites_[i].area > 0.0) || !std::isfinite(sites_[i].area))
            throw DataError("site " + std::to_string(sites_[i].site_id) +
                            " has non-positive quadrat area");
        for (std::size_t k = 0; k < m; ++k) {
            if (!this->observed(i, k)) {
                responses_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = 0.0;
                continue;
            }
            const double y = response(i, k);
            const bool ok = kind_ == ResponseKind::binary
                                ? (y == 0.0 || y == 1.0)
                                : (y >= 0.0 && std::isfinite(y) && y == std::floor(y));
            if (!ok)
                throw DataError("site " + std::to_string(sites_[i].site_id) + ", species column " +
                                std::to_string(k + 1) + ": invalid " +
                                (kind_ == ResponseKind::binary ? "binary" : "count") +
                                " response " + std::to_string(y));
        }
    }
}

std::size_t SurveyDataset::n_observed(SpeciesId k) const {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n_sites(); ++i) count += observed(i, k) ? 1 : 0;
    return count;
}

SurveyDataset SurveyDataset::with_species_mask(SpeciesId k,
                                               const std::vector<std::uint8_t>& mask) const {
    if (mask.size() != n_sites()) throw DimensionError("species mask needs one entry per site");
    std::vector<std::uint8_t> observed = observed_;
    for (std::size_t i = 0; i < n_sites(); ++i) observed[i * n_species() + k] = mask[i] ? 1 : 0;
    return SurveyDataset(sites_, responses_, kind_, std::move(observed));
}

SurveyDataset SurveyDataset::subset(std::span<const std::size_t> rows) const {
    std::vector<SurveySite> sites;
    sites.reserve(rows.size());
    Matrix responses(static_cast<Eigen::Index>(rows.size()), responses_.cols());
    std::vector<std::uint8_t> observed;
    observed.reserve(rows.size() * n_species());
    for (std::size_t out = 0; out < rows.size(); ++out) {
        const std::size_t i = rows[out];
        sites.push_back(sites_.at(i));
        responses.row(static_cast<Eigen::Index>(out)) = responses_.row(static_cast<Eigen::Index>(i));
        for (std::size_t k = 0; k < n_species(); ++k) observed.push_back(observed_[i * n_species() + k]);
    }
    return SurveyDataset(std::move(sites), std::move(responses), kind_, std::move(observed));
}

std::size_t PresenceOnlyDataset::total() const {
    std::size_t n = 0;
    for (const auto& r : records_) n += r.size();
    return n;
}

BackgroundSample::BackgroundSample(std::vector<BackgroundPoint> points) : points_(std::move(points)) {
    for (std::size_t i = 0; i < points_.size(); ++i)
        if (!(points_[i].weight > 0.0) || !std::isfinite(points_[i].weight))
            throw DataError("background point " + std::to_string(i) + " has non-positive weight");
}

double BackgroundSample::total_weight() const {
    double total = 0.0;
    for (const auto& pt : points_) total += pt.weight;
    return total;
}

BackgroundSample full_background(const CovariateField& field) {
    std::vector<BackgroundPoint> points(field.size());
    for (CellIndex c = 0; c < field.size(); ++c) points[c] = {c, field.area(c)};
    return BackgroundSample(std::move(points));
}

bool DataBundle::has_pa(SpeciesId k) const {
    return survey && k < survey->n_species() && survey->n_observed(k) > 0;
}

bool DataBundle::has_po(SpeciesId k) const {
    return k < presence_only.n_species() && presence_only.size(k) > 0 && !background.empty();
}

void DataBundle::validate() const {
    if (!field) throw DataError("data bundle has no covariate field");
    const std::size_t n_cells = field->size();
    if (survey) {
        if (survey->n_species() != m())
            throw DimensionError("survey has " + std::to_string(survey->n_species()) +
                                 " species columns, expected " + std::to_string(m()));
        for (const auto& s : survey->sites())
            if (s.cell >= n_cells) throw DataError("survey site references an unknown cell");
    }
    if (presence_only.n_species() != m())
        throw DimensionError("presence-only data must list every species");
    for (SpeciesId k = 0; k < m(); ++k)
        for (const auto& rec : presence_only.records(k))
            if (rec.cell >= n_cells) throw DataError("presence record references an unknown cell");
    for (const auto& pt : background.points())
        if (pt.cell >= n_cells) throw DataError("background point references an unknown cell");
}

// ---------------------------------------------------------------------------
// Coefficients

ParameterLayout::ParameterLayout(std::size_t m, std::size_t p, std::size_t r,
                                 std::vector<InteractionTerm> interactions)
    : m_(m), p_(p), r_(r), interactions_(std::move(interactions)), by_species_(m) {
    std::sort(interactions_.begin(), interactions_.end());
    for (std::size_t n = 0; n < interactions_.size(); ++n) {
        const auto& term = interactions_[n];
        if (term.species >= m || term.bias_var >= r)
            throw ConfigError("interaction (" + std::to_string(term.species) + ", " +
                              std::to_string(term.bias_var) + ") is out of range");
        if (n > 0 && interactions_[n - 1] == term)
            throw ConfigError("duplicate interaction (" + std::to_string(term.species) + ", " +
                              std::to_string(term.bias_var) + ")");
        by_species_[term.species].push_back(n);
    }
}

std::vector<std::size_t> ParameterLayout::species_block(SpeciesId k) const {
    std::vector<std::size_t> idx(p_ + 2);
    std::iota(idx.begin(), idx.end(), alpha(k));
    for (std::size_t n : by_species_[k]) idx.push_back(interaction(n));
    return idx;
}

std::vector<std::size_t> ParameterLayout::bias_block() const {
    std::vector<std::size_t> idx(r_);
    std::iota(idx.begin(), idx.end(), delta(0));
    return idx;
}

bool ParameterLayout::penalized(std::size_t index) const {
    if (index >= m_ * (p_ + 2)) return true;
    const std::size_t local = index % (p_ + 2);
    return local != 0 && local != p_ + 1;
}

std::string ParameterLayout::name(std::size_t index, std::span<const std::string> species,
                                  std::span<const std::string> x_names,
                                  std::span<const std::string> z_names) const {
    auto sp = [&](std::size_t k) {
        return k < species.size() ? species[k] : "sp" + std::to_string(k + 1);
    };
    auto xn = [&](std::size_t j) {
        return j < x_names.size() ? x_names[j] : "x" + std::to_string(j + 1);
    };
    auto zn = [&](std::size_t j) {
        return j < z_names.size() ? z_names[j] : "z" + std::to_string(j + 1);
    };
    if (index < m_ * (p_ + 2)) {
        const std::size_t k = index / (p_ + 2);
        const std::size_t local = index % (p_ + 2);
        if (local == 0) return "alpha[" + sp(k) + "]";
        if (local == p_ + 1) return "gamma[" + sp(k) + "]";
        return "beta[" + sp(k) + "," + xn(local - 1) + "]";
    }
    if (index < base_size()) return "delta[" + zn(index - m_ * (p_ + 2)) + "]";
    const auto& term = interactions_.at(index - base_size());
    return "delta[" + sp(term.species) + "," + zn(term.bias_var) + "]";
}

CoefficientSet CoefficientSet::zeros(const ParameterLayout& layout) {
    CoefficientSet theta;
    theta.layout = layout;
    const auto m = static_cast<Eigen::Index>(layout.m());
    theta.alpha = Vector::Zero(m);
    theta.beta = Matrix::Zero(m, static_cast<Eigen::Index>(layout.p()));
    theta.gamma = Vector::Zero(m);
    theta.delta = Vector::Zero(static_cast<Eigen::Index>(layout.r()));
    theta.interaction_values = Vector::Zero(static_cast<Eigen::Index>(layout.interactions().size()));
    return theta;
}

CoefficientSet CoefficientSet::unflatten(const ParameterLayout& layout, const Vector& flat) {
    if (static_cast<std::size_t>(flat.size()) != layout.size())
        throw DimensionError("coefficient vector has length " + std::to_string(flat.size()) +
                             ", expected " + std::to_string(layout.size()));
    CoefficientSet theta = zeros(layout);
    for (SpeciesId k = 0; k < layout.m(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        theta.alpha[kk] = flat[static_cast<Eigen::Index>(layout.alpha(k))];
        for (std::size_t j = 0; j < layout.p(); ++j)
            theta.beta(kk, static_cast<Eigen::Index>(j)) = flat[static_cast<Eigen::Index>(layout.beta(k, j))];
        theta.gamma[kk] = flat[static_cast<Eigen::Index>(layout.gamma(k))];
    }
    for (std::size_t j = 0; j < layout.r(); ++j)
        theta.delta[static_cast<Eigen::Index>(j)] = flat[static_cast<Eigen::Index>(layout.delta(j))];
    for (std::size_t n = 0; n < layout.interactions().size(); ++n)
        theta.interaction_values[static_cast<Eigen::Index>(n)] =
            flat[static_cast<Eigen::Index>(layout.interaction(n))];
    return theta;
}

Vector CoefficientSet::flatten() const {
    Vector flat(static_cast<Eigen::Index>(layout.size()));
    for (SpeciesId k = 0; k < layout.m(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        flat[static_cast<Eigen::Index>(layout.alpha(k))] = alpha[kk];
        for (std::size_t j = 0; j < layout.p(); ++j)
            flat[static_cast<Eigen::Index>(layout.beta(k, j))] = beta(kk, static_cast<Eigen::Index>(j));
        flat[static_cast<Eigen::Index>(layout.gamma(k))] = gamma[kk];
    }
    for (std::size_t j = 0; j < layout.r(); ++j)
        flat[static_cast<Eigen::Index>(layout.delta(j))] = delta[static_cast<Eigen::Index>(j)];
    for (std::size_t n = 0; n < layout.interactions().size(); ++n)
        flat[static_cast<Eigen::Index>(layout.interaction(n))] =
            interaction_values[static_cast<Eigen::Index>(n)];
    return flat;
}

double linear_predictor_species(const CoefficientSet& theta, SpeciesId k, const VectorRef& x) {
    if (k >= theta.m()) throw DimensionError("species index out of range");
    if (static_cast<std::size_t>(x.size()) != theta.p())
        throw DimensionError("x has length " + std::to_string(x.size()) + ", expected " +
                             std::to_string(theta.p()));
    const auto kk = static_cast<Eigen::Index>(k);
    return theta.alpha[kk] + theta.beta.row(kk).dot(x.transpose());
}

double linear_predictor_bias(const CoefficientSet& theta, SpeciesId k, const VectorRef& z) {
    if (k >= theta.m()) throw DimensionError("species index out of range");
    if (static_cast<std::size_t>(z.size()) != theta.r())
        throw DimensionError("z has length " + std::to_string(z.size()) + ", expected " +
                             std::to_string(theta.r()));
    double eta = theta.gamma[static_cast<Eigen::Index>(k)] + theta.delta.dot(z);
    const auto& terms = theta.layout.interactions();
    for (std::size_t n : theta.layout.interactions_of(k))
        eta += theta.interaction_values[static_cast<Eigen::Index>(n)] *
               z[static_cast<Eigen::Index>(terms[n].bias_var)];
    return eta;
}

// ---------------------------------------------------------------------------
// Information blocks

InformationBlocks::Slot InformationBlocks::locate(std::size_t index) const {
    for (std::size_t k = 0; k < species_indices.size(); ++k) {
        const auto& idx = species_indices[k];
        auto it = std::find(idx.begin(), idx.end(), index);
        if (it != idx.end())
            return {static_cast<int>(k), static_cast<std::size_t>(it - idx.begin())};
    }
    auto it = std::find(bias_indices.begin(), bias_indices.end(), index);
    if (it == bias_indices.end()) throw DimensionError("coefficient index out of range");
    return {-1, static_cast<std::size_t>(it - bias_indices.begin())};
}

double InformationBlocks::covariance(std::size_t i, std::size_t j) const {
    const Slot a = locate(i);
    const Slot b = locate(j);
    const auto al = static_cast<Eigen::Index>(a.local);
    const auto bl = static_cast<Eigen::Index>(b.local);
    const bool has_bias = schur_inverse.size() > 0;
    if (a.block < 0 && b.block < 0) return schur_inverse(al, bl);
    if (a.block < 0) return covariance(j, i);
    const auto& ga = regression[static_cast<std::size_t>(a.block)];
    if (b.block < 0) return -(ga.row(al) * schur_inverse.col(bl))(0);
    double value = 0.0;
    if (a.block == b.block) value = species_inverse[static_cast<std::size_t>(a.block)](al, bl);
    if (has_bias) {
        const auto& gb = regression[static_cast<std::size_t>(b.block)];
        value += (ga.row(al) * schur_inverse * gb.row(bl).transpose())(0);
    }
    return value;
}

Matrix InformationBlocks::covariance(std::span<const std::size_t> indices) const {
    const auto n = static_cast<Eigen::Index>(indices.size());
    Matrix cov(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b <= a; ++b)
            cov(a, b) = cov(b, a) = covariance(indices[static_cast<std::size_t>(a)],
                                               indices[static_cast<std::size_t>(b)]);
    return cov;
}

Matrix InformationBlocks::dense(std::size_t n_coefficients) const {
    const auto n = static_cast<Eigen::Index>(n_coefficients);
    Matrix info = Matrix::Zero(n, n);
    for (std::size_t k = 0; k < species.size(); ++k) {
        const auto& idx = species_indices[k];
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = 0; b < idx.size(); ++b)
                info(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b])) =
                    species[k](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            for (std::size_t b = 0; b < bias_indices.size(); ++b) {
                const double v = species_bias[k](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                info(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(bias_indices[b])) = v;
                info(static_cast<Eigen::Index>(bias_indices[b]), static_cast<Eigen::Index>(idx[a])) = v;
            }
        }
    }
    for (std::size_t a = 0; a < bias_indices.size(); ++a)
        for (std::size_t b = 0; b < bias_indices.size(); ++b)
            info(static_cast<Eigen::Index>(bias_indices[a]), static_cast<Eigen::Index>(bias_indices[b])) =
                bias(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    return info;
}

} // namespace mspp
