#include "mspp/design.hpp"

#include "mspp/likelihood.hpp"

#include <cmath>

namespace mspp {

namespace {

void check_overflow(const Vector& eta, const char* what) {
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        if (eta[i] > kMaxLinearPredictor || std::isnan(eta[i]))
            checked_exp(eta[i], what, static_cast<std::size_t>(i));
}

} // namespace

BlockDesign build_design(const DataBundle& data, std::vector<InteractionTerm> interactions) {
    data.validate();
    const CovariateField& field = *data.field;
    const std::size_t m = data.m();
    const std::size_t p = field.p();
    const std::size_t r = field.r();
    const auto pp = static_cast<Eigen::Index>(p);
    const auto rr = static_cast<Eigen::Index>(r);

    BlockDesign d;
    d.layout_ = ParameterLayout(m, p, r, std::move(interactions));

    const std::size_t n_sites = data.survey ? data.survey->n_sites() : 0;
    const auto ns = static_cast<Eigen::Index>(n_sites);
    d.pa_features_.resize(ns, pp + 1);
    d.pa_offset_.resize(ns);
    d.pa_response_ = Matrix::Zero(ns, static_cast<Eigen::Index>(m));
    d.pa_observed_ = Matrix::Zero(ns, static_cast<Eigen::Index>(m));
    d.n_pa_rows_.assign(m, 0);
    if (data.survey) {
        const SurveyDataset& survey = *data.survey;
        d.pa_kind_ = survey.kind();
        for (std::size_t i = 0; i < n_sites; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const SurveySite& site = survey.site(i);
            d.pa_features_(ii, 0) = 1.0;
            d.pa_features_.row(ii).tail(pp) = field.x(site.cell);
            d.pa_offset_[ii] = std::log(site.area);
            for (SpeciesId k = 0; k < m; ++k) {
                if (!survey.observed(i, k)) continue;
                d.pa_observed_(ii, static_cast<Eigen::Index>(k)) = 1.0;
                d.pa_response_(ii, static_cast<Eigen::Index>(k)) = survey.response(i, k);
                ++d.n_pa_rows_[k];
            }
        }
    }

    const auto nb = static_cast<Eigen::Index>(data.background.size());
    d.bg_features_.resize(nb, pp + 2);
    d.bg_bias_.resize(nb, rr);
    d.bg_weight_.resize(nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
        const BackgroundPoint& pt = data.background[static_cast<std::size_t>(i)];
        d.bg_features_(i, 0) = 1.0;
        d.bg_features_.row(i).segment(1, pp) = field.x(pt.cell);
        d.bg_features_(i, pp + 1) = 1.0;
        d.bg_bias_.row(i) = field.z(pt.cell);
        d.bg_weight_[i] = pt.weight;
    }

    const ParameterLayout& layout = d.layout_;
    d.po_active_.assign(m, 0);
    d.n_presence_.assign(m, 0);
    d.linear_term_ = Vector::Zero(static_cast<Eigen::Index>(layout.size()));
    auto M = [&](std::size_t i) -> double& { return d.linear_term_[static_cast<Eigen::Index>(i)]; };
    for (SpeciesId k = 0; k < m; ++k) {
        const auto& records = data.presence_only.records(k);
        d.n_presence_[k] = records.size();
        if (records.empty()) continue;
        if (data.background.empty())
            throw DataError("species " + data.species[k] +
                            " has presence records but the background sample is empty");
        d.po_active_[k] = 1;
        for (const PresenceRecord& rec : records) {
            M(layout.alpha(k)) += 1.0;
            for (std::size_t j = 0; j < p; ++j)
                M(layout.beta(k, j)) += field.x(rec.cell)[static_cast<Eigen::Index>(j)];
            M(layout.gamma(k)) += 1.0;
            for (std::size_t j = 0; j < r; ++j)
                M(layout.delta(j)) += field.z(rec.cell)[static_cast<Eigen::Index>(j)];
            for (std::size_t n : layout.interactions_of(k))
                M(layout.interaction(n)) +=
                    field.z(rec.cell)[static_cast<Eigen::Index>(layout.interactions()[n].bias_var)];
        }
    }
    return d;
}

Matrix BlockDesign::species_bg_features(SpeciesId k) const {
    const auto& terms = layout_.interactions_of(k);
    if (terms.empty()) return bg_features_;
    Matrix f(bg_features_.rows(), bg_features_.cols() + static_cast<Eigen::Index>(terms.size()));
    f.leftCols(bg_features_.cols()) = bg_features_;
    for (std::size_t t = 0; t < terms.size(); ++t)
        f.col(bg_features_.cols() + static_cast<Eigen::Index>(t)) =
            bg_bias_.col(static_cast<Eigen::Index>(layout_.interactions()[terms[t]].bias_var));
    return f;
}

Vector pa_predictor(const BlockDesign& design, const CoefficientSet& theta, SpeciesId k) {
    if (!(theta.layout == design.layout())) throw DimensionError("coefficients do not match the design");
    const auto kk = static_cast<Eigen::Index>(k);
    Vector eta = design.pa_offset();
    eta.array() += theta.alpha[kk];
    if (theta.p() > 0)
        eta.noalias() += design.pa_features().rightCols(static_cast<Eigen::Index>(theta.p())) *
                         theta.beta.row(kk).transpose();
    return eta;
}

Vector bg_predictor(const BlockDesign& design, const CoefficientSet& theta, SpeciesId k) {
    if (!(theta.layout == design.layout())) throw DimensionError("coefficients do not match the design");
    const auto kk = static_cast<Eigen::Index>(k);
    const auto pp = static_cast<Eigen::Index>(theta.p());
    Vector eta = Vector::Constant(static_cast<Eigen::Index>(design.n_background()),
                                  theta.alpha[kk] + theta.gamma[kk]);
    if (pp > 0) eta.noalias() += design.bg_features().middleCols(1, pp) * theta.beta.row(kk).transpose();
    if (theta.r() > 0) eta.noalias() += design.bg_bias() * theta.delta;
    const auto& terms = design.layout().interactions();
    for (std::size_t n : design.layout().interactions_of(k))
        eta += theta.interaction_values[static_cast<Eigen::Index>(n)] *
               design.bg_bias().col(static_cast<Eigen::Index>(terms[n].bias_var));
    return eta;
}

RowPredictors linear_predictor_rows(const BlockDesign& design, const CoefficientSet& theta) {
    RowPredictors rows;
    for (SpeciesId k = 0; k < design.m(); ++k) {
        rows.pa.push_back(pa_predictor(design, theta, k));
        rows.bg.push_back(bg_predictor(design, theta, k));
    }
    return rows;
}

double design_objective(const BlockDesign& design, const CoefficientSet& theta, double nu) {
    double total = theta.flatten().dot(design.linear_term());
    const bool binary = design.pa_kind() == ResponseKind::binary;
    for (SpeciesId k = 0; k < design.m(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        if (design.has_pa(k)) {
            const Vector eta = pa_predictor(design, theta, k);
            check_overflow(eta, "survey site");
            for (Eigen::Index i = 0; i < eta.size(); ++i) {
                if (design.pa_observed()(i, kk) == 0.0) continue;
                const double y = design.pa_response()(i, kk);
                total += binary ? family::cloglog_bernoulli(eta[i], y).value
                                : family::poisson_log(eta[i], y).value;
            }
        }
        if (design.po_active(k)) {
            const Vector eta = bg_predictor(design, theta, k);
            check_overflow(eta, "background point");
            total -= design.bg_weight().dot(eta.array().exp().matrix());
        }
    }
    return total - ridge_penalty(theta, nu);
}

} // namespace mspp
