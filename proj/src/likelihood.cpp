#include "mspp/likelihood.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace mspp {

double checked_exp(double eta, const char* where, std::size_t row) {
    if (eta > kMaxLinearPredictor || std::isnan(eta))
        throw OverflowError(std::string("linear predictor ") + std::to_string(eta) + " at " +
                            where + " " + std::to_string(row) + " exceeds the overflow guard");
    return std::exp(eta);
}

namespace family {

double log1mexp(double mu) {
    if (mu <= 0.0) return -std::numeric_limits<double>::infinity();
    return mu <= std::numbers::ln2 ? std::log(-std::expm1(-mu)) : std::log1p(-std::exp(-mu));
}

RowTerms cloglog_bernoulli(double eta, double y) {
    const double mu = std::exp(eta);
    if (y == 0.0) return {-mu, -mu, -mu};
    RowTerms t;
    t.value = log1mexp(mu);
    if (mu == 0.0) {
        t.d1 = 1.0;
        t.d2 = 0.0;
        return t;
    }
    // d/d eta log(1 - e^{-mu}) = mu / (e^mu - 1)
    const double em1 = std::expm1(mu);
    t.d1 = std::isinf(em1) ? 0.0 : mu / em1;
    double one_minus_q;  // 1 - mu / (1 - e^{-mu})
    if (mu < 1e-3) {
        const double mu2 = mu * mu;
        one_minus_q = -(mu / 2.0 + mu2 / 12.0 - mu2 * mu2 / 720.0);
    } else {
        one_minus_q = 1.0 - mu / (-std::expm1(-mu));
    }
    t.d2 = t.d1 * one_minus_q;
    return t;
}

RowTerms poisson_log(double eta, double count) {
    const double mu = std::exp(eta);
    return {count * eta - mu - std::lgamma(count + 1.0), count - mu, -mu};
}

RowTerms background(double eta, double weight) {
    const double wmu = weight * std::exp(eta);
    return {-wmu, -wmu, -wmu};
}

} // namespace family

namespace {

void check_dims(const CoefficientSet& theta, const CovariateField& field, SpeciesId k) {
    if (theta.p() != field.p() || theta.r() != field.r())
        throw DimensionError("coefficients are (p=" + std::to_string(theta.p()) + ", r=" +
                             std::to_string(theta.r()) + ") but the field is (p=" +
                             std::to_string(field.p()) + ", r=" + std::to_string(field.r()) + ")");
    if (k >= theta.m()) throw DimensionError("species index out of range");
}

double po_eta(const CoefficientSet& theta, const CovariateField& field, SpeciesId k, CellIndex c) {
    return linear_predictor_species(theta, k, field.x(c).transpose()) +
           linear_predictor_bias(theta, k, field.z(c).transpose());
}

// Same predictor accumulated in extended precision, intercepts first, so that
// shifting a constant between alpha_k and gamma_k changes it by rounding of the
// inputs only.
long double po_eta_extended(const CoefficientSet& theta, const CovariateField& field, SpeciesId k,
                            CellIndex c) {
    const auto ki = static_cast<Eigen::Index>(k);
    long double eta = static_cast<long double>(theta.alpha[ki]) + theta.gamma[ki];
    const auto x = field.x(c);
    for (Eigen::Index j = 0; j < x.size(); ++j) eta += static_cast<long double>(theta.beta(ki, j)) * x[j];
    const auto z = field.z(c);
    for (Eigen::Index j = 0; j < z.size(); ++j) eta += static_cast<long double>(theta.delta[j]) * z[j];
    for (std::size_t n : theta.layout.interactions_of(k))
        eta += static_cast<long double>(theta.interaction_values[static_cast<Eigen::Index>(n)]) *
               z[static_cast<Eigen::Index>(theta.layout.interactions()[n].bias_var)];
    return eta;
}

} // namespace

double pa_loglik(const CoefficientSet& theta, const SurveyDataset& survey,
                 const CovariateField& field, SpeciesId k) {
    check_dims(theta, field, k);
    if (k >= survey.n_species()) throw DimensionError("survey has no column for this species");
    double total = 0.0;
    for (std::size_t i = 0; i < survey.n_sites(); ++i) {
        if (!survey.observed(i, k)) continue;
        const SurveySite& site = survey.site(i);
        const double eta =
            linear_predictor_species(theta, k, field.x(site.cell).transpose()) + std::log(site.area);
        checked_exp(eta, "survey site", i);
        const double y = survey.response(i, k);
        total += survey.kind() == ResponseKind::binary ? family::cloglog_bernoulli(eta, y).value
                                                       : family::poisson_log(eta, y).value;
    }
    return total;
}

double po_loglik(const CoefficientSet& theta, const PresenceOnlyDataset& po,
                 const BackgroundSample& bg, const CovariateField& field, SpeciesId k) {
    check_dims(theta, field, k);
    if (bg.empty()) throw DataError("presence-only likelihood needs a non-empty background");
    long double presence = 0.0L;
    for (const auto& rec : po.records(k)) presence += po_eta_extended(theta, field, k, rec.cell);
    long double integral = 0.0L;
    for (std::size_t i = 0; i < bg.size(); ++i) {
        const long double eta = po_eta_extended(theta, field, k, bg[i].cell);
        checked_exp(static_cast<double>(eta), "background point", i);
        integral += static_cast<long double>(bg[i].weight) * std::exp(eta);
    }
    return static_cast<double>(presence - integral);
}

double ridge_penalty(const CoefficientSet& theta, double nu) {
    if (nu == 0.0) return 0.0;
    return 0.5 * nu *
           (theta.beta.squaredNorm() + theta.delta.squaredNorm() +
            theta.interaction_values.squaredNorm());
}

ObjectiveValue joint_objective(const CoefficientSet& theta, const DataBundle& data, double nu) {
    const std::size_t m = data.m();
    if (theta.m() != m) throw DimensionError("coefficients and data disagree on species count");
    ObjectiveValue out;
    out.pa_loglik.assign(m, 0.0);
    out.po_loglik.assign(m, 0.0);
    for (SpeciesId k = 0; k < m; ++k) {
        if (data.survey) out.pa_loglik[k] = pa_loglik(theta, *data.survey, *data.field, k);
        if (data.presence_only.size(k) > 0)
            out.po_loglik[k] =
                po_loglik(theta, data.presence_only, data.background, *data.field, k);
        out.loglik += out.pa_loglik[k] + out.po_loglik[k];
    }
    out.penalty = ridge_penalty(theta, nu);
    return out;
}

Vector joint_gradient(const CoefficientSet& theta, const DataBundle& data, double nu) {
    const ParameterLayout& layout = theta.layout;
    const CovariateField& field = *data.field;
    if (theta.m() != data.m()) throw DimensionError("coefficients and data disagree on species count");
    const std::size_t p = layout.p();
    const std::size_t r = layout.r();
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(layout.size()));
    auto at = [&](std::size_t i) -> double& { return grad[static_cast<Eigen::Index>(i)]; };

    // Adds s * (feature vector of a presence-only row) into the gradient.
    auto add_po_row = [&](SpeciesId k, CellIndex c, double s) {
        at(layout.alpha(k)) += s;
        for (std::size_t j = 0; j < p; ++j) at(layout.beta(k, j)) += s * field.x(c)[static_cast<Eigen::Index>(j)];
        at(layout.gamma(k)) += s;
        for (std::size_t j = 0; j < r; ++j) at(layout.delta(j)) += s * field.z(c)[static_cast<Eigen::Index>(j)];
        for (std::size_t n : layout.interactions_of(k))
            at(layout.interaction(n)) +=
                s * field.z(c)[static_cast<Eigen::Index>(layout.interactions()[n].bias_var)];
    };

    for (SpeciesId k = 0; k < data.m(); ++k) {
        if (data.survey) {
            const SurveyDataset& survey = *data.survey;
            for (std::size_t i = 0; i < survey.n_sites(); ++i) {
                if (!survey.observed(i, k)) continue;
                const CellIndex c = survey.site(i).cell;
                const double eta = linear_predictor_species(theta, k, field.x(c).transpose()) +
                                   std::log(survey.site(i).area);
                checked_exp(eta, "survey site", i);
                const double y = survey.response(i, k);
                const double d1 = survey.kind() == ResponseKind::binary
                                      ? family::cloglog_bernoulli(eta, y).d1
                                      : family::poisson_log(eta, y).d1;
                at(layout.alpha(k)) += d1;
                for (std::size_t j = 0; j < p; ++j)
                    at(layout.beta(k, j)) += d1 * field.x(c)[static_cast<Eigen::Index>(j)];
            }
        }
        if (data.presence_only.size(k) == 0) continue;
        if (data.background.empty())
            throw DataError("presence-only likelihood needs a non-empty background");
        for (const auto& rec : data.presence_only.records(k)) add_po_row(k, rec.cell, 1.0);
        for (std::size_t i = 0; i < data.background.size(); ++i) {
            const CellIndex c = data.background[i].cell;
            const double eta = po_eta(theta, field, k, c);
            add_po_row(k, c, -data.background[i].weight * checked_exp(eta, "background point", i));
        }
    }
    if (nu != 0.0) {
        const Vector flat = theta.flatten();
        for (std::size_t i = 0; i < layout.size(); ++i)
            if (layout.penalized(i)) at(i) -= nu * flat[static_cast<Eigen::Index>(i)];
    }
    return grad;
}

} // namespace mspp
