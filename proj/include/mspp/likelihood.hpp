#pragma once

#include "mspp/core_model.hpp"

#include <vector>

namespace mspp {

/// Largest linear predictor whose exponential is evaluated; anything above is
/// reported as an overflow instead of producing infinity.
inline constexpr double kMaxLinearPredictor = 700.0;

/// exp(eta), throwing OverflowError (with `where` in the message) when
/// eta > kMaxLinearPredictor.
double checked_exp(double eta, const char* where, std::size_t row);

/// Value and first two eta-derivatives of one row's log-likelihood.
struct RowTerms {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

namespace family {

/// log(1 - exp(-mu)) for mu >= 0 without cancellation.
double log1mexp(double mu);

/// Bernoulli response with complementary log-log link: P(y = 1) = 1 - exp(-e^eta).
RowTerms cloglog_bernoulli(double eta, double y);
/// Poisson count with log link, including the -log(N!) constant.
RowTerms poisson_log(double eta, double count);
/// Background quadrature row: -w e^eta.
RowTerms background(double eta, double weight);

} // namespace family

/// Log-likelihood of species k's survey responses; missing entries are
/// skipped. Returns -infinity when a binary presence has zero expected count.
double pa_loglik(const CoefficientSet& theta, const SurveyDataset& survey,
                 const CovariateField& field, SpeciesId k);

/// Presence-only log-likelihood of species k with the integral replaced by the
/// weighted background sum.
double po_loglik(const CoefficientSet& theta, const PresenceOnlyDataset& po,
                 const BackgroundSample& bg, const CovariateField& field, SpeciesId k);

struct ObjectiveValue {
    double loglik = 0.0;
    double penalty = 0.0;
    std::vector<double> pa_loglik;  // per species
    std::vector<double> po_loglik;  // per species; zero when the species has no presence records
    double objective() const { return loglik - penalty; }
};

/// (nu / 2)(|beta|^2 + |delta|^2 + |interactions|^2). Intercepts are not penalized.
double ridge_penalty(const CoefficientSet& theta, double nu);

/// Sum over species of survey and presence-only log-likelihoods, minus the
/// ridge penalty. A species with no presence records contributes no
/// presence-only term (its thinning intercept is driven to -infinity).
ObjectiveValue joint_objective(const CoefficientSet& theta, const DataBundle& data, double nu);

/// Analytic gradient of joint_objective().objective() in flattened order.
Vector joint_gradient(const CoefficientSet& theta, const DataBundle& data, double nu);

} // namespace mspp
