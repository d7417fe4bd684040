#include "mspp/evaluate.hpp"

#include "mspp/likelihood.hpp"
#include "mspp/parallel.hpp"
#include "mspp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace mspp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_species(const FitResult& fit, SpeciesId k) {
    if (k >= fit.theta.m()) throw DimensionError("species index out of range");
}

// Survey restricted to column k.
SurveyDataset survey_column(const SurveyDataset& survey, SpeciesId k) {
    std::vector<std::uint8_t> mask(survey.n_sites());
    for (std::size_t i = 0; i < survey.n_sites(); ++i) mask[i] = survey.observed(i, k) ? 1 : 0;
    return SurveyDataset(survey.sites(), survey.responses().col(static_cast<Eigen::Index>(k)),
                         survey.kind(), std::move(mask));
}

bool uses_survey(Method method) {
    return method == Method::pa_only || method == Method::pa_po_single ||
           method == Method::pooled_all;
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t index) {
    Philox rng = make_stream(seed, StreamPurpose::downsample, index);
    const std::uint64_t hi = rng();
    return (hi << 32) | rng();
}

} // namespace

IntensityPrediction predict_intensity(const FitResult& fit, const CovariateField& field, SpeciesId k) {
    check_species(fit, k);
    if (fit.theta.p() != field.p() || fit.theta.r() != field.r())
        throw DimensionError("fit and field disagree on covariate counts");
    IntensityPrediction out;
    const auto n = static_cast<Eigen::Index>(field.size());
    out.lambda.resize(n);
    out.bias.resize(n);
    for (CellIndex c = 0; c < field.size(); ++c) {
        const auto i = static_cast<Eigen::Index>(c);
        out.lambda[i] =
            checked_exp(linear_predictor_species(fit.theta, k, field.x(c).transpose()), "cell", c);
        out.bias[i] = checked_exp(linear_predictor_bias(fit.theta, k, field.z(c).transpose()), "cell", c);
    }
    out.relative_only = k < fit.anchored.size() ? !fit.anchored[k] : false;
    return out;
}

Vector presence_probability(const FitResult& fit, const CovariateField& field, SpeciesId k, double area) {
    if (!(area > 0.0)) throw ConfigError("quadrat area must be positive");
    const IntensityPrediction pred = predict_intensity(fit, field, k);
    Vector out(pred.lambda.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = -std::expm1(-area * pred.lambda[i]);
    return out;
}

double predictive_loglik(const FitResult& fit, const SurveyDataset& heldout,
                         const CovariateField& field, SpeciesId k) {
    check_species(fit, k);
    return pa_loglik(fit.theta, heldout, field, k);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney statistic with mid-ranks for ties.
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] != 0) {
                rank_sum += mid_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("AUC needs both presences and absences");
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

Vector relative_sampling_effort(const FitResult& fit) {
    const ParameterLayout& layout = fit.theta.layout;
    for (SpeciesId k = 0; k < layout.m(); ++k)
        if (layout.gamma(k) >= fit.estimated.size() || !fit.estimated[layout.gamma(k)])
            throw NumericalError("sampling-effort intercept of species " + std::to_string(k) +
                                 " was not estimated");
    const double lowest = fit.theta.gamma.minCoeff();
    return (fit.theta.gamma.array() - lowest).exp().matrix();
}

BackgroundSample tgb_background(const PresenceOnlyDataset& po, const CovariateField& field,
                                const BlockPartition* pixels) {
    if (pixels && pixels->block_of.size() != field.size())
        throw DimensionError("pixel partition does not match the field");
    std::vector<std::uint8_t> sighted(pixels ? pixels->n_blocks : field.size(), 0);
    for (SpeciesId k = 0; k < po.n_species(); ++k)
        for (const auto& rec : po.records(k)) {
            if (rec.cell >= field.size()) throw DataError("presence record outside the field");
            sighted[pixels ? pixels->block_of[rec.cell] : rec.cell] = 1;
        }
    std::vector<CellIndex> kept;
    double area = 0.0;
    for (CellIndex c = 0; c < field.size(); ++c)
        if (sighted[pixels ? pixels->block_of[c] : c]) {
            kept.push_back(c);
            area += field.area(c);
        }
    if (kept.empty()) throw DataError("target-group background is empty: no presence records");
    const double weight = area / static_cast<double>(kept.size());
    std::vector<BackgroundPoint> points;
    points.reserve(kept.size());
    for (CellIndex c : kept) points.push_back({c, weight});
    return BackgroundSample(std::move(points));
}

std::string to_string(Method method) {
    switch (method) {
    case Method::pa_only: return "PA_ONLY";
    case Method::po_unadjusted: return "PO_UNADJUSTED";
    case Method::po_adjusted: return "PO_ADJUSTED";
    case Method::pa_po_single: return "PA_PO_SINGLE";
    case Method::pooled_all: return "POOLED_ALL";
    case Method::tgb_all: return "TGB_ALL";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    for (Method m : {Method::pa_only, Method::po_unadjusted, Method::po_adjusted, Method::pa_po_single,
                     Method::pooled_all, Method::tgb_all})
        if (to_string(m) == name) return m;
    throw ConfigError("unknown method '" + name + "'");
}

DataBundle select_species(const DataBundle& data, SpeciesId k, bool keep_survey, bool keep_presence) {
    if (k >= data.m()) throw DimensionError("species index out of range");
    DataBundle out;
    out.field = data.field;
    out.species = {data.species[k]};
    if (keep_survey && data.survey) out.survey = survey_column(*data.survey, k);
    std::vector<std::vector<PresenceRecord>> records(1);
    if (keep_presence && k < data.presence_only.n_species()) records[0] = data.presence_only.records(k);
    out.presence_only = PresenceOnlyDataset(std::move(records));
    out.background = data.background;
    return out;
}

MethodFit fit_method(const DataBundle& data, const MethodSpec& spec, const SolverOptions& options,
                     const BlockPartition* tgb_pixels) {
    const SpeciesId k = spec.species;
    if (k >= data.m()) throw ConfigError("target species out of range");
    ModelOptions model;
    switch (spec.method) {
    case Method::pa_only:
        return {fit(select_species(data, k, true, false), options, model), 0};
    case Method::po_unadjusted:
        model.bias_terms = false;
        return {fit(select_species(data, k, false, true), options, model), 0};
    case Method::po_adjusted:
        return {fit(select_species(data, k, false, true), options, model), 0};
    case Method::pa_po_single:
        return {fit(select_species(data, k, true, true), options, model), 0};
    case Method::pooled_all:
        return {fit(data, options, model), k};
    case Method::tgb_all: {
        DataBundle single = select_species(data, k, false, true);
        single.background = tgb_background(data.presence_only, *data.field, tgb_pixels);
        model.bias_terms = false;
        return {fit(single, options, model), 0};
    }
    }
    throw ConfigError("unknown method");
}

ComparisonResult run_comparison(const DataBundle& data, const ComparisonConfig& config) {
    if (config.methods.empty()) throw ConfigError("no methods to compare");
    if (config.levels.empty()) throw ConfigError("no downsampling levels");
    if (config.partition.block_of.size() != data.field->size())
        throw ConfigError("block partition does not match the field");
    std::vector<SpeciesId> targets = config.species;
    if (targets.empty())
        for (SpeciesId k = 0; k < data.m(); ++k) targets.push_back(k);
    for (SpeciesId k : targets)
        if (k >= data.m()) throw ConfigError("target species out of range");
    for (long level : config.levels)
        if (level < -1) throw ConfigError("downsampling levels must be non-negative or -1");
    config.solver.validate();

    const FoldAssignment folds = block_cv_folds(config.partition, config.n_folds, config.seed);
    const std::size_t n_methods = config.methods.size();
    const std::size_t n_targets = targets.size();
    const std::size_t n_levels = config.levels.size();
    const std::size_t n_cells = n_methods * n_targets * n_levels;
    auto cell_index = [&](std::size_t mi, std::size_t ti, std::size_t li) {
        return (mi * n_targets + ti) * n_levels + li;
    };

    struct Cell {
        double loglik = kNaN;
        double auc = kNaN;
        bool relative_only = false;
        std::string error;
    };
    std::vector<std::vector<Cell>> per_fold(config.n_folds, std::vector<Cell>(n_cells));
    ComparisonResult result;
    result.leaked_rows.assign(config.n_folds, 0);

    SolverOptions inner = config.solver;
    inner.threads = 1;
    const BlockPartition* pixels = config.tgb_pixels ? &*config.tgb_pixels : nullptr;
    const unsigned workers = resolve_threads(config.solver.threads);

    parallel_for(config.n_folds, workers, [&](std::size_t f) {
        std::vector<Cell>& cells = per_fold[f];
        const FoldSplit split = split_fold(data, config.partition, folds, f);
        result.leaked_rows[f] = count_leaked_rows(split.train, config.partition, folds, f);
        if (!split.test.survey) return;
        const SurveyDataset& test = *split.test.survey;
        std::optional<MethodFit> pooled_full;  // pooled fit without downsampling, shared by targets

        for (std::size_t ti = 0; ti < n_targets; ++ti) {
            const SpeciesId k = targets[ti];
            std::vector<int> labels;
            for (std::size_t i = 0; i < test.n_sites(); ++i)
                if (test.observed(i, k)) labels.push_back(test.response(i, k) > 0.0 ? 1 : 0);
            if (labels.empty()) continue;
            const bool both_classes = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 1; }) &&
                                      std::any_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
            const SurveyDataset test_column = survey_column(test, k);

            for (std::size_t li = 0; li < n_levels; ++li) {
                DataBundle train = split.train;
                bool downsampled = false;
                if (config.levels[li] >= 0 && train.survey) {
                    const std::size_t available = train.survey->n_observed(k);
                    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(config.levels[li]), available);
                    if (keep < available) {
                        const std::uint64_t index = (static_cast<std::uint64_t>(f) << 40) |
                                                    (static_cast<std::uint64_t>(k) << 20) | li;
                        train.survey = downsample_pa(*train.survey, k, keep, derived_seed(config.seed, index));
                        downsampled = true;
                    }
                }
                for (std::size_t mi = 0; mi < n_methods; ++mi) {
                    const Method method = config.methods[mi];
                    Cell& cell = cells[cell_index(mi, ti, li)];
                    if (!uses_survey(method) && li > 0) {
                        cell = cells[cell_index(mi, ti, 0)];
                        continue;
                    }
                    try {
                        MethodFit mf;
                        if (method == Method::pooled_all && !downsampled) {
                            if (!pooled_full) pooled_full = fit_method(train, {method, k}, inner, pixels);
                            mf = *pooled_full;
                            mf.species = k;
                        } else {
                            mf = fit_method(train, {method, k}, inner, pixels);
                        }
                        if (!mf.fit.converged) {
                            cell.error = "fold " + std::to_string(f) + ": fit did not converge";
                            continue;
                        }
                        const SurveyDataset& heldout = mf.fit.theta.m() == 1 ? test_column : test;
                        cell.relative_only = !mf.fit.anchored[mf.species];
                        if (!cell.relative_only)
                            cell.loglik = predictive_loglik(mf.fit, heldout, *data.field, mf.species);
                        if (both_classes) {
                            std::vector<double> scores;
                            for (std::size_t i = 0; i < test.n_sites(); ++i) {
                                if (!test.observed(i, k)) continue;
                                const SurveySite& site = test.site(i);
                                scores.push_back(linear_predictor_species(mf.fit.theta, mf.species,
                                                                          data.field->x(site.cell).transpose()) +
                                                 std::log(site.area));
                            }
                            cell.auc = auc(scores, labels);
                        }
                    } catch (const Error& e) {
                        cell.error = "fold " + std::to_string(f) + ": " + e.what();
                    }
                }
            }
        }
    });

    for (std::size_t mi = 0; mi < n_methods; ++mi)
        for (std::size_t ti = 0; ti < n_targets; ++ti)
            for (std::size_t li = 0; li < n_levels; ++li) {
                MetricRow row;
                row.method = config.methods[mi];
                row.species = targets[ti];
                row.level = config.levels[li];
                double ll = 0.0, a = 0.0;
                for (std::size_t f = 0; f < config.n_folds; ++f) {
                    const Cell& cell = per_fold[f][cell_index(mi, ti, li)];
                    if (!cell.error.empty()) row.errors.push_back(cell.error);
                    row.relative_only = row.relative_only || cell.relative_only;
                    if (!std::isnan(cell.loglik)) {
                        ll += cell.loglik;
                        ++row.folds_loglik;
                    }
                    if (!std::isnan(cell.auc)) {
                        a += cell.auc;
                        ++row.folds_auc;
                    }
                }
                row.predictive_loglik =
                    row.relative_only || row.folds_loglik == 0 ? kNaN : ll / static_cast<double>(row.folds_loglik);
                row.auc = row.folds_auc == 0 ? kNaN : a / static_cast<double>(row.folds_auc);
                result.rows.push_back(std::move(row));
            }
    return result;
}

std::vector<TableRow> summary_table(const std::vector<MetricRow>& rows,
                                    const std::vector<Method>& methods, long level) {
    std::vector<SpeciesId> order;
    std::map<std::pair<SpeciesId, Method>, double> lookup;
    for (const MetricRow& row : rows) {
        if (row.level != level) continue;
        if (std::find(order.begin(), order.end(), row.species) == order.end()) order.push_back(row.species);
        lookup[{row.species, row.method}] = row.auc;
    }
    std::vector<TableRow> table;
    for (SpeciesId k : order) {
        TableRow t;
        t.species = k;
        double best = -std::numeric_limits<double>::infinity();
        for (Method m : methods) {
            const auto it = lookup.find({k, m});
            const double value = it == lookup.end() ? kNaN : it->second;
            t.auc.push_back(value);
            if (!std::isnan(value)) best = std::max(best, value);
        }
        for (double value : t.auc) t.near_best.push_back(!std::isnan(value) && value >= best - 0.01);
        table.push_back(std::move(t));
    }
    return table;
}

} // namespace mspp
