#include "mspp/simulate.hpp"

#include "mspp/likelihood.hpp"

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <cmath>
#include <numeric>

namespace mspp {

void SimulationConfig::validate() const {
    const std::size_t p = true_theta.p();
    const std::size_t r = true_theta.r();
    const auto d = static_cast<Eigen::Index>(p + r);
    if (n_cells == 0) throw ConfigError("simulation needs at least one cell");
    if (!(cell_area > 0.0)) throw ConfigError("cell_area must be > 0");
    if (covariance.rows() != d || covariance.cols() != d)
        throw ConfigError("covariance must be (p+r) x (p+r) = " + std::to_string(d) + " square");
    if (!covariance.isApprox(covariance.transpose(), 1e-12))
        throw ConfigError("covariance is not symmetric");
    if (d > 0 && Eigen::LLT<Matrix>(covariance).info() != Eigen::Success)
        throw ConfigError("covariance is not positive definite");
    if (!species.empty() && species.size() != true_theta.m())
        throw ConfigError("species names do not match the coefficient set");
}

Matrix correlated_covariance(double correlation) {
    Matrix cov = Matrix::Identity(3, 3);
    cov(0, 2) = cov(2, 0) = correlation;
    return cov;
}

CovariateField simulate_covariates(const SimulationConfig& config) {
    config.validate();
    const std::size_t n = config.n_cells;
    const std::size_t p = config.true_theta.p();
    const std::size_t r = config.true_theta.r();
    const auto d = static_cast<Eigen::Index>(p + r);
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    const double spacing = std::sqrt(config.cell_area);

    Philox rng = make_stream(config.rng_seed, StreamPurpose::covariates);
    boost::random::normal_distribution<double> normal;
    const Matrix chol = d > 0 ? Matrix(Eigen::LLT<Matrix>(config.covariance).matrixL()) : Matrix();

    std::vector<std::int64_t> ids(n);
    RowMatrix coords(static_cast<Eigen::Index>(n), 2);
    RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    RowMatrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r));
    Vector draw(d);
    for (std::size_t c = 0; c < n; ++c) {
        const auto cc = static_cast<Eigen::Index>(c);
        ids[c] = static_cast<std::int64_t>(c + 1);
        coords(cc, 0) = (static_cast<double>(c % side) + 0.5) * spacing;
        coords(cc, 1) = (static_cast<double>(c / side) + 0.5) * spacing;
        for (Eigen::Index j = 0; j < d; ++j) draw[j] = normal(rng);
        const Vector v = chol * draw;
        x.row(cc) = v.head(static_cast<Eigen::Index>(p)).transpose();
        z.row(cc) = v.tail(static_cast<Eigen::Index>(r)).transpose();
    }
    return CovariateField(std::move(ids), std::move(coords),
                          Vector::Constant(static_cast<Eigen::Index>(n), config.cell_area), std::move(x),
                          std::move(z), config.x_names, config.z_names);
}

std::vector<std::int64_t> simulate_species_process(const CovariateField& field,
                                                   const CoefficientSet& theta, SpeciesId k,
                                                   Philox& rng) {
    std::vector<std::int64_t> counts(field.size(), 0);
    for (CellIndex c = 0; c < field.size(); ++c) {
        const double eta = linear_predictor_species(theta, k, field.x(c).transpose());
        if (eta > kMaxLinearPredictor)
            throw OverflowError("species intensity overflows at cell " + std::to_string(field.id(c)));
        const double mean = field.area(c) * std::exp(eta);
        if (!(mean > 0.0)) continue;
        boost::random::poisson_distribution<std::int64_t, double> poisson(mean);
        counts[c] = poisson(rng);
    }
    return counts;
}

std::vector<PresenceRecord> thin_process(std::span<const std::int64_t> counts,
                                         const CovariateField& field, const CoefficientSet& theta,
                                         SpeciesId k, Philox& rng) {
    if (counts.size() != field.size()) throw DimensionError("one count per cell required");
    std::vector<PresenceRecord> records;
    std::int64_t next_id = 1;
    for (CellIndex c = 0; c < field.size(); ++c) {
        if (counts[c] <= 0) continue;
        const double b = std::exp(linear_predictor_bias(theta, k, field.z(c).transpose()));
        if (b > 1.0)
            throw DataError("thinning probability " + std::to_string(b) + " exceeds 1 at cell " +
                            std::to_string(field.id(c)));
        std::int64_t kept = 0;
        if (b >= 1.0) {
            kept = counts[c];
        } else if (b > 0.0) {
            boost::random::binomial_distribution<std::int64_t, double> binomial(counts[c], b);
            kept = binomial(rng);
        }
        for (std::int64_t i = 0; i < kept; ++i) records.push_back({next_id++, c});
    }
    return records;
}

SurveyDataset make_survey(const CovariateField& field,
                          const std::vector<std::vector<std::int64_t>>& counts,
                          std::span<const CellIndex> site_cells, ResponseKind kind) {
    const std::size_t m = counts.size();
    Matrix responses(static_cast<Eigen::Index>(site_cells.size()), static_cast<Eigen::Index>(m));
    std::vector<SurveySite> sites;
    sites.reserve(site_cells.size());
    for (std::size_t i = 0; i < site_cells.size(); ++i) {
        const CellIndex c = site_cells[i];
        if (c >= field.size()) throw DataError("survey site at unknown cell index " + std::to_string(c));
        sites.push_back({static_cast<std::int64_t>(i + 1), c, field.area(c)});
        for (SpeciesId k = 0; k < m; ++k) {
            const auto n = static_cast<double>(counts[k].at(c));
            responses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                kind == ResponseKind::binary ? (n > 0 ? 1.0 : 0.0) : n;
        }
    }
    return SurveyDataset(std::move(sites), std::move(responses), kind);
}

std::vector<CellIndex> sample_cells(std::size_t n_cells, std::size_t n, Philox& rng) {
    if (n > n_cells) throw ConfigError("cannot sample " + std::to_string(n) + " of " +
                                       std::to_string(n_cells) + " cells without replacement");
    std::vector<CellIndex> pool(n_cells);
    std::iota(pool.begin(), pool.end(), CellIndex{0});
    for (std::size_t i = 0; i < n; ++i) {
        boost::random::uniform_int_distribution<std::size_t> pick(i, n_cells - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(n);
    return pool;
}

SimulatedData simulate_bundle(const SimulationConfig& config, const SurveyDesign& design) {
    auto field = std::make_shared<const CovariateField>(simulate_covariates(config));
    const CoefficientSet& theta = config.true_theta;
    const std::size_t m = theta.m();
    SimulatedData out;
    out.counts.resize(m);
    std::vector<std::vector<PresenceRecord>> records(m);
    for (SpeciesId k = 0; k < m; ++k) {
        Philox species_rng = make_stream(config.rng_seed, StreamPurpose::species_process, k);
        out.counts[k] = simulate_species_process(*field, theta, k, species_rng);
        Philox thin_rng = make_stream(config.rng_seed, StreamPurpose::thinning, k);
        records[k] = thin_process(out.counts[k], *field, theta, k, thin_rng);
    }
    DataBundle& bundle = out.bundle;
    bundle.field = field;
    bundle.species = config.species;
    if (bundle.species.empty())
        for (SpeciesId k = 0; k < m; ++k) bundle.species.push_back("sp" + std::to_string(k + 1));
    if (design.n_sites > 0) {
        Philox site_rng = make_stream(config.rng_seed, StreamPurpose::survey_sites);
        const auto cells = sample_cells(field->size(), design.n_sites, site_rng);
        bundle.survey = make_survey(*field, out.counts, cells, design.kind);
    }
    bundle.presence_only = PresenceOnlyDataset(std::move(records));
    if (design.n_background == 0) {
        bundle.background = full_background(*field);
    } else {
        Philox bg_rng = make_stream(config.rng_seed, StreamPurpose::background);
        const auto cells = sample_cells(field->size(), design.n_background, bg_rng);
        const double w = field->total_area() / static_cast<double>(design.n_background);
        std::vector<BackgroundPoint> points;
        points.reserve(cells.size());
        for (CellIndex c : cells) points.push_back({c, w});
        bundle.background = BackgroundSample(std::move(points));
    }
    return out;
}

} // namespace mspp
