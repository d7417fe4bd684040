#include "fixtures.hpp"

#include "mspp/likelihood.hpp"

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <cmath>

namespace mspp::testing {

InstanceShape random_shape(Philox& rng) {
    boost::random::uniform_int_distribution<std::size_t> m(1, 6), p(1, 4), r(1, 3), cells(150, 300),
        sites(120, 300);
    InstanceShape s;
    s.m = m(rng);
    s.p = p(rng);
    s.r = r(rng);
    s.n_cells = cells(rng);
    s.n_sites = std::min(sites(rng), s.n_cells);
    return s;
}

Instance random_instance(std::uint64_t seed, const InstanceShape& shape) {
    Philox rng = make_stream(seed, StreamPurpose::test, 1);
    boost::random::normal_distribution<double> normal;
    boost::random::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t n = shape.n_cells, m = shape.m, p = shape.p, r = shape.r;
    const auto ni = static_cast<Eigen::Index>(n);

    std::vector<std::int64_t> ids(n);
    RowMatrix coords(ni, 2), x(ni, static_cast<Eigen::Index>(p)), z(ni, static_cast<Eigen::Index>(r));
    Vector areas(ni);
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    for (std::size_t c = 0; c < n; ++c) {
        const auto cc = static_cast<Eigen::Index>(c);
        ids[c] = static_cast<std::int64_t>(c + 1);
        coords(cc, 0) = static_cast<double>(c % side);
        coords(cc, 1) = static_cast<double>(c / side);
        areas[cc] = 0.5 + unif(rng);
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(cc, j) = normal(rng);
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(cc, j) = 0.4 * x(cc, 0) + normal(rng);
    }
    auto field = std::make_shared<CovariateField>(ids, coords, areas, x, z);

    Instance inst;
    inst.truth = CoefficientSet::zeros(ParameterLayout(m, p, r));
    for (std::size_t j = 0; j < r; ++j) inst.truth.delta[static_cast<Eigen::Index>(j)] = 0.4 * normal(rng);
    std::vector<bool> has_pa(m), has_po(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        inst.truth.alpha[kk] = -1.0 + 0.5 * normal(rng);
        for (std::size_t j = 0; j < p; ++j) inst.truth.beta(kk, static_cast<Eigen::Index>(j)) = 0.5 * normal(rng);
        inst.truth.gamma[kk] = 1.5 + 0.3 * normal(rng);
        has_pa[k] = unif(rng) < shape.survey_share;
        has_po[k] = unif(rng) < shape.po_share;
        if (!has_pa[k] && !has_po[k]) (unif(rng) < 0.5 ? has_pa : has_po)[k] = true;
    }

    const std::vector<CellIndex> site_cells = sample_cells(n, shape.n_sites, rng);
    std::vector<SurveySite> sites;
    Matrix resp = Matrix::Zero(static_cast<Eigen::Index>(site_cells.size()), static_cast<Eigen::Index>(m));
    std::vector<std::uint8_t> mask(site_cells.size() * m, 0);
    std::vector<std::vector<PresenceRecord>> records(m);
    std::int64_t rec_id = 0;
    for (std::size_t i = 0; i < site_cells.size(); ++i)
        sites.push_back({static_cast<std::int64_t>(i + 1), site_cells[i], 1.0});
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t i = 0; i < site_cells.size(); ++i) {
            if (!has_pa[k] || unif(rng) < 0.1) continue;  // some missing entries
            const CellIndex c = site_cells[i];
            const double mu = std::exp(linear_predictor_species(inst.truth, k, field->x(c).transpose()));
            const double prob = -std::expm1(-mu);
            if (shape.kind == ResponseKind::binary) {
                resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = unif(rng) < prob ? 1.0 : 0.0;
            } else {
                boost::random::poisson_distribution<int> pois(mu);
                resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = pois(rng);
            }
            mask[i * m + k] = 1;
        }
        if (!has_po[k]) continue;
        for (CellIndex c = 0; c < n; ++c) {
            const double rate = field->area(c) *
                                std::exp(linear_predictor_species(inst.truth, k, field->x(c).transpose()) +
                                         linear_predictor_bias(inst.truth, k, field->z(c).transpose()));
            boost::random::poisson_distribution<int> pois(rate);
            for (int t = pois(rng); t > 0; --t) records[k].push_back({++rec_id, c});
        }
        if (records[k].empty()) records[k].push_back({++rec_id, 0});
    }
    // A species whose survey rows were all dropped still needs data.
    for (std::size_t k = 0; k < m; ++k) {
        bool any = !records[k].empty();
        for (std::size_t i = 0; i < site_cells.size() && !any; ++i) any = mask[i * m + k] != 0;
        if (!any) mask[k] = 1;
    }

    inst.data.field = field;
    for (std::size_t k = 0; k < m; ++k) inst.data.species.push_back("sp" + std::to_string(k + 1));
    inst.data.survey = SurveyDataset(std::move(sites), std::move(resp), shape.kind, std::move(mask));
    inst.data.presence_only = PresenceOnlyDataset(std::move(records));
    inst.data.background = full_background(*field);
    inst.data.validate();
    return inst;
}

std::shared_ptr<const CovariateField> grid_field(std::size_t nx, std::size_t ny, const RowMatrix& x,
                                                 const RowMatrix& z) {
    const std::size_t n = nx * ny;
    std::vector<std::int64_t> ids(n);
    RowMatrix coords(static_cast<Eigen::Index>(n), 2);
    for (std::size_t c = 0; c < n; ++c) {
        ids[c] = static_cast<std::int64_t>(c + 1);
        coords(static_cast<Eigen::Index>(c), 0) = static_cast<double>(c % nx) + 0.5;
        coords(static_cast<Eigen::Index>(c), 1) = static_cast<double>(c / nx) + 0.5;
    }
    return std::make_shared<CovariateField>(ids, coords, Vector::Ones(static_cast<Eigen::Index>(n)), x, z);
}

SimulationConfig three_covariate_config(std::size_t m, std::size_t n_cells, double cell_area, std::uint64_t seed) {
    SimulationConfig cfg;
    cfg.n_cells = n_cells;
    cfg.cell_area = cell_area;
    cfg.rng_seed = seed;
    cfg.covariance = correlated_covariance(0.95);
    cfg.true_theta = CoefficientSet::zeros(ParameterLayout(m, 2, 1));
    cfg.true_theta.delta[0] = -0.3;
    // Species 1 carries the reference coefficients; the rest vary around them.
    static const double others[7][4] = {{-1.5, 0.6, 0.3, -3.5}, {-2.5, -0.4, 0.8, -4.2}, {-1.8, 0.2, -0.7, -3.8},
                                        {-2.2, 0.9, 0.4, -4.4}, {-1.6, -0.8, -0.2, -3.6}, {-2.4, 0.5, 0.6, -4.0},
                                        {-2.0, -0.3, -0.6, -3.9}};
    for (std::size_t k = 0; k < m; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double* c = k == 0 ? nullptr : others[(k - 1) % 7];
        cfg.true_theta.alpha[kk] = k == 0 ? -2.0 : c[0];
        cfg.true_theta.beta(kk, 0) = k == 0 ? 1.0 : c[1];
        cfg.true_theta.beta(kk, 1) = k == 0 ? -0.5 : c[2];
        cfg.true_theta.gamma[kk] = k == 0 ? -4.0 : c[3];
    }
    return cfg;
}

} // namespace mspp::testing
