#include "mspp/resample.hpp"

#include "mspp/parallel.hpp"
#include "mspp/rng.hpp"

#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mspp {

BlockPartition make_partition(const CovariateField& field, double side_x, double side_y) {
    if (field.size() == 0) throw DataError("cannot partition an empty field");
    if (!(side_x > 0.0) || !(side_y > 0.0)) throw ConfigError("block sides must be > 0");
    const auto& coords = field.coords();
    const double min_x = coords.col(0).minCoeff(), max_x = coords.col(0).maxCoeff();
    const double min_y = coords.col(1).minCoeff(), max_y = coords.col(1).maxCoeff();
    auto tiles = [](double extent, double side) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(extent / side - 1e-9)));
    };
    BlockPartition part;
    part.side_x = side_x;
    part.side_y = side_y;
    part.origin_x = min_x;
    part.origin_y = min_y;
    part.nx = tiles(max_x - min_x, side_x);
    part.ny = tiles(max_y - min_y, side_y);
    part.n_blocks = part.nx * part.ny;
    part.block_of.resize(field.size());
    for (CellIndex c = 0; c < field.size(); ++c) {
        auto ix = static_cast<std::size_t>(std::floor((field.coord_x(c) - min_x) / side_x));
        auto iy = static_cast<std::size_t>(std::floor((field.coord_y(c) - min_y) / side_y));
        ix = std::min(ix, part.nx - 1);
        iy = std::min(iy, part.ny - 1);
        part.block_of[c] = iy * part.nx + ix;
    }
    return part;
}

BlockMembership block_membership(const DataBundle& data, const BlockPartition& partition) {
    const std::size_t nb = partition.n_blocks;
    BlockMembership out;
    out.sites.resize(nb);
    out.presence.assign(nb, std::vector<std::vector<std::size_t>>(data.m()));
    out.background.resize(nb);
    if (data.survey)
        for (std::size_t i = 0; i < data.survey->n_sites(); ++i)
            out.sites[partition.block_of[data.survey->site(i).cell]].push_back(i);
    for (SpeciesId k = 0; k < data.m(); ++k) {
        const auto& records = data.presence_only.records(k);
        for (std::size_t i = 0; i < records.size(); ++i)
            out.presence[partition.block_of[records[i].cell]][k].push_back(i);
    }
    for (std::size_t i = 0; i < data.background.size(); ++i)
        out.background[partition.block_of[data.background[i].cell]].push_back(i);
    return out;
}

DataBundle bundle_from_blocks(const DataBundle& data, const BlockMembership& membership,
                              std::span<const std::size_t> blocks) {
    DataBundle out;
    out.field = data.field;
    out.species = data.species;
    if (data.survey) {
        std::vector<std::size_t> rows;
        for (std::size_t b : blocks) rows.insert(rows.end(), membership.sites[b].begin(), membership.sites[b].end());
        out.survey = data.survey->subset(rows);
    }
    std::vector<std::vector<PresenceRecord>> records(data.m());
    for (std::size_t b : blocks)
        for (SpeciesId k = 0; k < data.m(); ++k)
            for (std::size_t i : membership.presence[b][k])
                records[k].push_back(data.presence_only.records(k)[i]);
    out.presence_only = PresenceOnlyDataset(std::move(records));
    std::vector<BackgroundPoint> points;
    for (std::size_t b : blocks)
        for (std::size_t i : membership.background[b]) points.push_back(data.background[i]);
    out.background = BackgroundSample(std::move(points));
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapResult block_bootstrap(const DataBundle& data, const BlockPartition& partition,
                                std::size_t replicates, const SolverOptions& options,
                                const ModelOptions& model, std::uint64_t seed,
                                double lower_quantile, double upper_quantile) {
    BootstrapResult result;
    if (replicates == 0) return result;
    if (partition.block_of.size() != data.field->size())
        throw DataError("partition does not cover the covariate field");
    const BlockMembership membership = block_membership(data, partition);
    const std::size_t nb = partition.n_blocks;

    std::vector<std::optional<CoefficientSet>> fits(replicates);
    std::vector<std::string> errors(replicates);
    SolverOptions inner = options;
    inner.threads = 1;
    parallel_for(replicates, resolve_threads(options.threads), [&](std::size_t rep) {
        Philox rng = make_stream(seed, StreamPurpose::bootstrap, rep);
        boost::random::uniform_int_distribution<std::size_t> pick(0, nb - 1);
        std::vector<std::size_t> drawn(nb);
        for (auto& b : drawn) b = pick(rng);
        try {
            const DataBundle sample = bundle_from_blocks(data, membership, drawn);
            FitResult f = fit(sample, inner, model);
            if (f.converged)
                fits[rep] = std::move(f.theta);
            else
                errors[rep] = "did not converge: " + f.message;
        } catch (const Error& e) {
            errors[rep] = e.what();
        }
    });

    for (std::size_t rep = 0; rep < replicates; ++rep) {
        if (fits[rep]) {
            result.replicates.push_back(std::move(*fits[rep]));
            result.replicate_ids.push_back(rep);
        } else {
            ++result.failed;
            result.failures.push_back("replicate " + std::to_string(rep) + ": " + errors[rep]);
        }
    }
    if (result.replicates.empty()) return result;
    const auto n_coef = static_cast<Eigen::Index>(result.replicates.front().layout.size());
    Matrix draws(static_cast<Eigen::Index>(result.replicates.size()), n_coef);
    for (std::size_t i = 0; i < result.replicates.size(); ++i)
        draws.row(static_cast<Eigen::Index>(i)) = result.replicates[i].flatten().transpose();
    result.lower.resize(n_coef);
    result.upper.resize(n_coef);
    for (Eigen::Index j = 0; j < n_coef; ++j) {
        std::vector<double> column(draws.col(j).data(), draws.col(j).data() + draws.rows());
        result.lower[j] = percentile(column, lower_quantile);
        result.upper[j] = percentile(std::move(column), upper_quantile);
    }
    return result;
}

std::size_t FoldAssignment::fold_size(std::size_t fold) const {
    return static_cast<std::size_t>(
        std::count(fold_of_block.begin(), fold_of_block.end(), static_cast<int>(fold)));
}

std::size_t FoldAssignment::n_excluded() const {
    return static_cast<std::size_t>(std::count(fold_of_block.begin(), fold_of_block.end(), -1));
}

FoldAssignment block_cv_folds(const BlockPartition& partition, std::size_t n_folds, std::uint64_t seed) {
    const std::size_t nb = partition.n_blocks;
    if (n_folds == 0 || n_folds > nb)
        throw ConfigError("need 1 <= folds <= blocks, got " + std::to_string(n_folds) + " folds for " +
                          std::to_string(nb) + " blocks");
    std::vector<std::size_t> order(nb);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Philox rng = make_stream(seed, StreamPurpose::folds);
    for (std::size_t i = 0; i + 1 < nb; ++i) {
        boost::random::uniform_int_distribution<std::size_t> pick(i, nb - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    FoldAssignment folds;
    folds.n_folds = n_folds;
    folds.fold_of_block.assign(nb, -1);
    const std::size_t used = n_folds * (nb / n_folds);
    for (std::size_t i = 0; i < used; ++i) folds.fold_of_block[order[i]] = static_cast<int>(i % n_folds);
    return folds;
}

namespace {

DataBundle filter_by_block(const DataBundle& data, const BlockPartition& partition,
                           const std::vector<std::uint8_t>& keep_block) {
    auto keep = [&](CellIndex c) { return keep_block[partition.block_of[c]] != 0; };
    DataBundle out;
    out.field = data.field;
    out.species = data.species;
    if (data.survey) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.survey->n_sites(); ++i)
            if (keep(data.survey->site(i).cell)) rows.push_back(i);
        out.survey = data.survey->subset(rows);
    }
    std::vector<std::vector<PresenceRecord>> records(data.m());
    for (SpeciesId k = 0; k < data.m(); ++k)
        for (const auto& rec : data.presence_only.records(k))
            if (keep(rec.cell)) records[k].push_back(rec);
    out.presence_only = PresenceOnlyDataset(std::move(records));
    std::vector<BackgroundPoint> points;
    for (const auto& pt : data.background.points())
        if (keep(pt.cell)) points.push_back(pt);
    out.background = BackgroundSample(std::move(points));
    return out;
}

} // namespace

FoldSplit split_fold(const DataBundle& data, const BlockPartition& partition,
                     const FoldAssignment& folds, std::size_t fold) {
    if (fold >= folds.n_folds) throw ConfigError("fold index out of range");
    const std::size_t nb = partition.n_blocks;
    std::vector<std::uint8_t> train(nb, 0), test(nb, 0);
    for (std::size_t b = 0; b < nb; ++b) {
        const int f = folds.fold_of_block[b];
        if (f < 0) continue;
        (static_cast<std::size_t>(f) == fold ? test : train)[b] = 1;
    }
    return {filter_by_block(data, partition, train), filter_by_block(data, partition, test)};
}

std::size_t count_leaked_rows(const DataBundle& train, const BlockPartition& partition,
                              const FoldAssignment& folds, std::size_t fold) {
    auto leaked = [&](CellIndex c) {
        const int f = folds.fold_of_block[partition.block_of[c]];
        return f < 0 || static_cast<std::size_t>(f) == fold;
    };
    std::size_t count = 0;
    if (train.survey)
        for (const auto& s : train.survey->sites()) count += leaked(s.cell) ? 1 : 0;
    for (SpeciesId k = 0; k < train.m(); ++k)
        for (const auto& rec : train.presence_only.records(k)) count += leaked(rec.cell) ? 1 : 0;
    for (const auto& pt : train.background.points()) count += leaked(pt.cell) ? 1 : 0;
    return count;
}

SurveyDataset downsample_pa(const SurveyDataset& survey, SpeciesId k, std::size_t n_keep,
                            std::uint64_t seed) {
    if (k >= survey.n_species()) throw ConfigError("species index out of range");
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < survey.n_sites(); ++i)
        if (survey.observed(i, k)) observed.push_back(i);
    if (n_keep > observed.size())
        throw ConfigError("cannot keep " + std::to_string(n_keep) + " survey sites; only " +
                          std::to_string(observed.size()) + " are observed");
    Philox rng = make_stream(seed, StreamPurpose::downsample, k);
    for (std::size_t i = 0; i < n_keep; ++i) {
        boost::random::uniform_int_distribution<std::size_t> pick(i, observed.size() - 1);
        std::swap(observed[i], observed[pick(rng)]);
    }
    std::vector<std::uint8_t> mask(survey.n_sites(), 0);
    for (std::size_t i = 0; i < n_keep; ++i) mask[observed[i]] = 1;
    return survey.with_species_mask(k, mask);
}

} // namespace mspp
