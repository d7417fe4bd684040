#include "fixtures.hpp"

#include "mspp/resample.hpp"

#include <doctest.h>

#include <set>

using namespace mspp;
using mspp::testing::grid_field;

namespace {

std::shared_ptr<const CovariateField> unit_grid(std::size_t nx, std::size_t ny) {
    const auto n = static_cast<Eigen::Index>(nx * ny);
    return grid_field(nx, ny, RowMatrix::Zero(n, 1), RowMatrix::Zero(n, 1));
}

} // namespace

TEST_CASE("partition counts") {
    // Cell centres 0.5 .. 3.5 scaled into the unit square.
    std::vector<std::int64_t> ids = {1, 2, 3, 4};
    RowMatrix coords(4, 2);
    coords << 0, 0, 1, 0, 0, 1, 1, 1;
    const CovariateField square(ids, coords, Vector::Ones(4), RowMatrix::Zero(4, 0), RowMatrix::Zero(4, 0));
    CHECK(make_partition(square, 0.5, 0.5).n_blocks == 4);
    CHECK(make_partition(square, 5.0, 5.0).n_blocks == 1);

    // 9 x 29 tiles of side 2 over an 18 x 58 grid of unit cells.
    const auto field = unit_grid(18, 58);
    const BlockPartition part = make_partition(*field, 2.0, 2.0);
    CHECK(part.n_blocks == 261);
    std::set<std::size_t> used(part.block_of.begin(), part.block_of.end());
    CHECK(used.size() == 261);
    CHECK_THROWS_AS(make_partition(*field, 0.0, 1.0), ConfigError);
}

TEST_CASE("block cross-validation folds") {
    const auto field = unit_grid(18, 58);
    const BlockPartition part = make_partition(*field, 2.0, 2.0);
    const FoldAssignment folds = block_cv_folds(part, 10, 7);
    for (std::size_t f = 0; f < 10; ++f) CHECK(folds.fold_size(f) == 26);
    CHECK(folds.n_excluded() == 1);
    CHECK(block_cv_folds(part, 10, 7).fold_of_block == folds.fold_of_block);
    CHECK(block_cv_folds(part, 10, 8).fold_of_block != folds.fold_of_block);

    const BlockPartition ten = make_partition(*unit_grid(10, 1), 0.99, 1.0);
    const FoldAssignment one_each = block_cv_folds(ten, 10, 1);
    for (std::size_t f = 0; f < 10; ++f) CHECK(one_each.fold_size(f) == 1);
    CHECK(one_each.n_excluded() == 0);
    CHECK_THROWS_AS(block_cv_folds(ten, 11, 1), ConfigError);
    CHECK_THROWS_AS(block_cv_folds(ten, 0, 1), ConfigError);
}

TEST_CASE("fold splits keep held-out rows out of training") {
    mspp::testing::InstanceShape shape;
    shape.n_cells = 300;
    shape.n_sites = 200;
    const auto inst = mspp::testing::random_instance(30, shape);
    const BlockPartition part = make_partition(*inst.data.field, 3.0, 3.0);
    const FoldAssignment folds = block_cv_folds(part, 5, 2);
    std::size_t test_sites = 0;
    for (std::size_t f = 0; f < 5; ++f) {
        const FoldSplit split = split_fold(inst.data, part, folds, f);
        CHECK(count_leaked_rows(split.train, part, folds, f) == 0);
        for (const auto& s : split.test.survey->sites()) CHECK(folds.fold_of_block[part.block_of[s.cell]] == int(f));
        test_sites += split.test.survey->n_sites();
    }
    std::size_t excluded_sites = 0;
    for (const auto& s : inst.data.survey->sites())
        if (folds.fold_of_block[part.block_of[s.cell]] < 0) ++excluded_sites;
    CHECK(test_sites + excluded_sites == inst.data.survey->n_sites());
    // The full data leak into every fold.
    CHECK(count_leaked_rows(inst.data, part, folds, 0) > 0);
}

TEST_CASE("downsampling survey sites") {
    std::vector<SurveySite> sites;
    for (std::int64_t i = 0; i < 1500; ++i) sites.push_back({i + 1, 0, 1.0});
    const SurveyDataset survey(sites, Matrix::Zero(1500, 2), ResponseKind::binary);
    CHECK(downsample_pa(survey, 0, 0, 1).n_observed(0) == 0);
    CHECK(downsample_pa(survey, 0, 0, 1).n_observed(1) == 1500);
    CHECK(downsample_pa(survey, 0, 1000, 1).n_observed(0) == 1000);
    const SurveyDataset all = downsample_pa(survey, 1, 1500, 1);
    CHECK(all.n_observed(1) == 1500);
    CHECK_THROWS_AS(downsample_pa(survey, 0, 1501, 1), ConfigError);
}

TEST_CASE("percentiles interpolate") {
    CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3.0);
    CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(percentile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(percentile({4, 1, 3, 2}, 1.0) == 4.0);
}

TEST_CASE("block bootstrap") {
    mspp::testing::InstanceShape shape;
    shape.m = 2;
    shape.po_share = 1.0;
    const auto inst = mspp::testing::random_instance(31, shape);
    const FitResult full = fit(inst.data, {});
    REQUIRE(full.converged);

    const BlockPartition part = make_partition(*inst.data.field, 4.0, 4.0);
    CHECK(block_bootstrap(inst.data, part, 0, {}, {}, 1).replicates.empty());

    const BlockPartition single = make_partition(*inst.data.field, 1000.0, 1000.0);
    const BootstrapResult same = block_bootstrap(inst.data, single, 3, {}, {}, 1);
    REQUIRE(same.replicates.size() == 3);
    for (const auto& rep : same.replicates)
        CHECK((rep.flatten() - full.theta.flatten()).cwiseAbs().maxCoeff() < 1e-8);

    SolverOptions serial, parallel;
    parallel.threads = 3;
    const BootstrapResult a = block_bootstrap(inst.data, part, 6, serial, {}, 5);
    const BootstrapResult b = block_bootstrap(inst.data, part, 6, parallel, {}, 5);
    REQUIRE(a.replicates.size() == b.replicates.size());
    for (std::size_t i = 0; i < a.replicates.size(); ++i)
        CHECK(a.replicates[i].flatten() == b.replicates[i].flatten());
    CHECK(a.lower.size() == static_cast<Eigen::Index>(full.theta.layout.size()));
    for (Eigen::Index i = 0; i < a.lower.size(); ++i)
        if (!std::isnan(a.lower[i])) CHECK(a.lower[i] <= a.upper[i]);
}
