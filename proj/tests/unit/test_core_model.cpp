#include "mspp/core_model.hpp"

#include <doctest.h>

using namespace mspp;

namespace {

CovariateField tiny_field() {
    RowMatrix coords(3, 2);
    coords << 0, 0, 1, 0, 2, 0;
    RowMatrix x(3, 1), z(3, 1);
    x << 1, 2, 3;
    z << 0, 1, 0;
    return CovariateField({10, 20, 30}, coords, Vector::Ones(3), x, z, {"x1"}, {"z1"});
}

} // namespace

TEST_CASE("species linear predictor") {
    CoefficientSet theta = CoefficientSet::zeros(ParameterLayout(1, 2, 1));
    Eigen::Vector2d x(1, 1);
    CHECK(linear_predictor_species(theta, 0, x) == 0.0);
    theta.alpha[0] = -2;
    theta.beta(0, 0) = 1;
    theta.beta(0, 1) = -0.5;
    CHECK(linear_predictor_species(theta, 0, x) == doctest::Approx(-1.5));

    CoefficientSet one = CoefficientSet::zeros(ParameterLayout(1, 1, 0));
    one.alpha[0] = 1;
    one.beta(0, 0) = 2;
    CHECK(linear_predictor_species(one, 0, Vector::Constant(1, 3.0)) == 7.0);
}

TEST_CASE("bias linear predictor") {
    CoefficientSet theta = CoefficientSet::zeros(ParameterLayout(1, 2, 1));
    Vector z = Vector::Constant(1, 1.0);
    CHECK(linear_predictor_bias(theta, 0, z) == 0.0);
    theta.gamma[0] = -4;
    theta.delta[0] = -0.3;
    CHECK(linear_predictor_bias(theta, 0, z) == doctest::Approx(-4.3));

    CoefficientSet inter = CoefficientSet::zeros(ParameterLayout(1, 1, 1, {{0, 0}}));
    inter.delta[0] = 1;
    inter.interaction_values[0] = 0.5;
    CHECK(linear_predictor_bias(inter, 0, Vector::Constant(1, 2.0)) == doctest::Approx(3.0));
}

TEST_CASE("parameter layout indexing") {
    const ParameterLayout layout(3, 2, 2);
    CHECK(layout.size() == 3 * 4 + 2);
    CHECK(layout.alpha(1) == 4);
    CHECK(layout.beta(1, 1) == 6);
    CHECK(layout.gamma(1) == 7);
    CHECK(layout.delta(1) == 13);
    CHECK_FALSE(layout.penalized(layout.alpha(2)));
    CHECK_FALSE(layout.penalized(layout.gamma(0)));
    CHECK(layout.penalized(layout.beta(2, 0)));
    CHECK(layout.penalized(layout.delta(0)));
    CHECK(layout.name(layout.beta(0, 1), std::vector<std::string>{"a", "b", "c"},
                      std::vector<std::string>{"u", "v"}) .find("v") != std::string::npos);

    const ParameterLayout with(2, 1, 2, {{1, 1}, {0, 0}});
    CHECK(with.size() == 2 * 3 + 2 + 2);
    CHECK(with.interactions()[0].species == 0);
    CHECK(with.interactions_of(1).size() == 1);
    CHECK(with.species_block(1).size() == 4);
    CHECK_THROWS_AS(ParameterLayout(2, 1, 1, {{0, 0}, {0, 0}}), ConfigError);
    CHECK_THROWS_AS(ParameterLayout(2, 1, 1, {{2, 0}}), ConfigError);
    CHECK_THROWS_AS(ParameterLayout(2, 1, 1, {{0, 1}}), ConfigError);
}

TEST_CASE("flatten and unflatten are inverse") {
    const ParameterLayout layout(2, 3, 2, {{1, 0}});
    Vector flat = Vector::LinSpaced(static_cast<Eigen::Index>(layout.size()), -1.0, 2.0);
    const CoefficientSet theta = CoefficientSet::unflatten(layout, flat);
    CHECK(theta.flatten() == flat);
    CHECK(theta.beta(1, 2) == flat[static_cast<Eigen::Index>(layout.beta(1, 2))]);
    CHECK(theta.gamma[1] == flat[static_cast<Eigen::Index>(layout.gamma(1))]);
    CHECK_THROWS_AS(CoefficientSet::unflatten(layout, Vector::Zero(3)), DimensionError);
}

TEST_CASE("covariate field validation") {
    const CovariateField field = tiny_field();
    CHECK(field.size() == 3);
    CHECK(field.index_of(20) == 1);
    CHECK_FALSE(field.find(99).has_value());
    CHECK_THROWS_AS(field.index_of(99), DataError);
    CHECK(field.total_area() == 3.0);

    RowMatrix coords = RowMatrix::Zero(2, 2);
    RowMatrix x = RowMatrix::Zero(2, 1), z = RowMatrix::Zero(2, 0);
    CHECK_THROWS_AS(CovariateField({1, 1}, coords, Vector::Ones(2), x, z), DataError);
    Vector bad_area(2);
    bad_area << 1, 0;
    CHECK_THROWS_AS(CovariateField({1, 2}, coords, bad_area, x, z), DataError);
    CHECK_THROWS_AS(CovariateField({1, 2}, coords, Vector::Ones(2), RowMatrix::Zero(3, 1), z), DataError);
}

TEST_CASE("survey dataset validation and masking") {
    std::vector<SurveySite> sites = {{1, 0, 1.0}, {2, 1, 1.0}};
    Matrix y(2, 2);
    y << 1, 0, 0, 2;
    CHECK_THROWS_AS(SurveyDataset(sites, y, ResponseKind::binary), DataError);
    // Masked entries are not validated.
    const SurveyDataset masked(sites, y, ResponseKind::binary, {1, 1, 1, 0});
    CHECK(masked.n_observed(0) == 2);
    CHECK(masked.n_observed(1) == 1);
    CHECK_NOTHROW(SurveyDataset(sites, y, ResponseKind::count));
    Matrix neg(2, 1);
    neg << 1, -1;
    CHECK_THROWS_AS(SurveyDataset(sites, neg, ResponseKind::count), DataError);
    std::vector<SurveySite> zero_area = {{1, 0, 0.0}};
    CHECK_THROWS_AS(SurveyDataset(zero_area, Matrix::Zero(1, 1), ResponseKind::binary), DataError);

    const std::vector<std::size_t> rows = {1, 1, 0};
    const SurveyDataset sub = masked.subset(rows);
    CHECK(sub.n_sites() == 3);
    CHECK(sub.site(0).site_id == 2);
    CHECK_FALSE(sub.observed(0, 1));
}

TEST_CASE("background sample and bundle validation") {
    CHECK_THROWS_AS(BackgroundSample({{0, 0.0}}), DataError);
    auto field = std::make_shared<CovariateField>(tiny_field());
    const BackgroundSample bg = full_background(*field);
    CHECK(bg.size() == 3);
    CHECK(bg.total_weight() == 3.0);

    DataBundle data;
    data.field = field;
    data.species = {"a"};
    data.presence_only = PresenceOnlyDataset(std::vector<std::vector<PresenceRecord>>{{{1, 2}}});
    data.background = bg;
    CHECK_NOTHROW(data.validate());
    CHECK(data.has_po(0));
    CHECK_FALSE(data.has_pa(0));
    data.presence_only = PresenceOnlyDataset(std::vector<std::vector<PresenceRecord>>{{{1, 7}}});
    CHECK_THROWS_AS(data.validate(), DataError);
}
