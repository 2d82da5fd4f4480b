#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "exnex/density.hpp"
#include "exnex/error.hpp"
#include "exnex/model.hpp"
#include "exnex/rng.hpp"

using namespace exnex;

TEST_CASE("tox_prob matches the closed form")
{
    // logit p = -1 + e^0.3 log(0.8 * 10 / 5)
    const double x = -1.0 + std::exp(0.3) * std::log(0.8 * 10.0 / 5.0);
    CHECK(tox_prob(-1.0, 0.3, 0.8, 10.0, 5.0) == doctest::Approx(1.0 / (1.0 + std::exp(-x))));
    CHECK(tox_prob(0.0, 0.0, 1.0, 5.0, 5.0) == doctest::Approx(0.5));
    CHECK_THROWS_AS(tox_prob(0, 0, 1, 0.0, 5), std::domain_error);
    CHECK_THROWS_AS(tox_prob(0, 0, 0.0, 1.0, 5), std::domain_error);
    CHECK_THROWS_AS(tox_prob(0, 0, 1, 1.0, -5), std::domain_error);
}

TEST_CASE("tox_prob is increasing in dose and in the scale factor (property)")
{
    RandomStream rng(2024, 0);
    int cases = 0;
    for (; cases < 2000; ++cases) {
        const double a = -10.0 + 20.0 * rng.uniform();
        const double b = -3.0 + 6.0 * rng.uniform();
        const double s = 0.05 + 3.0 * rng.uniform();
        const double d1 = 0.01 + 50.0 * rng.uniform();
        const double d2 = d1 * (1.0 + 2.0 * rng.uniform_open());
        const double p1 = tox_prob(a, b, s, d1, 5.0);
        const double p2 = tox_prob(a, b, s, d2, 5.0);
        REQUIRE(p1 >= 0.0);
        REQUIRE(p2 <= 1.0);
        REQUIRE(p2 >= p1);
        REQUIRE(tox_prob(a, b, s * 1.5, d1, 5.0) >= p1);
        REQUIRE(tox_prob(a + 0.5, b, s, d1, 5.0) >= p1);
    }
    CHECK(cases >= 1000);
}

TEST_CASE("mixture weights must sum to one")
{
    CHECK_NOTHROW(MixtureWeights({0.1, 0.5}, 0.2, 0.2));
    CHECK_THROWS_AS(MixtureWeights({0.1, 0.4}, 0.2, 0.2), ConfigError);
    CHECK_THROWS_AS(MixtureWeights({-0.1, 0.7}, 0.2, 0.2), ConfigError);
    const MixtureWeights w({0.2, 0.6}, 0.0, 0.2);
    CHECK(w.size() == 4);
    CHECK(w.human_index() == 2);
    CHECK(w.robust_index() == 3);
    CHECK(w.as_vector() == std::vector<double>{0.2, 0.6, 0.0, 0.2});
}

TEST_CASE("dose grid rejects unsorted or non-positive doses")
{
    CHECK_THROWS_AS(DoseGrid({1.0, 0.5}, 5.0), DataError);
    CHECK_THROWS_AS(DoseGrid({0.0, 0.5}, 5.0), DataError);
    CHECK_THROWS_AS(DoseGrid({0.5}, 0.0), DataError);
}

TEST_CASE("animal study validation")
{
    AnimalStudy s{"m1", "Monkey", DoseGrid({10.0}, 5.0), {6}, {7}};
    CHECK_THROWS_AS(s.validate(), DataError);
    s.r = {6};
    CHECK_NOTHROW(s.validate());
    s.n = {6, 6};
    CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("trial state tallies and landmarks")
{
    HumanTrialState t;
    t.subgroup_id = "T1";
    t.grid = DoseGrid({0.1, 0.5, 1.0}, 5.0);
    CHECK_FALSE(t.highest_administered().has_value());
    CHECK_FALSE(t.current_dose().has_value());
    t.cohorts = {{0, 3, 0}, {1, 3, 1}, {0, 3, 2}};
    const auto tally = t.tally();
    CHECK(tally.n == std::vector<int>{6, 3, 0});
    CHECK(tally.r == std::vector<int>{2, 1, 0});
    CHECK(t.total_treated() == 9);
    CHECK(t.total_dlt() == 3);
    CHECK(*t.highest_administered() == 1);
    CHECK(*t.current_dose() == 0);
    CHECK(t.administered(1));
    CHECK_FALSE(t.administered(2));
    CHECK_FALSE(t.is_complete());
    t.max_sample_size = 9;
    CHECK(t.is_complete());
    t.cohorts.push_back({2, 3, 0});
    CHECK_THROWS_AS(t.validate(), DataError);
}

TEST_CASE("model config validation names the offender")
{
    ModelConfig c;
    c.species = {{"Rat", -1.82, 0.323}};
    SubgroupConfig s;
    s.id = "T9";
    s.weights = MixtureWeights({0.2, 0.6}, 0.0, 0.2);
    c.subgroups = {s};
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("T9") != std::string::npos);
    }
}

TEST_CASE("epsilon prior bounds are symmetric for upper = 2")
{
    const EpsilonPrior e;
    const auto b = e.standardized_bounds();
    CHECK(b.lower == doctest::Approx(-1.0 / 0.255));
    CHECK(b.upper == doctest::Approx(1.0 / 0.255));
}
