#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "exnex/ess.hpp"
#include "exnex/rng.hpp"

using namespace exnex;

namespace {

double beta_sd(double a, double b)
{
    return std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1)));
}

}  // namespace

TEST_CASE("moment matching recovers known beta distributions")
{
    for (auto [a, b] : {std::pair{2.0, 8.0}, {0.5, 0.5}, {30.0, 70.0}, {1.2, 14.0}}) {
        const auto m = beta_moment_match(a / (a + b), beta_sd(a, b));
        CHECK(m.a == doctest::Approx(a));
        CHECK(m.b == doctest::Approx(b));
        CHECK(m.ess() == doctest::Approx(a + b));
        CHECK(m.mean() == doctest::Approx(a / (a + b)));
        CHECK(m.sd() == doctest::Approx(beta_sd(a, b)));
    }
}

TEST_CASE("moment matching round-trips (property)")
{
    RandomStream rng(8, 0);
    for (int i = 0; i < 1000; ++i) {
        const double a = 0.05 + 50 * rng.uniform();
        const double b = 0.05 + 50 * rng.uniform();
        const auto m = beta_moment_match(a / (a + b), beta_sd(a, b));
        REQUIRE(m.a == doctest::Approx(a).epsilon(1e-8));
        REQUIRE(m.b == doctest::Approx(b).epsilon(1e-8));
    }
}

TEST_CASE("moment matching rejects impossible moments")
{
    CHECK_THROWS_AS(beta_moment_match(0.0, 0.1), std::domain_error);
    CHECK_THROWS_AS(beta_moment_match(1.0, 0.1), std::domain_error);
    CHECK_THROWS_AS(beta_moment_match(0.3, 0.0), std::domain_error);
    CHECK_THROWS_AS(beta_moment_match(0.3, std::nan("")), std::domain_error);
    // sd^2 = 0.25 > 0.3 * 0.7
    CHECK_THROWS_AS(beta_moment_match(0.3, 0.5), std::domain_error);
}

TEST_CASE("worked example: mean 0.1, sd 0.1 gives 8 pseudo-patients")
{
    const auto m = beta_moment_match(0.1, 0.1);
    CHECK(m.ess() == doctest::Approx(8.0));
    CHECK(m.a == doctest::Approx(0.8));
    CHECK(m.b == doctest::Approx(7.2));
}

TEST_CASE("ess_report keeps failing rows with a message")
{
    const std::vector<DoseMoments> rows{{"T1", 0, 0.1, 0.2, 0.1}, {"T1", 1, 0.5, 0.5, 0.6}};
    const auto r = ess_report(rows);
    REQUIRE(r.size() == 2);
    REQUIRE(r[0].beta.has_value());
    CHECK(r[0].beta->ess() == doctest::Approx(15.0));
    CHECK(r[0].error.empty());
    CHECK_FALSE(r[1].beta.has_value());
    CHECK(r[1].error.find("sd^2") != std::string::npos);
}
