#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "exnex/decision.hpp"
#include "exnex/error.hpp"
#include "exnex/sampler.hpp"
#include "support.hpp"

using namespace exnex;
using exnex::test::empty_trial;
using exnex::test::quick_sampler;

namespace {

double bvn_density(const Vec2& x, const Component& c)
{
    const double z1 = (x.intercept - c.mean.intercept) / c.cov.sd1;
    const double z2 = (x.log_slope - c.mean.log_slope) / c.cov.sd2;
    const double r = c.cov.corr;
    return std::exp(-0.5 * (z1 * z1 - 2 * r * z1 * z2 + z2 * z2) / (1 - r * r)) /
           (2 * std::numbers::pi * c.cov.sd1 * c.cov.sd2 * std::sqrt(1 - r * r));
}

std::vector<Component> three_components()
{
    return {{{-1.0, 0.0}, {0.5, 0.25, 0.2}},
            {{0.5, 0.3}, {0.4, 0.3, -0.3}},
            {{-1.099, 0.0}, {2.0, 1.0, 0.0}},
            {{-1.099, 0.0}, {2.0, 1.0, 0.0}}};
}

std::vector<HumanTrialState> two_empty() { return {empty_trial("T1"), empty_trial("T2")}; }

}  // namespace

TEST_CASE("mixture probabilities equal the normalized weighted densities")
{
    const auto comps = three_components();
    const MixtureWeights w({0.1, 0.5}, 0.2, 0.2);
    const Vec2 g{-0.4, 0.1};
    double total = 0;
    std::vector<double> expected(4);
    for (std::size_t c = 0; c < 4; ++c) {
        expected[c] = w[c] * bvn_density(g, comps[c]);
        total += expected[c];
    }
    const auto p = mixture_probabilities(g, comps, w);
    for (std::size_t c = 0; c < 4; ++c) CHECK(p[c] == doctest::Approx(expected[c] / total));
}

TEST_CASE("zero-weight components are never drawn and underflow falls back to the prior")
{
    const auto comps = three_components();
    const MixtureWeights w({0.2, 0.6}, 0.0, 0.2);
    const auto p = mixture_probabilities({0.0, 0.0}, comps, w);
    CHECK(p[2] == 0.0);
    bool fell_back = false;
    const auto q = mixture_probabilities({std::numeric_limits<double>::infinity(), 0.0}, comps, w,
                                         &fell_back);
    CHECK(fell_back);
    CHECK(q == w.as_vector());
    for (int i = 0; i < 1000; ++i) {
        CHECK(sample_mixture_indicator({0.0, 0.0}, comps, w, i / 1000.0) != 2);
    }
}

TEST_CASE("indicator draws follow the full conditional (chi-square)")
{
    RandomStream rng(77, 0);
    const auto comps = three_components();
    const MixtureWeights w({0.1, 0.5}, 0.2, 0.2);
    for (int trial = 0; trial < 5; ++trial) {
        const Vec2 g{-2.0 + 3.0 * rng.uniform(), -0.5 + rng.uniform()};
        const auto p = mixture_probabilities(g, comps, w);
        std::vector<int> counts(4, 0);
        const int n = 10000;
        for (int i = 0; i < n; ++i) ++counts[sample_mixture_indicator(g, comps, w, rng.uniform())];
        double chi2 = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            const double e = n * p[c];
            if (e < 1e-9) {
                CHECK(counts[c] == 0);
                continue;
            }
            chi2 += (counts[c] - e) * (counts[c] - e) / e;
        }
        // 0.999 quantile of chi-square with 3 degrees of freedom.
        CHECK(chi2 < 16.266);
    }
}

TEST_CASE("quantiles interpolate between order statistics")
{
    const std::vector<double> x{1, 2, 3, 4};
    CHECK(quantile_sorted(x, 0.0) == 1.0);
    CHECK(quantile_sorted(x, 1.0) == 4.0);
    CHECK(quantile_sorted(x, 0.5) == doctest::Approx(2.5));
    CHECK(quantile_sorted(x, 0.25) == doctest::Approx(1.75));
    const auto s = summarize_draws(std::vector<double>{4, 1, 3, 2});
    CHECK(s.mean == doctest::Approx(2.5));
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("sampler settings validation")
{
    SamplerSettings s;
    s.n_burnin = s.n_iterations;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = SamplerSettings{};
    s.n_chains = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK(SamplerSettings::full().n_iterations == 15000);
    CHECK(SamplerSettings::full().n_burnin == 5000);
    CHECK(SamplerSettings::reduced().n_iterations == 6000);
}

TEST_CASE("run_posterior is deterministic in the seed and independent of threading")
{
    const auto cfg = exnex::test::quick_config();
    const auto animal = exnex::test::shipped_animal_data();
    auto trials = two_empty();
    trials[0].cohorts = {{0, 3, 0}, {1, 3, 0}, {2, 3, 1}};
    auto s = quick_sampler(5);
    const auto a = run_posterior(animal, trials, cfg.model, s);
    const auto b = run_posterior(animal, trials, cfg.model, s);
    s.parallel_chains = true;
    const auto c = run_posterior(animal, trials, cfg.model, s);
    CHECK(a.subgroups[0].tox == b.subgroups[0].tox);
    CHECK(a.subgroups[0].tox == c.subgroups[0].tox);
    CHECK(a.subgroups[1].epsilon == c.subgroups[1].epsilon);
    s.seed = 6;
    const auto d = run_posterior(animal, trials, cfg.model, s);
    CHECK(a.subgroups[0].tox != d.subgroups[0].tox);
}

TEST_CASE("posterior output shape and invariants")
{
    const auto cfg = exnex::test::quick_config();
    const auto animal = exnex::test::shipped_animal_data();
    auto s = quick_sampler();
    s.compute_diagnostics = true;
    const auto post = run_posterior(animal, two_empty(), cfg.model, s);
    CHECK(post.n_chains == 2);
    CHECK(post.retained_per_chain == 1000);
    CHECK(post.component_labels == std::vector<std::string>{"Rat", "Monkey", "human", "robust"});
    CHECK(post.studies.size() == animal.size());
    CHECK_FALSE(post.diagnostics.empty());
    CHECK_FALSE(post.acceptance.empty());
    for (const auto& a : post.acceptance) {
        CHECK(a.rate > 0.0);
        CHECK(a.rate < 1.0);
    }
    for (const auto& sp : post.subgroups) {
        CHECK(sp.tox.size() == 6);
        const double f = std::accumulate(sp.component_frequency.begin(), sp.component_frequency.end(), 0.0);
        CHECK(f == doctest::Approx(1.0));
        for (std::size_t j = 0; j < 6; ++j) {
            for (double p : sp.tox[j]) {
                REQUIRE(p >= 0.0);
                REQUIRE(p <= 1.0);
            }
            if (j > 0) {
                for (std::size_t d = 0; d < sp.tox[j].size(); ++d) REQUIRE(sp.tox[j][d] >= sp.tox[j - 1][d]);
            }
        }
        for (double e : sp.epsilon) {
            REQUIRE(e > 0.0);
            REQUIRE(e < 2.0);
        }
    }
    // T1 puts no weight on the human-bridge component.
    CHECK(post.subgroup("T1").component_frequency[2] == 0.0);
    CHECK_THROWS_AS(post.subgroup("T7"), ConfigError);
}

TEST_CASE("posterior concentrates on strong human data")
{
    auto cfg = exnex::test::quick_config();
    auto trials = two_empty();
    trials[0].max_sample_size = 200;
    for (int h = 0; h < 20; ++h) trials[0].cohorts.push_back({3, 6, 2});
    const auto post = run_posterior({}, trials, cfg.model, quick_sampler());
    const auto s = summarize_draws(post.subgroup("T1").tox[3]);
    CHECK(s.median == doctest::Approx(40.0 / 120.0).epsilon(0.15));
}

TEST_CASE("run_posterior rejects a trial on a different grid")
{
    const auto cfg = exnex::test::quick_config();
    auto trials = two_empty();
    trials[1].grid = DoseGrid({0.1, 0.5, 1.0, 5.0, 10.0, 30.0}, 5.0);
    CHECK_THROWS_AS(run_posterior({}, trials, cfg.model, quick_sampler()), ConfigError);
    trials.pop_back();
    CHECK_THROWS_AS(run_posterior({}, trials, cfg.model, quick_sampler()), ConfigError);
}

TEST_CASE("clamped indicators pin the mixture component")
{
    auto cfg = exnex::test::quick_config();
    cfg.model.clamp.indicators = true;
    cfg.model.clamp.indicator = {1, 3};
    const auto post = run_posterior(exnex::test::shipped_animal_data(), two_empty(), cfg.model,
                                    quick_sampler());
    CHECK(post.subgroup("T1").component_frequency == std::vector<double>{0, 1, 0, 0});
    CHECK(post.subgroup("T2").component_frequency == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("prior predictive rows summarize each subgroup")
{
    const auto cfg = exnex::test::quick_config();
    const auto pp = prior_predictive(exnex::test::shipped_animal_data(), cfg.model, quick_sampler());
    REQUIRE(pp.subgroups.size() == 2);
    for (const auto& sg : pp.subgroups) {
        REQUIRE(sg.rows.size() == 6);
        for (std::size_t j = 1; j < 6; ++j) CHECK(sg.rows[j].median >= sg.rows[j - 1].median);
        for (const auto& r : sg.rows) {
            CHECK(r.q025 <= r.median);
            CHECK(r.median <= r.q975);
        }
    }
}
