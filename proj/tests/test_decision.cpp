#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "exnex/decision.hpp"
#include "exnex/error.hpp"
#include "exnex/rng.hpp"
#include "support.hpp"

using namespace exnex;
using exnex::test::empty_trial;

namespace {

const IntervalThresholds kThr{};

IntervalProbabilities probs(double under, double over)
{
    return {under, 1.0 - under - over, over};
}

std::vector<IntervalProbabilities> from_over(std::vector<double> over)
{
    std::vector<IntervalProbabilities> out;
    for (double o : over) out.push_back(probs(std::max(0.0, 0.5 - o), o));
    return out;
}

// Random trial history that itself respects no-skipping.
HumanTrialState random_history(RandomStream& rng, int max_n = 24)
{
    auto t = empty_trial("T1", max_n);
    const int H = 1 + static_cast<int>(rng.uniform() * 7);
    int dose = 0, highest = 0;
    for (int h = 0; h < H; ++h) {
        t.cohorts.push_back({dose, 3, static_cast<int>(rng.uniform() * 4)});
        highest = std::max(highest, dose);
        const int step = static_cast<int>(rng.uniform() * 3) - 1;
        dose = std::clamp(dose + step, 0, std::min(5, highest + 1));
    }
    return t;
}

std::vector<IntervalProbabilities> random_monotone_probs(RandomStream& rng)
{
    std::vector<double> over(6);
    double o = 0.3 * rng.uniform();
    for (auto& x : over) {
        x = std::min(1.0, o);
        o += 0.2 * rng.uniform();
    }
    return from_over(over);
}

}  // namespace

TEST_CASE("interval probabilities from draws")
{
    const std::vector<double> draws{0.05, 0.10, 0.16, 0.20, 0.33, 0.40, 0.50, 0.90};
    const auto p = interval_probabilities(draws, kThr);
    CHECK(p.under == doctest::Approx(2.0 / 8));
    CHECK(p.target == doctest::Approx(2.0 / 8));
    CHECK(p.over == doctest::Approx(4.0 / 8));
    CHECK_THROWS_AS(interval_probabilities(std::vector<double>{}, kThr), std::invalid_argument);
}

TEST_CASE("interval probabilities are normalized (property)")
{
    RandomStream rng(31, 0);
    int cases = 0;
    for (; cases < 1000; ++cases) {
        std::vector<double> draws(1 + static_cast<std::size_t>(rng.uniform() * 500));
        for (auto& d : draws) d = rng.uniform();
        const auto p = interval_probabilities(draws, kThr);
        REQUIRE(p.under >= 0.0);
        REQUIRE(p.target >= -1e-15);
        REQUIRE(p.over >= 0.0);
        REQUIRE(std::abs(p.under + p.target + p.over - 1.0) < 1e-15);
    }
    CHECK(cases >= 1000);
}

TEST_CASE("decision kinds and stopping")
{
    auto t = empty_trial("T1");
    CHECK_THROWS_AS(recommend_from_probabilities(from_over({0, 0, 0, 0, 0, 0}), t, kThr, true),
                    StateError);
    t.cohorts = {{0, 3, 0}};
    auto d = recommend_from_probabilities(from_over({0.01, 0.02, 0.05, 0.3, 0.6, 0.8}), t, kThr, true);
    CHECK(d.kind == DecisionKind::escalate_to);
    CHECK(*d.dose_index == 1);
    d = recommend_from_probabilities(from_over({0.01, 0.02, 0.05, 0.3, 0.6, 0.8}), t, kThr, false);
    CHECK(*d.dose_index == 2);
    d = recommend_from_probabilities(from_over({0.26, 0.3, 0.4, 0.5, 0.6, 0.8}), t, kThr, true);
    CHECK(d.kind == DecisionKind::stop_for_safety);
    CHECK_FALSE(d.dose_index.has_value());
    CHECK_FALSE(d.is_dosing());

    t.cohorts = {{0, 3, 0}, {1, 3, 0}, {2, 3, 2}};
    d = recommend_from_probabilities(from_over({0.01, 0.1, 0.3, 0.5, 0.6, 0.8}), t, kThr, true);
    CHECK(d.kind == DecisionKind::de_escalate_to);
    CHECK(*d.dose_index == 1);
    d = recommend_from_probabilities(from_over({0.01, 0.1, 0.2, 0.5, 0.6, 0.8}), t, kThr, true);
    CHECK(d.kind == DecisionKind::stay);

    // Exactly at the bound is admissible.
    d = recommend_from_probabilities(from_over({0.25, 0.3, 0.3, 0.5, 0.6, 0.8}), t, kThr, true);
    CHECK(d.kind == DecisionKind::de_escalate_to);
    CHECK(*d.dose_index == 0);

    t.max_sample_size = 9;
    d = recommend_from_probabilities(from_over({0.01, 0.1, 0.2, 0.5, 0.6, 0.8}), t, kThr, true);
    CHECK(d.kind == DecisionKind::complete);
}

TEST_CASE("decision kind names round-trip")
{
    for (auto k : {DecisionKind::start, DecisionKind::escalate_to, DecisionKind::stay,
                   DecisionKind::de_escalate_to, DecisionKind::stop_for_safety, DecisionKind::complete}) {
        CHECK(decision_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(decision_kind_from_string("leap"), ConfigError);
}

TEST_CASE("starting dose is the highest dose confidently underdosing")
{
    std::vector<IntervalProbabilities> p{probs(0.97, 0.01), probs(0.90, 0.02), probs(0.86, 0.05),
                                         probs(0.3, 0.4), probs(0.1, 0.6), probs(0.9, 0.05)};
    // Takes the highest qualifying index as written, even if non-monotone.
    auto d = starting_dose_from_probabilities(p, kThr);
    CHECK(d.kind == DecisionKind::start);
    CHECK(*d.dose_index == 5);
    p[5] = probs(0.1, 0.7);
    CHECK(*starting_dose_from_probabilities(p, kThr).dose_index == 2);
    for (auto& x : p) x = probs(0.5, 0.2);
    CHECK(*starting_dose_from_probabilities(p, kThr).dose_index == 0);
}

TEST_CASE("no-skipping: a recommendation never exceeds highest administered + 1 (property)")
{
    RandomStream rng(2718, 0);
    int cases = 0;
    for (; cases < 2000; ++cases) {
        const auto t = random_history(rng);
        const auto p = random_monotone_probs(rng);
        const auto d = recommend_from_probabilities(p, t, kThr, true);
        if (!d.dose_index) {
            REQUIRE((d.kind == DecisionKind::stop_for_safety || d.kind == DecisionKind::complete));
            continue;
        }
        REQUIRE(*d.dose_index <= *t.highest_administered() + 1);
        REQUIRE(p[static_cast<std::size_t>(*d.dose_index)].over <= kThr.feasibility_bound);
        // Maximality: nothing admissible between the pick and the cap.
        const int cap = std::min(5, *t.highest_administered() + 1);
        for (int j = *d.dose_index + 1; j <= cap; ++j) {
            REQUIRE(p[static_cast<std::size_t>(j)].over > kThr.feasibility_bound);
        }
    }
    CHECK(cases >= 1000);
}

TEST_CASE("MTD selection: closest median to target among administered, admissible doses")
{
    auto t = empty_trial("T1", 9);
    t.cohorts = {{0, 3, 0}, {1, 3, 0}, {2, 3, 1}};
    std::vector<double> med{0.02, 0.10, 0.22, 0.26, 0.4, 0.5};
    const auto p = from_over({0.0, 0.05, 0.2, 0.3, 0.5, 0.7});
    CHECK(*select_mtd(med, p, t, kThr) == 2);
    // Dose 3 is closer but was never given.
    med[2] = 0.12;
    CHECK(*select_mtd(med, p, t, kThr) == 2);
    // Ties go to the lower dose.
    med = {0.02, 0.20, 0.30, 0.26, 0.4, 0.5};
    CHECK(*select_mtd(med, p, t, kThr) == 1);
    // Nothing admissible.
    CHECK_FALSE(select_mtd(med, from_over({0.3, 0.3, 0.3, 0.3, 0.5, 0.7}), t, kThr).has_value());
    t.max_sample_size = 24;
    CHECK_THROWS_AS(select_mtd(med, p, t, kThr), StateError);
}

TEST_CASE("MTD is always an administered dose (property)")
{
    RandomStream rng(99, 0);
    int cases = 0;
    for (; cases < 2000; ++cases) {
        auto t = random_history(rng);
        t.max_sample_size = t.total_treated();
        std::vector<double> med(6);
        double m = 0.3 * rng.uniform();
        for (auto& x : med) {
            x = m;
            m += 0.15 * rng.uniform();
        }
        const auto p = random_monotone_probs(rng);
        const auto mtd = select_mtd(med, p, t, kThr);
        if (!mtd) continue;
        REQUIRE(t.administered(*mtd));
        REQUIRE(p[static_cast<std::size_t>(*mtd)].over <= kThr.feasibility_bound);
    }
    CHECK(cases >= 1000);
}

TEST_CASE("threshold validation")
{
    IntervalThresholds t;
    t.underdose_cut = 0.4;
    CHECK_THROWS_AS(t.validate(), ConfigError);
}
