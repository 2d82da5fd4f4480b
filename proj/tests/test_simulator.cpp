#include <doctest.h>

#include <algorithm>

#include "exnex/error.hpp"
#include "exnex/simulator.hpp"
#include "support.hpp"

using namespace exnex;

namespace {

SimulationSettings tiny_settings()
{
    SimulationSettings s = exnex::test::quick_config().simulation;
    s.sampler.n_iterations = 400;
    s.sampler.n_burnin = 150;
    s.max_sample_size = 9;
    s.threads = 1;
    return s;
}

TrialRecord synthetic(std::string id, bool stopped, std::optional<int> mtd, std::vector<int> alloc,
                      double eps)
{
    TrialRecord t;
    t.subgroup_id = std::move(id);
    t.stopped_early = stopped;
    t.completed = !stopped;
    t.mtd = mtd;
    t.allocation = alloc;
    t.dlts.assign(alloc.size(), 0);
    if (!alloc.empty()) t.dlts[0] = 1;
    t.epsilon_mean = eps;
    return t;
}

}  // namespace

TEST_CASE("simulated outcome counts have binomial mean")
{
    RandomStream rng(4, 0);
    long total = 0;
    const int reps = 20000;
    for (int i = 0; i < reps; ++i) total += simulate_outcomes(0.25, 3, rng);
    // mean 0.75, sd of the average about 0.0053
    CHECK(static_cast<double>(total) / reps == doctest::Approx(0.75).epsilon(0.03));
    CHECK(simulate_outcomes(0.0, 6, rng) == 0);
    CHECK(simulate_outcomes(1.0, 6, rng) == 6);
}

TEST_CASE("builtin scenarios are valid and bold doses sit near the target")
{
    const auto sc = builtin_scenarios();
    REQUIRE(sc.size() == 6);
    for (const auto& s : sc) {
        CHECK_NOTHROW(s.validate());
        for (std::size_t t = 0; t < 2; ++t) {
            if (!s.correct_dose[t]) continue;
            const double p = s.true_tox[t][static_cast<std::size_t>(*s.correct_dose[t])];
            CHECK(p >= 0.16);
            CHECK(p < 0.33);
        }
    }
    CHECK(sc[0].true_tox[0] == sc[0].true_tox[1]);
    CHECK_FALSE(sc[4].correct_dose[1].has_value());
    auto bad = sc[0];
    bad.true_tox[0][2] = 0.01;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = sc[0];
    bad.true_tox[1].pop_back();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("variant names")
{
    for (auto v : {ModelVariant::A, ModelVariant::B, ModelVariant::C, ModelVariant::D, ModelVariant::E}) {
        CHECK(model_variant_from_string(to_string(v)) == v);
    }
    CHECK(model_variant_from_string("d") == ModelVariant::D);
    CHECK_THROWS_AS(model_variant_from_string("F"), ConfigError);
}

TEST_CASE("variant plans")
{
    const auto cfg = exnex::test::quick_config();
    const auto& base = cfg.model;
    auto a = make_variant_plan(base, ModelVariant::A, cfg.simulation);
    CHECK(a.t1_in_t2);
    CHECK(a.use_animal);
    CHECK(a.t2.subgroups.size() == 2);
    CHECK(a.t1.subgroups.size() == 1);
    if (cfg.simulation.joint_t1_weights) {
        CHECK(a.t2.subgroups[0].weights == *cfg.simulation.joint_t1_weights);
    }

    auto d = make_variant_plan(base, ModelVariant::D, cfg.simulation);
    CHECK_FALSE(d.t1_in_t2);
    CHECK(d.use_animal);
    CHECK(d.t2.subgroups.size() == 1);
    CHECK(d.t2.subgroups[0].weights == base.subgroups[0].weights);

    auto b = make_variant_plan(base, ModelVariant::B, cfg.simulation);
    CHECK_FALSE(b.use_animal);
    CHECK(b.t2.subgroups[1].weights.human() == 1.0);
    auto robust = cfg.simulation;
    robust.robust_b = true;
    CHECK(make_variant_plan(base, ModelVariant::B, robust).t2.subgroups[1].weights.robust() ==
          doctest::Approx(0.2));

    auto c = make_variant_plan(base, ModelVariant::C, cfg.simulation);
    CHECK(c.t2.subgroups[0].weights.robust() == 1.0);
    CHECK_FALSE(c.pool_t1);
    auto e = make_variant_plan(base, ModelVariant::E, cfg.simulation);
    CHECK(e.pool_t1);

    auto one = base;
    one.subgroups.pop_back();
    CHECK_THROWS_AS(make_variant_plan(one, ModelVariant::A, cfg.simulation), ConfigError);
}

TEST_CASE("trial pairs are deterministic and T1 does not depend on the T2 model")
{
    const auto cfg = exnex::test::quick_config();
    const auto animal = exnex::test::shipped_animal_data();
    const auto set = tiny_settings();
    const auto sc = builtin_scenarios()[0];
    const auto a1 = simulate_trial_pair(sc, ModelVariant::A, cfg.model, animal, set, 42, 3);
    const auto a2 = simulate_trial_pair(sc, ModelVariant::A, cfg.model, animal, set, 42, 3);
    CHECK(a1 == a2);
    const auto d = simulate_trial_pair(sc, ModelVariant::D, cfg.model, animal, set, 42, 3);
    CHECK(a1.t1 == d.t1);
    CHECK(a1.t1.start_dose == 0);

    for (const auto* rec : {&a1, &d}) {
        for (const auto* t : {&rec->t1, &rec->t2}) {
            CHECK(t->decisions.size() == t->cohorts.size());
            int total = 0;
            for (int n : t->allocation) total += n;
            CHECK(total <= set.max_sample_size);
            CHECK(t->completed != t->stopped_early);
            if (t->mtd) CHECK(t->allocation[static_cast<std::size_t>(*t->mtd)] > 0);
        }
    }
}

TEST_CASE("no simulated trial skips an untried dose")
{
    const auto cfg = exnex::test::quick_config();
    const auto animal = exnex::test::shipped_animal_data();
    const auto set = tiny_settings();
    const auto sc = builtin_scenarios()[3];
    const auto recs = simulate_campaign(sc, ModelVariant::A, cfg.model, animal, set, 7, 4);
    REQUIRE(recs.size() == 4);
    for (std::size_t r = 0; r < recs.size(); ++r) {
        CHECK(recs[r].replicate == static_cast<int>(r));
        for (const auto* t : {&recs[r].t1, &recs[r].t2}) {
            int highest = -1;
            for (const auto& c : t->cohorts) {
                if (highest >= 0) CHECK(c.dose_index <= highest + 1);
                highest = std::max(highest, c.dose_index);
            }
        }
    }
}

TEST_CASE("campaign results do not depend on the thread count")
{
    const auto cfg = exnex::test::quick_config();
    auto set = tiny_settings();
    const auto sc = builtin_scenarios()[0];
    const auto serial = simulate_campaign(sc, ModelVariant::C, cfg.model, {}, set, 5, 3);
    set.threads = 3;
    int calls = 0;
    const auto threaded = simulate_campaign(sc, ModelVariant::C, cfg.model, {}, set, 5, 3,
                                            [&](int, int) { ++calls; });
    CHECK(serial == threaded);
    CHECK(calls == 3);
}

TEST_CASE("operating characteristics count outcomes")
{
    ScenarioSpec sc = builtin_scenarios()[0];
    std::vector<ReplicateRecord> recs(4);
    recs[0].t1 = synthetic("T1", false, 3, {3, 3, 6, 12, 0, 0}, 1.0);
    recs[1].t1 = synthetic("T1", false, 2, {3, 3, 12, 6, 0, 0}, 0.8);
    recs[2].t1 = synthetic("T1", true, std::nullopt, {3, 0, 0, 0, 0, 0}, 1.5);
    recs[3].t1 = synthetic("T1", false, std::nullopt, {3, 3, 3, 15, 0, 0}, 1.2);
    for (auto& r : recs) r.t2 = synthetic("T2", false, 3, {0, 0, 0, 24, 0, 0}, 1.0);
    const auto oc = operating_characteristics(recs, sc);
    REQUIRE(oc.trials.size() == 2);
    const auto& t1 = oc.trials[0];
    CHECK(t1.subgroup_id == "T1");
    CHECK(t1.pct_stopped == 25.0);
    CHECK(t1.pct_no_mtd == 25.0);
    CHECK(t1.pct_mtd[3] == 25.0);
    CHECK(t1.pct_mtd[2] == 25.0);
    CHECK(*t1.pcs == 25.0);
    CHECK(t1.mean_allocation[3] == doctest::Approx(33.0 / 4));
    CHECK(t1.mean_patients == doctest::Approx(75.0 / 4));
    CHECK(t1.mean_dlt == doctest::Approx(1.0));
    CHECK(*t1.mean_epsilon_completed == doctest::Approx(1.0));
    CHECK(*oc.trials[1].pcs == 100.0);

    std::reverse(recs.begin(), recs.end());
    CHECK(operating_characteristics(recs, sc) == oc);
    CHECK_THROWS_AS(operating_characteristics(std::span<const ReplicateRecord>{}, sc),
                    std::invalid_argument);
}
