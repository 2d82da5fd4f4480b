#include "exnex/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "exnex/error.hpp"

namespace exnex {

namespace {

ScenarioSpec make_scenario(std::string name, std::vector<double> t1, std::optional<int> c1,
                           std::vector<double> t2, std::optional<int> c2)
{
    ScenarioSpec s;
    s.name = std::move(name);
    s.true_tox = {std::move(t1), std::move(t2)};
    s.correct_dose = {c1, c2};
    return s;
}

SubgroupConfig with_weights(SubgroupConfig sg, MixtureWeights w)
{
    sg.weights = std::move(w);
    return sg;
}

ModelConfig with_subgroups(const ModelConfig& base, std::vector<SubgroupConfig> subgroups,
                           bool keep_species)
{
    ModelConfig c = base;
    c.subgroups = std::move(subgroups);
    if (!keep_species) c.species.clear();
    return c;
}

HumanTrialState empty_trial(const std::string& id, const DoseGrid& grid,
                            const SimulationSettings& s)
{
    HumanTrialState t;
    t.subgroup_id = id;
    t.grid = grid;
    t.max_sample_size = s.max_sample_size;
    t.cohort_size = s.cohort_size;
    return t;
}

class PairRunner {
public:
    PairRunner(const ScenarioSpec& scenario, const VariantPlan& plan,
               std::span<const AnimalStudy> animal, const SimulationSettings& settings,
               std::uint64_t master, int replicate)
        : scenario_(scenario),
          plan_(plan),
          animal_(plan.use_animal ? animal : std::span<const AnimalStudy>{}),
          set_(settings),
          master_(master),
          replicate_(replicate),
          grid_(scenario.dose_grid, plan.t1.reference_dose)
    {
    }

    ReplicateRecord run(ModelVariant variant)
    {
        ReplicateRecord rec;
        rec.scenario = scenario_.name;
        rec.variant = variant;
        rec.replicate = replicate_;
        rec.master_seed = master_;

        const std::string& id1 = plan_.t1.subgroups.at(0).id;
        HumanTrialState t1 = empty_trial(id1, grid_, set_);
        rec.t1 = run_trial(1, 0, t1, [&](const HumanTrialState& s, std::uint64_t seed) {
            return fit(plan_.t1, {s}, seed);
        });

        const std::string& id2 = plan_.t1_in_t2 ? plan_.t2.subgroups.at(1).id
                                                : plan_.t2.subgroups.at(0).id;
        HumanTrialState t2 = empty_trial(id2, grid_, set_);
        auto analyse_t2 = [&](const HumanTrialState& s, std::uint64_t seed) {
            if (plan_.t1_in_t2) return fit(plan_.t2, {t1, s}, seed);
            if (plan_.pool_t1) {
                HumanTrialState pooled = s;
                pooled.cohorts = t1.cohorts;
                pooled.cohorts.insert(pooled.cohorts.end(), s.cohorts.begin(), s.cohorts.end());
                pooled.max_sample_size = t1.max_sample_size + s.max_sample_size;
                return fit(plan_.t2, {pooled}, seed);
            }
            return fit(plan_.t2, {s}, seed);
        };
        int start = 0;
        if (plan_.t2_start_from_model) {
            const auto prior = analyse_t2(t2, derive_seed(master_, replicate_, 2, 0));
            start = *starting_dose(prior, id2, set_.thresholds).dose_index;
        }
        rec.t2 = run_trial(2, start, t2, analyse_t2);
        return rec;
    }

private:
    PosteriorResult fit(const ModelConfig& config, std::vector<HumanTrialState> trials,
                        std::uint64_t seed) const
    {
        SamplerSettings s = set_.sampler;
        s.seed = seed;
        return run_posterior(animal_, trials, config, s);
    }

    template <class Analyse>
    TrialRecord run_trial(int trial_no, int start, HumanTrialState& state, Analyse analyse)
    {
        const auto& truth = scenario_.true_tox.at(static_cast<std::size_t>(trial_no - 1));
        TrialRecord rec;
        rec.subgroup_id = state.subgroup_id;
        rec.start_dose = start;
        int dose = start;
        for (int h = 1;; ++h) {
            const std::uint64_t seed = derive_seed(master_, replicate_, trial_no, h);
            RandomStream outcome_rng(seed, kOutcomeStream);
            const int n = std::min(set_.cohort_size, state.max_sample_size - state.total_treated());
            const int r = simulate_outcomes(truth[static_cast<std::size_t>(dose)], n, outcome_rng);
            state.cohorts.push_back({dose, n, r});

            const auto post = analyse(state, seed);
            const auto probs = dose_interval_probabilities(post, state.subgroup_id, set_.thresholds);
            auto decision = recommend_from_probabilities(probs, state, set_.thresholds,
                                                         set_.no_skipping);
            const auto& sp = post.subgroup(state.subgroup_id);
            rec.epsilon_mean = sp.epsilon.empty()
                                   ? 1.0
                                   : std::accumulate(sp.epsilon.begin(), sp.epsilon.end(), 0.0) /
                                         static_cast<double>(sp.epsilon.size());
            rec.component_frequency = sp.component_frequency;

            const auto kind = decision.kind;
            rec.decisions.push_back(std::move(decision));
            if (kind == DecisionKind::complete) {
                rec.completed = true;
                rec.mtd = select_mtd(dose_medians(post, state.subgroup_id), probs, state,
                                     set_.thresholds);
                break;
            }
            if (kind == DecisionKind::stop_for_safety) {
                rec.stopped_early = true;
                break;
            }
            dose = *rec.decisions.back().dose_index;
        }
        rec.cohorts = state.cohorts;
        const auto tally = state.tally();
        rec.allocation = tally.n;
        rec.dlts = tally.r;
        return rec;
    }

    const ScenarioSpec& scenario_;
    const VariantPlan& plan_;
    std::span<const AnimalStudy> animal_;
    const SimulationSettings& set_;
    std::uint64_t master_;
    int replicate_;
    DoseGrid grid_;
};

}  // namespace

void ScenarioSpec::validate() const
{
    if (dose_grid.empty()) throw ConfigError("scenario " + name + ": empty dose grid");
    if (true_tox.empty()) throw ConfigError("scenario " + name + ": no trials");
    if (correct_dose.size() != true_tox.size()) {
        throw ConfigError("scenario " + name + ": one correct_dose entry per trial required");
    }
    for (std::size_t t = 0; t < true_tox.size(); ++t) {
        const auto& p = true_tox[t];
        if (p.size() != dose_grid.size()) {
            throw ConfigError("scenario " + name + ": trial " + std::to_string(t + 1) +
                              " does not cover the dose grid");
        }
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (!(p[j] >= 0.0 && p[j] <= 1.0)) {
                throw ConfigError("scenario " + name + ": probability outside [0, 1]");
            }
            if (j > 0 && p[j] < p[j - 1]) {
                throw ConfigError("scenario " + name + ": toxicity must not decrease with dose");
            }
        }
        const auto& c = correct_dose[t];
        if (c && (*c < 0 || static_cast<std::size_t>(*c) >= dose_grid.size())) {
            throw ConfigError("scenario " + name + ": correct dose out of range");
        }
    }
}

std::vector<ScenarioSpec> builtin_scenarios()
{
    return {
        make_scenario("scenario1", {0.01, 0.03, 0.10, 0.25, 0.34, 0.47}, 3,
                      {0.01, 0.03, 0.10, 0.25, 0.34, 0.47}, 3),
        make_scenario("scenario2", {0.01, 0.03, 0.10, 0.25, 0.34, 0.47}, 3,
                      {0.05, 0.12, 0.25, 0.37, 0.50, 0.60}, 2),
        make_scenario("scenario3", {0.01, 0.03, 0.10, 0.25, 0.34, 0.47}, 3,
                      {0.01, 0.03, 0.07, 0.15, 0.25, 0.37}, 4),
        make_scenario("scenario4", {0.01, 0.03, 0.05, 0.08, 0.15, 0.25}, 5,
                      {0.02, 0.05, 0.07, 0.12, 0.25, 0.36}, 4),
        make_scenario("scenario5", {0.25, 0.34, 0.47, 0.55, 0.65, 0.75}, 0,
                      {0.40, 0.50, 0.60, 0.70, 0.80, 0.90}, std::nullopt),
        make_scenario("scenario6", {0.01, 0.03, 0.05, 0.08, 0.15, 0.25}, 5,
                      {0.10, 0.25, 0.36, 0.50, 0.60, 0.68}, 1),
    };
}

std::string_view to_string(ModelVariant v) noexcept
{
    switch (v) {
    case ModelVariant::A: return "A";
    case ModelVariant::B: return "B";
    case ModelVariant::C: return "C";
    case ModelVariant::D: return "D";
    case ModelVariant::E: return "E";
    }
    return "?";
}

ModelVariant model_variant_from_string(std::string_view s)
{
    if (s.size() == 1) {
        switch (std::toupper(static_cast<unsigned char>(s[0]))) {
        case 'A': return ModelVariant::A;
        case 'B': return ModelVariant::B;
        case 'C': return ModelVariant::C;
        case 'D': return ModelVariant::D;
        case 'E': return ModelVariant::E;
        }
    }
    throw ConfigError("unknown model variant '" + std::string(s) + "' (expected A-E)");
}

SamplerSettings SimulationSettings::default_sampler()
{
    SamplerSettings s = SamplerSettings::reduced();
    s.parallel_chains = false;
    s.compute_diagnostics = false;
    s.max_stored_draws = 8000;
    return s;
}

void SimulationSettings::validate() const
{
    sampler.validate();
    thresholds.validate();
    if (cohort_size < 1 || max_sample_size < 1) {
        throw ConfigError("simulation: cohort_size and max_sample_size must be positive");
    }
    if (threads < 0) throw ConfigError("simulation: threads must be >= 0");
}

int simulate_outcomes(double true_p, int n, RandomStream& rng)
{
    int r = 0;
    for (int i = 0; i < n; ++i) {
        if (rng.uniform() < true_p) ++r;
    }
    return r;
}

VariantPlan make_variant_plan(const ModelConfig& base, ModelVariant variant,
                              const SimulationSettings& settings)
{
    if (base.subgroups.size() != 2) {
        throw ConfigError("simulation needs a base config with exactly two subgroups (T1, T2)");
    }
    const SubgroupConfig& s1 = base.subgroups[0];
    const SubgroupConfig& s2 = base.subgroups[1];
    VariantPlan p;
    switch (variant) {
    case ModelVariant::A: {
        p.t1 = with_subgroups(base, {s1}, true);
        SubgroupConfig joint = s1;
        if (settings.joint_t1_weights) joint.weights = *settings.joint_t1_weights;
        p.t2 = with_subgroups(base, {joint, s2}, true);
        p.t1_in_t2 = true;
        p.t2_start_from_model = true;
        break;
    }
    case ModelVariant::D:
        p.t1 = with_subgroups(base, {s1}, true);
        p.t2 = with_subgroups(base, {with_weights(s2, s1.weights)}, true);
        break;
    case ModelVariant::B: {
        const MixtureWeights w = settings.robust_b ? MixtureWeights({}, 0.8, 0.2)
                                                   : MixtureWeights({}, 1.0, 0.0);
        p.t1 = with_subgroups(base, {with_weights(s1, w)}, false);
        p.t2 = with_subgroups(base, {with_weights(s1, w), with_weights(s2, w)}, false);
        p.use_animal = false;
        p.t1_in_t2 = true;
        p.t2_start_from_model = true;
        break;
    }
    case ModelVariant::C:
    case ModelVariant::E: {
        const MixtureWeights w({}, 0.0, 1.0);
        p.t1 = with_subgroups(base, {with_weights(s1, w)}, false);
        p.t2 = with_subgroups(base, {with_weights(s2, w)}, false);
        p.use_animal = false;
        if (variant == ModelVariant::E) {
            p.pool_t1 = true;
            p.t2_start_from_model = true;
        }
        break;
    }
    }
    p.t1.clamp = {};
    p.t2.clamp = {};
    p.t1.validate();
    p.t2.validate();
    return p;
}

ReplicateRecord simulate_trial_pair(const ScenarioSpec& scenario, ModelVariant variant,
                                    const ModelConfig& base,
                                    std::span<const AnimalStudy> animal_data,
                                    const SimulationSettings& settings, std::uint64_t master_seed,
                                    int replicate)
{
    scenario.validate();
    settings.validate();
    if (scenario.true_tox.size() != 2) {
        throw ConfigError("scenario " + scenario.name + ": exactly two trials required");
    }
    if (scenario.dose_grid != base.dose_grid) {
        throw ConfigError("scenario " + scenario.name + ": dose grid differs from the config");
    }
    const VariantPlan plan = make_variant_plan(base, variant, settings);
    PairRunner runner(scenario, plan, animal_data, settings, master_seed, replicate);
    return runner.run(variant);
}

std::vector<ReplicateRecord> simulate_campaign(const ScenarioSpec& scenario, ModelVariant variant,
                                               const ModelConfig& base,
                                               std::span<const AnimalStudy> animal_data,
                                               const SimulationSettings& settings,
                                               std::uint64_t master_seed, int n_replicates,
                                               const ProgressCallback& progress)
{
    if (n_replicates < 1) throw ConfigError("simulation: replicates must be positive");
    scenario.validate();
    settings.validate();
    // Fail fast on configuration problems before any worker starts.
    (void)make_variant_plan(base, variant, settings);

    std::vector<ReplicateRecord> out(static_cast<std::size_t>(n_replicates));
    std::vector<std::exception_ptr> errors(out.size());
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    std::mutex progress_mutex;

    auto worker = [&] {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= n_replicates) return;
            try {
                out[static_cast<std::size_t>(r)] = simulate_trial_pair(
                    scenario, variant, base, animal_data, settings, master_seed, r);
            } catch (...) {
                errors[static_cast<std::size_t>(r)] = std::current_exception();
            }
            const int d = done.fetch_add(1) + 1;
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(d, n_replicates);
            }
        }
    };

    unsigned n_threads = settings.threads > 0 ? static_cast<unsigned>(settings.threads)
                                              : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(n_replicates));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }

    for (std::size_t r = 0; r < errors.size(); ++r) {
        if (!errors[r]) continue;
        try {
            std::rethrow_exception(errors[r]);
        } catch (const std::exception& e) {
            throw std::runtime_error("replicate " + std::to_string(r) + ": " + e.what());
        }
    }
    return out;
}

OCReport operating_characteristics(std::span<const ReplicateRecord> records,
                                   const ScenarioSpec& scenario)
{
    if (records.empty()) throw std::invalid_argument("operating_characteristics: no replicates");
    const std::size_t J = scenario.dose_grid.size();
    const double n = static_cast<double>(records.size());
    OCReport rep;
    rep.scenario = scenario.name;
    rep.variant = std::string(to_string(records.front().variant));
    rep.n_replicates = static_cast<int>(records.size());

    for (int t = 0; t < 2; ++t) {
        TrialOC oc;
        oc.n_replicates = rep.n_replicates;
        oc.pct_mtd.assign(J, 0.0);
        oc.mean_allocation.assign(J, 0.0);
        if (static_cast<std::size_t>(t) < scenario.correct_dose.size()) {
            oc.correct_dose = scenario.correct_dose[static_cast<std::size_t>(t)];
        }
        double eps_sum = 0.0;
        int n_completed = 0;
        // Integer counts keep the result independent of replicate order.
        long stopped = 0, no_mtd = 0, patients = 0, dlt = 0;
        std::vector<long> mtd_count(J, 0), alloc(J, 0);
        for (const auto& r : records) {
            const TrialRecord& tr = t == 0 ? r.t1 : r.t2;
            if (oc.subgroup_id.empty()) oc.subgroup_id = tr.subgroup_id;
            if (tr.stopped_early) {
                ++stopped;
            } else if (tr.mtd) {
                ++mtd_count.at(static_cast<std::size_t>(*tr.mtd));
            } else {
                ++no_mtd;
            }
            for (std::size_t j = 0; j < J && j < tr.allocation.size(); ++j) {
                alloc[j] += tr.allocation[j];
                patients += tr.allocation[j];
                dlt += tr.dlts[j];
            }
            if (tr.completed) {
                ++n_completed;
                eps_sum += tr.epsilon_mean;
            }
        }
        oc.pct_stopped = 100.0 * static_cast<double>(stopped) / n;
        oc.pct_no_mtd = 100.0 * static_cast<double>(no_mtd) / n;
        for (std::size_t j = 0; j < J; ++j) {
            oc.pct_mtd[j] = 100.0 * static_cast<double>(mtd_count[j]) / n;
            oc.mean_allocation[j] = static_cast<double>(alloc[j]) / n;
        }
        oc.mean_patients = static_cast<double>(patients) / n;
        oc.mean_dlt = static_cast<double>(dlt) / n;
        if (oc.correct_dose) oc.pcs = oc.pct_mtd[static_cast<std::size_t>(*oc.correct_dose)];
        if (n_completed > 0) oc.mean_epsilon_completed = eps_sum / n_completed;
        rep.trials.push_back(std::move(oc));
    }
    return rep;
}

}  // namespace exnex
