#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exnex/decision.hpp"
#include "exnex/model.hpp"
#include "exnex/rng.hpp"
#include "exnex/sampler.hpp"

namespace exnex {

// True DLT probabilities of the two sequential trials on a shared grid.
struct ScenarioSpec {
    std::string name;
    std::vector<double> dose_grid{0.1, 0.5, 1.0, 5.0, 10.0, 20.0};
    std::vector<std::vector<double>> true_tox;     // [trial][dose], trial 0 = T1
    std::vector<std::optional<int>> correct_dose;  // per trial; none if no dose is tolerable

    // Throws ConfigError: probabilities in [0, 1], monotone, sizes consistent.
    void validate() const;

    friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// The six two-region scenarios; index 0 is scenario 1.
std::vector<ScenarioSpec> builtin_scenarios();

// A: animal data, borrowing across subgroups.
// B: no animal data, subgroups fully exchangeable (robust flag adds w_R = 0.2).
// C: no animal data, separate analyses.
// D: animal data, separate analyses.
// E: T1 alone; T2 pools the T1 data into its own likelihood.
enum class ModelVariant { A, B, C, D, E };

std::string_view to_string(ModelVariant v) noexcept;
// Accepts "A".."E" (case-insensitive); throws ConfigError.
ModelVariant model_variant_from_string(std::string_view s);

struct SimulationSettings {
    SamplerSettings sampler = default_sampler();
    IntervalThresholds thresholds;
    bool no_skipping = true;
    int cohort_size = 3;
    int max_sample_size = 24;
    bool robust_b = false;
    // Weights of T1 inside the joint T2-phase analysis of Model A. Unset
    // means T1 keeps its own configured weights.
    std::optional<MixtureWeights> joint_t1_weights;
    int threads = 0;  // 0: hardware concurrency

    void validate() const;

    static SamplerSettings default_sampler();
};

// Binomial(n, p) as a sum of n Bernoulli(u < p) trials.
int simulate_outcomes(double true_p, int n, RandomStream& rng);

struct TrialRecord {
    std::string subgroup_id;
    int start_dose = 0;
    std::vector<Cohort> cohorts;
    std::vector<DoseDecision> decisions;  // one per cohort, after its outcome
    bool stopped_early = false;
    bool completed = false;
    std::optional<int> mtd;
    std::vector<int> allocation;  // patients per dose
    std::vector<int> dlts;        // DLTs per dose
    double epsilon_mean = 1.0;    // final posterior mean
    std::vector<double> component_frequency;

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct ReplicateRecord {
    std::string scenario;
    ModelVariant variant = ModelVariant::A;
    int replicate = 0;
    std::uint64_t master_seed = 0;
    TrialRecord t1;
    TrialRecord t2;

    friend bool operator==(const ReplicateRecord&, const ReplicateRecord&) = default;
};

// The analysis configurations a variant induces from the base two-subgroup
// config. base.subgroups[0] is T1, base.subgroups[1] is T2.
struct VariantPlan {
    ModelConfig t1;           // T1 interim analyses (single subgroup)
    ModelConfig t2;           // T2 analyses
    bool t1_in_t2 = false;    // T1 trial is a second subgroup of the T2 analysis
    bool pool_t1 = false;     // T1 cohorts are prepended to the T2 likelihood
    bool use_animal = true;
    bool t2_start_from_model = false;
};

VariantPlan make_variant_plan(const ModelConfig& base, ModelVariant variant,
                              const SimulationSettings& settings);

// Seeds: interim fit h of trial t in replicate r uses
// derive_seed(master, r, t, h) (h = 0 is the pre-trial fit); outcomes of
// cohort h come from the stream (derive_seed(master, r, t, h), kOutcomeStream).
// Neither depends on the variant.
ReplicateRecord simulate_trial_pair(const ScenarioSpec& scenario, ModelVariant variant,
                                    const ModelConfig& base,
                                    std::span<const AnimalStudy> animal_data,
                                    const SimulationSettings& settings, std::uint64_t master_seed,
                                    int replicate);

inline constexpr std::uint64_t kOutcomeStream = 0x100000000ULL;

using ProgressCallback = std::function<void(int done, int total)>;

// Replicates 0..n-1 on a thread pool; records are returned in replicate order.
std::vector<ReplicateRecord> simulate_campaign(const ScenarioSpec& scenario, ModelVariant variant,
                                               const ModelConfig& base,
                                               std::span<const AnimalStudy> animal_data,
                                               const SimulationSettings& settings,
                                               std::uint64_t master_seed, int n_replicates,
                                               const ProgressCallback& progress = {});

struct TrialOC {
    std::string subgroup_id;
    int n_replicates = 0;
    double pct_stopped = 0.0;
    double pct_no_mtd = 0.0;       // completed without a declared MTD
    std::vector<double> pct_mtd;   // per dose
    std::vector<double> mean_allocation;
    double mean_patients = 0.0;
    double mean_dlt = 0.0;
    std::optional<int> correct_dose;
    std::optional<double> pcs;     // pct_mtd at correct_dose
    std::optional<double> mean_epsilon_completed;  // over completed trials

    friend bool operator==(const TrialOC&, const TrialOC&) = default;
};

struct OCReport {
    std::string scenario;
    std::string variant;
    int n_replicates = 0;
    std::vector<TrialOC> trials;  // T1, T2

    friend bool operator==(const OCReport&, const OCReport&) = default;
};

// Percentages in [0, 100]. Throws std::invalid_argument on an empty set.
OCReport operating_characteristics(std::span<const ReplicateRecord> records,
                                   const ScenarioSpec& scenario);

}  // namespace exnex
