#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exnex/density.hpp"
#include "exnex/diagnostics.hpp"
#include "exnex/model.hpp"

namespace exnex {

struct SamplerSettings {
    int n_chains = 2;
    int n_iterations = 15000;
    int n_burnin = 5000;
    int thinning = 1;
    std::uint64_t seed = 20190101;
    // Burn-in iteration from which bivariate blocks use the empirical
    // covariance of their own trace as proposal shape.
    int adaptation_start = 200;
    double target_acceptance_block = 0.30;
    double target_acceptance_scalar = 0.44;
    // Cap on stored draws per quantity (over all chains); running means and
    // sds always use every retained iteration.
    std::size_t max_stored_draws = 200000;
    bool parallel_chains = true;
    bool compute_diagnostics = true;

    void validate() const;
    int retained_per_chain() const noexcept
    {
        return (n_iterations - n_burnin + thinning - 1) / thinning;
    }

    // Two chains of 15 000 iterations with 5 000 burn-in.
    static SamplerSettings full();
    // Two chains of 6 000 iterations with 2 000 burn-in, for simulation campaigns.
    static SamplerSettings reduced();
};

struct SubgroupPosterior {
    std::string subgroup_id;
    std::vector<std::vector<double>> tox;  // [dose][draw], chains concatenated
    std::vector<double> tox_mean;          // running, every retained iteration
    std::vector<double> tox_sd;
    std::vector<double> gamma_intercept;
    std::vector<double> gamma_log_slope;
    std::vector<double> epsilon;
    std::vector<double> component_frequency;  // sums to 1
};

struct StudyPosterior {
    std::string study_id;
    std::string species;
    // Study curve on the human dose grid (no translation applied).
    std::vector<std::vector<double>> tox;
};

struct BlockAcceptance {
    std::string block;
    double rate = 0.0;  // post burn-in, averaged over chains
};

struct PosteriorResult {
    std::vector<double> dose_grid;
    double reference_dose = 0.0;
    std::vector<std::string> component_labels;
    std::vector<SubgroupPosterior> subgroups;
    std::vector<StudyPosterior> studies;
    std::vector<ParameterDiagnostics> diagnostics;
    std::vector<BlockAcceptance> acceptance;
    int n_chains = 0;
    int retained_per_chain = 0;
    int stored_per_chain = 0;
    long indicator_fallbacks = 0;

    // Throws ConfigError for an unknown id.
    const SubgroupPosterior& subgroup(std::string_view id) const;
};

// Draws from the joint posterior. Deterministic in (settings.seed, settings,
// data, config); chain c uses the Philox stream (seed, c).
PosteriorResult run_posterior(std::span<const AnimalStudy> animal_data,
                              std::span<const HumanTrialState> human_data,
                              const ModelConfig& config, const SamplerSettings& settings);

struct IndicatorDraw {
    std::size_t index = 0;
    bool fell_back = false;  // all component densities underflowed
};

// Full-conditional probabilities w_c * BVN(gamma; mu_c, Sigma_c) / sum, computed
// in log space. Falls back to the prior weights when every weighted density
// is zero or not finite.
std::vector<double> mixture_probabilities(const Vec2& gamma, std::span<const Component> components,
                                          const MixtureWeights& weights, bool* fell_back = nullptr);

// Inverse-CDF categorical draw from mixture_probabilities given u in [0, 1).
IndicatorDraw sample_mixture_indicator_detailed(const Vec2& gamma,
                                                std::span<const Component> components,
                                                const MixtureWeights& weights,
                                                double uniform_draw);

std::size_t sample_mixture_indicator(const Vec2& gamma, std::span<const Component> components,
                                     const MixtureWeights& weights, double uniform_draw);

struct DrawSummary {
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
};

// Quantiles by linear interpolation between order statistics.
double quantile_sorted(std::span<const double> sorted, double q);
DrawSummary summarize_draws(std::span<const double> draws);

struct PredictiveRow {
    double dose = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
};

struct SubgroupPredictive {
    std::string subgroup_id;
    std::vector<PredictiveRow> rows;
};

struct PriorPredictive {
    std::vector<SubgroupPredictive> subgroups;
    PosteriorResult posterior;
};

// Predictive priors for every configured subgroup from animal data alone:
// run_posterior with empty human trials. Single-species projections come
// from the subgroup weights (e.g. w = (0, 1, 0, 0) for one species only).
PriorPredictive prior_predictive(std::span<const AnimalStudy> animal_data,
                                 const ModelConfig& config, const SamplerSettings& settings);

}  // namespace exnex
