#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "exnex/model.hpp"

namespace exnex {

// inverse-logit(intercept + exp(log_slope) * log(scale_factor * dose / reference_dose)).
// Throws std::domain_error for non-positive dose, scale or reference.
double tox_prob(double intercept, double log_slope, double scale_factor, double dose,
                double reference_dose);

double inv_logit(double x) noexcept;

double log_normal_pdf(double x, double mean, double sd) noexcept;
// N(0, scale^2) folded onto (0, inf); -inf for x <= 0.
double log_half_normal_pdf(double x, double scale) noexcept;
// -inf when |corr| >= 1 or an sd is non-positive.
double log_bvn_pdf(const Vec2& x, const Vec2& mean, const CovTriple& cov) noexcept;

// Binomial observations of one study at the doses where n > 0, with doses
// stored as log(dose / reference_dose).
struct BinomialSeries {
    std::vector<double> log_rel_dose;
    std::vector<int> n;
    std::vector<int> r;
    double log_coefficient = 0.0;  // sum of log C(n, r)

    static BinomialSeries from_counts(std::span<const double> doses, double reference_dose,
                                      std::span<const int> n, std::span<const int> r);

    // log-likelihood with logit(p_j) = a + exp(b) * (log_scale + log_rel_dose_j).
    double log_likelihood(const Vec2& params, double log_scale) const noexcept;
    bool empty() const noexcept { return n.empty(); }
};

// Data resolved against a ModelConfig: species and subgroup indices are
// looked up once and the binomial series precomputed.
struct PreparedData {
    std::vector<BinomialSeries> animal;
    std::vector<std::size_t> study_species;
    std::vector<std::vector<std::size_t>> species_studies;
    std::vector<BinomialSeries> human;  // in config subgroup order

    // Validates data (DataError) and data/config consistency (ConfigError).
    static PreparedData build(std::span<const AnimalStudy> animal_data,
                              std::span<const HumanTrialState> human_data,
                              const ModelConfig& config);
};

// Per-block contributions to the joint log density.
struct DensityTerms {
    double animal_likelihood = 0.0;
    double human_likelihood = 0.0;
    double theta_prior = 0.0;       // theta_i | mu_S, Psi
    double species_prior = 0.0;     // mu_S | m, Sigma
    double gamma_prior = 0.0;       // gamma_l | selected component
    double indicator_prior = 0.0;   // log w_{l, c_l}
    double location_prior = 0.0;    // m, mu_H (truncated normals)
    double scale_prior = 0.0;       // tau, sigma (half-normal, floored), correlations
    double translation_prior = 0.0; // standardized delta and epsilon variates

    double likelihood() const noexcept { return animal_likelihood + human_likelihood; }
    double prior() const noexcept
    {
        return theta_prior + species_prior + gamma_prior + indicator_prior + location_prior +
               scale_prior + translation_prior;
    }
    double total() const noexcept { return likelihood() + prior(); }
};

// Mean and covariance of mixture component c for subgroup l in the given state.
struct Component {
    Vec2 mean;
    CovTriple cov;
};
Component mixture_component(const ParameterState& state, const ModelConfig& config,
                            std::size_t subgroup, std::size_t c);

DensityTerms log_joint_terms(const ParameterState& state, const PreparedData& data,
                             const ModelConfig& config);

DensityTerms log_joint_terms(const ParameterState& state,
                             std::span<const AnimalStudy> animal_data,
                             std::span<const HumanTrialState> human_data,
                             const ModelConfig& config);

// Truncation violations give -inf; inconsistent dimensions throw ConfigError.
double log_joint_density(const ParameterState& state, std::span<const AnimalStudy> animal_data,
                         std::span<const HumanTrialState> human_data, const ModelConfig& config);

}  // namespace exnex
