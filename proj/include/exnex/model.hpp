#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace exnex {

// Dose-toxicity parameter pair: logit(p) = intercept + exp(log_slope) * log(x).
struct Vec2 {
    double intercept = 0.0;
    double log_slope = 0.0;

    friend bool operator==(const Vec2&, const Vec2&) = default;
};

// Bivariate normal covariance stored as (sd_1, sd_2, correlation).
struct CovTriple {
    double sd1 = 1.0;
    double sd2 = 1.0;
    double corr = 0.0;

    friend bool operator==(const CovTriple&, const CovTriple&) = default;
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;

    bool contains(double x) const noexcept { return x > lower && x < upper; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

class DoseGrid {
public:
    DoseGrid() = default;
    // Doses must be positive and non-decreasing; reference_dose > 0.
    DoseGrid(std::vector<double> doses, double reference_dose);

    const std::vector<double>& doses() const noexcept { return doses_; }
    double reference_dose() const noexcept { return reference_dose_; }
    std::size_t size() const noexcept { return doses_.size(); }
    double operator[](std::size_t j) const { return doses_.at(j); }

    friend bool operator==(const DoseGrid&, const DoseGrid&) = default;

private:
    std::vector<double> doses_;
    double reference_dose_ = 1.0;
};

struct AnimalStudy {
    std::string study_id;
    std::string species;
    DoseGrid grid;
    std::vector<int> n;
    std::vector<int> r;

    // Throws DataError on length mismatch, negative counts or r > n.
    void validate() const;

    friend bool operator==(const AnimalStudy&, const AnimalStudy&) = default;
};

struct Cohort {
    int dose_index = 0;
    int n_treated = 0;
    int n_dlt = 0;

    friend bool operator==(const Cohort&, const Cohort&) = default;
};

struct DoseTally {
    std::vector<int> n;
    std::vector<int> r;
};

struct HumanTrialState {
    std::string subgroup_id;
    DoseGrid grid;
    std::vector<Cohort> cohorts;
    int max_sample_size = 24;
    int cohort_size = 3;

    void validate() const;

    // Per-dose (n, r) folded over cohorts.
    DoseTally tally() const;
    int total_treated() const noexcept;
    int total_dlt() const noexcept;
    bool is_complete() const noexcept { return total_treated() >= max_sample_size; }
    // Highest dose index given to any patient, or nullopt before the first cohort.
    std::optional<int> highest_administered() const noexcept;
    std::optional<int> current_dose() const noexcept;
    bool administered(int dose_index) const noexcept;

    friend bool operator==(const HumanTrialState&, const HumanTrialState&) = default;
};

struct NormalPrior {
    double mean = 0.0;
    double sd = 1.0;

    friend bool operator==(const NormalPrior&, const NormalPrior&) = default;
};

// Log-normal translation prior for one animal species:
// log(delta) ~ N(log_mean, log_sd^2).
struct SpeciesPrior {
    std::string name;
    double log_mean = 0.0;
    double log_sd = 1.0;

    friend bool operator==(const SpeciesPrior&, const SpeciesPrior&) = default;
};

// epsilon ~ N(1, sd^2) truncated to (0, upper). The default upper = 2 keeps
// the truncation symmetric about 1.
struct EpsilonPrior {
    double sd = 0.255;
    double upper = 2.0;

    // Bounds of the standardized variate (epsilon - 1) / sd.
    Interval standardized_bounds() const noexcept
    {
        return {-1.0 / sd, (upper - 1.0) / sd};
    }

    friend bool operator==(const EpsilonPrior&, const EpsilonPrior&) = default;
};

struct TranslationPriors {
    std::vector<SpeciesPrior> species;
    std::vector<EpsilonPrior> epsilon;  // one per subgroup
};

struct HyperpriorConfig {
    NormalPrior location1{-1.099, 1.98};  // m_1 and mu_H,1
    NormalPrior location2{0.0, 0.99};     // m_2 and mu_H,2
    std::array<double, 4> tau_scale{0.5, 0.25, 0.25, 0.125};
    std::array<double, 2> sigma_scale{1.0, 0.5};
    Interval rho{-1.0, 1.0};
    Interval kappa{-1.0, 1.0};
    Interval eta{-1.0, 1.0};
    Interval intercept_bounds{-10.0, 10.0};
    Interval log_slope_bounds{-5.0, 5.0};
    double sd_floor = 0.001;

    void validate() const;

    friend bool operator==(const HyperpriorConfig&, const HyperpriorConfig&) = default;
};

// Prior probabilities (w_S1..w_SK, w_H, w_R) for one subgroup.
// Component indices: 0..K-1 species, K human-only, K+1 non-exchangeable.
class MixtureWeights {
public:
    MixtureWeights() = default;
    // Throws ConfigError for negative entries or a sum that is not 1.
    MixtureWeights(std::vector<double> species, double human, double robust);

    std::size_t n_species() const noexcept { return species_.size(); }
    std::size_t size() const noexcept { return species_.size() + 2; }
    std::size_t human_index() const noexcept { return species_.size(); }
    std::size_t robust_index() const noexcept { return species_.size() + 1; }
    double operator[](std::size_t c) const;
    double human() const noexcept { return human_; }
    double robust() const noexcept { return robust_; }
    const std::vector<double>& species() const noexcept { return species_; }
    std::vector<double> as_vector() const;

    friend bool operator==(const MixtureWeights&, const MixtureWeights&) = default;

private:
    std::vector<double> species_;
    double human_ = 0.0;
    double robust_ = 1.0;
};

struct SubgroupConfig {
    std::string id;
    MixtureWeights weights;
    Vec2 nex_mean{-1.099, 0.0};
    CovTriple nex_cov{2.0, 1.0, 0.0};
    EpsilonPrior epsilon;

    friend bool operator==(const SubgroupConfig&, const SubgroupConfig&) = default;
};

struct ParameterState;

// Blocks held at their initial values instead of being sampled. Used to
// build reduced models (e.g. fixed hyperparameters) for oracle checks.
struct ClampSpec {
    bool hyperparameters = false;  // m, mu_S, mu_H, tau, sigma, correlations
    bool translation = false;      // delta_S
    bool bridging = false;         // epsilon_l
    bool indicators = false;
    std::vector<double> delta;                  // natural scale, per species
    std::vector<double> epsilon;                // natural scale, per subgroup
    std::vector<Vec2> mu_species;
    Vec2 m{};
    Vec2 mu_human{};
    std::array<double, 4> tau{0.5, 0.25, 0.25, 0.125};
    std::array<double, 2> sigma{1.0, 0.5};
    double rho = 0.0;
    double kappa = 0.0;
    double eta = 0.0;
    std::vector<int> indicator;

    bool any() const noexcept { return hyperparameters || translation || bridging || indicators; }
};

struct ModelConfig {
    double reference_dose = 5.0;
    std::vector<double> dose_grid{0.1, 0.5, 1.0, 5.0, 10.0, 20.0};
    std::vector<SpeciesPrior> species;
    HyperpriorConfig hyper;
    std::vector<SubgroupConfig> subgroups;
    ClampSpec clamp;

    std::size_t n_species() const noexcept { return species.size(); }
    std::size_t n_components() const noexcept { return species.size() + 2; }
    std::optional<std::size_t> species_index(std::string_view name) const noexcept;
    std::optional<std::size_t> subgroup_index(std::string_view id) const noexcept;
    DoseGrid grid() const { return DoseGrid(dose_grid, reference_dose); }
    TranslationPriors translation_priors() const;
    std::vector<std::string> component_labels() const;

    // Throws ConfigError naming the offending field or subgroup.
    void validate() const;
};

// Every sampled quantity of the hierarchy. delta and epsilon are held on
// their standardized scales (as the sampler moves them); the accessors
// return natural-scale values.
struct ParameterState {
    std::vector<Vec2> theta;        // per animal study
    std::vector<Vec2> mu_species;   // per species
    Vec2 m{};                       // supra-species mean
    Vec2 mu_human{};
    std::vector<Vec2> gamma;        // per subgroup
    std::vector<int> indicator;     // per subgroup, 0..K+1
    std::vector<double> log_delta_std;  // (log delta - mean) / sd
    std::vector<double> epsilon_std;    // (epsilon - 1) / sd
    std::array<double, 4> tau{0.5, 0.25, 0.25, 0.125};
    std::array<double, 2> sigma{1.0, 0.5};
    double rho = 0.0;
    double kappa = 0.0;
    double eta = 0.0;

    CovTriple psi() const noexcept { return {tau[0], tau[1], rho}; }
    CovTriple sigma_cov() const noexcept { return {sigma[0], sigma[1], kappa}; }
    CovTriple phi() const noexcept { return {tau[2], tau[3], eta}; }

    double delta(std::size_t k, const ModelConfig& config) const;
    double epsilon(std::size_t l, const ModelConfig& config) const;

    // Prior-mean starting point sized to the config and number of studies.
    static ParameterState initial(const ModelConfig& config, std::size_t n_studies);

    friend bool operator==(const ParameterState&, const ParameterState&) = default;
};

}  // namespace exnex
