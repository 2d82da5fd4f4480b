#include "exnex/density.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "exnex/error.hpp"

namespace exnex {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

inline double softplus(double x) noexcept
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double log_choose(int n, int r)
{
    return std::lgamma(n + 1.0) - std::lgamma(r + 1.0) - std::lgamma(n - r + 1.0);
}

double log_uniform(double x, const Interval& iv) noexcept
{
    if (!iv.contains(x)) return kNegInf;
    return -std::log(iv.upper - iv.lower);
}

}  // namespace

double tox_prob(double intercept, double log_slope, double scale_factor, double dose,
                double reference_dose)
{
    if (!(dose > 0.0) || !(scale_factor > 0.0) || !(reference_dose > 0.0)) {
        throw std::domain_error("tox_prob: dose, scale factor and reference dose must be positive");
    }
    return inv_logit(intercept +
                     std::exp(log_slope) * std::log(scale_factor * dose / reference_dose));
}

double inv_logit(double x) noexcept
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_normal_pdf(double x, double mean, double sd) noexcept
{
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

double log_half_normal_pdf(double x, double scale) noexcept
{
    if (!(x > 0.0)) return kNegInf;
    return std::numbers::ln2 + log_normal_pdf(x, 0.0, scale);
}

double log_bvn_pdf(const Vec2& x, const Vec2& mean, const CovTriple& cov) noexcept
{
    const double s1 = cov.sd1;
    const double s2 = cov.sd2;
    const double rho = cov.corr;
    if (!(s1 > 0.0) || !(s2 > 0.0) || !(std::abs(rho) < 1.0)) return kNegInf;
    const double z1 = (x.intercept - mean.intercept) / s1;
    const double z2 = (x.log_slope - mean.log_slope) / s2;
    const double one_minus = 1.0 - rho * rho;
    const double quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_minus;
    return -0.5 * quad - std::log(s1) - std::log(s2) - 0.5 * std::log(one_minus) -
           2.0 * kLogSqrt2Pi;
}

BinomialSeries BinomialSeries::from_counts(std::span<const double> doses, double reference_dose,
                                           std::span<const int> n, std::span<const int> r)
{
    BinomialSeries s;
    for (std::size_t j = 0; j < doses.size(); ++j) {
        if (n[j] == 0) continue;
        s.log_rel_dose.push_back(std::log(doses[j] / reference_dose));
        s.n.push_back(n[j]);
        s.r.push_back(r[j]);
        s.log_coefficient += log_choose(n[j], r[j]);
    }
    return s;
}

double BinomialSeries::log_likelihood(const Vec2& params, double log_scale) const noexcept
{
    const double slope = std::exp(params.log_slope);
    double ll = log_coefficient;
    for (std::size_t j = 0; j < n.size(); ++j) {
        const double eta = params.intercept + slope * (log_scale + log_rel_dose[j]);
        ll += r[j] * eta - n[j] * softplus(eta);
    }
    return ll;
}

PreparedData PreparedData::build(std::span<const AnimalStudy> animal_data,
                                 std::span<const HumanTrialState> human_data,
                                 const ModelConfig& config)
{
    PreparedData d;
    d.species_studies.resize(config.n_species());
    for (const auto& study : animal_data) {
        study.validate();
        const auto k = config.species_index(study.species);
        if (!k) {
            throw ConfigError("study " + study.study_id + ": species " + study.species +
                              " has no translation prior in the config");
        }
        if (study.grid.reference_dose() != config.reference_dose) {
            throw ConfigError("study " + study.study_id +
                              ": reference dose differs from the config");
        }
        d.species_studies[*k].push_back(d.animal.size());
        d.study_species.push_back(*k);
        d.animal.push_back(BinomialSeries::from_counts(study.grid.doses(), config.reference_dose,
                                                       study.n, study.r));
    }

    if (human_data.size() != config.subgroups.size()) {
        throw ConfigError("expected one trial state per configured subgroup (" +
                          std::to_string(config.subgroups.size()) + "), got " +
                          std::to_string(human_data.size()));
    }
    d.human.resize(config.subgroups.size());
    std::vector<bool> seen(config.subgroups.size(), false);
    for (const auto& trial : human_data) {
        trial.validate();
        const auto l = config.subgroup_index(trial.subgroup_id);
        if (!l) {
            throw ConfigError("trial subgroup " + trial.subgroup_id + " is not configured");
        }
        if (seen[*l]) {
            throw ConfigError("duplicate trial state for subgroup " + trial.subgroup_id);
        }
        seen[*l] = true;
        if (trial.grid.reference_dose() != config.reference_dose) {
            throw ConfigError("trial " + trial.subgroup_id +
                              ": reference dose differs from the config");
        }
        const auto t = trial.tally();
        d.human[*l] = BinomialSeries::from_counts(trial.grid.doses(), config.reference_dose,
                                                  t.n, t.r);
    }
    return d;
}

Component mixture_component(const ParameterState& state, const ModelConfig& config,
                            std::size_t subgroup, std::size_t c)
{
    const std::size_t K = config.n_species();
    if (c < K) return {state.mu_species[c], state.psi()};
    if (c == K) return {state.mu_human, state.phi()};
    const auto& sg = config.subgroups.at(subgroup);
    return {sg.nex_mean, sg.nex_cov};
}

DensityTerms log_joint_terms(const ParameterState& state, const PreparedData& data,
                             const ModelConfig& config)
{
    const std::size_t K = config.n_species();
    const std::size_t L = config.subgroups.size();
    if (state.theta.size() != data.animal.size() || state.mu_species.size() != K ||
        state.log_delta_std.size() != K || state.gamma.size() != L ||
        state.indicator.size() != L || state.epsilon_std.size() != L) {
        throw ConfigError("parameter state dimensions do not match data/config");
    }
    const auto& h = config.hyper;
    DensityTerms t;

    for (std::size_t i = 0; i < data.animal.size(); ++i) {
        const auto k = data.study_species[i];
        t.animal_likelihood +=
            data.animal[i].log_likelihood(state.theta[i], std::log(state.delta(k, config)));
        t.theta_prior += log_bvn_pdf(state.theta[i], state.mu_species[k], state.psi());
    }
    for (std::size_t k = 0; k < K; ++k) {
        t.species_prior += log_bvn_pdf(state.mu_species[k], state.m, state.sigma_cov());
        t.translation_prior += log_normal_pdf(state.log_delta_std[k], 0.0, 1.0);
    }
    for (std::size_t l = 0; l < L; ++l) {
        const auto& sg = config.subgroups[l];
        const int c = state.indicator[l];
        if (c < 0 || static_cast<std::size_t>(c) >= config.n_components()) {
            throw ConfigError("mixture indicator out of range for subgroup " + sg.id);
        }
        const auto comp = mixture_component(state, config, l, c);
        t.gamma_prior += log_bvn_pdf(state.gamma[l], comp.mean, comp.cov);
        t.indicator_prior += std::log(sg.weights[c]);

        const double e = state.epsilon_std[l];
        if (!sg.epsilon.standardized_bounds().contains(e)) {
            t.translation_prior = kNegInf;
        } else {
            t.translation_prior += log_normal_pdf(e, 0.0, 1.0);
        }
        const double eps = state.epsilon(l, config);
        t.human_likelihood += eps > 0.0
                                  ? data.human[l].log_likelihood(state.gamma[l], std::log(eps))
                                  : kNegInf;
    }

    auto location = [&](const Vec2& v) {
        if (!h.intercept_bounds.contains(v.intercept) || !h.log_slope_bounds.contains(v.log_slope)) {
            return kNegInf;
        }
        return log_normal_pdf(v.intercept, h.location1.mean, h.location1.sd) +
               log_normal_pdf(v.log_slope, h.location2.mean, h.location2.sd);
    };
    t.location_prior = location(state.m) + location(state.mu_human);

    auto floored_hn = [&](double x, double scale) {
        return x >= h.sd_floor ? log_half_normal_pdf(x, scale) : kNegInf;
    };
    for (int i = 0; i < 4; ++i) t.scale_prior += floored_hn(state.tau[i], h.tau_scale[i]);
    for (int i = 0; i < 2; ++i) t.scale_prior += floored_hn(state.sigma[i], h.sigma_scale[i]);
    t.scale_prior += log_uniform(state.rho, h.rho) + log_uniform(state.kappa, h.kappa) +
                     log_uniform(state.eta, h.eta);
    return t;
}

DensityTerms log_joint_terms(const ParameterState& state,
                             std::span<const AnimalStudy> animal_data,
                             std::span<const HumanTrialState> human_data,
                             const ModelConfig& config)
{
    return log_joint_terms(state, PreparedData::build(animal_data, human_data, config), config);
}

double log_joint_density(const ParameterState& state, std::span<const AnimalStudy> animal_data,
                         std::span<const HumanTrialState> human_data, const ModelConfig& config)
{
    return log_joint_terms(state, animal_data, human_data, config).total();
}

}  // namespace exnex
