#include "exnex/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "exnex/error.hpp"

namespace exnex {

namespace {

constexpr double kWeightTolerance = 1e-12;

template <class E = ConfigError>
[[noreturn]] void fail(const std::string& msg)
{
    throw E(msg);
}

}  // namespace

DoseGrid::DoseGrid(std::vector<double> doses, double reference_dose)
    : doses_(std::move(doses)), reference_dose_(reference_dose)
{
    if (!(reference_dose_ > 0.0) || !std::isfinite(reference_dose_)) {
        fail<DataError>("reference dose must be positive");
    }
    for (std::size_t j = 0; j < doses_.size(); ++j) {
        if (!(doses_[j] > 0.0) || !std::isfinite(doses_[j])) {
            fail<DataError>("dose " + std::to_string(j) + " must be positive");
        }
        if (j > 0 && doses_[j] < doses_[j - 1]) {
            fail<DataError>("doses must be sorted non-decreasing");
        }
    }
}

void AnimalStudy::validate() const
{
    const auto J = grid.size();
    if (n.size() != J || r.size() != J) {
        fail<DataError>("study " + study_id + ": n, r and doses differ in length");
    }
    for (std::size_t j = 0; j < J; ++j) {
        if (n[j] < 0 || r[j] < 0) {
            fail<DataError>("study " + study_id + ": negative count");
        }
        if (r[j] > n[j]) {
            fail<DataError>("study " + study_id + ": r > n at dose " + std::to_string(j));
        }
    }
}

void HumanTrialState::validate() const
{
    if (max_sample_size <= 0 || cohort_size <= 0) {
        fail<DataError>("trial " + subgroup_id + ": sample and cohort sizes must be positive");
    }
    int total = 0;
    for (std::size_t h = 0; h < cohorts.size(); ++h) {
        const auto& c = cohorts[h];
        if (c.dose_index < 0 || static_cast<std::size_t>(c.dose_index) >= grid.size()) {
            fail<DataError>("trial " + subgroup_id + ": cohort " + std::to_string(h) +
                            " dose index out of range");
        }
        if (c.n_treated < 0 || c.n_dlt < 0 || c.n_dlt > c.n_treated) {
            fail<DataError>("trial " + subgroup_id + ": cohort " + std::to_string(h) +
                            " has n_dlt > n_treated");
        }
        total += c.n_treated;
    }
    if (total > max_sample_size) {
        fail<DataError>("trial " + subgroup_id + ": more patients than max_sample_size");
    }
}

DoseTally HumanTrialState::tally() const
{
    DoseTally t{std::vector<int>(grid.size(), 0), std::vector<int>(grid.size(), 0)};
    for (const auto& c : cohorts) {
        t.n.at(c.dose_index) += c.n_treated;
        t.r.at(c.dose_index) += c.n_dlt;
    }
    return t;
}

int HumanTrialState::total_treated() const noexcept
{
    return std::accumulate(cohorts.begin(), cohorts.end(), 0,
                           [](int acc, const Cohort& c) { return acc + c.n_treated; });
}

int HumanTrialState::total_dlt() const noexcept
{
    return std::accumulate(cohorts.begin(), cohorts.end(), 0,
                           [](int acc, const Cohort& c) { return acc + c.n_dlt; });
}

std::optional<int> HumanTrialState::highest_administered() const noexcept
{
    std::optional<int> best;
    for (const auto& c : cohorts) {
        if (c.n_treated > 0 && (!best || c.dose_index > *best)) {
            best = c.dose_index;
        }
    }
    return best;
}

std::optional<int> HumanTrialState::current_dose() const noexcept
{
    if (cohorts.empty()) {
        return std::nullopt;
    }
    return cohorts.back().dose_index;
}

bool HumanTrialState::administered(int dose_index) const noexcept
{
    return std::any_of(cohorts.begin(), cohorts.end(), [&](const Cohort& c) {
        return c.dose_index == dose_index && c.n_treated > 0;
    });
}

void HyperpriorConfig::validate() const
{
    auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
    if (!positive(location1.sd) || !positive(location2.sd)) {
        fail("hyperpriors: location prior sd must be positive");
    }
    for (double z : tau_scale) {
        if (!positive(z)) fail("hyperpriors: tau half-normal scales must be positive");
    }
    for (double c : sigma_scale) {
        if (!positive(c)) fail("hyperpriors: sigma half-normal scales must be positive");
    }
    for (const auto* iv : {&rho, &kappa, &eta}) {
        if (iv->lower < -1.0 || iv->upper > 1.0 || !(iv->lower < iv->upper)) {
            fail("hyperpriors: correlation bounds must lie within [-1, 1]");
        }
    }
    if (!(intercept_bounds.lower < intercept_bounds.upper) ||
        !(log_slope_bounds.lower < log_slope_bounds.upper)) {
        fail("hyperpriors: empty location truncation interval");
    }
    if (!positive(sd_floor)) {
        fail("hyperpriors: sd_floor must be positive");
    }
}

MixtureWeights::MixtureWeights(std::vector<double> species, double human, double robust)
    : species_(std::move(species)), human_(human), robust_(robust)
{
    double sum = human_ + robust_;
    for (double w : species_) {
        sum += w;
    }
    auto bad = [](double w) { return !(w >= 0.0) || !std::isfinite(w); };
    if (bad(human_) || bad(robust_) || std::any_of(species_.begin(), species_.end(), bad)) {
        fail("mixture weights must be non-negative");
    }
    if (std::abs(sum - 1.0) > kWeightTolerance) {
        std::ostringstream os;
        os << "mixture weights sum to " << sum << ", expected 1";
        fail(os.str());
    }
}

double MixtureWeights::operator[](std::size_t c) const
{
    if (c < species_.size()) return species_[c];
    if (c == human_index()) return human_;
    if (c == robust_index()) return robust_;
    fail("mixture component index out of range");
}

std::vector<double> MixtureWeights::as_vector() const
{
    std::vector<double> w = species_;
    w.push_back(human_);
    w.push_back(robust_);
    return w;
}

std::optional<std::size_t> ModelConfig::species_index(std::string_view name) const noexcept
{
    for (std::size_t k = 0; k < species.size(); ++k) {
        if (species[k].name == name) return k;
    }
    return std::nullopt;
}

std::optional<std::size_t> ModelConfig::subgroup_index(std::string_view id) const noexcept
{
    for (std::size_t l = 0; l < subgroups.size(); ++l) {
        if (subgroups[l].id == id) return l;
    }
    return std::nullopt;
}

TranslationPriors ModelConfig::translation_priors() const
{
    TranslationPriors t;
    t.species = species;
    for (const auto& s : subgroups) {
        t.epsilon.push_back(s.epsilon);
    }
    return t;
}

std::vector<std::string> ModelConfig::component_labels() const
{
    std::vector<std::string> labels;
    for (const auto& s : species) {
        labels.push_back(s.name);
    }
    labels.emplace_back("human");
    labels.emplace_back("robust");
    return labels;
}

void ModelConfig::validate() const
{
    if (!(reference_dose > 0.0)) {
        fail("reference_dose must be positive");
    }
    try {
        DoseGrid g(dose_grid, reference_dose);
        if (g.size() == 0) fail("dose_grid must not be empty");
    } catch (const DataError& e) {
        fail(std::string("dose_grid: ") + e.what());
    }
    hyper.validate();
    for (std::size_t k = 0; k < species.size(); ++k) {
        if (!(species[k].log_sd > 0.0)) {
            fail("species " + species[k].name + ": translation prior sd must be positive");
        }
        for (std::size_t k2 = 0; k2 < k; ++k2) {
            if (species[k2].name == species[k].name) {
                fail("duplicate species " + species[k].name);
            }
        }
    }
    for (std::size_t l = 0; l < subgroups.size(); ++l) {
        const auto& s = subgroups[l];
        if (s.weights.n_species() != species.size()) {
            fail("subgroup " + s.id + ": weight vector length does not match species count");
        }
        if (!(s.nex_cov.sd1 > 0.0) || !(s.nex_cov.sd2 > 0.0) || !(std::abs(s.nex_cov.corr) < 1.0)) {
            fail("subgroup " + s.id + ": invalid non-exchangeability covariance");
        }
        if (!(s.epsilon.sd > 0.0) || !(s.epsilon.upper > 1.0)) {
            fail("subgroup " + s.id + ": epsilon prior needs sd > 0 and upper > 1");
        }
        for (std::size_t l2 = 0; l2 < l; ++l2) {
            if (subgroups[l2].id == s.id) fail("duplicate subgroup " + s.id);
        }
    }
    if (clamp.translation && clamp.delta.size() != species.size()) {
        fail("clamp: one delta per species required");
    }
    if (clamp.bridging && clamp.epsilon.size() != subgroups.size()) {
        fail("clamp: one epsilon per subgroup required");
    }
    if (clamp.hyperparameters && clamp.mu_species.size() != species.size()) {
        fail("clamp: one mu per species required");
    }
    if (clamp.indicators) {
        if (clamp.indicator.size() != subgroups.size()) {
            fail("clamp: one indicator per subgroup required");
        }
        for (std::size_t l = 0; l < subgroups.size(); ++l) {
            const int c = clamp.indicator[l];
            if (c < 0 || static_cast<std::size_t>(c) >= n_components() ||
                subgroups[l].weights[c] <= 0.0) {
                fail("clamp: indicator of subgroup " + subgroups[l].id +
                     " must index a component with positive weight");
            }
        }
    }
}

double ParameterState::delta(std::size_t k, const ModelConfig& config) const
{
    const auto& p = config.species.at(k);
    return std::exp(p.log_mean + p.log_sd * log_delta_std.at(k));
}

double ParameterState::epsilon(std::size_t l, const ModelConfig& config) const
{
    return 1.0 + config.subgroups.at(l).epsilon.sd * epsilon_std.at(l);
}

ParameterState ParameterState::initial(const ModelConfig& config, std::size_t n_studies)
{
    ParameterState s;
    const Vec2 centre{config.hyper.location1.mean, config.hyper.location2.mean};
    s.m = centre;
    s.mu_human = centre;
    s.mu_species.assign(config.n_species(), centre);
    s.theta.assign(n_studies, centre);
    s.log_delta_std.assign(config.n_species(), 0.0);
    s.epsilon_std.assign(config.subgroups.size(), 0.0);
    for (std::size_t l = 0; l < config.subgroups.size(); ++l) {
        const auto& sg = config.subgroups[l];
        s.gamma.push_back(sg.nex_mean);
        // Start in the component with the largest prior weight.
        const auto w = sg.weights.as_vector();
        s.indicator.push_back(static_cast<int>(
            std::max_element(w.begin(), w.end()) - w.begin()));
    }
    for (int i = 0; i < 4; ++i) s.tau[i] = 0.5 * config.hyper.tau_scale[i];
    for (int i = 0; i < 2; ++i) s.sigma[i] = 0.5 * config.hyper.sigma_scale[i];

    const auto& c = config.clamp;
    if (c.hyperparameters) {
        s.m = c.m;
        s.mu_human = c.mu_human;
        s.mu_species = c.mu_species;
        s.tau = c.tau;
        s.sigma = c.sigma;
        s.rho = c.rho;
        s.kappa = c.kappa;
        s.eta = c.eta;
    }
    if (c.translation) {
        for (std::size_t k = 0; k < config.n_species(); ++k) {
            const auto& p = config.species[k];
            s.log_delta_std[k] = (std::log(c.delta[k]) - p.log_mean) / p.log_sd;
        }
    }
    if (c.bridging) {
        for (std::size_t l = 0; l < config.subgroups.size(); ++l) {
            s.epsilon_std[l] = (c.epsilon[l] - 1.0) / config.subgroups[l].epsilon.sd;
        }
    }
    if (c.indicators) {
        s.indicator = c.indicator;
    }
    return s;
}

}  // namespace exnex
