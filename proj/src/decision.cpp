#include "exnex/decision.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "exnex/error.hpp"

namespace exnex {

namespace {

constexpr double kTieTolerance = 1e-12;

const SubgroupPosterior& checked_subgroup(const PosteriorResult& posterior,
                                          std::string_view subgroup_id)
{
    const auto& sp = posterior.subgroup(subgroup_id);
    if (sp.tox.size() != posterior.dose_grid.size()) {
        throw ConfigError("posterior for " + std::string(subgroup_id) +
                          " does not cover the dose grid");
    }
    for (std::size_t j = 0; j < sp.tox.size(); ++j) {
        if (sp.tox[j].empty()) {
            throw ConfigError("posterior for " + std::string(subgroup_id) +
                              " has no draws at dose " + std::to_string(j));
        }
    }
    return sp;
}

}  // namespace

void IntervalThresholds::validate() const
{
    if (!(underdose_cut > 0.0 && underdose_cut < overdose_cut && overdose_cut < 1.0)) {
        throw ConfigError("thresholds: need 0 < underdose_cut < overdose_cut < 1");
    }
    if (!(target >= underdose_cut && target < overdose_cut)) {
        throw ConfigError("thresholds: target must lie in [underdose_cut, overdose_cut)");
    }
    if (!(feasibility_bound > 0.0 && feasibility_bound < 1.0)) {
        throw ConfigError("thresholds: feasibility_bound must be in (0, 1)");
    }
    if (!(start_confidence > 0.0 && start_confidence < 1.0)) {
        throw ConfigError("thresholds: start_confidence must be in (0, 1)");
    }
}

std::string_view to_string(DecisionKind kind) noexcept
{
    switch (kind) {
    case DecisionKind::start: return "start";
    case DecisionKind::escalate_to: return "escalate_to";
    case DecisionKind::stay: return "stay";
    case DecisionKind::de_escalate_to: return "de_escalate_to";
    case DecisionKind::stop_for_safety: return "stop_for_safety";
    case DecisionKind::complete: return "complete";
    }
    return "unknown";
}

DecisionKind decision_kind_from_string(std::string_view name)
{
    for (auto k : {DecisionKind::start, DecisionKind::escalate_to, DecisionKind::stay,
                   DecisionKind::de_escalate_to, DecisionKind::stop_for_safety,
                   DecisionKind::complete}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown decision kind: " + std::string(name));
}

IntervalProbabilities interval_probabilities(std::span<const double> draws,
                                             const IntervalThresholds& thresholds)
{
    if (draws.empty()) throw std::invalid_argument("interval_probabilities: no draws");
    std::size_t under = 0, over = 0;
    for (double p : draws) {
        if (p < thresholds.underdose_cut) {
            ++under;
        } else if (p >= thresholds.overdose_cut) {
            ++over;
        }
    }
    const double n = static_cast<double>(draws.size());
    IntervalProbabilities out;
    out.under = static_cast<double>(under) / n;
    out.over = static_cast<double>(over) / n;
    out.target = 1.0 - out.under - out.over;
    return out;
}

std::vector<IntervalProbabilities> dose_interval_probabilities(const PosteriorResult& posterior,
                                                               std::string_view subgroup_id,
                                                               const IntervalThresholds& thresholds)
{
    const auto& sp = checked_subgroup(posterior, subgroup_id);
    std::vector<IntervalProbabilities> out;
    for (const auto& draws : sp.tox) out.push_back(interval_probabilities(draws, thresholds));
    return out;
}

std::vector<double> dose_medians(const PosteriorResult& posterior, std::string_view subgroup_id)
{
    const auto& sp = checked_subgroup(posterior, subgroup_id);
    std::vector<double> out;
    for (const auto& draws : sp.tox) {
        std::vector<double> s(draws);
        std::sort(s.begin(), s.end());
        out.push_back(quantile_sorted(s, 0.5));
    }
    return out;
}

DoseDecision recommend_from_probabilities(std::span<const IntervalProbabilities> per_dose,
                                          const HumanTrialState& trial,
                                          const IntervalThresholds& thresholds, bool no_skipping)
{
    if (per_dose.size() != trial.grid.size()) {
        throw ConfigError("interval probabilities do not cover the dose grid");
    }
    const auto current = trial.current_dose();
    if (!current) {
        throw StateError("trial " + trial.subgroup_id + " has no cohorts; use starting_dose");
    }
    DoseDecision d;
    d.rationale.assign(per_dose.begin(), per_dose.end());
    if (trial.is_complete()) {
        d.kind = DecisionKind::complete;
        return d;
    }
    auto admissible = [&](std::size_t j) {
        return per_dose[j].over <= thresholds.feasibility_bound;
    };
    if (!admissible(0)) {
        d.kind = DecisionKind::stop_for_safety;
        return d;
    }
    int cap = static_cast<int>(per_dose.size()) - 1;
    if (no_skipping) {
        const int highest = trial.highest_administered().value_or(*current);
        cap = std::min(cap, highest + 1);
    }
    int pick = 0;
    for (int j = cap; j >= 0; --j) {
        if (admissible(static_cast<std::size_t>(j))) {
            pick = j;
            break;
        }
    }
    d.dose_index = pick;
    d.kind = pick > *current   ? DecisionKind::escalate_to
             : pick == *current ? DecisionKind::stay
                                : DecisionKind::de_escalate_to;
    return d;
}

DoseDecision recommend_next_dose(const PosteriorResult& posterior, const HumanTrialState& trial,
                                 const IntervalThresholds& thresholds, bool no_skipping)
{
    const auto probs = dose_interval_probabilities(posterior, trial.subgroup_id, thresholds);
    return recommend_from_probabilities(probs, trial, thresholds, no_skipping);
}

DoseDecision starting_dose_from_probabilities(std::span<const IntervalProbabilities> per_dose,
                                              const IntervalThresholds& thresholds)
{
    if (per_dose.empty()) throw ConfigError("starting_dose: empty dose grid");
    DoseDecision d;
    d.kind = DecisionKind::start;
    d.rationale.assign(per_dose.begin(), per_dose.end());
    d.dose_index = 0;
    for (int j = static_cast<int>(per_dose.size()) - 1; j >= 0; --j) {
        if (per_dose[static_cast<std::size_t>(j)].under > thresholds.start_confidence) {
            d.dose_index = j;
            break;
        }
    }
    return d;
}

DoseDecision starting_dose(const PosteriorResult& posterior, std::string_view subgroup_id,
                           const IntervalThresholds& thresholds)
{
    return starting_dose_from_probabilities(
        dose_interval_probabilities(posterior, subgroup_id, thresholds), thresholds);
}

std::optional<int> select_mtd(std::span<const double> medians,
                              std::span<const IntervalProbabilities> per_dose,
                              const HumanTrialState& trial, const IntervalThresholds& thresholds)
{
    if (!trial.is_complete()) {
        throw StateError("trial " + trial.subgroup_id + " is not complete; no MTD can be declared");
    }
    if (medians.size() != trial.grid.size() || per_dose.size() != trial.grid.size()) {
        throw ConfigError("posterior summaries do not cover the dose grid");
    }
    std::optional<int> best;
    double best_gap = 0.0;
    for (std::size_t j = 0; j < medians.size(); ++j) {
        const int idx = static_cast<int>(j);
        if (!trial.administered(idx) || per_dose[j].over > thresholds.feasibility_bound) continue;
        const double gap = std::abs(medians[j] - thresholds.target);
        if (!best || gap < best_gap - kTieTolerance) {
            best = idx;
            best_gap = gap;
        }
    }
    return best;
}

std::optional<int> declare_mtd(const PosteriorResult& posterior, const HumanTrialState& trial,
                               const IntervalThresholds& thresholds)
{
    if (!trial.is_complete()) {
        throw StateError("trial " + trial.subgroup_id + " is not complete; no MTD can be declared");
    }
    return select_mtd(dose_medians(posterior, trial.subgroup_id),
                      dose_interval_probabilities(posterior, trial.subgroup_id, thresholds), trial,
                      thresholds);
}

}  // namespace exnex
