#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exnex/model.hpp"
#include "exnex/sampler.hpp"

namespace exnex {

struct IntervalThresholds {
    double underdose_cut = 0.16;
    double overdose_cut = 0.33;
    double target = 0.25;
    double feasibility_bound = 0.25;  // max admissible P(p >= overdose_cut)
    double start_confidence = 0.85;   // min P(p < underdose_cut) for a starting dose

    // Throws ConfigError.
    void validate() const;

    friend bool operator==(const IntervalThresholds&, const IntervalThresholds&) = default;
};

// Posterior mass in [0, under), [under, over), [over, 1].
struct IntervalProbabilities {
    double under = 0.0;
    double target = 0.0;
    double over = 0.0;

    friend bool operator==(const IntervalProbabilities&, const IntervalProbabilities&) = default;
};

enum class DecisionKind { start, escalate_to, stay, de_escalate_to, stop_for_safety, complete };

std::string_view to_string(DecisionKind kind) noexcept;
// Throws ConfigError for an unknown name.
DecisionKind decision_kind_from_string(std::string_view name);

struct DoseDecision {
    DecisionKind kind = DecisionKind::start;
    std::optional<int> dose_index;  // set exactly for start/escalate/stay/de-escalate
    std::vector<IntervalProbabilities> rationale;  // per grid dose

    bool is_dosing() const noexcept
    {
        return kind != DecisionKind::stop_for_safety && kind != DecisionKind::complete;
    }

    friend bool operator==(const DoseDecision&, const DoseDecision&) = default;
};

// Empirical interval frequencies; target = 1 - under - over so the three sum
// to 1 up to rounding. Throws std::invalid_argument on empty draws.
IntervalProbabilities interval_probabilities(std::span<const double> draws,
                                             const IntervalThresholds& thresholds);

// Per-dose interval probabilities of one subgroup. Throws ConfigError when
// some grid dose has no stored draws.
std::vector<IntervalProbabilities> dose_interval_probabilities(const PosteriorResult& posterior,
                                                               std::string_view subgroup_id,
                                                               const IntervalThresholds& thresholds);

std::vector<double> dose_medians(const PosteriorResult& posterior, std::string_view subgroup_id);

// Rule layer. The trial must have at least one cohort (StateError otherwise).
// complete if max_sample_size is reached; stop_for_safety if the lowest dose
// has P_over > feasibility_bound; otherwise the highest admissible dose not
// above highest administered + 1 (when no_skipping).
DoseDecision recommend_from_probabilities(std::span<const IntervalProbabilities> per_dose,
                                          const HumanTrialState& trial,
                                          const IntervalThresholds& thresholds, bool no_skipping);

DoseDecision recommend_next_dose(const PosteriorResult& posterior, const HumanTrialState& trial,
                                 const IntervalThresholds& thresholds, bool no_skipping = true);

// Highest dose with P_under > start_confidence, else the lowest dose.
DoseDecision starting_dose_from_probabilities(std::span<const IntervalProbabilities> per_dose,
                                              const IntervalThresholds& thresholds);

DoseDecision starting_dose(const PosteriorResult& posterior, std::string_view subgroup_id,
                           const IntervalThresholds& thresholds);

// Among administered doses with P_over <= feasibility_bound, the one whose
// median is closest to target; ties go to the lower dose. StateError if the
// trial is not complete.
std::optional<int> select_mtd(std::span<const double> medians,
                              std::span<const IntervalProbabilities> per_dose,
                              const HumanTrialState& trial, const IntervalThresholds& thresholds);

std::optional<int> declare_mtd(const PosteriorResult& posterior, const HumanTrialState& trial,
                               const IntervalThresholds& thresholds);

}  // namespace exnex
