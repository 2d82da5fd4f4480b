#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exnex/sampler.hpp"

namespace exnex {

// Beta(a, b) with the same mean and sd as a marginal prior/posterior of p.
struct BetaApprox {
    double a = 0.0;
    double b = 0.0;
    double source_mean = 0.0;
    double source_sd = 0.0;

    double ess() const noexcept { return a + b; }
    double mean() const noexcept { return a / (a + b); }
    double sd() const noexcept
    {
        const double s = a + b;
        return std::sqrt(a * b / (s * s * (s + 1.0)));
    }
};

// nu = mean (1 - mean) / sd^2 - 1, a = mean nu, b = (1 - mean) nu.
// Throws std::domain_error unless 0 < mean < 1, sd > 0 and sd^2 < mean (1 - mean).
BetaApprox beta_moment_match(double mean, double sd);

struct DoseMoments {
    std::string subgroup_id;
    int dose_index = 0;
    double dose = 0.0;
    double mean = 0.0;
    double sd = 0.0;
};

struct EssRow {
    std::string subgroup_id;
    int dose_index = 0;
    double dose = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    std::optional<BetaApprox> beta;  // empty when the moments admit no beta
    std::string error;
};

std::vector<EssRow> ess_report(std::span<const DoseMoments> summaries);

// One row per dose per subgroup from the running means and sds.
std::vector<EssRow> ess_report(const PosteriorResult& posterior);

}  // namespace exnex
