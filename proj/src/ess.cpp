#include "exnex/ess.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace exnex {

BetaApprox beta_moment_match(double mean, double sd)
{
    if (!(mean > 0.0 && mean < 1.0)) {
        throw std::domain_error("beta_moment_match: mean must lie in (0, 1)");
    }
    if (!(sd > 0.0) || !std::isfinite(sd)) {
        throw std::domain_error("beta_moment_match: sd must be positive");
    }
    const double bound = mean * (1.0 - mean);
    const double var = sd * sd;
    if (!(var < bound)) {
        std::ostringstream os;
        os << "beta_moment_match: sd^2 = " << var << " must be below mean(1 - mean) = " << bound;
        throw std::domain_error(os.str());
    }
    const double nu = bound / var - 1.0;
    return {mean * nu, (1.0 - mean) * nu, mean, sd};
}

std::vector<EssRow> ess_report(std::span<const DoseMoments> summaries)
{
    std::vector<EssRow> rows;
    for (const auto& s : summaries) {
        EssRow row{s.subgroup_id, s.dose_index, s.dose, s.mean, s.sd, std::nullopt, {}};
        try {
            row.beta = beta_moment_match(s.mean, s.sd);
        } catch (const std::domain_error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<EssRow> ess_report(const PosteriorResult& posterior)
{
    std::vector<DoseMoments> m;
    for (const auto& sp : posterior.subgroups) {
        for (std::size_t j = 0; j < posterior.dose_grid.size(); ++j) {
            m.push_back({sp.subgroup_id, static_cast<int>(j), posterior.dose_grid[j],
                         sp.tox_mean[j], sp.tox_sd[j]});
        }
    }
    return ess_report(m);
}

}  // namespace exnex
