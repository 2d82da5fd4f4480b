#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace exnex {

struct ParameterDiagnostics {
    std::string name;
    // Rank-normalized split-R-hat (max of bulk and folded versions).
    // Unavailable for a single chain or degenerate draws; +inf when chains are
    // individually constant but disagree.
    std::optional<double> rhat;
    std::optional<double> ess;
    bool degenerate = false;  // zero variance over all draws
};

// Chains must have equal length >= 4.
ParameterDiagnostics diagnose(std::string name, std::span<const std::vector<double>> chains);

// Plain (non-rank) R-hat of Gelman et al. on the given chains, no splitting.
double basic_rhat(std::span<const std::vector<double>> chains);

// Rank-normalized split-R-hat of Vehtari et al. (2021):
//   split each chain in half, replace draws by z = Phi^-1((rank - 3/8) / (S + 1/4)),
//   compute basic R-hat; repeat on |x - median| and report the maximum.
double split_rhat(std::span<const std::vector<double>> chains);

// Multi-chain effective sample size using split chains, the combined
// variance estimate and Geyer's initial monotone sequence.
double effective_sample_size(std::span<const std::vector<double>> chains);

}  // namespace exnex
