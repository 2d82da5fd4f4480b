#include "exnex/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

namespace exnex {

namespace {

using Chains = std::vector<std::vector<double>>;

double mean_of(const std::vector<double>& x)
{
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double var_of(const std::vector<double>& x, double mean)
{
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(x.size() - 1);
}

Chains split_chains(std::span<const std::vector<double>> chains)
{
    Chains out;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        out.emplace_back(c.begin(), c.begin() + half);
        out.emplace_back(c.end() - half, c.end());
    }
    return out;
}

Chains rank_normalize(const Chains& chains)
{
    std::vector<std::pair<double, std::size_t>> pooled;
    const std::size_t n = chains.front().size();
    for (std::size_t m = 0; m < chains.size(); ++m) {
        for (std::size_t i = 0; i < n; ++i) {
            pooled.emplace_back(chains[m][i], m * n + i);
        }
    }
    std::sort(pooled.begin(), pooled.end());
    const double S = static_cast<double>(pooled.size());
    const boost::math::normal_distribution<double> stdnorm;
    Chains z(chains.size(), std::vector<double>(n));
    for (std::size_t a = 0; a < pooled.size();) {
        std::size_t b = a;
        while (b < pooled.size() && pooled[b].first == pooled[a].first) ++b;
        // average rank (1-based) for ties
        const double rank = 0.5 * static_cast<double>(a + 1 + b);
        const double zval = boost::math::quantile(stdnorm, (rank - 0.375) / (S + 0.25));
        for (std::size_t t = a; t < b; ++t) {
            const auto idx = pooled[t].second;
            z[idx / n][idx % n] = zval;
        }
        a = b;
    }
    return z;
}

Chains folded(std::span<const std::vector<double>> chains)
{
    std::vector<double> all;
    for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
    std::sort(all.begin(), all.end());
    const std::size_t S = all.size();
    const double median = S % 2 ? all[S / 2] : 0.5 * (all[S / 2 - 1] + all[S / 2]);
    Chains out;
    for (const auto& c : chains) {
        std::vector<double> f(c.size());
        std::transform(c.begin(), c.end(), f.begin(),
                       [&](double x) { return std::abs(x - median); });
        out.push_back(std::move(f));
    }
    return out;
}

void check_shape(std::span<const std::vector<double>> chains)
{
    if (chains.empty() || chains.front().size() < 4) {
        throw std::invalid_argument("diagnostics need at least one chain of length >= 4");
    }
    for (const auto& c : chains) {
        if (c.size() != chains.front().size()) {
            throw std::invalid_argument("diagnostics need chains of equal length");
        }
    }
}

}  // namespace

double basic_rhat(std::span<const std::vector<double>> chains)
{
    const double n = static_cast<double>(chains.front().size());
    std::vector<double> means, vars;
    for (const auto& c : chains) {
        means.push_back(mean_of(c));
        vars.push_back(var_of(c, means.back()));
    }
    const double W = std::accumulate(vars.begin(), vars.end(), 0.0) / vars.size();
    const double B_over_n = var_of(means, mean_of(means));
    if (W == 0.0) {
        return B_over_n == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                               : std::numeric_limits<double>::infinity();
    }
    const double var_plus = (n - 1.0) / n * W + B_over_n;
    return std::sqrt(var_plus / W);
}

double split_rhat(std::span<const std::vector<double>> chains)
{
    const auto halves = split_chains(chains);
    const double bulk = basic_rhat(rank_normalize(halves));
    const auto f = folded(halves);
    const double tail = basic_rhat(rank_normalize(f));
    if (std::isnan(tail)) return bulk;
    return std::max(bulk, tail);
}

double effective_sample_size(std::span<const std::vector<double>> input)
{
    const Chains chains = split_chains(input);
    const std::size_t M = chains.size();
    const std::size_t N = chains.front().size();
    const double n = static_cast<double>(N);

    std::vector<double> means(M), acov0(M);
    for (std::size_t m = 0; m < M; ++m) {
        means[m] = mean_of(chains[m]);
    }
    auto acov = [&](std::size_t m, std::size_t lag) {
        double s = 0.0;
        const auto& x = chains[m];
        for (std::size_t i = 0; i + lag < N; ++i) {
            s += (x[i] - means[m]) * (x[i + lag] - means[m]);
        }
        return s / n;
    };
    for (std::size_t m = 0; m < M; ++m) acov0[m] = acov(m, 0);
    const double mean_var = mean_of(acov0) * n / (n - 1.0);
    double var_plus = mean_var * (n - 1.0) / n;
    if (M > 1) var_plus += var_of(means, mean_of(means));
    if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

    auto rho = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) s += acov(m, lag);
        return 1.0 - (mean_var - s / M) / var_plus;
    };

    // Geyer's initial positive sequence, made monotone.
    double tau_sum = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < N; t += 2) {
        double pair = (t == 0 ? 1.0 : rho(t)) + rho(t + 1);
        if (pair < 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        tau_sum += pair;
    }
    const double total = static_cast<double>(M) * n;
    double tau = -1.0 + 2.0 * tau_sum;
    tau = std::max(tau, 1.0 / std::log10(total));
    return total / tau;
}

ParameterDiagnostics diagnose(std::string name, std::span<const std::vector<double>> chains)
{
    check_shape(chains);
    ParameterDiagnostics d;
    d.name = std::move(name);
    double lo = chains.front().front();
    double hi = lo;
    for (const auto& c : chains) {
        for (double x : c) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    }
    if (lo == hi) {
        d.degenerate = true;
        return d;
    }
    if (chains.size() >= 2) {
        d.rhat = split_rhat(chains);
    }
    const double ess = effective_sample_size(chains);
    if (std::isfinite(ess)) d.ess = ess;
    return d;
}

}  // namespace exnex
