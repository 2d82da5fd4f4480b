#include "exnex/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>

#include "exnex/error.hpp"
#include "exnex/rng.hpp"

namespace exnex {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Welford accumulator; merged across chains with Chan's update.
struct RunningStats {
    long count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double x) noexcept
    {
        ++count;
        const double d = x - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (x - mean);
    }

    void merge(const RunningStats& o) noexcept
    {
        if (o.count == 0) return;
        const long n = count + o.count;
        const double d = o.mean - mean;
        mean += d * static_cast<double>(o.count) / static_cast<double>(n);
        m2 += o.m2 + d * d * static_cast<double>(count) * static_cast<double>(o.count) /
                         static_cast<double>(n);
        count = n;
    }

    double sd() const noexcept
    {
        return count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1)) : 0.0;
    }
};

struct AcceptCounter {
    long proposed = 0;
    long accepted = 0;
    double rate() const noexcept
    {
        return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
    }
};

// Random-walk step for one scalar, Robbins-Monro tuned during burn-in.
struct ScalarProposal {
    std::string name;
    double log_step = 0.0;
    AcceptCounter post_burnin;

    double propose(double x, RandomStream& rng) const noexcept
    {
        return x + std::exp(log_step) * rng.normal();
    }
};

// Bivariate random walk with proposal covariance exp(2 log_scale) * C.
// C starts diagonal and, after adaptation_start, tracks the empirical
// covariance of the block's own burn-in trace.
struct BlockProposal {
    std::string name;
    double log_scale = 0.0;
    double l11 = 1.0, l21 = 0.0, l22 = 1.0;  // Cholesky factor of C
    long n = 0;
    double mean1 = 0.0, mean2 = 0.0, c11 = 0.0, c12 = 0.0, c22 = 0.0;
    AcceptCounter post_burnin;

    BlockProposal() = default;
    BlockProposal(std::string block, double sd1, double sd2)
        : name(std::move(block)), l11(sd1), l22(sd2)
    {
    }

    Vec2 propose(const Vec2& x, RandomStream& rng) const noexcept
    {
        const double s = std::exp(log_scale);
        const double z1 = rng.normal();
        const double z2 = rng.normal();
        return {x.intercept + s * l11 * z1, x.log_slope + s * (l21 * z1 + l22 * z2)};
    }

    void observe(const Vec2& x) noexcept
    {
        ++n;
        const double d1 = x.intercept - mean1;
        const double d2 = x.log_slope - mean2;
        mean1 += d1 / static_cast<double>(n);
        mean2 += d2 / static_cast<double>(n);
        c11 += d1 * (x.intercept - mean1);
        c12 += d1 * (x.log_slope - mean2);
        c22 += d2 * (x.log_slope - mean2);
    }

    void refresh_shape() noexcept
    {
        if (n < 50) return;
        // 2.38^2 / d scaling for d = 2, plus a small ridge.
        const double f = 2.38 * 2.38 / 2.0 / static_cast<double>(n - 1);
        const double a = f * c11 + 1e-6;
        const double b = f * c12;
        const double c = f * c22 + 1e-6;
        const double la = std::sqrt(a);
        const double lb = b / la;
        const double lc2 = c - lb * lb;
        if (!(lc2 > 0.0) || !std::isfinite(la)) return;
        l11 = la;
        l21 = lb;
        l22 = std::sqrt(lc2);
    }
};

inline bool accept(double log_ratio, RandomStream& rng) noexcept
{
    // NaN compares false, so undefined ratios are rejected.
    return std::log(rng.uniform_open()) < log_ratio;
}

struct TraceSet {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;

    std::size_t add(std::string name)
    {
        names.push_back(std::move(name));
        values.emplace_back();
        return names.size() - 1;
    }
};

struct ChainOutput {
    std::vector<std::vector<std::vector<double>>> tox;       // [l][j][draw]
    std::vector<std::vector<RunningStats>> tox_stats;        // [l][j]
    std::vector<std::vector<double>> gamma1, gamma2, eps;    // [l][draw]
    std::vector<std::vector<long>> component_counts;         // [l][c]
    std::vector<std::vector<std::vector<double>>> study_tox; // [i][j][draw]
    TraceSet traces;
    std::vector<BlockAcceptance> acceptance;
    long fallbacks = 0;
    int stored = 0;
};

class Chain {
public:
    Chain(const PreparedData& data, const ModelConfig& config, const SamplerSettings& settings,
          int chain_index)
        : data_(data),
          cfg_(config),
          set_(settings),
          rng_(settings.seed, static_cast<std::uint64_t>(chain_index)),
          state_(ParameterState::initial(config, data.animal.size())),
          K_(config.n_species()),
          L_(config.subgroups.size()),
          M_(data.animal.size())
    {
        for (double d : cfg_.dose_grid) {
            log_rel_grid_.push_back(std::log(d / cfg_.reference_dose));
        }
        make_proposals();
        jitter_start();
    }

    ChainOutput run();

private:
    void make_proposals();
    void jitter_start();
    void sweep(int iter);
    void record(ChainOutput& out, bool store);
    void setup_output(ChainOutput& out, std::size_t capacity);

    double gain(int iter) const noexcept { return std::pow(iter + 1.0, -0.6); }
    bool adapting(int iter) const noexcept { return iter < set_.n_burnin; }

    void tune(ScalarProposal& p, bool accepted, int iter)
    {
        if (adapting(iter)) {
            p.log_step += gain(iter) * ((accepted ? 1.0 : 0.0) - set_.target_acceptance_scalar);
        } else {
            ++p.post_burnin.proposed;
            if (accepted) ++p.post_burnin.accepted;
        }
    }

    void tune(BlockProposal& p, bool accepted, const Vec2& value, int iter)
    {
        if (adapting(iter)) {
            p.log_scale += gain(iter) * ((accepted ? 1.0 : 0.0) - set_.target_acceptance_block);
            if (iter >= set_.adaptation_start) {
                p.observe(value);
                if ((iter - set_.adaptation_start) % 50 == 49) p.refresh_shape();
            }
        } else {
            ++p.post_burnin.proposed;
            if (accepted) ++p.post_burnin.accepted;
        }
    }

    double log_delta(std::size_t k) const noexcept
    {
        const auto& p = cfg_.species[k];
        return p.log_mean + p.log_sd * state_.log_delta_std[k];
    }

    double log_epsilon(std::size_t l, double e) const noexcept
    {
        const double eps = 1.0 + cfg_.subgroups[l].epsilon.sd * e;
        return eps > 0.0 ? std::log(eps) : std::numeric_limits<double>::quiet_NaN();
    }

    Component component(std::size_t l, std::size_t c) const noexcept
    {
        if (c < K_) return {state_.mu_species[c], state_.psi()};
        if (c == K_) return {state_.mu_human, state_.phi()};
        return {cfg_.subgroups[l].nex_mean, cfg_.subgroups[l].nex_cov};
    }

    double location_prior(const Vec2& v) const noexcept
    {
        const auto& h = cfg_.hyper;
        if (!h.intercept_bounds.contains(v.intercept) || !h.log_slope_bounds.contains(v.log_slope)) {
            return kNegInf;
        }
        return log_normal_pdf(v.intercept, h.location1.mean, h.location1.sd) +
               log_normal_pdf(v.log_slope, h.location2.mean, h.location2.sd);
    }

    double floored_half_normal(double x, double scale) const noexcept
    {
        return x >= cfg_.hyper.sd_floor ? log_half_normal_pdf(x, scale) : kNegInf;
    }

    // Terms of the joint density that involve Psi = (tau1, tau2, rho).
    double psi_terms(const CovTriple& psi) const noexcept
    {
        double s = 0.0;
        for (std::size_t i = 0; i < M_; ++i) {
            s += log_bvn_pdf(state_.theta[i], state_.mu_species[data_.study_species[i]], psi);
        }
        for (std::size_t l = 0; l < L_; ++l) {
            const auto c = static_cast<std::size_t>(state_.indicator[l]);
            if (c < K_) s += log_bvn_pdf(state_.gamma[l], state_.mu_species[c], psi);
        }
        return s;
    }

    double sigma_terms(const CovTriple& sig) const noexcept
    {
        double s = 0.0;
        for (std::size_t k = 0; k < K_; ++k) s += log_bvn_pdf(state_.mu_species[k], state_.m, sig);
        return s;
    }

    double phi_terms(const CovTriple& phi) const noexcept
    {
        double s = 0.0;
        for (std::size_t l = 0; l < L_; ++l) {
            if (static_cast<std::size_t>(state_.indicator[l]) == K_) {
                s += log_bvn_pdf(state_.gamma[l], state_.mu_human, phi);
            }
        }
        return s;
    }

    void update_theta(int iter);
    void update_delta(int iter);
    void update_mu_species(int iter);
    void update_m(int iter);
    void update_psi(int iter);
    void update_sigma(int iter);
    void update_gamma(int iter);
    void update_epsilon(int iter);
    void update_indicators();
    void joint_human_move(std::size_t l);
    void update_mu_human(int iter);
    void update_phi(int iter);

    // Updates one scalar of a covariance triple against `terms`.
    template <class Terms>
    void update_cov_scalar(double& value, ScalarProposal& prop, double prior_scale,
                           const Interval* corr_bounds, Terms terms, double& current_terms,
                           int iter);

    const PreparedData& data_;
    const ModelConfig& cfg_;
    const SamplerSettings& set_;
    RandomStream rng_;
    ParameterState state_;
    std::size_t K_, L_, M_;
    std::vector<double> log_rel_grid_;
    long fallbacks_ = 0;

    std::vector<BlockProposal> theta_prop_, mu_prop_, gamma_prop_;
    BlockProposal m_prop_, mu_h_prop_;
    std::vector<ScalarProposal> delta_prop_, eps_prop_;
    std::array<ScalarProposal, 4> tau_prop_;
    std::array<ScalarProposal, 2> sigma_prop_;
    ScalarProposal rho_prop_, kappa_prop_, eta_prop_;
};

void Chain::make_proposals()
{
    for (std::size_t i = 0; i < M_; ++i) theta_prop_.emplace_back("theta" + std::to_string(i), 0.5, 0.3);
    for (std::size_t k = 0; k < K_; ++k) {
        mu_prop_.emplace_back("mu[" + cfg_.species[k].name + "]", 0.5, 0.3);
        delta_prop_.push_back({"delta[" + cfg_.species[k].name + "]", 0.0, {}});
    }
    for (std::size_t l = 0; l < L_; ++l) {
        gamma_prop_.emplace_back("gamma[" + cfg_.subgroups[l].id + "]", 0.5, 0.3);
        eps_prop_.push_back({"epsilon[" + cfg_.subgroups[l].id + "]", std::log(0.8), {}});
    }
    m_prop_ = BlockProposal("m", 1.0, 0.5);
    mu_h_prop_ = BlockProposal("mu_H", 1.0, 0.5);
    for (int i = 0; i < 4; ++i) {
        tau_prop_[i] = {"tau" + std::to_string(i + 1), std::log(0.5 * cfg_.hyper.tau_scale[i]), {}};
    }
    for (int i = 0; i < 2; ++i) {
        sigma_prop_[i] = {"sigma" + std::to_string(i + 1),
                          std::log(0.5 * cfg_.hyper.sigma_scale[i]), {}};
    }
    rho_prop_ = {"rho", std::log(0.3), {}};
    kappa_prop_ = {"kappa", std::log(0.3), {}};
    eta_prop_ = {"eta", std::log(0.3), {}};
}

void Chain::jitter_start()
{
    auto jitter = [&](Vec2& v, double sd) {
        v.intercept += sd * rng_.normal();
        v.log_slope += 0.5 * sd * rng_.normal();
    };
    const auto& c = cfg_.clamp;
    for (auto& th : state_.theta) jitter(th, 0.3);
    for (std::size_t l = 0; l < L_; ++l) jitter(state_.gamma[l], 0.3);
    if (!c.hyperparameters) {
        for (auto& mu : state_.mu_species) jitter(mu, 0.3);
        jitter(state_.m, 0.3);
        jitter(state_.mu_human, 0.3);
        for (double& t : state_.tau) t *= std::exp(0.2 * rng_.normal());
        for (double& s : state_.sigma) s *= std::exp(0.2 * rng_.normal());
    }
    if (!c.translation) {
        for (double& z : state_.log_delta_std) z = 0.3 * rng_.normal();
    }
    if (!c.bridging) {
        for (double& e : state_.epsilon_std) e = 0.3 * rng_.normal();
    }
    if (!c.indicators) {
        // Start at an admissible component drawn from the prior weights.
        for (std::size_t l = 0; l < L_; ++l) {
            const auto w = cfg_.subgroups[l].weights.as_vector();
            double u = rng_.uniform();
            std::size_t pick = static_cast<std::size_t>(state_.indicator[l]);
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (w[k] <= 0.0) continue;
                if (u < w[k]) {
                    pick = k;
                    break;
                }
                u -= w[k];
            }
            state_.indicator[l] = static_cast<int>(pick);
        }
    }
}

void Chain::update_theta(int iter)
{
    for (std::size_t i = 0; i < M_; ++i) {
        const auto k = data_.study_species[i];
        const double ld = log_delta(k);
        auto cond = [&](const Vec2& th) {
            return data_.animal[i].log_likelihood(th, ld) +
                   log_bvn_pdf(th, state_.mu_species[k], state_.psi());
        };
        auto& prop = theta_prop_[i];
        const Vec2 cand = prop.propose(state_.theta[i], rng_);
        const bool ok = accept(cond(cand) - cond(state_.theta[i]), rng_);
        if (ok) state_.theta[i] = cand;
        tune(prop, ok, state_.theta[i], iter);
    }
}

void Chain::update_delta(int iter)
{
    if (cfg_.clamp.translation) return;
    for (std::size_t k = 0; k < K_; ++k) {
        const auto& sp = cfg_.species[k];
        auto cond = [&](double z) {
            double s = log_normal_pdf(z, 0.0, 1.0);
            const double ld = sp.log_mean + sp.log_sd * z;
            for (auto i : data_.species_studies[k]) {
                s += data_.animal[i].log_likelihood(state_.theta[i], ld);
            }
            return s;
        };
        auto& prop = delta_prop_[k];
        const double cur = state_.log_delta_std[k];
        const double cand = prop.propose(cur, rng_);
        const bool ok = accept(cond(cand) - cond(cur), rng_);
        if (ok) state_.log_delta_std[k] = cand;
        tune(prop, ok, iter);
    }
}

void Chain::update_mu_species(int iter)
{
    if (cfg_.clamp.hyperparameters) return;
    for (std::size_t k = 0; k < K_; ++k) {
        auto cond = [&](const Vec2& mu) {
            double s = log_bvn_pdf(mu, state_.m, state_.sigma_cov());
            for (auto i : data_.species_studies[k]) {
                s += log_bvn_pdf(state_.theta[i], mu, state_.psi());
            }
            for (std::size_t l = 0; l < L_; ++l) {
                if (static_cast<std::size_t>(state_.indicator[l]) == k) {
                    s += log_bvn_pdf(state_.gamma[l], mu, state_.psi());
                }
            }
            return s;
        };
        auto& prop = mu_prop_[k];
        const Vec2 cand = prop.propose(state_.mu_species[k], rng_);
        const bool ok = accept(cond(cand) - cond(state_.mu_species[k]), rng_);
        if (ok) state_.mu_species[k] = cand;
        tune(prop, ok, state_.mu_species[k], iter);
    }
}

void Chain::update_m(int iter)
{
    if (cfg_.clamp.hyperparameters) return;
    auto cond = [&](const Vec2& m) {
        double s = location_prior(m);
        if (s == kNegInf) return s;
        for (std::size_t k = 0; k < K_; ++k) {
            s += log_bvn_pdf(state_.mu_species[k], m, state_.sigma_cov());
        }
        return s;
    };
    const Vec2 cand = m_prop_.propose(state_.m, rng_);
    const bool ok = accept(cond(cand) - cond(state_.m), rng_);
    if (ok) state_.m = cand;
    tune(m_prop_, ok, state_.m, iter);
}

template <class Terms>
void Chain::update_cov_scalar(double& value, ScalarProposal& prop, double prior_scale,
                              const Interval* corr_bounds, Terms terms, double& current_terms,
                              int iter)
{
    const double old = value;
    const double cand = prop.propose(old, rng_);
    double log_prior_ratio = 0.0;
    bool in_support = true;
    if (corr_bounds) {
        in_support = corr_bounds->contains(cand) && std::abs(cand) < 1.0;
    } else {
        in_support = cand >= cfg_.hyper.sd_floor;
        if (in_support) {
            log_prior_ratio = floored_half_normal(cand, prior_scale) -
                              floored_half_normal(old, prior_scale);
        }
    }
    bool ok = false;
    if (in_support) {
        value = cand;
        const double cand_terms = terms();
        ok = accept(cand_terms - current_terms + log_prior_ratio, rng_);
        if (ok) {
            current_terms = cand_terms;
        } else {
            value = old;
        }
    }
    tune(prop, ok, iter);
}

void Chain::update_psi(int iter)
{
    if (cfg_.clamp.hyperparameters) return;
    auto terms = [&] { return psi_terms(state_.psi()); };
    double cur = terms();
    update_cov_scalar(state_.tau[0], tau_prop_[0], cfg_.hyper.tau_scale[0], nullptr, terms, cur, iter);
    update_cov_scalar(state_.tau[1], tau_prop_[1], cfg_.hyper.tau_scale[1], nullptr, terms, cur, iter);
    update_cov_scalar(state_.rho, rho_prop_, 0.0, &cfg_.hyper.rho, terms, cur, iter);
}

void Chain::update_sigma(int iter)
{
    if (cfg_.clamp.hyperparameters) return;
    auto terms = [&] { return sigma_terms(state_.sigma_cov()); };
    double cur = terms();
    update_cov_scalar(state_.sigma[0], sigma_prop_[0], cfg_.hyper.sigma_scale[0], nullptr, terms,
                      cur, iter);
    update_cov_scalar(state_.sigma[1], sigma_prop_[1], cfg_.hyper.sigma_scale[1], nullptr, terms,
                      cur, iter);
    update_cov_scalar(state_.kappa, kappa_prop_, 0.0, &cfg_.hyper.kappa, terms, cur, iter);
}

void Chain::update_phi(int iter)
{
    if (cfg_.clamp.hyperparameters) return;
    auto terms = [&] { return phi_terms(state_.phi()); };
    double cur = terms();
    update_cov_scalar(state_.tau[2], tau_prop_[2], cfg_.hyper.tau_scale[2], nullptr, terms, cur, iter);
    update_cov_scalar(state_.tau[3], tau_prop_[3], cfg_.hyper.tau_scale[3], nullptr, terms, cur, iter);
    update_cov_scalar(state_.eta, eta_prop_, 0.0, &cfg_.hyper.eta, terms, cur, iter);
}

void Chain::update_gamma(int iter)
{
    for (std::size_t l = 0; l < L_; ++l) {
        const double le = log_epsilon(l, state_.epsilon_std[l]);
        const auto comp = component(l, static_cast<std::size_t>(state_.indicator[l]));
        auto cond = [&](const Vec2& g) {
            return data_.human[l].log_likelihood(g, le) + log_bvn_pdf(g, comp.mean, comp.cov);
        };
        auto& prop = gamma_prop_[l];
        const Vec2 cand = prop.propose(state_.gamma[l], rng_);
        const bool ok = accept(cond(cand) - cond(state_.gamma[l]), rng_);
        if (ok) state_.gamma[l] = cand;
        tune(prop, ok, state_.gamma[l], iter);
    }
}

void Chain::update_epsilon(int iter)
{
    if (cfg_.clamp.bridging) return;
    for (std::size_t l = 0; l < L_; ++l) {
        const auto bounds = cfg_.subgroups[l].epsilon.standardized_bounds();
        auto& prop = eps_prop_[l];
        const double cur = state_.epsilon_std[l];
        const double cand = prop.propose(cur, rng_);
        bool ok = false;
        if (bounds.contains(cand)) {
            auto cond = [&](double e) {
                return log_normal_pdf(e, 0.0, 1.0) +
                       data_.human[l].log_likelihood(state_.gamma[l], log_epsilon(l, e));
            };
            ok = accept(cond(cand) - cond(cur), rng_);
            if (ok) state_.epsilon_std[l] = cand;
        }
        tune(prop, ok, iter);
    }
}

void Chain::update_indicators()
{
    if (cfg_.clamp.indicators) return;
    std::vector<Component> comps(K_ + 2);
    for (std::size_t l = 0; l < L_; ++l) {
        bool anchored = false;
        for (std::size_t o = 0; o < L_; ++o) {
            if (o != l && static_cast<std::size_t>(state_.indicator[o]) == K_) anchored = true;
        }
        if (!anchored && cfg_.subgroups[l].weights.human() > 0.0) {
            joint_human_move(l);
            continue;
        }
        for (std::size_t c = 0; c < K_ + 2; ++c) comps[c] = component(l, c);
        const auto draw = sample_mixture_indicator_detailed(state_.gamma[l], comps,
                                                            cfg_.subgroups[l].weights,
                                                            rng_.uniform());
        if (draw.fell_back) ++fallbacks_;
        state_.indicator[l] = static_cast<int>(draw.index);
    }
}

// With no other subgroup on the human component, mu_H given the rest is its
// prior unless subgroup l joins it. Independence MH on (indicator_l, mu_H):
// mu_H is drawn near gamma_l when proposing the human component and from its
// prior otherwise.
void Chain::joint_human_move(std::size_t l)
{
    const auto& h = cfg_.hyper;
    const auto& w = cfg_.subgroups[l].weights;
    const Vec2& g = state_.gamma[l];
    const CovTriple phi = state_.phi();
    const std::size_t C = K_ + 2;

    // log of the prior mass inside the truncation box
    auto log_mass = [](const Interval& b, const NormalPrior& p) {
        const double lo = (b.lower - p.mean) / (p.sd * std::numbers::sqrt2);
        const double hi = (b.upper - p.mean) / (p.sd * std::numbers::sqrt2);
        return std::log(0.5 * (std::erfc(lo) - std::erfc(hi)));
    };
    const double log_z = log_mass(h.intercept_bounds, h.location1) +
                         log_mass(h.log_slope_bounds, h.location2);
    const CovTriple marginal{std::hypot(h.location1.sd, phi.sd1), std::hypot(h.location2.sd, phi.sd2),
                             phi.corr * phi.sd1 * phi.sd2 /
                                 (std::hypot(h.location1.sd, phi.sd1) *
                                  std::hypot(h.location2.sd, phi.sd2))};

    std::vector<double> log_pi(C, kNegInf);
    for (std::size_t c = 0; c < C; ++c) {
        if (!(w[c] > 0.0)) continue;
        log_pi[c] = std::log(w[c]) +
                    (c == K_ ? log_bvn_pdf(g, {h.location1.mean, h.location2.mean}, marginal)
                             : log_bvn_pdf(g, component(l, c).mean, component(l, c).cov));
    }
    const double top = *std::max_element(log_pi.begin(), log_pi.end());
    if (top == kNegInf) return;
    std::vector<double> pi(C);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        pi[c] = log_pi[c] == kNegInf ? 0.0 : std::exp(log_pi[c] - top);
        total += pi[c];
    }
    for (double& p : pi) p /= total;

    // log importance weight of (c, mu) under target / proposal
    auto log_weight = [&](std::size_t c, const Vec2& mu) {
        if (!(pi[c] > 0.0)) return kNegInf;
        const double base = std::log(w[c]) - std::log(pi[c]);
        if (c != K_) {
            const auto comp = component(l, c);
            return base + log_bvn_pdf(g, comp.mean, comp.cov) + log_z;
        }
        const double prior = location_prior(mu);
        if (prior == kNegInf) return kNegInf;
        return base + log_bvn_pdf(g, mu, phi) + prior - log_bvn_pdf(mu, g, phi);
    };

    const double u = rng_.uniform();
    std::size_t cand = C - 1;
    double cum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        cum += pi[c];
        if (pi[c] > 0.0 && u < cum) {
            cand = c;
            break;
        }
    }
    while (!(pi[cand] > 0.0)) --cand;

    Vec2 mu;
    if (cand == K_) {
        const double z1 = rng_.normal();
        const double z2 = rng_.normal();
        mu.intercept = g.intercept + phi.sd1 * z1;
        mu.log_slope = g.log_slope + phi.sd2 * (phi.corr * z1 + std::sqrt(1.0 - phi.corr * phi.corr) * z2);
    } else {
        do {
            mu.intercept = h.location1.mean + h.location1.sd * rng_.normal();
        } while (!h.intercept_bounds.contains(mu.intercept));
        do {
            mu.log_slope = h.location2.mean + h.location2.sd * rng_.normal();
        } while (!h.log_slope_bounds.contains(mu.log_slope));
    }

    const auto cur = static_cast<std::size_t>(state_.indicator[l]);
    const double log_ratio = log_weight(cand, mu) - log_weight(cur, state_.mu_human);
    if (accept(log_ratio, rng_)) {
        state_.indicator[l] = static_cast<int>(cand);
        state_.mu_human = mu;
    }
}

void Chain::update_mu_human(int iter)
{
    if (cfg_.clamp.hyperparameters) return;
    auto cond = [&](const Vec2& mu) {
        double s = location_prior(mu);
        if (s == kNegInf) return s;
        for (std::size_t l = 0; l < L_; ++l) {
            if (static_cast<std::size_t>(state_.indicator[l]) == K_) {
                s += log_bvn_pdf(state_.gamma[l], mu, state_.phi());
            }
        }
        return s;
    };
    const Vec2 cand = mu_h_prop_.propose(state_.mu_human, rng_);
    const bool ok = accept(cond(cand) - cond(state_.mu_human), rng_);
    if (ok) state_.mu_human = cand;
    tune(mu_h_prop_, ok, state_.mu_human, iter);
}

void Chain::sweep(int iter)
{
    update_theta(iter);
    update_delta(iter);
    update_mu_species(iter);
    update_m(iter);
    update_psi(iter);
    update_sigma(iter);
    update_gamma(iter);
    update_epsilon(iter);
    update_indicators();
    update_mu_human(iter);
    update_phi(iter);
}

void Chain::setup_output(ChainOutput& out, std::size_t capacity)
{
    const std::size_t J = log_rel_grid_.size();
    out.tox.assign(L_, std::vector<std::vector<double>>(J));
    out.tox_stats.assign(L_, std::vector<RunningStats>(J));
    out.gamma1.assign(L_, {});
    out.gamma2.assign(L_, {});
    out.eps.assign(L_, {});
    out.component_counts.assign(L_, std::vector<long>(K_ + 2, 0));
    out.study_tox.assign(M_, std::vector<std::vector<double>>(J));
    for (auto& per_l : out.tox) {
        for (auto& v : per_l) v.reserve(capacity);
    }

    if (!set_.compute_diagnostics) return;
    auto& t = out.traces;
    for (std::size_t l = 0; l < L_; ++l) {
        const auto& id = cfg_.subgroups[l].id;
        t.add("gamma1[" + id + "]");
        t.add("gamma2[" + id + "]");
        if (!cfg_.clamp.bridging) t.add("epsilon[" + id + "]");
        for (std::size_t j = 0; j < J; ++j) {
            t.add("p[" + id + "][" + std::to_string(j) + "]");
        }
    }
    for (std::size_t i = 0; i < M_; ++i) {
        t.add("theta1[" + std::to_string(i) + "]");
        t.add("theta2[" + std::to_string(i) + "]");
    }
    if (!cfg_.clamp.translation) {
        for (std::size_t k = 0; k < K_; ++k) t.add("delta[" + cfg_.species[k].name + "]");
    }
    if (!cfg_.clamp.hyperparameters) {
        for (std::size_t k = 0; k < K_; ++k) {
            t.add("mu1[" + cfg_.species[k].name + "]");
            t.add("mu2[" + cfg_.species[k].name + "]");
        }
        for (const char* n : {"m1", "m2", "mu_H1", "mu_H2", "tau1", "tau2", "tau3", "tau4",
                              "sigma1", "sigma2", "rho", "kappa", "eta"}) {
            t.add(n);
        }
    }
    for (auto& v : t.values) v.reserve(capacity);
}

void Chain::record(ChainOutput& out, bool store)
{
    const std::size_t J = log_rel_grid_.size();
    std::size_t tr = 0;
    auto trace = [&](double v) {
        if (store && set_.compute_diagnostics) out.traces.values[tr++].push_back(v);
    };
    for (std::size_t l = 0; l < L_; ++l) {
        const Vec2& g = state_.gamma[l];
        const double le = log_epsilon(l, state_.epsilon_std[l]);
        const double slope = std::exp(g.log_slope);
        ++out.component_counts[l][static_cast<std::size_t>(state_.indicator[l])];
        trace(g.intercept);
        trace(g.log_slope);
        if (!cfg_.clamp.bridging) trace(std::exp(le));
        for (std::size_t j = 0; j < J; ++j) {
            const double p = inv_logit(g.intercept + slope * (le + log_rel_grid_[j]));
            out.tox_stats[l][j].push(p);
            if (store) out.tox[l][j].push_back(p);
            trace(p);
        }
        if (store) {
            out.gamma1[l].push_back(g.intercept);
            out.gamma2[l].push_back(g.log_slope);
            out.eps[l].push_back(std::exp(le));
        }
    }
    for (std::size_t i = 0; i < M_; ++i) {
        const Vec2& th = state_.theta[i];
        if (store) {
            const double slope = std::exp(th.log_slope);
            for (std::size_t j = 0; j < J; ++j) {
                out.study_tox[i][j].push_back(inv_logit(th.intercept + slope * log_rel_grid_[j]));
            }
        }
        trace(th.intercept);
        trace(th.log_slope);
    }
    if (!store || !set_.compute_diagnostics) return;
    if (!cfg_.clamp.translation) {
        for (std::size_t k = 0; k < K_; ++k) trace(std::exp(log_delta(k)));
    }
    if (!cfg_.clamp.hyperparameters) {
        for (std::size_t k = 0; k < K_; ++k) {
            trace(state_.mu_species[k].intercept);
            trace(state_.mu_species[k].log_slope);
        }
        for (double v : {state_.m.intercept, state_.m.log_slope, state_.mu_human.intercept,
                         state_.mu_human.log_slope, state_.tau[0], state_.tau[1], state_.tau[2],
                         state_.tau[3], state_.sigma[0], state_.sigma[1], state_.rho,
                         state_.kappa, state_.eta}) {
            trace(v);
        }
    }
}

ChainOutput Chain::run()
{
    const int retained = set_.retained_per_chain();
    const std::size_t cap_per_chain =
        std::max<std::size_t>(1, set_.max_stored_draws / static_cast<std::size_t>(set_.n_chains));
    const int stride = static_cast<int>(
        (static_cast<std::size_t>(retained) + cap_per_chain - 1) / cap_per_chain);

    ChainOutput out;
    setup_output(out, static_cast<std::size_t>((retained + stride - 1) / stride));
    int kept = 0;
    for (int iter = 0; iter < set_.n_iterations; ++iter) {
        sweep(iter);
        if (iter < set_.n_burnin || (iter - set_.n_burnin) % set_.thinning != 0) continue;
        const bool store = kept % stride == 0;
        record(out, store);
        if (store) ++out.stored;
        ++kept;
    }
    out.fallbacks = fallbacks_;

    auto add = [&](const std::string& name, const AcceptCounter& c) {
        if (c.proposed > 0) out.acceptance.push_back({name, c.rate()});
    };
    for (const auto& p : theta_prop_) add(p.name, p.post_burnin);
    for (const auto& p : delta_prop_) add(p.name, p.post_burnin);
    for (const auto& p : mu_prop_) add(p.name, p.post_burnin);
    add(m_prop_.name, m_prop_.post_burnin);
    for (const auto& p : tau_prop_) add(p.name, p.post_burnin);
    for (const auto& p : sigma_prop_) add(p.name, p.post_burnin);
    add(rho_prop_.name, rho_prop_.post_burnin);
    add(kappa_prop_.name, kappa_prop_.post_burnin);
    add(eta_prop_.name, eta_prop_.post_burnin);
    for (const auto& p : gamma_prop_) add(p.name, p.post_burnin);
    for (const auto& p : eps_prop_) add(p.name, p.post_burnin);
    add(mu_h_prop_.name, mu_h_prop_.post_burnin);
    return out;
}

template <class T>
void append(std::vector<T>& dst, const std::vector<T>& src)
{
    dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

void SamplerSettings::validate() const
{
    if (n_chains < 1) throw ConfigError("sampler: n_chains must be positive");
    if (n_iterations < 1) throw ConfigError("sampler: n_iterations must be positive");
    if (n_burnin < 0 || n_burnin >= n_iterations) {
        throw ConfigError("sampler: n_burnin must be in [0, n_iterations)");
    }
    if (thinning < 1) throw ConfigError("sampler: thinning must be positive");
    if (!(target_acceptance_block > 0.0 && target_acceptance_block < 1.0) ||
        !(target_acceptance_scalar > 0.0 && target_acceptance_scalar < 1.0)) {
        throw ConfigError("sampler: target acceptance rates must be in (0, 1)");
    }
    if (max_stored_draws < 1) throw ConfigError("sampler: max_stored_draws must be positive");
    if (adaptation_start < 0) throw ConfigError("sampler: adaptation_start must be >= 0");
}

SamplerSettings SamplerSettings::full()
{
    return SamplerSettings{};
}

SamplerSettings SamplerSettings::reduced()
{
    SamplerSettings s;
    s.n_iterations = 6000;
    s.n_burnin = 2000;
    return s;
}

const SubgroupPosterior& PosteriorResult::subgroup(std::string_view id) const
{
    for (const auto& s : subgroups) {
        if (s.subgroup_id == id) return s;
    }
    throw ConfigError("posterior has no subgroup " + std::string(id));
}

std::vector<double> mixture_probabilities(const Vec2& gamma, std::span<const Component> components,
                                          const MixtureWeights& weights, bool* fell_back)
{
    if (components.size() != weights.size()) {
        throw ConfigError("mixture: component count does not match weight vector");
    }
    const std::size_t C = components.size();
    std::vector<double> logw(C, kNegInf);
    double top = kNegInf;
    for (std::size_t c = 0; c < C; ++c) {
        if (weights[c] <= 0.0) continue;
        logw[c] = std::log(weights[c]) + log_bvn_pdf(gamma, components[c].mean, components[c].cov);
        if (std::isnan(logw[c])) logw[c] = kNegInf;
        top = std::max(top, logw[c]);
    }
    std::vector<double> prob(C, 0.0);
    if (!std::isfinite(top)) {
        if (fell_back) *fell_back = true;
        for (std::size_t c = 0; c < C; ++c) prob[c] = weights[c];
        return prob;
    }
    if (fell_back) *fell_back = false;
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        prob[c] = logw[c] == kNegInf ? 0.0 : std::exp(logw[c] - top);
        total += prob[c];
    }
    for (double& p : prob) p /= total;
    return prob;
}

IndicatorDraw sample_mixture_indicator_detailed(const Vec2& gamma,
                                                std::span<const Component> components,
                                                const MixtureWeights& weights, double uniform_draw)
{
    IndicatorDraw out;
    const auto prob = mixture_probabilities(gamma, components, weights, &out.fell_back);
    double cum = 0.0;
    std::optional<std::size_t> last_positive;
    for (std::size_t c = 0; c < prob.size(); ++c) {
        if (prob[c] <= 0.0) continue;
        last_positive = c;
        cum += prob[c];
        if (uniform_draw < cum) {
            out.index = c;
            return out;
        }
    }
    // Rounding left u above the final cumulative sum.
    out.index = last_positive.value_or(0);
    return out;
}

std::size_t sample_mixture_indicator(const Vec2& gamma, std::span<const Component> components,
                                     const MixtureWeights& weights, double uniform_draw)
{
    return sample_mixture_indicator_detailed(gamma, components, weights, uniform_draw).index;
}

double quantile_sorted(std::span<const double> sorted, double q)
{
    if (sorted.empty()) throw std::invalid_argument("quantile of empty draw set");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

DrawSummary summarize_draws(std::span<const double> draws)
{
    std::vector<double> s(draws.begin(), draws.end());
    std::sort(s.begin(), s.end());
    RunningStats rs;
    for (double x : draws) rs.push(x);
    return {rs.mean, rs.sd(), quantile_sorted(s, 0.5), quantile_sorted(s, 0.025),
            quantile_sorted(s, 0.975)};
}

PosteriorResult run_posterior(std::span<const AnimalStudy> animal_data,
                              std::span<const HumanTrialState> human_data,
                              const ModelConfig& config, const SamplerSettings& settings)
{
    config.validate();
    settings.validate();
    const auto data = PreparedData::build(animal_data, human_data, config);
    for (const auto& trial : human_data) {
        if (trial.grid.doses() != config.dose_grid) {
            throw ConfigError("trial " + trial.subgroup_id + ": dose grid differs from the config");
        }
    }

    std::vector<ChainOutput> outs(static_cast<std::size_t>(settings.n_chains));
    auto run_chain = [&](int c) {
        Chain chain(data, config, settings, c);
        outs[static_cast<std::size_t>(c)] = chain.run();
    };
    if (settings.parallel_chains && settings.n_chains > 1) {
        std::vector<std::jthread> workers;
        for (int c = 0; c < settings.n_chains; ++c) workers.emplace_back(run_chain, c);
    } else {
        for (int c = 0; c < settings.n_chains; ++c) run_chain(c);
    }

    const std::size_t J = config.dose_grid.size();
    const std::size_t L = config.subgroups.size();
    PosteriorResult res;
    res.dose_grid = config.dose_grid;
    res.reference_dose = config.reference_dose;
    res.component_labels = config.component_labels();
    res.n_chains = settings.n_chains;
    res.retained_per_chain = settings.retained_per_chain();
    res.stored_per_chain = outs.front().stored;

    for (std::size_t l = 0; l < L; ++l) {
        SubgroupPosterior sp;
        sp.subgroup_id = config.subgroups[l].id;
        sp.tox.resize(J);
        std::vector<long> counts(config.n_components(), 0);
        std::vector<RunningStats> stats(J);
        for (const auto& o : outs) {
            for (std::size_t j = 0; j < J; ++j) {
                append(sp.tox[j], o.tox[l][j]);
                stats[j].merge(o.tox_stats[l][j]);
            }
            append(sp.gamma_intercept, o.gamma1[l]);
            append(sp.gamma_log_slope, o.gamma2[l]);
            append(sp.epsilon, o.eps[l]);
            for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += o.component_counts[l][c];
        }
        for (const auto& s : stats) {
            sp.tox_mean.push_back(s.mean);
            sp.tox_sd.push_back(s.sd());
        }
        const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), 0L));
        for (long c : counts) sp.component_frequency.push_back(static_cast<double>(c) / total);
        res.subgroups.push_back(std::move(sp));
    }
    for (std::size_t i = 0; i < animal_data.size(); ++i) {
        StudyPosterior st;
        st.study_id = animal_data[i].study_id;
        st.species = animal_data[i].species;
        st.tox.resize(J);
        for (const auto& o : outs) {
            for (std::size_t j = 0; j < J; ++j) append(st.tox[j], o.study_tox[i][j]);
        }
        res.studies.push_back(std::move(st));
    }

    // Acceptance rates averaged across chains, in the order chain 0 reported them.
    for (std::size_t b = 0; b < outs.front().acceptance.size(); ++b) {
        double sum = 0.0;
        for (const auto& o : outs) sum += o.acceptance[b].rate;
        res.acceptance.push_back({outs.front().acceptance[b].block, sum / outs.size()});
    }
    for (const auto& o : outs) res.indicator_fallbacks += o.fallbacks;

    if (settings.compute_diagnostics && res.stored_per_chain >= 4) {
        const auto& names = outs.front().traces.names;
        for (std::size_t p = 0; p < names.size(); ++p) {
            std::vector<std::vector<double>> chains;
            for (const auto& o : outs) chains.push_back(o.traces.values[p]);
            res.diagnostics.push_back(diagnose(names[p], chains));
        }
    }
    return res;
}

PriorPredictive prior_predictive(std::span<const AnimalStudy> animal_data,
                                 const ModelConfig& config, const SamplerSettings& settings)
{
    std::vector<HumanTrialState> empty;
    for (const auto& sg : config.subgroups) {
        HumanTrialState t;
        t.subgroup_id = sg.id;
        t.grid = config.grid();
        empty.push_back(std::move(t));
    }
    PriorPredictive out;
    out.posterior = run_posterior(animal_data, empty, config, settings);
    for (const auto& sp : out.posterior.subgroups) {
        SubgroupPredictive row_set;
        row_set.subgroup_id = sp.subgroup_id;
        for (std::size_t j = 0; j < config.dose_grid.size(); ++j) {
            const auto s = summarize_draws(sp.tox[j]);
            row_set.rows.push_back(
                {config.dose_grid[j], sp.tox_mean[j], sp.tox_sd[j], s.median, s.q025, s.q975});
        }
        out.subgroups.push_back(std::move(row_set));
    }
    return out;
}

}  // namespace exnex
