#include "exnex/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "exnex/error.hpp"

namespace exnex {

namespace fs = std::filesystem;

namespace {

// Path-tracking view into a JSON document; every error names the JSON
// pointer of the offending value.
template <class Error>
class Node {
public:
    Node(const json& j, std::string what, std::string path = "")
        : j_(&j), what_(std::move(what)), path_(std::move(path))
    {
    }

    [[noreturn]] void fail(const std::string& msg) const
    {
        throw Error(what_ + ": " + (path_.empty() ? "/" : path_) + ": " + msg);
    }

    const json& raw() const noexcept { return *j_; }
    const std::string& path() const noexcept { return path_; }

    bool has(const std::string& key) const
    {
        return j_->is_object() && j_->contains(key) && !(*j_)[key].is_null();
    }

    Node at(const std::string& key) const
    {
        if (!j_->is_object()) fail("expected an object");
        if (!j_->contains(key)) Node(*j_, what_, path_ + "/" + key).fail("missing field");
        return Node((*j_)[key], what_, path_ + "/" + key);
    }

    Node at(std::size_t i) const { return Node((*j_)[i], what_, path_ + "/" + std::to_string(i)); }

    std::size_t size() const
    {
        if (!j_->is_array()) fail("expected an array");
        return j_->size();
    }

    double number() const
    {
        if (!j_->is_number()) fail("expected a number");
        const double v = j_->get<double>();
        if (!std::isfinite(v)) fail("expected a finite number");
        return v;
    }

    long long integer() const
    {
        if (!j_->is_number_integer()) fail("expected an integer");
        return j_->get<long long>();
    }

    int int32() const
    {
        const long long v = integer();
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
            fail("integer out of range");
        }
        return static_cast<int>(v);
    }

    std::uint64_t uint64() const
    {
        if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<long long>() >= 0)) {
            fail("expected a non-negative integer");
        }
        return j_->get<std::uint64_t>();
    }

    bool boolean() const
    {
        if (!j_->is_boolean()) fail("expected true or false");
        return j_->get<bool>();
    }

    std::string str() const
    {
        if (!j_->is_string()) fail("expected a string");
        return j_->get<std::string>();
    }

    std::vector<double> numbers() const
    {
        std::vector<double> v;
        for (std::size_t i = 0; i < size(); ++i) v.push_back(at(i).number());
        return v;
    }

    double number_or(const std::string& key, double fallback) const
    {
        return has(key) ? at(key).number() : fallback;
    }
    int int_or(const std::string& key, int fallback) const
    {
        return has(key) ? at(key).int32() : fallback;
    }
    bool bool_or(const std::string& key, bool fallback) const
    {
        return has(key) ? at(key).boolean() : fallback;
    }

private:
    const json* j_;
    std::string what_;
    std::string path_;
};

using ConfigNode = Node<ConfigError>;
using DataNode = Node<DataError>;

template <class E>
void check_version_impl(const json& j, std::string_view what)
{
    if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_string()) {
        throw E(std::string(what) + ": missing schema_version");
    }
    const auto v = j["schema_version"].get<std::string>();
    int major = -1;
    const auto dot = v.find('.');
    const auto head = v.substr(0, dot);
    auto [p, ec] = std::from_chars(head.data(), head.data() + head.size(), major);
    if (ec != std::errc{} || p != head.data() + head.size()) {
        throw E(std::string(what) + ": malformed schema_version '" + v + "'");
    }
    if (major != kSchemaMajor) {
        throw E(std::string(what) + ": unsupported schema major version " + std::to_string(major) +
                " (supported: " + std::to_string(kSchemaMajor) + ")");
    }
}

json interval_json(const Interval& iv) { return json::array({iv.lower, iv.upper}); }

Interval interval_from(const ConfigNode& n)
{
    if (n.size() != 2) n.fail("expected [lower, upper]");
    return {n.at(0).number(), n.at(1).number()};
}

json weights_json(const MixtureWeights& w, const std::vector<SpeciesPrior>& species)
{
    json sp = json::object();
    for (std::size_t k = 0; k < species.size(); ++k) sp[species[k].name] = w[k];
    return {{"species", sp}, {"human", w.human()}, {"robust", w.robust()}};
}

MixtureWeights weights_from(const ConfigNode& n, const std::vector<SpeciesPrior>& species,
                            const std::string& owner)
{
    std::vector<double> ws(species.size(), 0.0);
    if (n.has("species")) {
        const auto sn = n.at("species");
        if (!sn.raw().is_object()) sn.fail("expected an object keyed by species name");
        for (const auto& [name, _] : sn.raw().items()) {
            std::size_t k = 0;
            while (k < species.size() && species[k].name != name) ++k;
            if (k == species.size()) sn.at(name).fail("species " + name + " is not configured");
            ws[k] = sn.at(name).number();
        }
    }
    const double human = n.number_or("human", 0.0);
    const double robust = n.number_or("robust", 0.0);
    try {
        return MixtureWeights(ws, human, robust);
    } catch (const ConfigError& e) {
        n.fail(owner + ": " + e.what());
    }
}

json sampler_json(const SamplerSettings& s)
{
    return {{"n_chains", s.n_chains},
            {"n_iterations", s.n_iterations},
            {"n_burnin", s.n_burnin},
            {"thinning", s.thinning},
            {"seed", s.seed},
            {"adaptation_start", s.adaptation_start},
            {"target_acceptance_block", s.target_acceptance_block},
            {"target_acceptance_scalar", s.target_acceptance_scalar},
            {"max_stored_draws", s.max_stored_draws},
            {"parallel_chains", s.parallel_chains},
            {"compute_diagnostics", s.compute_diagnostics}};
}

SamplerSettings sampler_from(const ConfigNode& n, SamplerSettings s)
{
    s.n_chains = n.int_or("n_chains", s.n_chains);
    s.n_iterations = n.int_or("n_iterations", s.n_iterations);
    s.n_burnin = n.int_or("n_burnin", s.n_burnin);
    s.thinning = n.int_or("thinning", s.thinning);
    if (n.has("seed")) s.seed = n.at("seed").uint64();
    s.adaptation_start = n.int_or("adaptation_start", s.adaptation_start);
    s.target_acceptance_block = n.number_or("target_acceptance_block", s.target_acceptance_block);
    s.target_acceptance_scalar =
        n.number_or("target_acceptance_scalar", s.target_acceptance_scalar);
    if (n.has("max_stored_draws")) {
        s.max_stored_draws = static_cast<std::size_t>(n.at("max_stored_draws").uint64());
    }
    s.parallel_chains = n.bool_or("parallel_chains", s.parallel_chains);
    s.compute_diagnostics = n.bool_or("compute_diagnostics", s.compute_diagnostics);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        n.fail(e.what());
    }
    return s;
}

json thresholds_json(const IntervalThresholds& t)
{
    return {{"underdose_cut", t.underdose_cut},
            {"overdose_cut", t.overdose_cut},
            {"target", t.target},
            {"feasibility_bound", t.feasibility_bound},
            {"start_confidence", t.start_confidence}};
}

std::string fmt_double(double x)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, p);
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <class T>
bool parse_number(const std::string& s, T& out)
{
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

json summary_json(const DrawSummary& s)
{
    return {{"mean", report_round(s.mean)},
            {"sd", report_round(s.sd)},
            {"median", report_round(s.median)},
            {"q025", report_round(s.q025)},
            {"q975", report_round(s.q975)}};
}

json trial_record_json(const TrialRecord& t, std::span<const double> grid)
{
    json cohorts = json::array();
    for (const auto& c : t.cohorts) {
        cohorts.push_back({{"dose_index", c.dose_index}, {"n_treated", c.n_treated}, {"n_dlt", c.n_dlt}});
    }
    json decisions = json::array();
    for (const auto& d : t.decisions) {
        json dj = decision_to_json(d, grid);
        // Full precision so the record round-trips.
        json rat = json::array();
        for (const auto& p : d.rationale) rat.push_back({p.under, p.target, p.over});
        dj["rationale"] = rat;
        decisions.push_back(dj);
    }
    return {{"subgroup_id", t.subgroup_id},
            {"start_dose", t.start_dose},
            {"cohorts", cohorts},
            {"decisions", decisions},
            {"stopped_early", t.stopped_early},
            {"completed", t.completed},
            {"mtd", t.mtd ? json(*t.mtd) : json(nullptr)},
            {"allocation", t.allocation},
            {"dlts", t.dlts},
            {"epsilon_mean", t.epsilon_mean},
            {"component_frequency", t.component_frequency}};
}

TrialRecord trial_record_from(const DataNode& n)
{
    TrialRecord t;
    t.subgroup_id = n.at("subgroup_id").str();
    t.start_dose = n.at("start_dose").int32();
    const auto cs = n.at("cohorts");
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const auto c = cs.at(i);
        t.cohorts.push_back({c.at("dose_index").int32(), c.at("n_treated").int32(),
                             c.at("n_dlt").int32()});
    }
    const auto ds = n.at("decisions");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto d = ds.at(i);
        DoseDecision dec;
        try {
            dec.kind = decision_kind_from_string(d.at("kind").str());
        } catch (const ConfigError& e) {
            d.fail(e.what());
        }
        if (d.has("dose_index")) dec.dose_index = d.at("dose_index").int32();
        const auto r = d.at("rationale");
        for (std::size_t j = 0; j < r.size(); ++j) {
            const auto v = r.at(j);
            if (v.size() != 3) v.fail("expected [under, target, over]");
            dec.rationale.push_back({v.at(0).number(), v.at(1).number(), v.at(2).number()});
        }
        t.decisions.push_back(std::move(dec));
    }
    t.stopped_early = n.at("stopped_early").boolean();
    t.completed = n.at("completed").boolean();
    if (n.has("mtd")) t.mtd = n.at("mtd").int32();
    const auto al = n.at("allocation");
    for (std::size_t j = 0; j < al.size(); ++j) t.allocation.push_back(al.at(j).int32());
    const auto dl = n.at("dlts");
    for (std::size_t j = 0; j < dl.size(); ++j) t.dlts.push_back(dl.at(j).int32());
    t.epsilon_mean = n.at("epsilon_mean").number();
    t.component_frequency = Node<ConfigError>(n.at("component_frequency").raw(), "record").numbers();
    return t;
}

}  // namespace

void check_schema_version(const json& j, std::string_view what)
{
    check_version_impl<ConfigError>(j, what);
}

FullConfig default_config()
{
    FullConfig c;
    c.model.species = {{"Rat", -1.820, 0.323}, {"Monkey", -1.127, 0.273}};
    SubgroupConfig t1;
    t1.id = "T1";
    t1.weights = MixtureWeights({0.2, 0.6}, 0.0, 0.2);
    SubgroupConfig t2;
    t2.id = "T2";
    t2.weights = MixtureWeights({0.1, 0.5}, 0.2, 0.2);
    c.model.subgroups = {t1, t2};
    c.simulation.joint_t1_weights = t2.weights;
    return c;
}

json config_to_json(const FullConfig& cfg)
{
    const auto& m = cfg.model;
    const auto& h = m.hyper;
    json species = json::array();
    for (const auto& s : m.species) {
        species.push_back({{"name", s.name}, {"log_mean", s.log_mean}, {"log_sd", s.log_sd}});
    }
    json subgroups = json::array();
    for (const auto& s : m.subgroups) {
        subgroups.push_back(
            {{"id", s.id},
             {"weights", weights_json(s.weights, m.species)},
             {"nex_mean", json::array({s.nex_mean.intercept, s.nex_mean.log_slope})},
             {"nex_sd", json::array({s.nex_cov.sd1, s.nex_cov.sd2})},
             {"nex_corr", s.nex_cov.corr},
             {"epsilon", {{"sd", s.epsilon.sd}, {"upper", s.epsilon.upper}}}});
    }
    const auto& sim = cfg.simulation;
    return {
        {"schema_version", kSchemaVersion},
        {"reference_dose", m.reference_dose},
        {"dose_grid", m.dose_grid},
        {"hyperpriors",
         {{"location1", {{"mean", h.location1.mean}, {"sd", h.location1.sd}}},
          {"location2", {{"mean", h.location2.mean}, {"sd", h.location2.sd}}},
          {"tau_scale", h.tau_scale},
          {"sigma_scale", h.sigma_scale},
          {"rho", interval_json(h.rho)},
          {"kappa", interval_json(h.kappa)},
          {"eta", interval_json(h.eta)},
          {"intercept_bounds", interval_json(h.intercept_bounds)},
          {"log_slope_bounds", interval_json(h.log_slope_bounds)},
          {"sd_floor", h.sd_floor}}},
        {"species", species},
        {"subgroups", subgroups},
        {"thresholds", thresholds_json(cfg.thresholds)},
        {"no_skipping", cfg.no_skipping},
        {"sampler", sampler_json(cfg.sampler)},
        {"simulation",
         {{"sampler", sampler_json(sim.sampler)},
          {"cohort_size", sim.cohort_size},
          {"max_sample_size", sim.max_sample_size},
          {"robust_b", sim.robust_b},
          {"joint_t1_weights",
           sim.joint_t1_weights ? weights_json(*sim.joint_t1_weights, m.species) : json(nullptr)},
          {"threads", sim.threads}}},
    };
}

FullConfig config_from_json(const json& j)
{
    check_schema_version(j, "config");
    const ConfigNode root(j, "config");
    FullConfig c = default_config();
    ModelConfig& m = c.model;
    m.reference_dose = root.number_or("reference_dose", m.reference_dose);
    if (root.has("dose_grid")) m.dose_grid = root.at("dose_grid").numbers();

    if (root.has("hyperpriors")) {
        const auto hn = root.at("hyperpriors");
        auto& h = m.hyper;
        auto normal = [&](const char* key, NormalPrior& p) {
            if (!hn.has(key)) return;
            const auto n = hn.at(key);
            p.mean = n.number_or("mean", p.mean);
            p.sd = n.number_or("sd", p.sd);
        };
        normal("location1", h.location1);
        normal("location2", h.location2);
        if (hn.has("tau_scale")) {
            const auto v = hn.at("tau_scale").numbers();
            if (v.size() != 4) hn.at("tau_scale").fail("expected 4 values");
            std::copy(v.begin(), v.end(), h.tau_scale.begin());
        }
        if (hn.has("sigma_scale")) {
            const auto v = hn.at("sigma_scale").numbers();
            if (v.size() != 2) hn.at("sigma_scale").fail("expected 2 values");
            std::copy(v.begin(), v.end(), h.sigma_scale.begin());
        }
        for (auto [key, iv] : {std::pair{"rho", &h.rho}, std::pair{"kappa", &h.kappa},
                               std::pair{"eta", &h.eta},
                               std::pair{"intercept_bounds", &h.intercept_bounds},
                               std::pair{"log_slope_bounds", &h.log_slope_bounds}}) {
            if (hn.has(key)) *iv = interval_from(hn.at(key));
        }
        h.sd_floor = hn.number_or("sd_floor", h.sd_floor);
        try {
            h.validate();
        } catch (const ConfigError& e) {
            hn.fail(e.what());
        }
    }

    if (root.has("species")) {
        const auto sn = root.at("species");
        m.species.clear();
        for (std::size_t k = 0; k < sn.size(); ++k) {
            const auto n = sn.at(k);
            m.species.push_back({n.at("name").str(), n.at("log_mean").number(), n.at("log_sd").number()});
        }
    }

    if (root.has("subgroups")) {
        const auto sn = root.at("subgroups");
        m.subgroups.clear();
        for (std::size_t l = 0; l < sn.size(); ++l) {
            const auto n = sn.at(l);
            SubgroupConfig s;
            s.id = n.at("id").str();
            s.weights = weights_from(n.at("weights"), m.species, "subgroup " + s.id);
            if (n.has("nex_mean")) {
                const auto v = n.at("nex_mean").numbers();
                if (v.size() != 2) n.at("nex_mean").fail("expected 2 values");
                s.nex_mean = {v[0], v[1]};
            }
            if (n.has("nex_sd")) {
                const auto v = n.at("nex_sd").numbers();
                if (v.size() != 2) n.at("nex_sd").fail("expected 2 values");
                s.nex_cov.sd1 = v[0];
                s.nex_cov.sd2 = v[1];
            }
            s.nex_cov.corr = n.number_or("nex_corr", s.nex_cov.corr);
            if (n.has("epsilon")) {
                const auto e = n.at("epsilon");
                s.epsilon.sd = e.number_or("sd", s.epsilon.sd);
                s.epsilon.upper = e.number_or("upper", s.epsilon.upper);
            }
            m.subgroups.push_back(std::move(s));
        }
    } else if (root.has("species")) {
        // Default subgroups are defined against the default species.
        if (m.species != default_config().model.species) {
            root.fail("subgroups must be given when species differ from the defaults");
        }
    }

    if (root.has("thresholds")) {
        const auto t = root.at("thresholds");
        auto& th = c.thresholds;
        th.underdose_cut = t.number_or("underdose_cut", th.underdose_cut);
        th.overdose_cut = t.number_or("overdose_cut", th.overdose_cut);
        th.target = t.number_or("target", th.target);
        th.feasibility_bound = t.number_or("feasibility_bound", th.feasibility_bound);
        th.start_confidence = t.number_or("start_confidence", th.start_confidence);
        try {
            th.validate();
        } catch (const ConfigError& e) {
            t.fail(e.what());
        }
    }
    c.no_skipping = root.bool_or("no_skipping", c.no_skipping);
    if (root.has("sampler")) c.sampler = sampler_from(root.at("sampler"), c.sampler);

    auto& sim = c.simulation;
    sim.thresholds = c.thresholds;
    sim.no_skipping = c.no_skipping;
    if (root.has("simulation")) {
        const auto sn = root.at("simulation");
        if (sn.has("sampler")) sim.sampler = sampler_from(sn.at("sampler"), sim.sampler);
        sim.cohort_size = sn.int_or("cohort_size", sim.cohort_size);
        sim.max_sample_size = sn.int_or("max_sample_size", sim.max_sample_size);
        sim.robust_b = sn.bool_or("robust_b", sim.robust_b);
        sim.threads = sn.int_or("threads", sim.threads);
        if (sn.has("joint_t1_weights")) {
            sim.joint_t1_weights =
                weights_from(sn.at("joint_t1_weights"), m.species, "joint_t1_weights");
        } else if (sn.raw().is_object() && sn.raw().contains("joint_t1_weights")) {
            sim.joint_t1_weights.reset();
        }
        try {
            sim.validate();
        } catch (const ConfigError& e) {
            sn.fail(e.what());
        }
    }
    if (sim.joint_t1_weights && sim.joint_t1_weights->n_species() != m.species.size()) {
        sim.joint_t1_weights.reset();
    }
    m.validate();
    return c;
}

FullConfig load_config(const fs::path& path)
{
    std::string text;
    try {
        text = read_text(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": invalid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::vector<AnimalStudy> parse_animal_csv(std::istream& in, double reference_dose)
{
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    struct Acc {
        std::string id, species;
        std::vector<double> doses;
        std::vector<int> n, r;
    };
    std::vector<Acc> studies;
    auto fail = [&](const std::string& msg) -> void {
        throw DataError("animal data line " + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto cols = split_csv(t);
        if (!header_seen) {
            const std::vector<std::string> expected{"study_id", "species", "dose", "n", "r"};
            if (cols != expected) fail("header must be study_id,species,dose,n,r");
            header_seen = true;
            continue;
        }
        if (cols.size() != 5) fail("expected 5 columns, got " + std::to_string(cols.size()));
        double dose = 0.0;
        int n = 0, r = 0;
        if (cols[0].empty()) fail("empty study_id");
        if (cols[1].empty()) fail("empty species");
        if (!parse_number(cols[2], dose) || !(dose > 0.0) || !std::isfinite(dose)) {
            fail("dose must be a positive number");
        }
        if (!parse_number(cols[3], n) || n < 0) fail("n must be a non-negative integer");
        if (!parse_number(cols[4], r) || r < 0) fail("r must be a non-negative integer");
        if (r > n) fail("r > n (r = " + cols[4] + ", n = " + cols[3] + ")");
        if (studies.empty() || studies.back().id != cols[0]) {
            for (const auto& s : studies) {
                if (s.id == cols[0]) fail("rows of study " + cols[0] + " are not contiguous");
            }
            studies.push_back({cols[0], cols[1], {}, {}, {}});
        }
        auto& s = studies.back();
        if (s.species != cols[1]) fail("species changes within study " + s.id);
        if (!s.doses.empty() && dose < s.doses.back()) {
            fail("doses of study " + s.id + " must be non-decreasing");
        }
        s.doses.push_back(dose);
        s.n.push_back(n);
        s.r.push_back(r);
    }
    if (!header_seen) throw DataError("animal data: missing header");
    std::vector<AnimalStudy> out;
    for (auto& s : studies) {
        AnimalStudy a{s.id, s.species, DoseGrid(s.doses, reference_dose), s.n, s.r};
        a.validate();
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<AnimalStudy> load_animal_data(const fs::path& path, double reference_dose)
{
    std::istringstream in(read_text(path));
    return parse_animal_csv(in, reference_dose);
}

std::string animal_csv(std::span<const AnimalStudy> studies)
{
    std::string out = "study_id,species,dose,n,r\n";
    for (const auto& s : studies) {
        for (std::size_t j = 0; j < s.grid.size(); ++j) {
            out += s.study_id + "," + s.species + "," + fmt_double(s.grid[j]) + "," +
                   std::to_string(s.n[j]) + "," + std::to_string(s.r[j]) + "\n";
        }
    }
    return out;
}

json trial_state_to_json(const HumanTrialState& t)
{
    json cohorts = json::array();
    for (const auto& c : t.cohorts) {
        cohorts.push_back({{"dose_index", c.dose_index},
                           {"dose", t.grid[static_cast<std::size_t>(c.dose_index)]},
                           {"n_treated", c.n_treated},
                           {"n_dlt", c.n_dlt}});
    }
    return {{"schema_version", kSchemaVersion},
            {"subgroup_id", t.subgroup_id},
            {"dose_grid", t.grid.doses()},
            {"reference_dose", t.grid.reference_dose()},
            {"max_sample_size", t.max_sample_size},
            {"cohort_size", t.cohort_size},
            {"cohorts", cohorts}};
}

HumanTrialState trial_state_from_json(const json& j)
{
    check_version_impl<DataError>(j, "trial state");
    const DataNode root(j, "trial state");
    HumanTrialState t;
    t.subgroup_id = root.at("subgroup_id").str();
    std::vector<double> grid;
    const auto gn = root.at("dose_grid");
    for (std::size_t i = 0; i < gn.size(); ++i) grid.push_back(gn.at(i).number());
    t.grid = DoseGrid(grid, root.has("reference_dose") ? root.at("reference_dose").number() : 5.0);
    if (root.has("max_sample_size")) t.max_sample_size = root.at("max_sample_size").int32();
    if (root.has("cohort_size")) t.cohort_size = root.at("cohort_size").int32();
    if (root.has("cohorts")) {
        const auto cs = root.at("cohorts");
        for (std::size_t i = 0; i < cs.size(); ++i) {
            const auto c = cs.at(i);
            Cohort co{c.at("dose_index").int32(), c.at("n_treated").int32(), c.at("n_dlt").int32()};
            if (co.dose_index < 0 || static_cast<std::size_t>(co.dose_index) >= t.grid.size()) {
                c.at("dose_index").fail("dose index out of range");
            }
            if (c.has("dose") &&
                c.at("dose").number() != t.grid[static_cast<std::size_t>(co.dose_index)]) {
                c.at("dose").fail("dose does not match dose_grid[dose_index]");
            }
            t.cohorts.push_back(co);
        }
    }
    t.validate();
    return t;
}

HumanTrialState load_trial_state(const fs::path& path)
{
    return trial_state_from_json(parse_json_text(read_text(path), "trial " + path.string()));
}

json scenario_to_json(const ScenarioSpec& s)
{
    json trials = json::array();
    for (std::size_t t = 0; t < s.true_tox.size(); ++t) {
        const auto& c = s.correct_dose[t];
        trials.push_back({{"true_tox", s.true_tox[t]},
                          {"correct_dose_index", c ? json(*c) : json(nullptr)}});
    }
    return {{"schema_version", kSchemaVersion},
            {"name", s.name},
            {"dose_grid", s.dose_grid},
            {"trials", trials}};
}

ScenarioSpec scenario_from_json(const json& j)
{
    check_schema_version(j, "scenario");
    const ConfigNode root(j, "scenario");
    ScenarioSpec s;
    s.name = root.at("name").str();
    s.dose_grid = root.at("dose_grid").numbers();
    const auto tn = root.at("trials");
    for (std::size_t t = 0; t < tn.size(); ++t) {
        const auto n = tn.at(t);
        s.true_tox.push_back(n.at("true_tox").numbers());
        s.correct_dose.push_back(n.has("correct_dose_index")
                                     ? std::optional<int>(n.at("correct_dose_index").int32())
                                     : std::nullopt);
    }
    s.validate();
    return s;
}

ScenarioSpec load_scenario(std::string_view path_or_name)
{
    for (const auto& s : builtin_scenarios()) {
        if (s.name == path_or_name) return s;
    }
    const fs::path p(path_or_name);
    std::string text;
    try {
        text = read_text(p);
    } catch (const DataError&) {
        throw ConfigError("scenario '" + std::string(path_or_name) +
                          "' is neither a file nor a built-in name (scenario1..scenario6)");
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("scenario " + p.string() + ": invalid JSON: " + e.what());
    }
    return scenario_from_json(j);
}

double report_round(double p) noexcept
{
    if (!std::isfinite(p)) return p;
    return std::round(p * 1e4) / 1e4;
}

json decision_to_json(const DoseDecision& d, std::span<const double> dose_grid)
{
    json rationale = json::array();
    for (std::size_t j = 0; j < d.rationale.size(); ++j) {
        const auto& p = d.rationale[j];
        rationale.push_back({{"dose", j < dose_grid.size() ? json(dose_grid[j]) : json(nullptr)},
                             {"p_under", report_round(p.under)},
                             {"p_target", report_round(p.target)},
                             {"p_over", report_round(p.over)}});
    }
    json out = {{"kind", to_string(d.kind)},
                {"dose_index", d.dose_index ? json(*d.dose_index) : json(nullptr)},
                {"dose", nullptr},
                {"rationale", rationale}};
    if (d.dose_index && static_cast<std::size_t>(*d.dose_index) < dose_grid.size()) {
        out["dose"] = dose_grid[static_cast<std::size_t>(*d.dose_index)];
    }
    return out;
}

DoseDecision decision_from_json(const json& j)
{
    const ConfigNode n(j, "decision");
    DoseDecision d;
    d.kind = decision_kind_from_string(n.at("kind").str());
    if (n.has("dose_index")) d.dose_index = n.at("dose_index").int32();
    if (n.has("rationale")) {
        const auto r = n.at("rationale");
        for (std::size_t i = 0; i < r.size(); ++i) {
            const auto p = r.at(i);
            d.rationale.push_back(
                {p.at("p_under").number(), p.at("p_target").number(), p.at("p_over").number()});
        }
    }
    return d;
}

json recommendation_json(const HumanTrialState& trial, const DoseDecision& decision,
                         std::optional<int> mtd)
{
    json m = nullptr;
    if (mtd) {
        m = {{"dose_index", *mtd}, {"dose", trial.grid[static_cast<std::size_t>(*mtd)]}};
    }
    return {{"schema_version", kSchemaVersion},
            {"artifact", "recommendation"},
            {"subgroup_id", trial.subgroup_id},
            {"n_cohorts", trial.cohorts.size()},
            {"total_treated", trial.total_treated()},
            {"total_dlt", trial.total_dlt()},
            {"decision", decision_to_json(decision, trial.grid.doses())},
            {"mtd", m}};
}

json posterior_summary_json(const PosteriorResult& posterior, const IntervalThresholds& thr)
{
    json subgroups = json::array();
    for (const auto& sp : posterior.subgroups) {
        json doses = json::array();
        for (std::size_t j = 0; j < posterior.dose_grid.size(); ++j) {
            const auto s = summarize_draws(sp.tox[j]);
            const auto ip = interval_probabilities(sp.tox[j], thr);
            doses.push_back({{"dose_index", j},
                             {"dose", posterior.dose_grid[j]},
                             {"mean", report_round(sp.tox_mean[j])},
                             {"sd", report_round(sp.tox_sd[j])},
                             {"median", report_round(s.median)},
                             {"q025", report_round(s.q025)},
                             {"q975", report_round(s.q975)},
                             {"p_under", report_round(ip.under)},
                             {"p_target", report_round(ip.target)},
                             {"p_over", report_round(ip.over)}});
        }
        json comps = json::object();
        for (std::size_t c = 0; c < sp.component_frequency.size(); ++c) {
            comps[posterior.component_labels.at(c)] = report_round(sp.component_frequency[c]);
        }
        subgroups.push_back({{"subgroup_id", sp.subgroup_id},
                             {"doses", doses},
                             {"component_frequency", comps},
                             {"epsilon", summary_json(summarize_draws(sp.epsilon))},
                             {"gamma_intercept", summary_json(summarize_draws(sp.gamma_intercept))},
                             {"gamma_log_slope", summary_json(summarize_draws(sp.gamma_log_slope))}});
    }
    json studies = json::array();
    for (const auto& st : posterior.studies) {
        json med = json::array();
        for (const auto& d : st.tox) med.push_back(report_round(summarize_draws(d).median));
        studies.push_back({{"study_id", st.study_id}, {"species", st.species}, {"median_on_grid", med}});
    }
    json diags = json::array();
    for (const auto& d : posterior.diagnostics) {
        std::string status = "ok";
        if (d.degenerate) {
            status = "degenerate";
        } else if (!d.rhat) {
            status = "rhat_unavailable";
        } else if (!std::isfinite(*d.rhat)) {
            status = "chains_disagree";
        }
        diags.push_back({{"name", d.name},
                         {"rhat", d.rhat && std::isfinite(*d.rhat) ? json(report_round(*d.rhat)) : json(nullptr)},
                         {"ess", d.ess ? json(report_round(*d.ess)) : json(nullptr)},
                         {"status", status}});
    }
    json acc = json::array();
    for (const auto& a : posterior.acceptance) {
        acc.push_back({{"block", a.block}, {"rate", report_round(a.rate)}});
    }
    return {{"schema_version", kSchemaVersion},
            {"artifact", "posterior"},
            {"dose_grid", posterior.dose_grid},
            {"reference_dose", posterior.reference_dose},
            {"component_labels", posterior.component_labels},
            {"n_chains", posterior.n_chains},
            {"retained_per_chain", posterior.retained_per_chain},
            {"stored_per_chain", posterior.stored_per_chain},
            {"indicator_fallbacks", posterior.indicator_fallbacks},
            {"subgroups", subgroups},
            {"studies", studies},
            {"diagnostics", diags},
            {"acceptance", acc}};
}

std::string draws_csv(const SubgroupPosterior& sp, std::span<const double> dose_grid)
{
    std::string out = "draw";
    for (double d : dose_grid) out += ",p_" + fmt_double(d);
    out += ",gamma_intercept,gamma_log_slope,epsilon\n";
    const std::size_t S = sp.tox.empty() ? 0 : sp.tox.front().size();
    for (std::size_t s = 0; s < S; ++s) {
        out += std::to_string(s);
        for (const auto& col : sp.tox) out += "," + fmt_double(col[s]);
        out += "," + fmt_double(sp.gamma_intercept[s]) + "," + fmt_double(sp.gamma_log_slope[s]) +
               "," + fmt_double(sp.epsilon[s]) + "\n";
    }
    return out;
}

json prior_predictive_json(const PriorPredictive& pp)
{
    json subgroups = json::array();
    for (const auto& sg : pp.subgroups) {
        json rows = json::array();
        for (const auto& r : sg.rows) {
            rows.push_back({{"dose", r.dose},
                            {"mean", report_round(r.mean)},
                            {"sd", report_round(r.sd)},
                            {"median", report_round(r.median)},
                            {"q025", report_round(r.q025)},
                            {"q975", report_round(r.q975)}});
        }
        subgroups.push_back({{"subgroup_id", sg.subgroup_id}, {"rows", rows}});
    }
    return {{"schema_version", kSchemaVersion},
            {"artifact", "prior_predictive"},
            {"subgroups", subgroups}};
}

json ess_to_json(std::span<const EssRow> rows)
{
    json out = json::array();
    for (const auto& r : rows) {
        json row = {{"subgroup_id", r.subgroup_id},
                    {"dose_index", r.dose_index},
                    {"dose", r.dose},
                    {"mean", report_round(r.mean)},
                    {"sd", report_round(r.sd)}};
        if (r.beta) {
            row["ess"] = report_round(r.beta->ess());
            row["a"] = report_round(r.beta->a);
            row["b"] = report_round(r.beta->b);
            row["error"] = nullptr;
        } else {
            row["ess"] = nullptr;
            row["a"] = nullptr;
            row["b"] = nullptr;
            row["error"] = r.error;
        }
        out.push_back(row);
    }
    return {{"schema_version", kSchemaVersion}, {"artifact", "ess"}, {"rows", out}};
}

std::string ess_csv(std::span<const EssRow> rows)
{
    std::ostringstream os;
    os << "subgroup_id,dose_index,dose,mean,sd,ess,a,b\n" << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        os << r.subgroup_id << ',' << r.dose_index << ',' << fmt_double(r.dose) << ',' << r.mean
           << ',' << r.sd << ',';
        if (r.beta) {
            os << r.beta->ess() << ',' << r.beta->a << ',' << r.beta->b << '\n';
        } else {
            os << "NA,NA,NA\n";
        }
    }
    return os.str();
}

json replicate_to_json(const ReplicateRecord& r)
{
    // Grid-free decisions: dose values are not needed to round-trip.
    return {{"schema_version", kSchemaVersion},
            {"scenario", r.scenario},
            {"variant", to_string(r.variant)},
            {"replicate", r.replicate},
            {"master_seed", r.master_seed},
            {"t1", trial_record_json(r.t1, {})},
            {"t2", trial_record_json(r.t2, {})}};
}

ReplicateRecord replicate_from_json(const json& j)
{
    check_version_impl<DataError>(j, "replicate record");
    const DataNode n(j, "replicate record");
    ReplicateRecord r;
    r.scenario = n.at("scenario").str();
    try {
        r.variant = model_variant_from_string(n.at("variant").str());
    } catch (const ConfigError& e) {
        n.at("variant").fail(e.what());
    }
    r.replicate = n.at("replicate").int32();
    r.master_seed = n.at("master_seed").uint64();
    r.t1 = trial_record_from(n.at("t1"));
    r.t2 = trial_record_from(n.at("t2"));
    return r;
}

json oc_report_to_json(const OCReport& r)
{
    json trials = json::array();
    for (const auto& t : r.trials) {
        json pct = json::array();
        for (double v : t.pct_mtd) pct.push_back(report_round(v));
        json alloc = json::array();
        for (double v : t.mean_allocation) alloc.push_back(report_round(v));
        trials.push_back(
            {{"subgroup_id", t.subgroup_id},
             {"n_replicates", t.n_replicates},
             {"pct_stopped", report_round(t.pct_stopped)},
             {"pct_no_mtd", report_round(t.pct_no_mtd)},
             {"pct_mtd", pct},
             {"correct_dose_index", t.correct_dose ? json(*t.correct_dose) : json(nullptr)},
             {"pcs", t.pcs ? json(report_round(*t.pcs)) : json(nullptr)},
             {"mean_allocation", alloc},
             {"mean_patients", report_round(t.mean_patients)},
             {"mean_dlt", report_round(t.mean_dlt)},
             {"mean_epsilon_completed",
              t.mean_epsilon_completed ? json(report_round(*t.mean_epsilon_completed))
                                       : json(nullptr)}});
    }
    return {{"schema_version", kSchemaVersion},
            {"artifact", "oc_report"},
            {"scenario", r.scenario},
            {"variant", r.variant},
            {"n_replicates", r.n_replicates},
            {"trials", trials}};
}

json manifest_to_json(const RunManifest& m)
{
    return {{"schema_version", m.schema_version},
            {"artifact", "run_manifest"},
            {"command", m.command},
            {"args", m.args},
            {"config_digest", m.config_digest},
            {"data_digests", m.data_digests},
            {"seed", m.seed},
            {"engine_version", m.engine_version},
            {"started_at", m.started_at},
            {"finished_at", m.finished_at},
            {"outputs", m.outputs}};
}

RunManifest manifest_from_json(const json& j)
{
    check_schema_version(j, "manifest");
    const ConfigNode n(j, "manifest");
    RunManifest m;
    m.schema_version = n.at("schema_version").str();
    m.command = n.at("command").str();
    const auto args = n.at("args");
    for (std::size_t i = 0; i < args.size(); ++i) m.args.push_back(args.at(i).str());
    m.config_digest = n.at("config_digest").str();
    for (const auto& [k, v] : n.at("data_digests").raw().items()) {
        m.data_digests[k] = n.at("data_digests").at(k).str();
    }
    m.seed = n.at("seed").uint64();
    m.engine_version = n.at("engine_version").str();
    m.started_at = n.at("started_at").str();
    m.finished_at = n.at("finished_at").str();
    for (const auto& [k, v] : n.at("outputs").raw().items()) {
        m.outputs[k] = n.at("outputs").at(k).str();
    }
    return m;
}

RunManifest load_manifest(const fs::path& path)
{
    std::string text;
    try {
        text = read_text(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("manifest " + path.string() + ": invalid JSON: " + e.what());
    }
    return manifest_from_json(j);
}

std::string sha256_hex(std::string_view bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

std::string sha256_file(const fs::path& path)
{
    return sha256_hex(read_text(path));
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& path, std::string_view text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw std::runtime_error("short write to " + path.string());
    }
    fs::rename(tmp, path);
}

std::string dump(const json& j)
{
    return j.dump(2) + "\n";
}

json parse_json_text(std::string_view text, std::string_view what)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string(what) + ": invalid JSON: " + e.what());
    }
}

json load_json(const fs::path& path)
{
    return parse_json_text(read_text(path), path.string());
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace exnex
