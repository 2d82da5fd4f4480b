#include "exnex/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "exnex/error.hpp"
#include "exnex/ess.hpp"
#include "exnex/io.hpp"
#include "exnex/service.hpp"

namespace exnex {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigEnv = "EXNEX_CONFIG";
constexpr const char* kTokenEnv = "EXNEX_TOKEN";

struct Options {
    std::string command;
    std::string config;
    std::string animal_data;
    std::vector<std::string> trials;
    std::string scenario;
    std::string model_variant = "A";
    int replicates = 100;
    std::optional<std::uint64_t> seed;
    std::string out = "exnex-out";
    std::string subgroup;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string token;
    int threads = 0;
    std::string manifest;
    bool quiet = false;
};

std::string absolute(const std::string& p)
{
    return fs::absolute(fs::path(p)).lexically_normal().string();
}

// Everything a command reads, resolved once.
struct Inputs {
    FullConfig config;
    std::string config_path;
    std::vector<AnimalStudy> animal;
    std::vector<HumanTrialState> trials;
    std::map<std::string, std::string> digests;
};

Inputs load_inputs(const Options& o)
{
    Inputs in;
    in.config_path = o.config;
    if (in.config_path.empty()) {
        if (const char* env = std::getenv(kConfigEnv); env && *env) in.config_path = env;
    }
    if (!in.config_path.empty()) {
        in.config_path = absolute(in.config_path);
        in.config = load_config(in.config_path);
        in.digests[in.config_path] = sha256_file(in.config_path);
    } else {
        in.config = default_config();
    }
    if (!o.animal_data.empty()) {
        const auto p = absolute(o.animal_data);
        in.animal = load_animal_data(p, in.config.model.reference_dose);
        in.digests[p] = sha256_file(p);
    }
    std::vector<HumanTrialState> given;
    for (const auto& t : o.trials) {
        const auto p = absolute(t);
        given.push_back(load_trial_state(p));
        in.digests[p] = sha256_file(p);
    }
    const int max_n = in.config.simulation.max_sample_size;
    const int cohort = in.config.simulation.cohort_size;
    in.trials = complete_trials(in.config.model, std::move(given), max_n, cohort);
    return in;
}

// Canonical argument vector: absolute paths, explicit seed, explicit output.
std::vector<std::string> canonical_args(const Options& o, const Inputs& in, std::uint64_t seed)
{
    std::vector<std::string> a{o.command};
    if (!in.config_path.empty()) a.insert(a.end(), {"--config", in.config_path});
    if (!o.animal_data.empty()) a.insert(a.end(), {"--animal-data", absolute(o.animal_data)});
    for (const auto& t : o.trials) a.insert(a.end(), {"--trial", absolute(t)});
    if (!o.scenario.empty()) {
        a.insert(a.end(), {"--scenario", fs::exists(o.scenario) ? absolute(o.scenario) : o.scenario});
    }
    if (o.command == "simulate") {
        a.insert(a.end(), {"--model-variant", o.model_variant, "--replicates",
                           std::to_string(o.replicates), "--threads", std::to_string(o.threads)});
    }
    if (!o.subgroup.empty()) a.insert(a.end(), {"--subgroup", o.subgroup});
    a.insert(a.end(), {"--seed", std::to_string(seed), "--out", absolute(o.out)});
    return a;
}

class Run {
public:
    Run(const Options& o, const Inputs& in, std::uint64_t seed)
        : out_dir_(o.out)
    {
        manifest_.command = o.command;
        manifest_.args = canonical_args(o, in, seed);
        manifest_.config_digest = sha256_hex(dump(config_to_json(in.config)));
        manifest_.data_digests = in.digests;
        manifest_.seed = seed;
        manifest_.engine_version = EXNEX_VERSION;
        manifest_.started_at = utc_timestamp();
        fs::create_directories(out_dir_);
    }

    void add_data(const std::string& path)
    {
        manifest_.data_digests[absolute(path)] = sha256_file(path);
    }

    void write(const std::string& name, const std::string& text)
    {
        write_text(out_dir_ / name, text);
        manifest_.outputs[name] = sha256_hex(text);
    }

    void finish()
    {
        manifest_.finished_at = utc_timestamp();
        write_text(out_dir_ / "manifest.json", dump(manifest_to_json(manifest_)));
    }

private:
    fs::path out_dir_;
    RunManifest manifest_;
};

SamplerSettings with_seed(SamplerSettings s, std::uint64_t seed)
{
    s.seed = seed;
    return s;
}

void print_posterior(std::ostream& out, const PosteriorResult& post, const IntervalThresholds& thr)
{
    out << std::fixed << std::setprecision(4);
    for (const auto& sp : post.subgroups) {
        out << "subgroup " << sp.subgroup_id << "\n";
        out << "  dose      median    q025      q975      p_under   p_target  p_over\n";
        for (std::size_t j = 0; j < post.dose_grid.size(); ++j) {
            const auto s = summarize_draws(sp.tox[j]);
            const auto p = interval_probabilities(sp.tox[j], thr);
            out << "  " << std::setw(8) << post.dose_grid[j] << "  " << s.median << "    " << s.q025
                << "    " << s.q975 << "    " << p.under << "    " << p.target << "    " << p.over
                << "\n";
        }
        out << "  components";
        for (std::size_t c = 0; c < sp.component_frequency.size(); ++c) {
            out << " " << post.component_labels[c] << "=" << sp.component_frequency[c];
        }
        out << "\n";
    }
    out.unsetf(std::ios::floatfield);
}

int cmd_fit(const Options& o, std::ostream& out)
{
    const auto in = load_inputs(o);
    const auto seed = o.seed.value_or(in.config.sampler.seed);
    Run run(o, in, seed);
    const auto post = run_posterior(in.animal, in.trials, in.config.model,
                                    with_seed(in.config.sampler, seed));
    run.write("posterior.json", dump(posterior_summary_json(post, in.config.thresholds)));
    for (const auto& sp : post.subgroups) {
        run.write("draws_" + sp.subgroup_id + ".csv", draws_csv(sp, post.dose_grid));
    }
    run.finish();
    if (!o.quiet) print_posterior(out, post, in.config.thresholds);
    return 0;
}

int cmd_prior_predict(const Options& o, std::ostream& out)
{
    const auto in = load_inputs(o);
    const auto seed = o.seed.value_or(in.config.sampler.seed);
    Run run(o, in, seed);
    const auto pp = prior_predictive(in.animal, in.config.model, with_seed(in.config.sampler, seed));
    run.write("prior_predictive.json", dump(prior_predictive_json(pp)));
    run.finish();
    if (!o.quiet) {
        out << std::fixed << std::setprecision(4);
        for (const auto& sg : pp.subgroups) {
            out << "subgroup " << sg.subgroup_id << "\n  dose      mean      sd        median    q025      q975\n";
            for (const auto& r : sg.rows) {
                out << "  " << std::setw(8) << r.dose << "  " << r.mean << "    " << r.sd << "    "
                    << r.median << "    " << r.q025 << "    " << r.q975 << "\n";
            }
        }
    }
    return 0;
}

int cmd_ess(const Options& o, std::ostream& out)
{
    const auto in = load_inputs(o);
    const auto seed = o.seed.value_or(in.config.sampler.seed);
    Run run(o, in, seed);
    const auto post = run_posterior(in.animal, in.trials, in.config.model,
                                    with_seed(in.config.sampler, seed));
    const auto rows = ess_report(post);
    run.write("ess.json", dump(ess_to_json(rows)));
    const auto csv = ess_csv(rows);
    run.write("ess.csv", csv);
    run.finish();
    if (!o.quiet) out << csv;
    return 0;
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err)
{
    if (o.scenario.empty()) throw ConfigError("simulate requires --scenario");
    if (o.replicates <= 0) throw ConfigError("--replicates must be positive");
    const auto in = load_inputs(o);
    const auto scenario = load_scenario(o.scenario);
    const auto variant = model_variant_from_string(o.model_variant);
    auto settings = in.config.simulation;
    settings.threads = o.threads;
    const auto seed = o.seed.value_or(settings.sampler.seed);
    Run run(o, in, seed);
    if (fs::exists(o.scenario)) run.add_data(o.scenario);

    ProgressCallback progress;
    if (!o.quiet) {
        progress = [&err, step = std::max(1, o.replicates / 20)](int done, int total) {
            if (done % step == 0 || done == total) err << "replicates " << done << "/" << total << "\n";
        };
    }
    const auto records = simulate_campaign(scenario, variant, in.config.model, in.animal, settings,
                                           seed, o.replicates, progress);
    std::string lines;
    for (const auto& r : records) lines += replicate_to_json(r).dump() + "\n";
    run.write("replicates.jsonl", lines);
    const auto oc = operating_characteristics(records, scenario);
    const auto oc_text = dump(oc_report_to_json(oc));
    run.write("oc_report.json", oc_text);
    run.finish();
    if (!o.quiet) out << oc_text;
    return 0;
}

int cmd_recommend(const Options& o, std::ostream& out)
{
    const auto in = load_inputs(o);
    std::string subgroup = o.subgroup;
    if (subgroup.empty()) {
        if (o.trials.size() != 1) throw ConfigError("recommend requires --subgroup");
        subgroup = load_trial_state(o.trials.front()).subgroup_id;
    }
    const auto seed = o.seed.value_or(in.config.sampler.seed);
    Options canon = o;
    canon.subgroup = subgroup;
    Run run(canon, in, seed);
    const auto rec = analyze_subgroup(in.config, in.animal, in.trials, subgroup,
                                      with_seed(in.config.sampler, seed));
    const auto text = dump(rec.payload);
    run.write("recommendation.json", text);
    run.finish();
    out << text;
    return 0;
}

int cmd_serve(const Options& o, std::ostream& out)
{
    auto in = load_inputs(o);
    std::string token = o.token;
    if (token.empty()) {
        if (const char* env = std::getenv(kTokenEnv)) token = env;
    }
    ConductService service(in.config, in.animal);
    HttpServer server(service, token);
    const int port = server.bind(o.host, o.port);
    out << "listening on http://" << o.host << ":" << port << "/v1" << std::endl;
    server.run();
    return 0;
}

int dispatch(const Options& o, std::ostream& out, std::ostream& err);

int cmd_rerun(const Options& o, std::ostream& out, std::ostream& err)
{
    if (o.manifest.empty()) throw ConfigError("rerun requires --manifest");
    const auto m = load_manifest(o.manifest);
    for (const auto& [path, digest] : m.data_digests) {
        if (!fs::exists(path)) throw DataError("input " + path + " no longer exists");
        if (sha256_file(path) != digest) throw DataError("input " + path + " changed since the run");
    }
    fs::path target = o.out != "exnex-out" ? fs::path(o.out)
                                           : fs::path(o.manifest).parent_path() / "rerun";
    std::vector<std::string> args = m.args;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--out") args[i + 1] = absolute(target.string());
    }
    args.push_back("--quiet");
    std::ostringstream sink;
    const int code = run_cli(args, sink, err);
    if (code != 0) return code;
    const auto again = load_manifest(target / "manifest.json");
    if (again.config_digest != m.config_digest) {
        throw ConfigError("configuration differs from the recorded run");
    }
    bool same = again.outputs == m.outputs;
    for (const auto& [name, digest] : m.outputs) {
        const auto it = again.outputs.find(name);
        const bool ok = it != again.outputs.end() && it->second == digest;
        out << (ok ? "identical " : "DIFFERS   ") << name << "\n";
    }
    out << (same ? "rerun reproduced all outputs bit-identically\n" : "rerun diverged\n");
    return same ? 0 : 4;
}

int dispatch(const Options& o, std::ostream& out, std::ostream& err)
{
    if (o.command == "fit") return cmd_fit(o, out);
    if (o.command == "prior-predict") return cmd_prior_predict(o, out);
    if (o.command == "ess") return cmd_ess(o, out);
    if (o.command == "simulate") return cmd_simulate(o, out, err);
    if (o.command == "recommend") return cmd_recommend(o, out);
    if (o.command == "serve") return cmd_serve(o, out);
    if (o.command == "rerun") return cmd_rerun(o, out, err);
    throw ConfigError("unknown command " + o.command);
}

void add_common(CLI::App* sub, Options& o)
{
    sub->add_option("--config", o.config, "configuration file (default: $EXNEX_CONFIG, else built-in)");
    sub->add_option("--animal-data", o.animal_data, "animal studies (study_id,species,dose,n,r)");
    sub->add_option("--trial", o.trials, "human trial state file; repeatable");
    sub->add_option("--seed", o.seed, "sampler or campaign seed");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_flag("--quiet", o.quiet, "no console report");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"EXNEX phase I dose escalation with animal data and subgroup bridging", "exnex"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(EXNEX_VERSION));

    auto* fit = app.add_subcommand("fit", "sample the joint posterior");
    add_common(fit, o);
    auto* prior = app.add_subcommand("prior-predict", "predictive priors from animal data alone");
    add_common(prior, o);
    auto* ess = app.add_subcommand("ess", "beta effective sample sizes per dose");
    add_common(ess, o);
    auto* sim = app.add_subcommand("simulate", "operating characteristics of a trial pair");
    add_common(sim, o);
    sim->add_option("--scenario", o.scenario, "scenario file or scenario1..scenario6")->required();
    sim->add_option("--model-variant", o.model_variant, "A, B, C, D or E")->capture_default_str();
    sim->add_option("--replicates", o.replicates, "replicate trial pairs")->capture_default_str();
    sim->add_option("--threads", o.threads, "worker threads (0: all cores)");
    auto* rec = app.add_subcommand("recommend", "next dose for one subgroup");
    add_common(rec, o);
    rec->add_option("--subgroup", o.subgroup, "subgroup id");
    auto* serve = app.add_subcommand("serve", "HTTP trial-conduct service");
    add_common(serve, o);
    serve->add_option("--host", o.host)->capture_default_str();
    serve->add_option("--port", o.port)->capture_default_str();
    serve->add_option("--token", o.token, "bearer token (default: $EXNEX_TOKEN)");
    auto* rerun = app.add_subcommand("rerun", "re-execute a run from its manifest and compare outputs");
    rerun->add_option("--manifest", o.manifest)->required();
    rerun->add_option("--out", o.out, "output directory (default: <manifest dir>/rerun)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << EXNEX_VERSION << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    for (auto* sub : app.get_subcommands()) o.command = sub->get_name();

    try {
        return dispatch(o, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace exnex
