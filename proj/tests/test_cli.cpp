#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "exnex/cli.hpp"
#include "exnex/io.hpp"
#include "exnex/service.hpp"
#include "support.hpp"

using namespace exnex;
using exnex::test::TempDir;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string write_quick_config(const TempDir& dir)
{
    auto cfg = exnex::test::quick_config();
    cfg.simulation.sampler.n_iterations = 300;
    cfg.simulation.sampler.n_burnin = 100;
    cfg.simulation.max_sample_size = 6;
    const auto path = (dir.path() / "config.json").string();
    write_text(path, dump(config_to_json(cfg)));
    return path;
}

std::string animal_path() { return (exnex::test::source_dir() / "data" / "animal_studies.csv").string(); }

std::string write_trial(const TempDir& dir, const HumanTrialState& t)
{
    const auto path = (dir.path() / (t.subgroup_id + ".json")).string();
    write_text(path, dump(trial_state_to_json(t)));
    return path;
}

}  // namespace

TEST_CASE("help, version and parse errors")
{
    auto r = cli({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("simulate") != std::string::npos);
    CHECK(cli({"--version"}).code == 0);
    CHECK(cli({"fit", "--no-such-flag"}).code == 2);
    CHECK(cli({"simulate"}).code == 2);
    CHECK(cli({}).code == 2);
}

TEST_CASE("fit writes a posterior, draws and a manifest that reruns identically")
{
    TempDir dir;
    const auto cfg = write_quick_config(dir);
    auto t = exnex::test::empty_trial("T1");
    t.cohorts = {{0, 3, 0}, {1, 3, 0}};
    const auto trial = write_trial(dir, t);
    const auto out = (dir.path() / "fit").string();
    auto r = cli({"fit", "--config", cfg, "--animal-data", animal_path(), "--trial", trial,
                  "--seed", "11", "--out", out, "--quiet"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(std::filesystem::exists(dir.path() / "fit" / "posterior.json"));
    CHECK(std::filesystem::exists(dir.path() / "fit" / "draws_T1.csv"));
    CHECK(std::filesystem::exists(dir.path() / "fit" / "draws_T2.csv"));
    const auto m = load_manifest(dir.path() / "fit" / "manifest.json");
    CHECK(m.command == "fit");
    CHECK(m.seed == 11);
    CHECK(m.outputs.count("posterior.json") == 1);
    CHECK(m.data_digests.size() == 3);

    const auto posterior = load_json(dir.path() / "fit" / "posterior.json");
    CHECK(posterior["subgroups"].size() == 2);

    r = cli({"rerun", "--manifest", (dir.path() / "fit" / "manifest.json").string()});
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("bit-identically") != std::string::npos);
    CHECK(r.out.find("DIFFERS") == std::string::npos);

    // Changed input is detected before rerunning.
    t.cohorts.push_back({2, 3, 1});
    write_trial(dir, t);
    r = cli({"rerun", "--manifest", (dir.path() / "fit" / "manifest.json").string()});
    CHECK(r.code == 3);
}

TEST_CASE("config and data errors map to exit codes 2 and 3")
{
    TempDir dir;
    write_text(dir.path() / "bad.json", R"({"schema_version": "1.0", "subgroups": [{"id": "T1", "weights": {"species": {"Rat": 0.5, "Monkey": 0.5}, "human": 0.5, "robust": 0.0}}]})");
    auto r = cli({"prior-predict", "--config", (dir.path() / "bad.json").string(), "--out",
                  (dir.path() / "o").string(), "--quiet"});
    CHECK(r.code == 2);
    CHECK(r.err.find("/subgroups/0/weights") != std::string::npos);

    write_text(dir.path() / "animal.csv", "study_id,species,dose,n,r\nm1,Monkey,10,6,7\n");
    r = cli({"prior-predict", "--config", write_quick_config(dir), "--animal-data",
             (dir.path() / "animal.csv").string(), "--out", (dir.path() / "o").string(), "--quiet"});
    CHECK(r.code == 3);
    CHECK(r.err.find("line 2") != std::string::npos);

    r = cli({"fit", "--config", write_quick_config(dir), "--trial", (dir.path() / "none.json").string(),
             "--out", (dir.path() / "o").string()});
    CHECK(r.code == 3);
}

TEST_CASE("prior-predict and ess outputs")
{
    TempDir dir;
    const auto cfg = write_quick_config(dir);
    auto r = cli({"prior-predict", "--config", cfg, "--animal-data", animal_path(), "--out",
                  (dir.path() / "pp").string(), "--quiet"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(std::filesystem::exists(dir.path() / "pp" / "prior_predictive.json"));

    r = cli({"ess", "--config", cfg, "--animal-data", animal_path(), "--out",
             (dir.path() / "ess").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(std::filesystem::exists(dir.path() / "ess" / "ess.json"));
    const auto csv = read_text(dir.path() / "ess" / "ess.csv");
    CHECK(csv.rfind("subgroup", 0) == 0);
    CHECK(r.out == csv);
}

TEST_CASE("simulate writes replicates and an OC report that reruns identically")
{
    TempDir dir;
    const auto cfg = write_quick_config(dir);
    const auto out = (dir.path() / "sim").string();
    auto r = cli({"simulate", "--config", cfg, "--animal-data", animal_path(), "--scenario",
                  "scenario1", "--model-variant", "D", "--replicates", "2", "--threads", "1",
                  "--seed", "5", "--out", out, "--quiet"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto lines = read_text(dir.path() / "sim" / "replicates.jsonl");
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 2);
    const auto oc = load_json(dir.path() / "sim" / "oc_report.json");
    CHECK(oc["variant"] == "D");
    r = cli({"rerun", "--manifest", (dir.path() / "sim" / "manifest.json").string()});
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(cli({"simulate", "--config", cfg, "--scenario", "scenario1", "--model-variant", "Z",
               "--out", out})
              .code == 2);
}

TEST_CASE("recommend prints the payload and honours EXNEX_CONFIG")
{
    TempDir dir;
    const auto cfg = write_quick_config(dir);
    auto t = exnex::test::empty_trial("T1");
    t.cohorts = {{0, 3, 0}};
    const auto trial = write_trial(dir, t);
    ::setenv("EXNEX_CONFIG", cfg.c_str(), 1);
    auto r = cli({"recommend", "--animal-data", animal_path(), "--trial", trial, "--seed", "3",
                  "--out", (dir.path() / "rec").string()});
    ::unsetenv("EXNEX_CONFIG");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto j = json::parse(r.out);
    CHECK(j["artifact"] == "recommendation");
    CHECK(j["subgroup_id"] == "T1");
    CHECK(j["decision"]["kind"] == "escalate_to");
    CHECK(j["decision"]["dose_index"] == 1);
    CHECK(read_text(dir.path() / "rec" / "recommendation.json") == r.out);
    const auto m = load_manifest(dir.path() / "rec" / "manifest.json");
    const auto it = std::find(m.args.begin(), m.args.end(), "--config");
    REQUIRE(it != m.args.end());
    CHECK(*(it + 1) == cfg);

    // Same analysis through the library.
    const auto full = load_config(cfg);
    const auto trials = complete_trials(full.model, {t});
    auto s = full.sampler;
    s.seed = 3;
    const auto rec = analyze_subgroup(full, exnex::test::shipped_animal_data(), trials, "T1", s);
    CHECK(dump(rec.payload) == r.out);

    CHECK(cli({"recommend", "--config", cfg, "--trial", trial, "--subgroup", "T7", "--out",
               (dir.path() / "rec2").string()})
              .code == 2);
}
