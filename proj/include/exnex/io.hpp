#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "exnex/decision.hpp"
#include "exnex/ess.hpp"
#include "exnex/model.hpp"
#include "exnex/sampler.hpp"
#include "exnex/simulator.hpp"

namespace exnex {

using json = nlohmann::ordered_json;

// Major.minor; loaders accept any minor of the same major.
inline constexpr std::string_view kSchemaVersion = "1.0";
inline constexpr int kSchemaMajor = 1;

// Throws ConfigError unless j carries a schema_version with a known major.
void check_schema_version(const json& j, std::string_view what);

// Everything a run needs besides data.
struct FullConfig {
    ModelConfig model;
    IntervalThresholds thresholds;
    bool no_skipping = true;
    SamplerSettings sampler;        // fit, prior-predict, ess, recommend, serve
    SimulationSettings simulation;  // simulate (own reduced sampler)
};

// Priors, weights and thresholds as given in the reference analysis:
// Rat and Monkey species, subgroups T1 and T2.
FullConfig default_config();

// Parse a config object. Missing fields take the defaults of default_config();
// errors name the JSON path, e.g. "/subgroups/1/weights".
FullConfig config_from_json(const json& j);
json config_to_json(const FullConfig& cfg);
FullConfig load_config(const std::filesystem::path& path);

// Delimited text with header study_id,species,dose,n,r. Rows of one study
// must be contiguous and in non-decreasing dose order. Errors carry the
// 1-based line number.
std::vector<AnimalStudy> parse_animal_csv(std::istream& in, double reference_dose);
std::vector<AnimalStudy> load_animal_data(const std::filesystem::path& path,
                                          double reference_dose);
std::string animal_csv(std::span<const AnimalStudy> studies);

json trial_state_to_json(const HumanTrialState& t);
HumanTrialState trial_state_from_json(const json& j);
HumanTrialState load_trial_state(const std::filesystem::path& path);

json scenario_to_json(const ScenarioSpec& s);
ScenarioSpec scenario_from_json(const json& j);
// A path to a scenario file, or a built-in name "scenario1".."scenario6".
ScenarioSpec load_scenario(std::string_view path_or_name);

// Probabilities rounded to four decimals for reports.
double report_round(double p) noexcept;

json decision_to_json(const DoseDecision& d, std::span<const double> dose_grid);
DoseDecision decision_from_json(const json& j);

// The recommendation payload shared by `recommend` and the service.
json recommendation_json(const HumanTrialState& trial, const DoseDecision& decision,
                         std::optional<int> mtd);

// Per-dose summaries, interval probabilities, mixture frequencies, epsilon,
// diagnostics and acceptance rates. No draws.
json posterior_summary_json(const PosteriorResult& posterior, const IntervalThresholds& thr);

// One subgroup's toxicity draws, one column per dose, full precision.
std::string draws_csv(const SubgroupPosterior& sp, std::span<const double> dose_grid);

json prior_predictive_json(const PriorPredictive& pp);
json ess_to_json(std::span<const EssRow> rows);
std::string ess_csv(std::span<const EssRow> rows);

json replicate_to_json(const ReplicateRecord& r);
ReplicateRecord replicate_from_json(const json& j);
json oc_report_to_json(const OCReport& r);

struct RunManifest {
    std::string schema_version{kSchemaVersion};
    std::string command;
    std::vector<std::string> args;  // full argument vector after the program name
    std::string config_digest;
    std::map<std::string, std::string> data_digests;    // input path -> sha256
    std::uint64_t seed = 0;
    std::string engine_version;
    std::string started_at;
    std::string finished_at;
    std::map<std::string, std::string> outputs;         // file name -> sha256

    friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const json& j);
RunManifest load_manifest(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
// Writes atomically via a temporary file in the same directory.
void write_text(const std::filesystem::path& path, std::string_view text);
// Two-space indented JSON with a trailing newline.
std::string dump(const json& j);
json parse_json_text(std::string_view text, std::string_view what);
json load_json(const std::filesystem::path& path);

std::string utc_timestamp();

}  // namespace exnex
