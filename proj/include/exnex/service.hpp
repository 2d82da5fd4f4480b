#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "exnex/io.hpp"

namespace exnex {

// Adds an empty trial on the config grid for every configured subgroup
// without one, and orders the result by subgroup.
std::vector<HumanTrialState> complete_trials(const ModelConfig& config,
                                             std::vector<HumanTrialState> given,
                                             int max_sample_size = 24, int cohort_size = 3);

struct Recommendation {
    PosteriorResult posterior;
    DoseDecision decision;
    std::optional<int> mtd;
    json payload;  // recommendation_json
};

// The next-dose analysis shared by `recommend` and the service: the starting
// dose before any cohort, the next dose afterwards, and the MTD once complete.
Recommendation analyze_subgroup(const FullConfig& config, std::span<const AnimalStudy> animal,
                                std::span<const HumanTrialState> trials,
                                const std::string& subgroup_id, const SamplerSettings& sampler);

struct ServiceResponse {
    int status = 200;
    json body;
    std::vector<std::pair<std::string, std::string>> headers;
};

// Live trial sessions. Mutations on one session are serialized and a
// concurrent mutation is refused with 423; reads use published snapshots.
class ConductService {
public:
    ConductService(FullConfig defaults, std::vector<AnimalStudy> default_animal);

    ServiceResponse create_trial(const json& body);
    ServiceResponse submit_cohort(const std::string& id, const json& body);
    ServiceResponse get_state(const std::string& id) const;
    ServiceResponse get_posterior(const std::string& id) const;
    ServiceResponse get_recommendation(const std::string& id) const;
    ServiceResponse what_if(const std::string& id, const json& body) const;
    ServiceResponse get_log(const std::string& id) const;

    // Rebuilds a session from its decision log, checking every recorded
    // recommendation; returns {"trial", "recommendation"}. Throws StateError
    // on divergence.
    static json replay_log(const json& log);

private:
    struct Snapshot {
        HumanTrialState trial;
        std::vector<HumanTrialState> co_data;
        Recommendation rec;
        json posterior_summary;
        std::string data_digest;
        std::vector<json> log;
    };

    struct Session {
        std::string id;
        std::string subgroup_id;
        FullConfig config;
        std::vector<AnimalStudy> animal;
        std::uint64_t seed = 0;
        std::mutex mutation;
        std::atomic<bool> busy{false};
        std::shared_ptr<const Snapshot> snapshot;  // std::atomic_load / atomic_store

        std::shared_ptr<const Snapshot> current() const { return std::atomic_load(&snapshot); }
        void publish(std::shared_ptr<const Snapshot> s) { std::atomic_store(&snapshot, std::move(s)); }
    };

    std::shared_ptr<Session> find(const std::string& id) const;
    std::string new_session_id();

    FullConfig defaults_;
    std::vector<AnimalStudy> default_animal_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 1;
};

// HTTP front end under /v1. A non-empty token requires "Authorization:
// Bearer <token>" on every request.
class HttpServer {
public:
    HttpServer(ConductService& service, std::string token);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port; returns the bound port.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void run();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace exnex
