#include "exnex/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "exnex/error.hpp"

namespace exnex {

namespace {

ServiceResponse error_response(int status, const std::string& message, bool retry = false)
{
    ServiceResponse r;
    r.status = status;
    r.body = {{"schema_version", kSchemaVersion}, {"error", message}, {"retry", retry}};
    if (retry) r.headers.emplace_back("Retry-After", "1");
    return r;
}

ServiceResponse ok(json body, int status = 200)
{
    ServiceResponse r;
    r.status = status;
    r.body = std::move(body);
    return r;
}

std::string data_digest(std::span<const AnimalStudy> animal, std::span<const HumanTrialState> trials)
{
    json t = json::array();
    for (const auto& tr : trials) t.push_back(trial_state_to_json(tr));
    return sha256_hex(animal_csv(animal) + dump(t));
}

struct CohortInput {
    int dose_index = 0;
    int n_treated = 0;
    int n_dlt = 0;
};

int int_field(const json& body, const char* key, std::optional<int> fallback)
{
    if (!body.contains(key) || body[key].is_null()) {
        if (fallback) return *fallback;
        throw DataError(std::string("missing field ") + key);
    }
    if (!body[key].is_number_integer()) throw DataError(std::string(key) + " must be an integer");
    return body[key].get<int>();
}

// Validates a hypothetical or real cohort against the trial; returns an
// error response or nothing.
std::optional<ServiceResponse> check_cohort(const HumanTrialState& trial, const CohortInput& c)
{
    if (c.dose_index < 0 || static_cast<std::size_t>(c.dose_index) >= trial.grid.size()) {
        return error_response(400, "dose_index out of range");
    }
    if (c.n_treated <= 0) return error_response(400, "n_treated must be positive");
    if (c.n_dlt < 0 || c.n_dlt > c.n_treated) {
        return error_response(400, "n_dlt must lie in [0, n_treated]");
    }
    if (trial.total_treated() + c.n_treated > trial.max_sample_size) {
        return error_response(409, "cohort would exceed max_sample_size (" +
                                       std::to_string(trial.max_sample_size) + ")");
    }
    return std::nullopt;
}

bool closed(const Recommendation& rec)
{
    return rec.decision.kind == DecisionKind::stop_for_safety ||
           rec.decision.kind == DecisionKind::complete;
}

std::vector<HumanTrialState> with_trial(std::vector<HumanTrialState> co_data,
                                        const HumanTrialState& trial)
{
    co_data.push_back(trial);
    return co_data;
}

SamplerSettings seeded(SamplerSettings s, std::uint64_t seed)
{
    s.seed = seed;
    return s;
}

}  // namespace

std::vector<HumanTrialState> complete_trials(const ModelConfig& config,
                                             std::vector<HumanTrialState> given, int max_sample_size,
                                             int cohort_size)
{
    std::vector<HumanTrialState> out;
    for (const auto& sg : config.subgroups) {
        const auto it = std::find_if(given.begin(), given.end(),
                                     [&](const auto& t) { return t.subgroup_id == sg.id; });
        if (it != given.end()) {
            out.push_back(std::move(*it));
            given.erase(it);
            continue;
        }
        HumanTrialState t;
        t.subgroup_id = sg.id;
        t.grid = DoseGrid(config.dose_grid, config.reference_dose);
        t.max_sample_size = max_sample_size;
        t.cohort_size = cohort_size;
        out.push_back(std::move(t));
    }
    if (!given.empty()) {
        throw ConfigError("trial subgroup " + given.front().subgroup_id + " is not configured");
    }
    return out;
}

Recommendation analyze_subgroup(const FullConfig& config, std::span<const AnimalStudy> animal,
                                std::span<const HumanTrialState> trials,
                                const std::string& subgroup_id, const SamplerSettings& sampler)
{
    const auto it = std::find_if(trials.begin(), trials.end(),
                                 [&](const auto& t) { return t.subgroup_id == subgroup_id; });
    if (it == trials.end()) throw ConfigError("no trial state for subgroup " + subgroup_id);
    const HumanTrialState& trial = *it;

    Recommendation rec;
    rec.posterior = run_posterior(animal, trials, config.model, sampler);
    if (trial.cohorts.empty()) {
        rec.decision = starting_dose(rec.posterior, subgroup_id, config.thresholds);
    } else {
        rec.decision = recommend_next_dose(rec.posterior, trial, config.thresholds, config.no_skipping);
        if (trial.is_complete()) rec.mtd = declare_mtd(rec.posterior, trial, config.thresholds);
    }
    rec.payload = recommendation_json(trial, rec.decision, rec.mtd);
    return rec;
}

ConductService::ConductService(FullConfig defaults, std::vector<AnimalStudy> default_animal)
    : defaults_(std::move(defaults)), default_animal_(std::move(default_animal))
{
}

std::shared_ptr<ConductService::Session> ConductService::find(const std::string& id) const
{
    std::shared_lock lk(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::string ConductService::new_session_id()
{
    static thread_local std::mt19937_64 gen{std::random_device{}()};
    std::ostringstream os;
    os << "s" << next_id_++ << "-" << std::hex << (gen() & 0xffffffffULL);
    return os.str();
}

ServiceResponse ConductService::create_trial(const json& body)
{
    try {
        if (!body.is_object()) return error_response(400, "body must be a JSON object");
        auto session = std::make_shared<Session>();
        session->config = body.contains("config") ? config_from_json(body["config"]) : defaults_;
        const auto& model = session->config.model;

        if (!body.contains("subgroup_id") || !body["subgroup_id"].is_string()) {
            return error_response(400, "missing subgroup_id");
        }
        session->subgroup_id = body["subgroup_id"].get<std::string>();
        if (!model.subgroup_index(session->subgroup_id)) {
            return error_response(400, "subgroup " + session->subgroup_id + " is not configured");
        }

        const bool use_animal = body.value("use_animal_data", true);
        if (body.contains("animal_data") && body["animal_data"].is_string()) {
            std::istringstream in(body["animal_data"].get<std::string>());
            session->animal = parse_animal_csv(in, model.reference_dose);
        } else if (use_animal) {
            session->animal = default_animal_;
        }
        if (!use_animal) session->animal.clear();

        session->seed = body.contains("seed") && body["seed"].is_number_unsigned()
                            ? body["seed"].get<std::uint64_t>()
                            : session->config.sampler.seed;

        std::vector<HumanTrialState> co_data;
        if (body.contains("co_data")) {
            if (!body["co_data"].is_array()) return error_response(400, "co_data must be an array");
            for (const auto& t : body["co_data"]) {
                auto st = trial_state_from_json(t);
                if (st.subgroup_id == session->subgroup_id) {
                    return error_response(400, "co_data must not contain the session subgroup");
                }
                co_data.push_back(std::move(st));
            }
        }
        const int max_n = int_field(body, "max_sample_size", 24);
        const int cohort = int_field(body, "cohort_size", 3);
        auto trials = complete_trials(model, std::move(co_data), max_n, cohort);

        auto snap = std::make_shared<Snapshot>();
        for (auto& t : trials) {
            if (t.subgroup_id == session->subgroup_id) {
                snap->trial = t;
            } else {
                snap->co_data.push_back(t);
            }
        }
        snap->trial.validate();
        const auto all = with_trial(snap->co_data, snap->trial);
        snap->rec = analyze_subgroup(session->config, session->animal, all, session->subgroup_id,
                                     seeded(session->config.sampler, session->seed));
        snap->posterior_summary = posterior_summary_json(snap->rec.posterior, session->config.thresholds);
        snap->data_digest = data_digest(session->animal, all);

        {
            std::unique_lock lk(sessions_mutex_);
            session->id = new_session_id();
        }
        json co = json::array();
        for (const auto& t : snap->co_data) co.push_back(trial_state_to_json(t));
        snap->log.push_back({{"seq", 0},
                             {"type", "create"},
                             {"at", utc_timestamp()},
                             {"session_id", session->id},
                             {"subgroup_id", session->subgroup_id},
                             {"config", config_to_json(session->config)},
                             {"animal_data", animal_csv(session->animal)},
                             {"co_data", co},
                             {"trial", trial_state_to_json(snap->trial)},
                             {"seed", session->seed},
                             {"data_digest", snap->data_digest},
                             {"recommendation", snap->rec.payload}});
        const json rec = snap->rec.payload;
        session->publish(std::move(snap));
        {
            std::unique_lock lk(sessions_mutex_);
            sessions_[session->id] = session;
        }
        return ok({{"schema_version", kSchemaVersion},
                   {"session_id", session->id},
                   {"recommendation", rec}},
                  201);
    } catch (const ConfigError& e) {
        return error_response(400, e.what());
    } catch (const DataError& e) {
        return error_response(400, e.what());
    } catch (const json::exception& e) {
        return error_response(400, e.what());
    }
}

ServiceResponse ConductService::submit_cohort(const std::string& id, const json& body)
{
    const auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    std::unique_lock lk(s->mutation, std::try_to_lock);
    if (!lk.owns_lock()) return error_response(423, "session is processing another submission", true);
    s->busy = true;
    struct Clear {
        std::atomic<bool>& b;
        ~Clear() { b = false; }
    } clear{s->busy};

    const auto snap = s->current();
    CohortInput c;
    bool override_flag = false;
    try {
        if (!body.is_object()) return error_response(400, "body must be a JSON object");
        c.dose_index = int_field(body, "dose_index", std::nullopt);
        c.n_treated = int_field(body, "n_treated", snap->trial.cohort_size);
        c.n_dlt = int_field(body, "n_dlt", std::nullopt);
        override_flag = body.value("override", false);
    } catch (const DataError& e) {
        return error_response(400, e.what());
    } catch (const json::exception& e) {
        return error_response(400, e.what());
    }
    if (closed(snap->rec)) {
        return error_response(409, std::string("trial is closed (") +
                                       std::string(to_string(snap->rec.decision.kind)) + ")");
    }
    if (auto err = check_cohort(snap->trial, c)) return *err;
    const auto& recommended = snap->rec.decision.dose_index;
    const bool deviates = !recommended || *recommended != c.dose_index;
    if (deviates && !override_flag) {
        return error_response(422, "dose_index differs from the recommended dose " +
                                       (recommended ? std::to_string(*recommended) : "none") +
                                       "; set override to true to proceed");
    }

    try {
        auto next = std::make_shared<Snapshot>(*snap);
        next->trial.cohorts.push_back({c.dose_index, c.n_treated, c.n_dlt});
        const auto all = with_trial(next->co_data, next->trial);
        next->rec = analyze_subgroup(s->config, s->animal, all, s->subgroup_id,
                                     seeded(s->config.sampler, s->seed));
        next->posterior_summary = posterior_summary_json(next->rec.posterior, s->config.thresholds);
        next->data_digest = data_digest(s->animal, all);
        const auto seq = next->log.size();
        next->log.push_back({{"seq", seq},
                             {"type", "cohort"},
                             {"at", utc_timestamp()},
                             {"cohort",
                              {{"dose_index", c.dose_index},
                               {"n_treated", c.n_treated},
                               {"n_dlt", c.n_dlt}}},
                             {"override", deviates},
                             {"recommended_dose_index", recommended ? json(*recommended) : json(nullptr)},
                             {"data_digest", next->data_digest},
                             {"recommendation", next->rec.payload}});
        const json rec = next->rec.payload;
        s->publish(std::move(next));
        return ok({{"schema_version", kSchemaVersion},
                   {"session_id", id},
                   {"seq", seq},
                   {"recommendation", rec}});
    } catch (const std::exception& e) {
        return error_response(500, std::string("analysis failed; state unchanged: ") + e.what());
    }
}

ServiceResponse ConductService::get_state(const std::string& id) const
{
    const auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    const auto snap = s->current();
    json co = json::array();
    for (const auto& t : snap->co_data) co.push_back(trial_state_to_json(t));
    return ok({{"schema_version", kSchemaVersion},
               {"session_id", id},
               {"subgroup_id", s->subgroup_id},
               {"seed", s->seed},
               {"busy", s->busy.load()},
               {"trial", trial_state_to_json(snap->trial)},
               {"co_data", co},
               {"data_digest", snap->data_digest},
               {"n_log_entries", snap->log.size()}});
}

ServiceResponse ConductService::get_posterior(const std::string& id) const
{
    const auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    const auto snap = s->current();
    json body = snap->posterior_summary;
    body["session_id"] = id;
    body["data_digest"] = snap->data_digest;
    return ok(std::move(body));
}

ServiceResponse ConductService::get_recommendation(const std::string& id) const
{
    const auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    return ok(s->current()->rec.payload);
}

ServiceResponse ConductService::what_if(const std::string& id, const json& body) const
{
    const auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    const auto snap = s->current();
    CohortInput c;
    try {
        if (!body.is_object()) return error_response(400, "body must be a JSON object");
        std::optional<int> dflt = snap->rec.decision.dose_index;
        if (!dflt) dflt = snap->trial.current_dose();
        c.dose_index = int_field(body, "dose_index", dflt);
        c.n_treated = int_field(body, "n_treated", snap->trial.cohort_size);
        c.n_dlt = int_field(body, "n_dlt", std::nullopt);
    } catch (const DataError& e) {
        return error_response(400, e.what());
    } catch (const json::exception& e) {
        return error_response(400, e.what());
    }
    if (auto err = check_cohort(snap->trial, c)) return *err;
    try {
        HumanTrialState trial = snap->trial;
        trial.cohorts.push_back({c.dose_index, c.n_treated, c.n_dlt});
        const auto all = with_trial(snap->co_data, trial);
        const auto rec = analyze_subgroup(s->config, s->animal, all, s->subgroup_id,
                                          seeded(s->config.sampler, s->seed));
        return ok({{"schema_version", kSchemaVersion},
                   {"session_id", id},
                   {"projection", true},
                   {"hypothetical_cohort",
                    {{"dose_index", c.dose_index}, {"n_treated", c.n_treated}, {"n_dlt", c.n_dlt}}},
                   {"recommendation", rec.payload}});
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

ServiceResponse ConductService::get_log(const std::string& id) const
{
    const auto s = find(id);
    if (!s) return error_response(404, "unknown session " + id);
    return ok({{"schema_version", kSchemaVersion},
               {"session_id", id},
               {"entries", s->current()->log}});
}

json ConductService::replay_log(const json& log)
{
    const json& entries = log.contains("entries") ? log["entries"] : log;
    if (!entries.is_array() || entries.empty() || entries[0].value("type", "") != "create") {
        throw StateError("log must start with a create entry");
    }
    const json& head = entries[0];
    const FullConfig config = config_from_json(head["config"]);
    std::istringstream in(head["animal_data"].get<std::string>());
    const auto animal = parse_animal_csv(in, config.model.reference_dose);
    std::vector<HumanTrialState> co_data;
    for (const auto& t : head["co_data"]) co_data.push_back(trial_state_from_json(t));
    HumanTrialState trial = trial_state_from_json(head["trial"]);
    const std::string subgroup = head["subgroup_id"].get<std::string>();
    const auto sampler = seeded(config.sampler, head["seed"].get<std::uint64_t>());

    json payload;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const json& e = entries[i];
        if (e.value("seq", std::size_t{0}) != i) throw StateError("log sequence is not contiguous");
        if (i > 0) {
            if (e.value("type", "") != "cohort") throw StateError("unknown log entry type");
            const json& c = e["cohort"];
            trial.cohorts.push_back(
                {c["dose_index"].get<int>(), c["n_treated"].get<int>(), c["n_dlt"].get<int>()});
        }
        const auto rec = analyze_subgroup(config, animal, with_trial(co_data, trial), subgroup, sampler);
        if (dump(rec.payload) != dump(e["recommendation"])) {
            throw StateError("replayed recommendation diverges at entry " + std::to_string(i));
        }
        payload = rec.payload;
    }
    return {{"trial", trial_state_to_json(trial)}, {"recommendation", payload}};
}

struct HttpServer::Impl {
    ConductService& service;
    std::string token;
    httplib::Server server;

    Impl(ConductService& s, std::string t) : service(s), token(std::move(t)) {}

    static void send(httplib::Response& res, const ServiceResponse& r)
    {
        res.status = r.status;
        for (const auto& [k, v] : r.headers) res.set_header(k, v);
        res.set_content(dump(r.body), "application/json");
    }

    static std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res)
    {
        try {
            return json::parse(req.body.empty() ? std::string("{}") : req.body);
        } catch (const json::parse_error& e) {
            send(res, error_response(400, std::string("invalid JSON: ") + e.what()));
            return std::nullopt;
        }
    }

    void install()
    {
        server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            if (!token.empty() && req.get_header_value("Authorization") != "Bearer " + token) {
                send(res, error_response(401, "missing or invalid bearer token"));
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                                        std::exception_ptr ep) {
            std::string what = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            send(res, error_response(500, what));
        });
        server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
            send(res, ok({{"schema_version", kSchemaVersion}, {"status", "ok"}}));
        });
        server.Post("/v1/trials", [this](const httplib::Request& req, httplib::Response& res) {
            if (auto b = parse_body(req, res)) send(res, service.create_trial(*b));
        });
        server.Get(R"(/v1/trials/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            send(res, service.get_state(req.matches[1]));
        });
        server.Post(R"(/v1/trials/([^/]+)/cohorts)",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        if (auto b = parse_body(req, res)) {
                            send(res, service.submit_cohort(req.matches[1], *b));
                        }
                    });
        server.Get(R"(/v1/trials/([^/]+)/posterior)",
                   [this](const httplib::Request& req, httplib::Response& res) {
                       send(res, service.get_posterior(req.matches[1]));
                   });
        server.Get(R"(/v1/trials/([^/]+)/recommendation)",
                   [this](const httplib::Request& req, httplib::Response& res) {
                       send(res, service.get_recommendation(req.matches[1]));
                   });
        server.Post(R"(/v1/trials/([^/]+)/what-if)",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        if (auto b = parse_body(req, res)) send(res, service.what_if(req.matches[1], *b));
                    });
        server.Get(R"(/v1/trials/([^/]+)/log)", [this](const httplib::Request& req, httplib::Response& res) {
            send(res, service.get_log(req.matches[1]));
        });
    }
};

HttpServer::HttpServer(ConductService& service, std::string token)
    : impl_(std::make_unique<Impl>(service, std::move(token)))
{
    impl_->install();
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port)
{
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw std::runtime_error("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::run()
{
    impl_->server.listen_after_bind();
}

void HttpServer::stop()
{
    impl_->server.stop();
}

void HttpServer::wait_until_ready() const
{
    impl_->server.wait_until_ready();
}

}  // namespace exnex
