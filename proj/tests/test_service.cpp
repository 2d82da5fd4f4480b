#include <doctest.h>

#include <chrono>
#include <thread>

#include <httplib.h>

#include "exnex/error.hpp"
#include "exnex/service.hpp"
#include "support.hpp"

using namespace exnex;

namespace {

FullConfig service_config()
{
    auto c = exnex::test::quick_config();
    c.sampler.n_iterations = 800;
    c.sampler.n_burnin = 300;
    return c;
}

ConductService make_service() { return {service_config(), exnex::test::shipped_animal_data()}; }

std::string create(ConductService& svc, const std::string& subgroup = "T1", int max_n = 24)
{
    const auto r = svc.create_trial({{"subgroup_id", subgroup}, {"seed", 21}, {"max_sample_size", max_n}});
    REQUIRE_MESSAGE(r.status == 201, r.body.dump());
    return r.body["session_id"].get<std::string>();
}

json cohort(int dose, int dlt, bool override_flag = false)
{
    return {{"dose_index", dose}, {"n_treated", 3}, {"n_dlt", dlt}, {"override", override_flag}};
}

int recommended(const ServiceResponse& r)
{
    const auto& d = r.body.contains("recommendation") ? r.body["recommendation"]["decision"]
                                                       : r.body["decision"];
    return d["dose_index"].is_null() ? -1 : d["dose_index"].get<int>();
}

}  // namespace

TEST_CASE("a session follows recommendations without skipping doses")
{
    auto svc = make_service();
    const auto id = create(svc);
    auto rec = svc.get_recommendation(id);
    CHECK(rec.body["decision"]["kind"] == "start");
    int dose = 0;  // first-in-human cohorts start at the lowest dose
    int highest = -1;
    for (int h = 0; h < 4; ++h) {
        const auto r = svc.submit_cohort(id, cohort(dose, 0, h == 0 && recommended(rec) != 0));
        REQUIRE_MESSAGE(r.status == 200, r.body.dump());
        highest = std::max(highest, dose);
        const int next = recommended(r);
        REQUIRE(next >= 0);
        CHECK(next <= highest + 1);
        const auto kind = r.body["recommendation"]["decision"]["kind"].get<std::string>();
        CHECK((kind == "escalate_to" || kind == "stay" || kind == "de_escalate_to"));
        dose = next;
    }
    const auto state = svc.get_state(id);
    CHECK(state.body["trial"]["cohorts"].size() == 4);
    CHECK(state.body["n_log_entries"] == 5);
    const auto post = svc.get_posterior(id);
    CHECK(post.status == 200);
    CHECK(post.body["data_digest"] == state.body["data_digest"]);
}

TEST_CASE("error statuses: unknown session, bad input, deviation, closed trial")
{
    auto svc = make_service();
    CHECK(svc.get_state("nope").status == 404);
    CHECK(svc.submit_cohort("nope", cohort(0, 0)).status == 404);
    CHECK(svc.create_trial({{"subgroup_id", "T9"}}).status == 400);
    CHECK(svc.create_trial(json::array()).status == 400);

    const auto id = create(svc, "T1", 6);
    const int start = recommended(svc.get_recommendation(id));
    CHECK(svc.submit_cohort(id, {{"dose_index", "x"}}).status == 400);
    CHECK(svc.submit_cohort(id, cohort(0, 4)).status == 400);
    CHECK(svc.submit_cohort(id, cohort(9, 0, true)).status == 400);

    const int other = start == 0 ? 1 : 0;
    auto r = svc.submit_cohort(id, cohort(other, 0));
    CHECK(r.status == 422);
    r = svc.submit_cohort(id, cohort(other, 0, true));
    REQUIRE(r.status == 200);
    auto log = svc.get_log(id).body["entries"];
    CHECK(log.back()["override"] == true);
    CHECK(log.back()["recommended_dose_index"] == start);

    const int next = recommended(r);
    r = svc.submit_cohort(id, cohort(next, 0));
    REQUIRE(r.status == 200);
    CHECK(r.body["recommendation"]["decision"]["kind"] == "complete");
    CHECK(svc.submit_cohort(id, cohort(next, 0, true)).status == 409);
    log = svc.get_log(id).body["entries"];
    CHECK(log.back()["override"] == false);
}

TEST_CASE("a concurrent submission is refused while another is being analysed")
{
    // A long chain makes the analysis slow enough to observe.
    auto slow = service_config();
    slow.sampler.n_iterations = 200000;
    slow.sampler.n_burnin = 1000;
    auto slow_svc = ConductService(slow, exnex::test::shipped_animal_data());
    const auto made = slow_svc.create_trial({{"subgroup_id", "T1"}, {"seed", 21}});
    REQUIRE(made.status == 201);
    const auto sid = made.body["session_id"].get<std::string>();
    const int sdose = recommended(slow_svc.get_recommendation(sid));

    ServiceResponse first;
    std::thread worker([&] { first = slow_svc.submit_cohort(sid, cohort(sdose, 0)); });
    bool saw_busy = false;
    for (int i = 0; i < 2000 && !saw_busy; ++i) {
        saw_busy = slow_svc.get_state(sid).body["busy"].get<bool>();
        if (!saw_busy) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    ServiceResponse second;
    if (saw_busy) second = slow_svc.submit_cohort(sid, cohort(sdose, 0));
    // Reads stay available during the analysis.
    CHECK(slow_svc.get_recommendation(sid).status == 200);
    worker.join();
    REQUIRE(saw_busy);
    CHECK(first.status == 200);
    CHECK(second.status == 423);
    CHECK(second.body["retry"] == true);
    bool has_retry_after = false;
    for (const auto& [k, v] : second.headers) has_retry_after |= k == "Retry-After";
    CHECK(has_retry_after);
    CHECK(slow_svc.get_state(sid).body["trial"]["cohorts"].size() == 1);
}

TEST_CASE("what-if projections leave the session untouched")
{
    auto svc = make_service();
    const auto id = create(svc);
    const int dose = recommended(svc.get_recommendation(id));
    REQUIRE(svc.submit_cohort(id, cohort(dose, 0, dose != 0)).status == 200);
    const auto before_post = svc.get_posterior(id).body.dump();
    const auto before_log = svc.get_log(id).body.dump();
    const auto w = svc.what_if(id, {{"n_dlt", 3}});
    REQUIRE(w.status == 200);
    CHECK(w.body["projection"] == true);
    CHECK(w.body["recommendation"]["decision"]["kind"] != "escalate_to");
    CHECK(svc.get_posterior(id).body.dump() == before_post);
    CHECK(svc.get_log(id).body.dump() == before_log);
}

TEST_CASE("the decision log replays to the same session")
{
    auto svc = make_service();
    const auto id = create(svc, "T2");
    int dose = recommended(svc.get_recommendation(id));
    REQUIRE(svc.submit_cohort(id, cohort(dose, 0)).status == 200);
    dose = recommended(svc.get_recommendation(id));
    REQUIRE(svc.submit_cohort(id, cohort(dose, 1)).status == 200);
    const auto log = svc.get_log(id).body;
    const auto replay = ConductService::replay_log(log);
    CHECK(replay["recommendation"] == svc.get_recommendation(id).body);
    CHECK(replay["trial"] == svc.get_state(id).body["trial"]);

    auto tampered = log;
    tampered["entries"][1]["cohort"]["n_dlt"] = 3;
    CHECK_THROWS_AS(ConductService::replay_log(tampered), StateError);
}

TEST_CASE("HTTP interface with bearer token")
{
    auto svc = make_service();
    HttpServer server(svc, "s3cret");
    const int port = server.bind("127.0.0.1", 0);
    std::thread runner([&] { server.run(); });
    server.wait_until_ready();

    httplib::Client anon("127.0.0.1", port);
    auto r = anon.Get("/v1/health");
    REQUIRE(r);
    CHECK(r->status == 401);

    httplib::Client client("127.0.0.1", port);
    client.set_bearer_token_auth("s3cret");
    r = client.Get("/v1/health");
    REQUIRE(r);
    CHECK(r->status == 200);

    r = client.Post("/v1/trials", R"({"subgroup_id": "T1", "seed": 21})", "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 201);
    const auto id = json::parse(r->body)["session_id"].get<std::string>();

    r = client.Get("/v1/trials/" + id + "/recommendation");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body) == svc.get_recommendation(id).body);
    const int dose = json::parse(r->body)["decision"]["dose_index"].get<int>();

    r = client.Post("/v1/trials/" + id + "/cohorts", "{not json", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    r = client.Post("/v1/trials/" + id + "/cohorts", cohort(dose, 0, dose != 0).dump(),
                    "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    r = client.Post("/v1/trials/" + id + "/what-if", R"({"n_dlt": 1})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    for (const char* path : {"", "/posterior", "/log"}) {
        r = client.Get("/v1/trials/" + id + path);
        REQUIRE(r);
        CHECK(r->status == 200);
    }
    r = client.Get("/v1/trials/missing");
    REQUIRE(r);
    CHECK(r->status == 404);

    server.stop();
    runner.join();
}
