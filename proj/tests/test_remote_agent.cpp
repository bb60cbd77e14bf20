// Exercises the HTTP wire contract against an in-process server that speaks
// the same schema (backed by the oracle logic, or deliberately broken).
#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "pis/engine.hpp"
#include "pis/remote_agents.hpp"

using namespace pis;

namespace {

struct TestServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit TestServer() = default;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~TestServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

AgentEndpointSpec spec_for(const TestServer& srv, int retries = 0) {
    AgentEndpointSpec spec;
    spec.kind = AgentEndpointSpec::Kind::Remote;
    spec.url = srv.url();
    spec.timeout_s = 5;
    spec.retries = retries;
    return spec;
}

}  // namespace

TEST_CASE("remote annotator round-trips an oracle-backed server") {
    const DatasetRecord base = generate_record(17, {5, false});

    TestServer srv;
    srv.server.Post("/annotate", [&](const httplib::Request& req, httplib::Response& res) {
        const json body = json::parse(req.body);
        REQUIRE(body.contains("image_b64"));
        REQUIRE(body.contains("overlay_b64"));
        REQUIRE(body.contains("crop_b64"));
        REQUIRE(body.contains("class_label"));
        REQUIRE(body.contains("few_shot"));
        // payloads decode to valid PPM bytes
        const std::string img = base64_decode(body["image_b64"].get<std::string>());
        REQUIRE(img.rfind("P6\n", 0) == 0);

        OracleAnnotator oracle;
        const DatasetRecord rec = oracle.annotate(base, body.value("seed", 0ULL));
        json pos = json::array(), neg = json::array();
        for (const auto& i : rec.positives) pos.push_back(to_json(i));
        for (const auto& i : rec.negatives) neg.push_back(to_json(i));
        res.set_content(json{{"concept_np", rec.concept_np}, {"positives", pos}, {"negatives", neg}}.dump(),
                        "application/json");
    });
    srv.start();

    RemoteAnnotator ann(spec_for(srv));
    const DatasetRecord got = ann.annotate(base, 42);
    CHECK(got.concept_np == base.concept_np);
    REQUIRE(got.positives.size() == 4);
    REQUIRE(got.negatives.size() == 4);
    for (const auto& ins : got.positives) CHECK(instruction_aligned(base.scene, base.target_id, ins));
}

TEST_CASE("remote annotator rejects a 7-instruction reply") {
    TestServer srv;
    srv.server.Post("/annotate", [](const httplib::Request&, httplib::Response& res) {
        json pos = json::array(), neg = json::array();
        for (int i = 0; i < 4; ++i)
            pos.push_back(json{{"text", "x"}, {"level", "simple"}, {"form", "declarative"}, {"polarity", "positive"}});
        for (int i = 0; i < 3; ++i)  // one short
            neg.push_back(json{{"text", "y"}, {"level", "simple"}, {"form", "declarative"}, {"polarity", "negative"}});
        res.set_content(json{{"concept_np", "red square"}, {"positives", pos}, {"negatives", neg}}.dump(),
                        "application/json");
    });
    srv.start();

    RemoteAnnotator ann(spec_for(srv));
    const DatasetRecord base = generate_record(18, {4, false});
    CHECK_THROWS_AS(ann.annotate(base, 1), AgentError);
}

TEST_CASE("remote inspector round-trips and validates indices") {
    const DatasetRecord base = generate_record(19, {5, false});
    const InspectionTask task = make_inspection_task(base, 5);

    TestServer srv;
    std::atomic<int> calls{0};
    srv.server.Post("/inspect", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        const json body = json::parse(req.body);
        REQUIRE(body.contains("image_b64"));
        REQUIRE(body.contains("mask_b64"));
        REQUIRE(body.at("choices").size() == 8);
        // echo back the indices whose text matches an aligned instruction
        OracleInspector oracle;
        json sel = json::array();
        for (int i : oracle.inspect(task, 0)) sel.push_back(i);
        res.set_content(json{{"selected_indices", sel}}.dump(), "application/json");
    });
    srv.start();

    RemoteInspector ins(spec_for(srv));
    const auto sel = ins.inspect(task, 0);
    CHECK(judge_selection(task, sel).accepted);
    CHECK(calls.load() == 1);
}

TEST_CASE("remote inspector flags out-of-range indices") {
    const DatasetRecord base = generate_record(20, {4, false});
    const InspectionTask task = make_inspection_task(base, 6);

    TestServer srv;
    srv.server.Post("/inspect", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"selected_indices", {0, 11}}}.dump(), "application/json");
    });
    srv.start();

    RemoteInspector ins(spec_for(srv));
    CHECK_THROWS_AS(ins.inspect(task, 0), AgentError);
}

TEST_CASE("server failures burn the round and route to the human queue") {
    TestServer srv;
    std::atomic<int> calls{0};
    srv.server.Post("/annotate", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 500;
    });
    srv.start();

    AgentEndpointSpec spec = spec_for(srv, /*retries=*/2);
    RemoteAnnotator ann(spec);
    OracleInspector ins;

    EngineSample s;
    s.id = 0;
    s.record = generate_record(21, {4, false});
    s.seed = 9;
    EngineStats stats;
    auto done = run_loop(s, ann, ins, 3, &stats);
    CHECK(done.status == SampleStatus::HumanQueue);
    CHECK(stats.agent_failures == 3);
    CHECK(calls.load() == 9);  // 3 rounds x (1 + 2 retries)
    REQUIRE(done.failure_history.size() == 3);
    CHECK(done.failure_history[0].find("agent failure") != std::string::npos);
}

TEST_CASE("unreachable endpoint raises AgentError after retries") {
    AgentEndpointSpec spec;
    spec.kind = AgentEndpointSpec::Kind::Remote;
    spec.url = "http://127.0.0.1:1";  // nothing listens here
    spec.timeout_s = 1;
    spec.retries = 1;
    RemoteAnnotator ann(spec);
    const DatasetRecord base = generate_record(22, {4, false});
    CHECK_THROWS_AS(ann.annotate(base, 3), AgentError);
}

TEST_CASE("base64 round trip") {
    const std::string data = "P6\n2 2\n255\nABCDEF\x01\x02\x03\x04\x05\x06";
    CHECK(base64_decode(base64_encode(data)) == data);
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("a") == "YQ==");
    CHECK(base64_encode("ab") == "YWI=");
    CHECK(base64_encode("abc") == "YWJj");
}
