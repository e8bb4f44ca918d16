#include <atomic>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "polymatch/coordination.hpp"
#include "polymatch/synth.hpp"

using namespace polymatch;
using nlohmann::json;

namespace {

std::string reply(const std::string& text) {
    return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}}}})}}.dump();
}

// Local chat-completion stand-in. Behaviour picked by URL path:
//   /rules  applies the built-in rules to each user line
//   /fail   HTTP 500
//   /short  drops the last line
//   /flaky  fails every other request starting with the first, otherwise like /rules
class StubServer {
public:
    StubServer() {
        const auto rules = builtin_rules();
        auto normalize_lines = [rules](const httplib::Request& req) {
            const auto body = json::parse(req.body);
            std::istringstream in(body["messages"][1]["content"].get<std::string>());
            std::string line, out;
            while (std::getline(in, line)) out += apply_rules(line, rules) + "\n";
            return out;
        };
        server_.Post("/rules", [=, this](const httplib::Request& req, httplib::Response& res) {
            record(req);
            res.set_content(reply(normalize_lines(req)), "application/json");
        });
        server_.Post("/fail", [this](const httplib::Request& req, httplib::Response& res) {
            record(req);
            res.status = 500;
        });
        server_.Post("/short", [=, this](const httplib::Request& req, httplib::Response& res) {
            record(req);
            auto text = normalize_lines(req);
            text.pop_back();
            const auto cut = text.rfind('\n');
            res.set_content(reply(cut == std::string::npos ? "" : text.substr(0, cut)), "application/json");
        });
        server_.Post("/flaky", [=, this](const httplib::Request& req, httplib::Response& res) {
            if (record(req) % 2 == 0) {
                res.status = 503;
                return;
            }
            res.set_content(reply(normalize_lines(req)), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }
    int requests() const { return count_.load(); }
    std::string last_auth() {
        std::lock_guard lock(mu_);
        return auth_;
    }
    json last_body() {
        std::lock_guard lock(mu_);
        return json::parse(body_);
    }

private:
    int record(const httplib::Request& req) {
        std::lock_guard lock(mu_);
        auth_ = req.get_header_value("Authorization");
        body_ = req.body;
        return count_++;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> count_{0};
    std::mutex mu_;
    std::string auth_;
    std::string body_;
};

Dataset small_dataset() {
    SynthSpec s;
    s.n_tables = 3;
    s.n_entities = 12;
    s.corruption = {0.0, 0.5, 0.5};
    s.seed = 21;
    return generate(s);
}

CoordinationOptions model_options(CoordinationMode mode, const std::string& endpoint, std::size_t batch = 4) {
    CoordinationOptions o;
    o.mode = mode;
    TextModelConfig cfg;
    cfg.endpoint = endpoint;
    cfg.model_name = "stub";
    cfg.batch_size = batch;
    cfg.max_in_flight = 3;
    cfg.retry_limit = 1;
    cfg.timeout = std::chrono::milliseconds(5000);
    o.text_model = cfg;
    return o;
}

class UpperModel : public TextModel {
public:
    std::string complete(const std::vector<ChatMessage>& m, int) override {
        std::string s = m.at(1).content;
        for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return s;
    }
};

}  // namespace

TEST_CASE("rules_only rewrites every record with the rule engine") {
    const auto d = small_dataset();
    const auto out = coordinate(d, CoordinationOptions{});
    for (const auto& t : d.tables) {
        for (std::uint32_t r = 0; r < t.rows.size(); ++r) {
            CHECK(out.text({t.table_id, r}) == apply_rules(serialize_record(t, r), builtin_rules()));
        }
    }
    CHECK(out.model_records == 0);
}

TEST_CASE("model modes need a model") {
    CoordinationOptions o;
    o.mode = CoordinationMode::model_only;
    CHECK_THROWS_AS(coordinate(small_dataset(), o), Error);
}

TEST_CASE("stub model output lands on the right records") {
    const auto d = small_dataset();
    UpperModel upper;
    for (std::size_t batch : {1, 3, 7, 100}) {
        const auto out = coordinate(d, model_options(CoordinationMode::model_only, "http://unused/", batch), &upper);
        for (const auto& t : d.tables) {
            for (std::uint32_t r = 0; r < t.rows.size(); ++r) {
                auto want = serialize_record(t, r);
                for (auto& c : want) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                CHECK(out.text({t.table_id, r}) == want);
            }
        }
        CHECK(out.model_records == d.record_count());
    }
}

TEST_CASE("HTTP model that applies the rules equals rules_only") {
    StubServer stub;
    const auto d = small_dataset();
    const auto via_model = coordinate(d, model_options(CoordinationMode::model_only, stub.url("/rules")));
    const auto via_rules = coordinate(d, CoordinationOptions{});
    CHECK(via_model.texts == via_rules.texts);
    CHECK(stub.requests() == static_cast<int>((d.record_count() + 3) / 4));
    const auto body = stub.last_body();
    CHECK(body["model"] == "stub");
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["max_tokens"].get<int>() % 64 == 0);
    CHECK(body["max_tokens"].get<int>() > 0);
}

TEST_CASE("failing model: model_only reports records, fallback uses rules") {
    StubServer stub;
    const auto d = small_dataset();
    try {
        coordinate(d, model_options(CoordinationMode::model_only, stub.url("/fail")));
        FAIL("expected CoordinationError");
    } catch (const CoordinationError& e) {
        CHECK(e.failures().size() == d.record_count());
        CHECK(e.failures().front().message.find("HTTP 500") != std::string::npos);
    }
    const auto fb = coordinate(d, model_options(CoordinationMode::model_with_rule_fallback, stub.url("/fail")));
    CHECK(fb.texts == coordinate(d, CoordinationOptions{}).texts);
    CHECK(fb.fallback_records == d.record_count());
}

TEST_CASE("line-count mismatch counts as failure") {
    StubServer stub;
    const auto d = small_dataset();
    CHECK_THROWS_AS(coordinate(d, model_options(CoordinationMode::model_only, stub.url("/short"))),
                    CoordinationError);
    // Two attempts per batch.
    CHECK(stub.requests() == 2 * static_cast<int>((d.record_count() + 3) / 4));
}

TEST_CASE("retries recover from transient errors") {
    StubServer stub;
    const auto d = small_dataset();
    auto o = model_options(CoordinationMode::model_only, stub.url("/flaky"), 1000);
    o.text_model->max_in_flight = 1;
    const auto out = coordinate(d, o);
    CHECK(out.texts == coordinate(d, CoordinationOptions{}).texts);
    CHECK(stub.requests() == 2);
}

TEST_CASE("bearer token comes from the configured variable") {
    StubServer stub;
    TextModelConfig cfg;
    cfg.endpoint = stub.url("/rules");
    cfg.api_key_env = "PM_TEST_KEY";
    ::setenv("PM_TEST_KEY", "sekrit", 1);
    HttpTextModel model(cfg);
    CHECK(model.complete({{"system", "s"}, {"user", "year: 1999"}}, 8) == "year: 1999\n");
    CHECK(stub.last_auth() == "Bearer sekrit");
    ::unsetenv("PM_TEST_KEY");
    model.complete({{"system", "s"}, {"user", "x"}}, 8);
    CHECK(stub.last_auth().empty());
}

TEST_CASE("request body and response parsing") {
    TextModelConfig cfg;
    cfg.endpoint = "http://127.0.0.1:9/x";
    cfg.model_name = "m";
    cfg.temperature = 0.5;
    HttpTextModel model(cfg);
    const auto body = json::parse(model.request_body({{"system", "a"}, {"user", "b"}}, 33));
    CHECK(body["max_tokens"] == 33);
    CHECK(body["temperature"] == 0.5);
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][1]["content"] == "b");

    CHECK(HttpTextModel::parse_response(reply("ok")) == "ok");
    CHECK(HttpTextModel::parse_response(R"({"choices":[{"text":"legacy"}]})") == "legacy");
    CHECK_THROWS_AS(HttpTextModel::parse_response("not json"), Error);
    CHECK_THROWS_AS(HttpTextModel::parse_response(R"({"choices":[]})"), Error);
    CHECK_THROWS_AS(HttpTextModel::parse_response(R"({"choices":[{"message":{}}]})"), Error);
}

TEST_CASE("unreachable endpoint fails cleanly") {
    TextModelConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    cfg.timeout = std::chrono::milliseconds(500);
    HttpTextModel model(cfg);
    CHECK_THROWS_AS(model.complete({{"user", "x"}}, 4), Error);
    cfg.endpoint = "not a url";
    CHECK_THROWS_AS(HttpTextModel{cfg}.complete({{"user", "x"}}, 4), Error);
}

TEST_CASE("config validation and mode names") {
    TextModelConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.endpoint = "http://x/";
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    for (auto m : {CoordinationMode::rules_only, CoordinationMode::model_only,
                   CoordinationMode::model_with_rule_fallback}) {
        CHECK(parse_coordination_mode(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_coordination_mode("llm"), Error);
}
