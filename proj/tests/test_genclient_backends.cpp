#include <cmath>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "sement/backends.hpp"
#include "sement/error.hpp"
#include "sement/genclient.hpp"
#include "sement/prompts.hpp"
#include "support.hpp"

using namespace sement;
using sement::test::TempDir;

namespace {

Question question(std::string id = "q1", std::string text = "Which vessel?") {
    Question q;
    q.id = std::move(id);
    q.text = std::move(text);
    q.reference_answer = "uterine artery";
    return q;
}

RetryPolicy no_sleep(std::vector<std::chrono::milliseconds>* slept = nullptr) {
    RetryPolicy p;
    p.sleep = [slept](std::chrono::milliseconds d) {
        if (slept) slept->push_back(d);
    };
    return p;
}

SimulatedBackend simulated(std::uint64_t seed) {
    AnswerProfile p;
    p.question_text = "Which vessel?";
    p.category = Category::Reasoning;
    p.answers = {{"uterine artery", "ua", 6.0, 0.9}, {"ovarian artery", "oa", 3.0, 0.6}, {"iliac", "il", 1.0, 0.4}};
    SimulatedBackend b({p}, seed);
    b.register_meaning("uterine artery", "ua");
    b.register_meaning("the uterine artery", "ua");
    b.register_meaning("ovarian artery", "oa");
    return b;
}

}  // namespace

TEST_CASE("config validation") {
    GenerationConfig c;
    CHECK(validate(c).empty());
    c.num_samples = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = {};
    c.entailment_temperature = 0.7;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c.allow_nonzero_entailment_temperature = true;
    CHECK_NOTHROW(validate(c));
    c = {};
    c.logprob_free = true;
    CHECK_FALSE(validate(c).empty());
}

TEST_CASE("transient errors are retried with exponential backoff") {
    int n = 0;
    ScriptedBackend b([&](const CompletionRequest&) -> CompletionResult {
        if (++n < 3) throw TransientError("429");
        return {"ok", std::vector<double>{-0.1}};
    });
    std::vector<std::chrono::milliseconds> slept;
    const auto res = complete_with_retries(b, {}, no_sleep(&slept));
    CHECK(res.text == "ok");
    REQUIRE(slept.size() == 2);
    CHECK(slept[0].count() == 250);
    CHECK(slept[1].count() == 500);
}

TEST_CASE("retries give up and permanent errors are not retried") {
    ScriptedBackend always([](const CompletionRequest&) -> CompletionResult { throw TransientError("503"); });
    CHECK_THROWS_AS(complete_with_retries(always, {}, no_sleep()), TransientError);
    CHECK(always.calls() == 4);

    ScriptedBackend perm([](const CompletionRequest&) -> CompletionResult { throw BackendError("400"); });
    CHECK_THROWS_AS(complete_with_retries(perm, {}, no_sleep()), BackendError);
    CHECK(perm.calls() == 1);
}

TEST_CASE("generate_answers returns samples ordered by index") {
    ScriptedBackend b([](const CompletionRequest& r) {
        // Later samples finish first.
        std::this_thread::sleep_for(std::chrono::milliseconds(10 - r.sample_index));
        return CompletionResult{"a" + std::to_string(r.sample_index), std::vector<double>{-0.5, -0.1}};
    });
    GenerationConfig cfg;
    cfg.answer_temperature = 0.7;
    const auto gens = generate_answers(question(), cfg, b, {4, no_sleep()});
    REQUIRE(gens.size() == 10);
    for (int i = 0; i < 10; ++i) {
        CHECK(gens[static_cast<std::size_t>(i)].sample_index == i);
        CHECK(gens[static_cast<std::size_t>(i)].text == "a" + std::to_string(i));
        CHECK(gens[static_cast<std::size_t>(i)].temperature == 0.7);
        CHECK(gens[static_cast<std::size_t>(i)].question_id == "q1");
    }
}

TEST_CASE("missing or invalid log-probabilities are a GenerationError") {
    ScriptedBackend none(std::vector<CompletionResult>{{"a", std::nullopt}});
    try {
        (void)generate_answers(question(), GenerationConfig{}, none, {1, no_sleep()});
        FAIL("expected GenerationError");
    } catch (const GenerationError& e) {
        CHECK(e.question_id() == "q1");
    }
    ScriptedBackend positive(std::vector<CompletionResult>{{"a", std::vector<double>{0.3}}});
    CHECK_THROWS_AS(generate_answers(question(), GenerationConfig{}, positive, {1, no_sleep()}), GenerationError);

    GenerationConfig free;
    free.logprob_free = true;
    const auto gens = generate_answers(question(), free, none, {1, no_sleep()});
    CHECK(gens.size() == 10);
    CHECK(gens[0].token_logprobs.empty());
}

TEST_CASE("excluded questions cannot be sampled") {
    auto q = question();
    q.excluded = Exclusion::ImageOrTable;
    ScriptedBackend b(std::vector<CompletionResult>{{"a", std::vector<double>{-0.1}}});
    CHECK_THROWS_AS(generate_answers(q, GenerationConfig{}, b), ValidationError);
    CHECK(b.calls() == 0);
}

TEST_CASE("answer requests carry the configured parameters") {
    GenerationConfig cfg;
    cfg.model_id = "m";
    cfg.max_answer_tokens = 40;
    cfg.logprob_free = true;
    const auto r = answer_request(question(), cfg, 3);
    CHECK(r.model_id == "m");
    CHECK(r.max_tokens == 40);
    CHECK_FALSE(r.want_logprobs);
    CHECK(r.sample_index == 3);
    CHECK(r.user.find("Which vessel?") != std::string::npos);
    CHECK(r.tag.purpose == Purpose::Answer);
}

TEST_CASE("sequence log-likelihood is the mean and permutation invariant") {
    const std::vector<double> a = {-0.1, -2.5, -0.003, -1.7, -0.25};
    const std::vector<double> b = {-1.7, -0.003, -0.25, -0.1, -2.5};
    CHECK(sequence_loglik(a) == sequence_loglik(b));
    CHECK(sequence_loglik(a) == doctest::Approx(-4.553 / 5));
    CHECK_THROWS_AS(sequence_loglik(std::vector<double>{}), ValidationError);
}

TEST_CASE("classifier replies") {
    CHECK(parse_category_reply("Knowledge.") == Category::Knowledge);
    CHECK(parse_category_reply("  reasoning") == Category::Reasoning);
    CHECK_FALSE(parse_category_reply("maybe"));

    std::vector<CompletionResult> replies = {{"hmm", std::nullopt}, {"reasoning", std::nullopt}};
    ScriptedBackend b([&, i = 0](const CompletionRequest& r) mutable {
        CHECK(r.temperature == 0.0);
        return replies[static_cast<std::size_t>(i++)];
    });
    CHECK(classify_question(question(), b, "m", no_sleep()) == Category::Reasoning);
    CHECK(b.calls() == 2);

    ScriptedBackend junk(std::vector<CompletionResult>{{"hmm", std::nullopt}});
    CHECK_THROWS_AS(classify_question(question(), junk, "m", no_sleep()), BackendError);
}

TEST_CASE("the simulated model is deterministic and order independent") {
    auto a = simulated(7);
    auto b = simulated(7);
    GenerationConfig cfg;
    cfg.num_samples = 20;
    const auto ga = generate_answers(question(), cfg, a, {8, no_sleep()});
    const auto gb = generate_answers(question(), cfg, b, {1, no_sleep()});
    CHECK(ga == gb);
    auto c = simulated(8);
    CHECK(generate_answers(question(), cfg, c, {8, no_sleep()}) != ga);

    cfg.answer_temperature = 0.0;
    for (const auto& g : generate_answers(question(), cfg, a, {8, no_sleep()})) CHECK(g.text == "uterine artery");
}

TEST_CASE("the simulated model classifies and judges by meaning") {
    auto b = simulated(1);
    CHECK(classify_question(question(), b, "m", no_sleep()) == Category::Reasoning);

    CompletionRequest r;
    r.tag = {Purpose::Entail, "Which vessel?", "uterine artery", "The uterine artery"};
    CHECK(b.complete(r).text == "entailment");
    r.tag.hypothesis = "ovarian artery";
    CHECK(b.complete(r).text == "contradiction");
}

TEST_CASE("the simulated model loads profile files") {
    const auto qs = load_corpus(test::data_dir() / "toy_corpus.jsonl");
    auto b = SimulatedBackend::from_profile_file(test::data_dir() / "toy_profiles.jsonl", qs, 7);
    GenerationConfig cfg;
    cfg.num_samples = 3;
    const auto gens = generate_answers(qs[0], cfg, b, {2, no_sleep()});
    CHECK(gens.size() == 3);
    CHECK_THROWS_AS(SimulatedBackend::from_profile_file(test::data_dir() / "nope.jsonl", qs, 7), ConfigError);
}

TEST_CASE("the cache serves repeated requests from disk") {
    TempDir tmp;
    ScriptedBackend inner([](const CompletionRequest& r) {
        return CompletionResult{"a" + std::to_string(r.sample_index), std::vector<double>{-0.2}};
    });
    CompletionRequest r;
    r.user = "hello";
    r.sample_index = 2;
    {
        CachingBackend cache(inner, tmp.path());
        CHECK(cache.complete(r).text == "a2");
        CHECK(cache.complete(r).text == "a2");
        CHECK(cache.hits() == 1);
        CHECK(cache.misses() == 1);
    }
    CachingBackend fresh(inner, tmp.path());
    const auto res = fresh.complete(r);
    CHECK(res.token_logprobs == std::vector<double>{-0.2});
    CHECK(fresh.hits() == 1);
    CHECK(inner.calls() == 1);

    auto other = r;
    other.temperature = 0.5;
    CHECK(fresh.cache_key(other) != fresh.cache_key(r));
    other = r;
    other.tag.subject = "routing only";
    CHECK(fresh.cache_key(other) == fresh.cache_key(r));
}

TEST_CASE("gateway request and response bodies") {
    CompletionRequest r;
    r.model_id = "m";
    r.system = "sys";
    r.user = "usr";
    r.temperature = 0.5;
    r.max_tokens = 12;
    const auto body = HttpGateway::request_body(r);
    CHECK(body.find(R"("model":"m")") != std::string::npos);
    CHECK(body.find(R"("logprobs":true)") != std::string::npos);
    CHECK(body.find(R"("role":"system")") != std::string::npos);

    const auto res = HttpGateway::parse_response(
        R"({"choices":[{"message":{"content":"hi"},"logprobs":{"content":[{"token":"hi","logprob":-0.5}]}}]})");
    CHECK(res.text == "hi");
    CHECK(res.token_logprobs == std::vector<double>{-0.5});
    CHECK_FALSE(HttpGateway::parse_response(R"({"choices":[{"message":{"content":"x"}}]})").token_logprobs);
    CHECK_THROWS_AS((void)HttpGateway::parse_response("nope"), BackendError);
    CHECK_THROWS_AS((void)HttpGateway::parse_response(R"({"choices":[]})"), BackendError);
}

TEST_CASE("gateway maps HTTP statuses onto error kinds") {
    httplib::Server server;
    std::atomic<int> status{200};
    std::string auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        res.status = status.load();
        res.set_content(R"({"choices":[{"message":{"content":"ok"},"logprobs":{"content":[{"logprob":-0.1}]}}]})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    GatewayConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
    cfg.timeout = std::chrono::seconds(5);
    HttpGateway gw(cfg, "secret");
    CompletionRequest r;
    r.user = "u";
    CHECK(gw.complete(r).text == "ok");
    CHECK(auth == "Bearer secret");
    status = 429;
    CHECK_THROWS_AS(gw.complete(r), TransientError);
    status = 502;
    CHECK_THROWS_AS(gw.complete(r), TransientError);
    status = 400;
    try {
        (void)gw.complete(r);
        FAIL("expected BackendError");
    } catch (const TransientError&) {
        FAIL("400 must not be transient");
    } catch (const BackendError&) {
    }
    server.stop();
    t.join();

    GatewayConfig dead = cfg;
    dead.timeout = std::chrono::seconds(1);
    CHECK_THROWS_AS(HttpGateway(dead, "k").complete(r), TransientError);
}

TEST_CASE("gateway needs its key variable") {
    GatewayConfig cfg;
    cfg.api_key_env = "SEMENT_TEST_UNSET_KEY_VARIABLE";
    CHECK_THROWS_AS(HttpGateway{cfg}, ConfigError);
}

TEST_CASE("prompt templates") {
    const auto ids = prompt_template_ids();
    CHECK(std::find(ids.begin(), ids.end(), "answer-v1") != ids.end());
    CHECK(std::find(ids.begin(), ids.end(), "entail-v1") != ids.end());
    CHECK_THROWS_AS(prompt_template("nope"), ConfigError);
    CHECK(render("Q: {{question}}!", {{"question", "x"}}) == "Q: x!");
    CHECK_THROWS_AS(render("{{other}}", {{"question", "x"}}), ConfigError);
    const auto t = parse_prompt_template("t", "# comment\n--- system ---\nS\n--- user ---\nU {{question}}\n");
    CHECK(t.system == "S");
    CHECK(t.user == "U {{question}}");
}
