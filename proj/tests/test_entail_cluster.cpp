#include <map>

#include "doctest.h"
#include "sement/backends.hpp"
#include "sement/cluster.hpp"
#include "sement/entail.hpp"
#include "sement/error.hpp"
#include "support.hpp"

using namespace sement;

namespace {

/// Judge backed by a planted meaning label per text.
FunctionOracle meaning_oracle(std::map<std::string, int> meaning) {
    return FunctionOracle([meaning](std::string_view p, std::string_view h, std::string_view) {
        return meaning.at(std::string(p)) == meaning.at(std::string(h)) ? Verdict::Entails : Verdict::NotEntails;
    });
}

}  // namespace

TEST_CASE("judge reply parsing accepts only the three labels") {
    CHECK(parse_judge_reply("entailment") == NliLabel::Entailment);
    CHECK(parse_judge_reply("  Neutral.\n") == NliLabel::Neutral);
    CHECK(parse_judge_reply("CONTRADICTION") == NliLabel::Contradiction);
    CHECK_FALSE(parse_judge_reply("entailment because"));
    CHECK_FALSE(parse_judge_reply(""));
}

TEST_CASE("byte-equal texts entail without a backend call") {
    FunctionOracle never([](auto, auto, auto) -> Verdict { throw std::logic_error("called"); });
    CHECK(entails("same", "same", "q", never).directed == Verdict::Entails);
    CHECK(never.calls() == 0);
    CHECK_THROWS_AS(entails("", "x", "q", never), ValidationError);
}

TEST_CASE("one-way entailment is not equivalence") {
    FunctionOracle oneway([](std::string_view p, std::string_view, std::string_view) {
        return p == "Paris, France" ? Verdict::Entails : Verdict::NotEntails;
    });
    CHECK_FALSE(bidirectional("Paris, France", "Paris", "capital?", oneway));
}

TEST_CASE("normalised exact oracle ignores case and spacing") {
    NormalizedExactOracle o;
    CHECK(o.judge("  Folic   acid ", "folic acid", "") == Verdict::Entails);
    CHECK(o.judge("folic acid", "folate", "") == Verdict::NotEntails);
}

TEST_CASE("scripted oracle from equivalence classes") {
    ScriptedOracle o;
    o.add_equivalence_class({"hCG", "human chorionic gonadotrophin"});
    o.set("progesterone", "hcg", Verdict::Entails);
    CHECK(o.judge("HCG", "Human chorionic gonadotrophin", "") == Verdict::Entails);
    CHECK(o.judge("progesterone", "hCG", "") == Verdict::Entails);
    CHECK(o.judge("hCG", "progesterone", "") == Verdict::NotEntails);
}

TEST_CASE("LLM judge rejects a non-zero temperature without the override") {
    ScriptedBackend b(std::vector<CompletionResult>{{"entailment", std::nullopt}});
    CHECK_THROWS_AS(LlmJudge(b, "m", {}, 0.7), ConfigError);
    CHECK_NOTHROW(LlmJudge(b, "m", {}, 0.7, true));
}

TEST_CASE("LLM judge reprompts once, then fails") {
    int calls = 0;
    ScriptedBackend garbled([&](const CompletionRequest& r) {
        ++calls;
        CHECK(r.temperature == 0.0);
        return CompletionResult{calls == 1 ? "maybe?" : "Entailment.", std::nullopt};
    });
    LlmJudge judge(garbled, "m", {});
    CHECK(judge.judge("a", "b", "q") == Verdict::Entails);
    CHECK(calls == 2);

    ScriptedBackend hopeless(std::vector<CompletionResult>{{"no idea", std::nullopt}});
    LlmJudge bad(hopeless, "m", {});
    CHECK_THROWS_AS(bad.judge("a", "b", "q"), BackendError);
    CHECK(hopeless.calls() == 2);
}

TEST_CASE("greedy clustering compares against representatives only") {
    // A B A C with meanings A=0, B=1, C=2.
    auto oracle = meaning_oracle({{"A", 0}, {"B", 1}, {"C", 2}});
    EntailmentJudge judge(oracle);
    const auto gens = test::make_generations({"A", "B", "A", "C"});
    const auto c = cluster_generations(gens, "q", judge);
    CHECK(c.clusters == std::vector<std::vector<int>>{{0, 2}, {1}, {3}});
    CHECK(c.representatives == std::vector<int>{0, 1, 3});
    CHECK(cluster_sizes(c) == std::vector<int>{2, 1, 1});
    CHECK_NOTHROW(validate_partition(c, 4));
}

TEST_CASE("all-identical samples form one cluster; all-distinct form M") {
    auto oracle = meaning_oracle({{"x", 0}, {"X", 0}, {"a", 1}, {"b", 2}, {"c", 3}});
    EntailmentJudge judge(oracle);
    CHECK(cluster_generations(test::make_generations({"x", "X", "x"}), "q", judge).clusters.size() == 1);
    CHECK(cluster_generations(test::make_generations({"a", "b", "c"}), "q", judge).clusters.size() == 3);
}

TEST_CASE("blank answers become singletons without judge calls") {
    FunctionOracle oracle([](auto, auto, auto) { return Verdict::Entails; });
    EntailmentJudge judge(oracle);
    const auto c = cluster_generations(test::make_generations({"  ", "a", ""}), "q", judge);
    CHECK(c.clusters == std::vector<std::vector<int>>{{0}, {1}, {2}});
    CHECK(oracle.calls() == 0);
}

TEST_CASE("clustering rejects mixed questions and bad ordering") {
    ExactOracle oracle;
    EntailmentJudge judge(oracle);
    auto gens = test::make_generations({"a", "b"});
    gens[1].question_id = "other";
    CHECK_THROWS_AS(cluster_generations(gens, "q", judge), ValidationError);
    auto shuffled = test::make_generations({"a", "b"});
    std::swap(shuffled[0], shuffled[1]);
    CHECK_THROWS_AS(cluster_generations(shuffled, "q", judge), ValidationError);
}

TEST_CASE("verdict log records both directions of every comparison") {
    auto oracle = meaning_oracle({{"A", 0}, {"B", 1}});
    EntailmentJudge judge(oracle);
    const auto c = cluster_generations(test::make_generations({"A", "B"}), "ctx", judge);
    REQUIRE(c.verdict_log.size() == 2);
    CHECK(c.verdict_log[0].premise == "B");
    CHECK(c.verdict_log[1].premise == "A");
    CHECK(c.verdict_log[0].question_context == "ctx");
}

TEST_CASE("judge memoises directed verdicts") {
    auto oracle = meaning_oracle({{"A", 0}, {"B", 1}});
    EntailmentJudge judge(oracle);
    judge.bidirectional("A", "B", "q");
    judge.bidirectional("A", "B", "q");
    CHECK(judge.backend_calls() == 2);
}

TEST_CASE("validate_partition catches malformed partitions") {
    Clustering c;
    c.question_id = "q";
    c.clusters = {{0, 1}, {1}};
    c.representatives = {0, 1};
    CHECK_THROWS_AS(validate_partition(c, 2), ValidationError);
    c.clusters = {{0}};
    c.representatives = {0};
    CHECK_THROWS_AS(validate_partition(c, 2), ValidationError);
}
