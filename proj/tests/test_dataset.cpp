#include <sstream>

#include "doctest.h"
#include "sement/dataset.hpp"
#include "sement/error.hpp"
#include "support.hpp"

using namespace sement;

namespace {

std::vector<Question> parse(const std::string& text) {
    std::istringstream in(text);
    return parse_corpus(in);
}

}  // namespace

TEST_CASE("mini corpus filters to the eligible short-answer items") {
    const auto qs = load_corpus(test::data_dir() / "mini_corpus.jsonl");
    REQUIRE(qs.size() == 8);
    const auto eligible = filter_eligible(qs);
    CHECK(eligible.size() == 5);
    int part_one = 0;
    for (const auto& q : eligible) part_one += q.part == Part::One ? 1 : 0;
    CHECK(part_one == 3);
    CHECK(eligible.size() - part_one == 2);
    CHECK(qs[5].excluded == Exclusion::ImageOrTable);
    CHECK(qs[7].excluded == Exclusion::NotShortAnswer);
    CHECK(qs[1].category == Category::Unlabelled);
}

TEST_CASE("toy corpus has twenty items, eighteen eligible") {
    const auto qs = load_corpus(test::data_dir() / "toy_corpus.jsonl");
    CHECK(qs.size() == 20);
    CHECK(filter_eligible(qs).size() == 18);
}

TEST_CASE("missing field names the line") {
    const std::string good =
        R"({"schema":1,"id":"a","part":"one","domain":"x","category":null,"text":"t","reference_answer":"r","excluded":null})";
    const std::string bad = R"({"schema":1,"id":"b","part":"one","domain":"x","category":null,"text":"t","excluded":null})";
    try {
        parse(good + "\n\n" + bad + "\n");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("reference_answer") != std::string::npos);
    }
}

TEST_CASE("duplicate ids are rejected with both line numbers") {
    const std::string rec =
        R"({"schema":1,"id":"dup","part":"two","domain":"x","category":"reasoning","text":"t","reference_answer":"r","excluded":null})";
    try {
        parse(rec + "\n" + rec + "\n");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dup") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
    }
}

TEST_CASE("unsupported schema and bad enums are rejected") {
    CHECK_THROWS_AS(parse(R"({"schema":2,"id":"a","part":"one","domain":"x","category":null,"text":"t","reference_answer":"r","excluded":null})"),
                    ValidationError);
    CHECK_THROWS_AS(parse(R"({"schema":1,"id":"a","part":"three","domain":"x","category":null,"text":"t","reference_answer":"r","excluded":null})"),
                    ValidationError);
    CHECK_THROWS_AS(parse("not json\n"), ValidationError);
}

TEST_CASE("corpus round-trips through write_corpus") {
    const auto qs = load_corpus(test::data_dir() / "toy_corpus.jsonl");
    std::ostringstream out;
    write_corpus(out, qs);
    CHECK(parse(out.str()) == qs);
}

TEST_CASE("answer length counts Unicode scalars of the trimmed text") {
    CHECK(answer_length("  hCG \n") == 3);
    CHECK(answer_length("Müllerian") == 9);
    CHECK(answer_length("") == 0);
    CHECK(trim("\t a b \r\n") == "a b");
}
