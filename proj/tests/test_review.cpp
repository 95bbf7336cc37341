#include <set>
#include <numeric>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "sement/error.hpp"
#include "sement/pipeline.hpp"
#include "sement/review.hpp"
#include "support.hpp"

using namespace sement;
using sement::test::TempDir;
using json = nlohmann::json;

namespace {

/// One scored toy run shared by the tests in this file.
struct ToyRun {
    TempDir tmp;
    std::filesystem::path dir;

    ToyRun() {
        PipelineConfig c;
        c.corpus = test::data_dir() / "toy_corpus.jsonl";
        c.stub_profiles = test::data_dir() / "toy_profiles.jsonl";
        c.runs_root = tmp.path();
        c.use_cache = false;
        c.bootstrap_resamples = 100;
        c.created_at = "2023-11-14T22:13:20Z";
        Pipeline p(c);
        p.run_all();
        dir = p.run_dir();
    }
};

Annotation blank(const ReviewData& data, const std::string& qid, const std::string& reviewer) {
    Annotation a;
    a.question_id = qid;
    a.reviewer_id = reviewer;
    a.clusters.resize(data.clustering(qid).clusters.size(),
                      ClusterJudgment{true, true, false});
    return a;
}

int total_n(const ExpertMetrics& m) {
    return std::accumulate(m.by_cluster_count.begin(), m.by_cluster_count.end(), 0,
                           [](int acc, const ExpertRow& r) { return acc + r.largest_cluster_expert.n; });
}

}  // namespace

TEST_CASE("annotation validation") {
    Annotation a;
    a.question_id = "q";
    a.reviewer_id = "r";
    a.clusters.resize(2);
    CHECK(annotation_problems(a, 2).empty());
    CHECK(annotation_problems(a, 3).size() == 1);
    a.question_quality = QuestionQuality::Flawed;
    CHECK(annotation_problems(a, 2).size() == 1);
    a.quality_comment = "ambiguous stem";
    CHECK(annotation_problems(a, 2).empty());
    a.lp_same_as_true = a.lp_correct_but_different = true;
    CHECK(annotation_problems(a, 2).size() == 1);
    a.lp_correct_but_different = false;
    CHECK(decode_annotation(encode_annotation(a)) == a);
}

TEST_CASE("review set sampling") {
    const std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f", "g"};
    const auto s = sample_review_set(ids, 4, 3);
    CHECK(s.size() == 4);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(sample_review_set(ids, 4, 3) == s);
    CHECK(sample_review_set(ids, 7, 3) == ids);
    CHECK_THROWS_AS(sample_review_set(ids, 8, 3), ConfigError);
    CHECK_THROWS_AS(sample_review_set(ids, 0, 3), ConfigError);

    // Every id should be reachable across seeds.
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        for (const auto& id : sample_review_set(ids, 2, seed)) seen.insert(id);
    }
    CHECK(seen.size() == ids.size());
}

TEST_CASE("review data and the persisted review set") {
    ToyRun toy;
    const auto run = RunDirectory::open(toy.dir);
    const auto data = ReviewData::load(run);
    CHECK(data.eligible_ids().size() == 18);
    const auto b = data.bundle("tq01");
    CHECK(b.cluster_count == static_cast<int>(b.clusters.size()));
    const auto encoded = encode_bundle(b);
    CHECK(encoded.find("correct") == std::string::npos);
    CHECK(encoded.find("entropy") == std::string::npos);
    CHECK_THROWS_AS((void)data.bundle("tq19"), NotFoundError);

    CHECK_FALSE(stored_review_set(run));
    const auto set = ensure_review_set(run, data, 6, 1);
    CHECK(set.size() == 6);
    CHECK(stored_review_set(run) == set);
    CHECK(ensure_review_set(run, data, 6, 1) == set);
    CHECK_THROWS_AS(ensure_review_set(run, data, 7, 1), ConfigError);
    CHECK_THROWS_AS(ensure_review_set(run, data, 6, 2), ConfigError);
}

TEST_CASE("annotation store keeps history and replays its log") {
    TempDir tmp;
    const auto log = tmp.path() / "review" / "annotations.jsonl";
    Annotation a;
    a.question_id = "q";
    a.reviewer_id = "r1";
    {
        AnnotationStore store(log);
        CHECK(store.submit(a) == 1);
        a.lp_same_as_true = true;
        CHECK(store.submit(a) == 2);
        auto b = a;
        b.reviewer_id = "r2";
        CHECK(store.submit(b) == 1);
        CHECK(store.current().size() == 2);
        CHECK(store.history().size() == 3);
    }
    AnnotationStore replay(log);
    CHECK(replay.history().size() == 3);
    CHECK(replay.for_question("q").size() == 2);
    CHECK(replay.for_question("q")[0].lp_same_as_true);
}

TEST_CASE("expert metrics resolve reviewers by strict majority") {
    ToyRun toy;
    const auto run = RunDirectory::open(toy.dir);
    const auto data = ReviewData::load(run);
    const auto ids = data.eligible_ids();
    const std::vector<std::string> set(ids.begin(), ids.begin() + 8);

    std::vector<Annotation> anns;
    // Three reviewers on the first four questions; two of three say the LP answer is right.
    for (std::size_t q = 0; q < 4; ++q) {
        for (const char* r : {"r1", "r2", "r3"}) {
            auto a = blank(data, set[q], r);
            a.lp_same_as_true = std::string(r) != "r3";
            anns.push_back(a);
        }
    }
    // A two-way split on the next question resolves to false.
    auto yes = blank(data, set[4], "r1");
    yes.lp_correct_but_different = true;
    anns.push_back(yes);
    anns.push_back(blank(data, set[4], "r2"));

    const auto m = expert_metrics(anns, data, set, {100, 1});
    CHECK(m.annotated == 5);
    CHECK(m.unannotated == 3);
    CHECK(total_n(m) == 5);
    int lp_correct = 0;
    int lc_correct = 0;
    for (const auto& row : m.by_cluster_count) {
        lp_correct += row.lowest_perplexity_expert.correct;
        lc_correct += row.largest_cluster_expert.correct;
    }
    CHECK(lp_correct == 4);
    CHECK(lc_correct == 0);
    CHECK(m.clustering_successes == 5);
    CHECK(m.clustering_success_rate() == doctest::Approx(1.0));
    CHECK_FALSE(m.semantic_entropy_auroc);

    // Two of three flag a cluster as inconsistent: that question fails.
    for (auto& a : anns) {
        if (a.question_id == set[0] && a.reviewer_id != "r1") a.clusters[0].consistent_meaning = false;
    }
    CHECK(expert_metrics(anns, data, set, {100, 1}).clustering_successes == 4);

    // Annotations with the wrong cluster count are ignored.
    auto wrong = blank(data, set[5], "r1");
    wrong.clusters.emplace_back();
    anns.push_back(wrong);
    CHECK(expert_metrics(anns, data, set, {100, 1}).annotated == 5);
}

TEST_CASE("largest-cluster expert label follows the largest cluster") {
    ToyRun toy;
    const auto run = RunDirectory::open(toy.dir);
    const auto data = ReviewData::load(run);
    std::vector<std::string> set;
    std::vector<Annotation> anns;
    int expected = 0;
    for (const auto& id : data.eligible_ids()) {
        const auto& c = data.clustering(id);
        std::vector<std::size_t> sizes;
        for (const auto& cl : c.clusters) sizes.push_back(cl.size());
        const auto top = *std::max_element(sizes.begin(), sizes.end());
        const bool tied = std::count(sizes.begin(), sizes.end(), top) > 1;
        auto a = blank(data, id, "r1");
        // Mark every maximal cluster as matching the reference.
        for (std::size_t k = 0; k < sizes.size(); ++k) a.clusters[k].equals_true_answer = sizes[k] == top;
        anns.push_back(a);
        set.push_back(id);
        expected += tied ? 0 : 1;
    }
    const auto m = expert_metrics(anns, data, set, {100, 1});
    int got = 0;
    for (const auto& row : m.by_cluster_count) got += row.largest_cluster_expert.correct;
    CHECK(got == expected);
}

TEST_CASE("review service over HTTP") {
    ToyRun toy;
    const auto run = RunDirectory::open(toy.dir);
    ReviewServiceConfig cfg;
    cfg.tokens = {{"tok-a", "alice"}, {"tok-b", "bob"}};
    cfg.review_set_size = 5;
    cfg.seed = 9;
    cfg.eval = {100, 1};
    cfg.clock = [] { return std::string("2024-01-01T00:00:00Z"); };
    ReviewService service(run, cfg);
    const int port = service.bind_any_port("127.0.0.1");
    std::thread t([&] { service.listen_after_bind(); });
    service.wait_until_ready();

    httplib::Client anon("127.0.0.1", port);
    CHECK(anon.Get("/api/review-set")->status == 401);
    httplib::Client alice("127.0.0.1", port);
    alice.set_bearer_token_auth("tok-a");
    httplib::Client bad("127.0.0.1", port);
    bad.set_bearer_token_auth("nope");
    CHECK(bad.Get("/api/metrics")->status == 401);

    auto rs = alice.Get("/api/review-set");
    REQUIRE(rs->status == 200);
    const auto set = json::parse(rs->body);
    CHECK(set["reviewer_id"] == "alice");
    CHECK(set["total"] == 5);
    CHECK(set["completed"].empty());
    const std::string qid = set["question_ids"][0];
    CHECK(service.review_set().size() == 5);

    const auto data = ReviewData::load(run);
    std::string outside;
    for (const auto& id : data.eligible_ids()) {
        if (std::find(service.review_set().begin(), service.review_set().end(), id) == service.review_set().end()) {
            outside = id;
            break;
        }
    }
    CHECK(alice.Get("/api/bundles/" + outside)->status == 404);
    CHECK(alice.Get("/api/bundles/nope")->status == 404);

    auto bundle = alice.Get("/api/bundles/" + qid);
    REQUIRE(bundle->status == 200);
    const auto b = json::parse(bundle->body);
    const auto k = b["clusters"].size();
    CHECK(b["question_id"] == qid);

    CHECK(alice.Get("/api/annotations/" + qid)->status == 404);

    json ann = {{"question_id", qid}, {"question_quality", "flawed"}, {"quality_comment", ""},
                {"lp_same_as_true", true}, {"lp_correct_but_different", false},
                {"clusters", json::array()}};
    auto put = alice.Put("/api/annotations/" + qid, ann.dump(), "application/json");
    REQUIRE(put->status == 422);
    CHECK(json::parse(put->body)["errors"].size() == 2);
    CHECK(alice.Put("/api/annotations/" + qid, "{", "application/json")->status == 422);

    ann["quality_comment"] = "two answers defensible";
    for (std::size_t i = 0; i < k; ++i) {
        ann["clusters"].push_back({{"consistent_meaning", true}, {"distinct_from_others", true},
                                   {"equals_true_answer", i == 0}});
    }
    put = alice.Put("/api/annotations/" + qid, ann.dump(), "application/json");
    REQUIRE(put->status == 200);
    auto body = json::parse(put->body);
    CHECK(body["revision"] == 1);
    CHECK(body["annotation"]["reviewer_id"] == "alice");
    CHECK(body["annotation"]["submitted_at"] == "2024-01-01T00:00:00Z");
    put = alice.Put("/api/annotations/" + qid, ann.dump(), "application/json");
    CHECK(json::parse(put->body)["revision"] == 2);
    CHECK(alice.Put("/api/annotations/" + outside, ann.dump(), "application/json")->status == 404);

    auto mine = alice.Get("/api/annotations/" + qid);
    REQUIRE(mine->status == 200);
    CHECK(json::parse(mine->body)["quality_comment"] == "two answers defensible");

    httplib::Client bob("127.0.0.1", port);
    bob.set_bearer_token_auth("tok-b");
    CHECK(bob.Get("/api/annotations/" + qid)->status == 404);
    CHECK(json::parse(alice.Get("/api/review-set")->body)["completed"].size() == 1);
    CHECK(json::parse(bob.Get("/api/review-set")->body)["completed"].empty());

    CHECK(json::parse(bob.Get("/api/annotations")->body).size() == 1);
    auto metrics = bob.Get("/api/metrics");
    REQUIRE(metrics->status == 200);
    const auto mj = json::parse(metrics->body);
    CHECK(mj["annotated"] == 1);
    CHECK(mj["unannotated"] == 4);

    service.stop();
    t.join();
    CHECK(service.annotations().history().size() == 2);
}

TEST_CASE("the review service needs tokens") {
    ToyRun toy;
    const auto run = RunDirectory::open(toy.dir);
    ReviewServiceConfig cfg;
    cfg.review_set_size = 3;
    CHECK_THROWS_AS(ReviewService(run, cfg), ConfigError);
}
