#include "sement/review.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "codec.hpp"
#include "hashing.hpp"
#include "httplib.h"
#include "sement/digest.hpp"
#include "sement/pipeline.hpp"
#include "sement/stages.hpp"

namespace sement {

using detail::json;

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Annotations

std::vector<std::string> annotation_problems(const Annotation& a, int cluster_count) {
    std::vector<std::string> problems;
    if (a.question_id.empty()) problems.emplace_back("question_id: required");
    if (a.reviewer_id.empty()) problems.emplace_back("reviewer_id: required");
    if (a.question_quality == QuestionQuality::Flawed && trim(a.quality_comment).empty()) {
        problems.emplace_back("quality_comment: required when the question is marked flawed");
    }
    if (a.lp_same_as_true && a.lp_correct_but_different) {
        problems.emplace_back(
            "lp_correct_but_different: cannot be set together with lp_same_as_true");
    }
    if (static_cast<int>(a.clusters.size()) != cluster_count) {
        problems.push_back("clusters: expected " + std::to_string(cluster_count) + " judgments, got " +
                           std::to_string(a.clusters.size()));
    }
    return problems;
}

namespace {

json annotation_json(const Annotation& a) {
    json clusters = json::array();
    for (const auto& c : a.clusters) {
        clusters.push_back({{"consistent_meaning", c.consistent_meaning},
                            {"distinct_from_others", c.distinct_from_others},
                            {"equals_true_answer", c.equals_true_answer}});
    }
    return {{"question_id", a.question_id},
            {"reviewer_id", a.reviewer_id},
            {"question_quality", a.question_quality == QuestionQuality::Flawed ? "flawed" : "acceptable"},
            {"quality_comment", a.quality_comment},
            {"lp_same_as_true", a.lp_same_as_true},
            {"lp_correct_but_different", a.lp_correct_but_different},
            {"clusters", std::move(clusters)},
            {"submitted_at", a.submitted_at}};
}

Annotation annotation_from(const json& j) {
    constexpr std::string_view what = "annotation";
    if (!j.is_object()) throw ValidationError("annotation: expected a JSON object");
    Annotation a;
    a.question_id = j.value("question_id", "");
    a.reviewer_id = j.value("reviewer_id", "");
    const auto quality = detail::require<std::string>(j, "question_quality", what);
    if (quality == "acceptable") {
        a.question_quality = QuestionQuality::Acceptable;
    } else if (quality == "flawed") {
        a.question_quality = QuestionQuality::Flawed;
    } else {
        throw ValidationError("annotation: question_quality must be acceptable or flawed");
    }
    a.quality_comment = detail::optional_field<std::string>(j, "quality_comment", what).value_or("");
    a.lp_same_as_true = detail::require<bool>(j, "lp_same_as_true", what);
    a.lp_correct_but_different = detail::require<bool>(j, "lp_correct_but_different", what);
    const auto clusters = detail::require<json>(j, "clusters", what);
    if (!clusters.is_array()) throw ValidationError("annotation: clusters must be an array");
    for (const auto& c : clusters) {
        ClusterJudgment cj;
        cj.consistent_meaning = detail::require<bool>(c, "consistent_meaning", what);
        cj.distinct_from_others = detail::require<bool>(c, "distinct_from_others", what);
        cj.equals_true_answer = detail::require<bool>(c, "equals_true_answer", what);
        a.clusters.push_back(cj);
    }
    a.submitted_at = j.value("submitted_at", "");
    return a;
}

json bundle_json(const ReviewBundle& b) {
    json clusters = json::array();
    for (const auto& members : b.clusters) {
        json arr = json::array();
        for (const auto& m : members) {
            arr.push_back({{"sample_index", m.sample_index},
                           {"text", m.text},
                           {"perplexity", detail::optional_number(m.perplexity)}});
        }
        clusters.push_back(std::move(arr));
    }
    return {{"question_id", b.question_id},
            {"question_text", b.question_text},
            {"reference_answer", b.reference_answer},
            {"lowest_perplexity_answer", b.lowest_perplexity_answer},
            {"clusters", std::move(clusters)},
            {"cluster_count", b.cluster_count}};
}

json interval_json(const std::optional<Interval>& i) {
    if (!i) return nullptr;
    return {{"point", i->point}, {"lower", i->lower}, {"upper", i->upper}};
}

json fraction_json(const FractionCell& f) {
    return {{"correct", f.correct}, {"n", f.n}, {"fraction", detail::optional_number(f.fraction())}};
}

}  // namespace

std::string encode_annotation(const Annotation& a) { return detail::dump_line(annotation_json(a)); }

Annotation decode_annotation(std::string_view text) {
    return annotation_from(detail::parse_json(text, "annotation"));
}

std::string encode_bundle(const ReviewBundle& b) { return detail::dump_line(bundle_json(b)); }

std::vector<std::string> sample_review_set(std::span<const std::string> eligible_ids, int n,
                                           std::uint64_t seed) {
    if (n <= 0) throw ConfigError("review set size must be positive");
    if (static_cast<std::size_t>(n) > eligible_ids.size()) {
        throw ConfigError("review set size " + std::to_string(n) + " exceeds the " +
                          std::to_string(eligible_ids.size()) + " eligible questions");
    }
    const auto count = static_cast<std::size_t>(n);
    std::vector<std::size_t> idx(eligible_ids.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    detail::SplitMixStream rng(detail::mix(seed, 0x72657669657773ULL));
    // Partial Fisher-Yates: the first `count` slots end up a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    out.reserve(count);
    for (auto i : idx) out.push_back(eligible_ids[i]);
    return out;
}

// ---------------------------------------------------------------------------
// ReviewData

ReviewData ReviewData::load(const RunDirectory& run) {
    std::map<std::string, QuestionGenerations> gens;
    for (auto& g : read_generations(run)) gens.emplace(g.question_id, std::move(g));
    std::map<std::string, Clustering> clus;
    for (auto& c : read_clusterings(run)) clus.emplace(c.question_id, std::move(c));
    std::map<std::string, UncertaintyScore> scores;
    for (auto& s : read_scores(run)) scores.emplace(s.question_id, std::move(s));
    std::map<std::string, std::vector<CorrectnessRecord>> records;
    for (auto& r : read_correctness(run)) records[r.question_id].push_back(std::move(r));

    ReviewData data;
    for (auto& q : run.eligible_questions()) {
        auto g = gens.find(q.id);
        auto c = clus.find(q.id);
        auto s = scores.find(q.id);
        auto r = records.find(q.id);
        if (g == gens.end() || c == clus.end() || s == scores.end() || r == records.end()) {
            throw ValidationError("run is missing stage records for question " + q.id);
        }
        const std::string id = q.id;
        data.order_.push_back(id);
        data.entries_.emplace(id, Entry{std::move(q), std::move(g->second.generations), std::move(c->second),
                                        std::move(s->second), std::move(r->second)});
    }
    return data;
}

const ReviewData::Entry& ReviewData::entry(const std::string& question_id) const {
    auto it = entries_.find(question_id);
    if (it == entries_.end()) throw NotFoundError("unknown question '" + question_id + "'");
    return it->second;
}

bool ReviewData::has_question(const std::string& question_id) const {
    return entries_.count(question_id) > 0;
}

std::vector<std::string> ReviewData::eligible_ids() const { return order_; }

const Clustering& ReviewData::clustering(const std::string& question_id) const {
    return entry(question_id).clustering;
}

const UncertaintyScore& ReviewData::score(const std::string& question_id) const {
    return entry(question_id).score;
}

const CorrectnessRecord& ReviewData::record(const std::string& question_id, Method method) const {
    for (const auto& r : entry(question_id).records) {
        if (r.method == method && r.definition == Definition::Primary) return r;
    }
    throw NotFoundError("question '" + question_id + "' has no " + std::string(to_string(method)) + " record");
}

ReviewBundle ReviewData::bundle(const std::string& question_id) const {
    const auto& e = entry(question_id);
    ReviewBundle b;
    b.question_id = e.question.id;
    b.question_text = e.question.text;
    b.reference_answer = e.question.reference_answer;
    const auto& ppl = e.score.per_sample_perplexity;
    for (const auto& members : e.clustering.clusters) {
        std::vector<BundleMember> out;
        for (int s : members) {
            BundleMember m;
            m.sample_index = s;
            m.text = e.generations[static_cast<std::size_t>(s)].text;
            if (!ppl.empty() && std::isfinite(ppl[static_cast<std::size_t>(s)])) {
                m.perplexity = ppl[static_cast<std::size_t>(s)];
            }
            out.push_back(std::move(m));
        }
        b.clusters.push_back(std::move(out));
    }
    b.cluster_count = static_cast<int>(b.clusters.size());
    std::vector<int> all(e.generations.size());
    std::iota(all.begin(), all.end(), 0);
    b.lowest_perplexity_answer = e.generations[static_cast<std::size_t>(lowest_perplexity_index(ppl, all))].text;
    return b;
}

std::optional<std::vector<std::string>> stored_review_set(const RunDirectory& run) {
    const fs::path file = run.path() / "review" / "review_set.json";
    if (!fs::exists(file)) return std::nullopt;
    const json j = detail::parse_json(read_file(file), "review_set.json");
    return detail::require<std::vector<std::string>>(j, "ids", "review_set.json");
}

std::vector<std::string> ensure_review_set(const RunDirectory& run, const ReviewData& data, int n,
                                           std::uint64_t seed) {
    const fs::path file = run.path() / "review" / "review_set.json";
    if (fs::exists(file)) {
        const json j = detail::parse_json(read_file(file), "review_set.json");
        if (j.value("size", -1) != n || j.value("seed", std::uint64_t{0}) != seed) {
            throw ConfigError("the run already has a review set drawn with size " +
                              std::to_string(j.value("size", -1)) + " and seed " +
                              std::to_string(j.value("seed", std::uint64_t{0})));
        }
        return j.at("ids").get<std::vector<std::string>>();
    }
    const auto ids = data.eligible_ids();
    auto set = sample_review_set(ids, n, seed);
    run.write_artifact("review/review_set.json",
                       detail::dump_line({{"size", n}, {"seed", seed}, {"ids", set}}) + "\n");
    return set;
}

// ---------------------------------------------------------------------------
// AnnotationStore

AnnotationStore::AnnotationStore(fs::path log_file) : log_file_(std::move(log_file)) {
    std::ifstream in(log_file_);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto a = decode_annotation(line);
        current_[{a.question_id, a.reviewer_id}] = a;
        history_.push_back(std::move(a));
    }
}

int AnnotationStore::submit(const Annotation& a) {
    std::lock_guard lock(mutex_);
    fs::create_directories(log_file_.parent_path());
    {
        std::ofstream out(log_file_, std::ios::app | std::ios::binary);
        out << encode_annotation(a) << '\n';
        out.flush();
        if (!out) throw Error("cannot append to annotation log " + log_file_.string());
    }
    history_.push_back(a);
    current_[{a.question_id, a.reviewer_id}] = a;
    return static_cast<int>(std::count_if(history_.begin(), history_.end(), [&](const Annotation& h) {
        return h.question_id == a.question_id && h.reviewer_id == a.reviewer_id;
    }));
}

std::vector<Annotation> AnnotationStore::current() const {
    std::lock_guard lock(mutex_);
    std::vector<Annotation> out;
    for (const auto& [key, a] : current_) out.push_back(a);
    return out;
}

std::vector<Annotation> AnnotationStore::for_question(const std::string& question_id) const {
    std::lock_guard lock(mutex_);
    std::vector<Annotation> out;
    for (const auto& [key, a] : current_) {
        if (key.first == question_id) out.push_back(a);
    }
    return out;
}

std::vector<Annotation> AnnotationStore::history() const {
    std::lock_guard lock(mutex_);
    return history_;
}

// ---------------------------------------------------------------------------
// Expert metrics

namespace {

template <class Get>
bool majority(const std::vector<const Annotation*>& anns, Get get) {
    std::size_t yes = 0;
    for (const auto* a : anns) yes += get(*a) ? 1 : 0;
    return 2 * yes > anns.size();
}

std::optional<Interval> expert_auroc(const std::vector<double>& scores, const std::vector<bool>& labels,
                                     const EvalOptions& options) {
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    const auto neg = labels.size() - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    if (pos < 2 || neg < 2) {
        const double p = auroc(scores, labels);
        return Interval{p, p, p};
    }
    return auroc_ci(scores, labels, options.resamples, options.seed);
}

}  // namespace

ExpertMetrics expert_metrics(std::span<const Annotation> annotations, const ReviewData& data,
                             std::span<const std::string> review_set, const EvalOptions& options) {
    std::map<std::string, std::vector<const Annotation*>> by_question;
    for (const auto& a : annotations) by_question[a.question_id].push_back(&a);

    ExpertMetrics m;
    std::map<int, ExpertRow> rows;
    std::vector<double> se_scores;
    std::vector<bool> se_labels;
    std::vector<double> ppl_scores;
    std::vector<bool> ppl_labels;

    for (const auto& qid : review_set) {
        if (!data.has_question(qid)) continue;
        const auto& clustering = data.clustering(qid);
        const int k = static_cast<int>(clustering.clusters.size());
        std::vector<const Annotation*> anns;
        if (auto it = by_question.find(qid); it != by_question.end()) {
            for (const auto* a : it->second) {
                if (static_cast<int>(a->clusters.size()) == k) anns.push_back(a);
            }
        }
        if (anns.empty()) {
            ++m.unannotated;
            continue;
        }
        ++m.annotated;

        bool success = true;
        std::vector<bool> equals_true(static_cast<std::size_t>(k));
        for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            success = success && majority(anns, [c](const Annotation& a) { return a.clusters[c].consistent_meaning; }) &&
                      majority(anns, [c](const Annotation& a) { return a.clusters[c].distinct_from_others; });
            equals_true[c] = majority(anns, [c](const Annotation& a) { return a.clusters[c].equals_true_answer; });
        }
        if (success) ++m.clustering_successes;

        const auto sizes = cluster_sizes(clustering);
        const int largest = *std::max_element(sizes.begin(), sizes.end());
        const bool tied = std::count(sizes.begin(), sizes.end(), largest) > 1;
        const auto first = static_cast<std::size_t>(std::find(sizes.begin(), sizes.end(), largest) - sizes.begin());
        const bool lc_expert = !tied && equals_true[first];
        const bool lp_expert = majority(anns, [](const Annotation& a) { return a.lp_same_as_true; }) ||
                               majority(anns, [](const Annotation& a) { return a.lp_correct_but_different; });

        auto& row = rows[k];
        row.cluster_count = k;
        row.largest_cluster_expert.n += 1;
        row.largest_cluster_expert.correct += lc_expert ? 1 : 0;
        row.largest_cluster_llm.n += 1;
        row.largest_cluster_llm.correct += data.record(qid, Method::LargestCluster).correct ? 1 : 0;
        row.lowest_perplexity_expert.n += 1;
        row.lowest_perplexity_expert.correct += lp_expert ? 1 : 0;

        const auto& score = data.score(qid);
        if (score.perplexity) {
            row.lowest_perplexity_llm.n += 1;
            row.lowest_perplexity_llm.correct += data.record(qid, Method::LowestPerplexity).correct ? 1 : 0;
            ppl_scores.push_back(correctness_score(*score.perplexity));
            ppl_labels.push_back(lp_expert);
        }
        if (score.semantic_entropy) {
            se_scores.push_back(correctness_score(*score.semantic_entropy));
            se_labels.push_back(lc_expert);
        }
    }
    for (auto& [k, row] : rows) m.by_cluster_count.push_back(row);
    m.semantic_entropy_auroc = expert_auroc(se_scores, se_labels, options);
    m.perplexity_auroc = expert_auroc(ppl_scores, ppl_labels, options);
    return m;
}

std::string encode_expert_metrics(const ExpertMetrics& m) {
    json rows = json::array();
    for (const auto& r : m.by_cluster_count) {
        rows.push_back({{"cluster_count", r.cluster_count},
                        {"lowest_perplexity_expert", fraction_json(r.lowest_perplexity_expert)},
                        {"lowest_perplexity_llm", fraction_json(r.lowest_perplexity_llm)},
                        {"largest_cluster_expert", fraction_json(r.largest_cluster_expert)},
                        {"largest_cluster_llm", fraction_json(r.largest_cluster_llm)}});
    }
    return detail::dump_line({{"by_cluster_count", std::move(rows)},
                              {"semantic_entropy_auroc", interval_json(m.semantic_entropy_auroc)},
                              {"perplexity_auroc", interval_json(m.perplexity_auroc)},
                              {"annotated", m.annotated},
                              {"unannotated", m.unannotated},
                              {"clustering_successes", m.clustering_successes},
                              {"clustering_success_rate", detail::optional_number(m.clustering_success_rate())}});
}

std::map<std::string, std::string> load_token_file(const fs::path& path) {
    const json j = detail::parse_json(read_file(path), path.filename().string());
    if (!j.is_object()) throw ConfigError(path.string() + ": expected an object of token -> reviewer id");
    std::map<std::string, std::string> out;
    for (const auto& [token, reviewer] : j.items()) {
        if (!reviewer.is_string() || token.empty()) {
            throw ConfigError(path.string() + ": token entries must map to reviewer id strings");
        }
        out[token] = reviewer.get<std::string>();
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP service

struct ReviewService::Impl {
    httplib::Server server;
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(detail::dump_line(body), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

}  // namespace

ReviewService::ReviewService(const RunDirectory& run, ReviewServiceConfig config)
    : impl_(std::make_unique<Impl>()),
      data_(ReviewData::load(run)),
      review_set_(ensure_review_set(run, data_, config.review_set_size, config.seed)),
      store_(run.path() / "review" / "annotations.jsonl"),
      config_(std::move(config)) {
    if (config_.tokens.empty()) throw ConfigError("the review service needs at least one reviewer token");
    if (!config_.clock) config_.clock = default_timestamp;

    auto& srv = impl_->server;

    // Resolves the caller or answers 401; returns the reviewer id.
    auto reviewer_of = [this](const httplib::Request& req, httplib::Response& res) -> std::optional<std::string> {
        const auto header = req.get_header_value("Authorization");
        constexpr std::string_view prefix = "Bearer ";
        if (header.rfind(prefix, 0) == 0) {
            if (auto it = config_.tokens.find(header.substr(prefix.size())); it != config_.tokens.end()) {
                return it->second;
            }
        }
        res.set_header("WWW-Authenticate", "Bearer");
        send_error(res, 401, "missing or unknown bearer token");
        return std::nullopt;
    };
    auto in_review_set = [this](const std::string& qid) {
        return std::find(review_set_.begin(), review_set_.end(), qid) != review_set_.end();
    };

    srv.Get("/api/review-set", [=, this](const httplib::Request& req, httplib::Response& res) {
        const auto reviewer = reviewer_of(req, res);
        if (!reviewer) return;
        json completed = json::array();
        for (const auto& a : store_.current()) {
            if (a.reviewer_id == *reviewer && in_review_set(a.question_id)) completed.push_back(a.question_id);
        }
        send_json(res, 200,
                  {{"reviewer_id", *reviewer},
                   {"question_ids", review_set_},
                   {"completed", std::move(completed)},
                   {"total", review_set_.size()}});
    });

    srv.Get(R"(/api/bundles/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
        if (!reviewer_of(req, res)) return;
        const std::string qid = req.matches[1];
        if (!in_review_set(qid)) return send_error(res, 404, "question '" + qid + "' is not in the review set");
        send_json(res, 200, bundle_json(data_.bundle(qid)));
    });

    srv.Get(R"(/api/annotations/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
        const auto reviewer = reviewer_of(req, res);
        if (!reviewer) return;
        const std::string qid = req.matches[1];
        if (!in_review_set(qid)) return send_error(res, 404, "question '" + qid + "' is not in the review set");
        for (const auto& a : store_.for_question(qid)) {
            if (a.reviewer_id == *reviewer) return send_json(res, 200, annotation_json(a));
        }
        send_error(res, 404, "no annotation yet");
    });

    srv.Put(R"(/api/annotations/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
        const auto reviewer = reviewer_of(req, res);
        if (!reviewer) return;
        const std::string qid = req.matches[1];
        if (!in_review_set(qid)) return send_error(res, 404, "question '" + qid + "' is not in the review set");
        Annotation a;
        try {
            a = decode_annotation(req.body);
        } catch (const ValidationError& e) {
            return send_json(res, 422, {{"errors", {e.what()}}});
        }
        if (!a.question_id.empty() && a.question_id != qid) {
            return send_json(res, 422, {{"errors", {"question_id: does not match the URL"}}});
        }
        a.question_id = qid;
        a.reviewer_id = *reviewer;
        a.submitted_at = config_.clock();
        const auto problems = annotation_problems(a, data_.bundle(qid).cluster_count);
        if (!problems.empty()) return send_json(res, 422, {{"errors", problems}});
        const int revision = store_.submit(a);
        send_json(res, 200, {{"revision", revision}, {"annotation", annotation_json(a)}});
    });

    srv.Get("/api/annotations", [=, this](const httplib::Request& req, httplib::Response& res) {
        if (!reviewer_of(req, res)) return;
        json all = json::array();
        for (const auto& a : store_.current()) all.push_back(annotation_json(a));
        send_json(res, 200, all);
    });

    srv.Get("/api/metrics", [=, this](const httplib::Request& req, httplib::Response& res) {
        if (!reviewer_of(req, res)) return;
        const auto current = store_.current();
        const auto m = expert_metrics(current, data_, review_set_, config_.eval);
        res.status = 200;
        res.set_content(encode_expert_metrics(m), "application/json");
    });

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const ValidationError& e) {
            send_json(res, 422, {{"errors", {e.what()}}});
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    if (config_.static_dir && !srv.set_mount_point("/", config_.static_dir->string())) {
        throw ConfigError("static directory " + config_.static_dir->string() + " does not exist");
    }
}

ReviewService::~ReviewService() { stop(); }

bool ReviewService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int ReviewService::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool ReviewService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void ReviewService::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void ReviewService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace sement
