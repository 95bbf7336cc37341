#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sement/cluster.hpp"
#include "sement/eval.hpp"
#include "sement/metrics.hpp"
#include "sement/run.hpp"
#include "sement/scoring.hpp"

namespace sement {

struct BundleMember {
    int sample_index = 0;
    std::string text;
    std::optional<double> perplexity;
};

/// What a reviewer sees for one question. Deliberately carries no
/// correctness labels or entropy values.
struct ReviewBundle {
    std::string question_id;
    std::string question_text;
    std::string reference_answer;
    std::string lowest_perplexity_answer;
    std::vector<std::vector<BundleMember>> clusters;
    int cluster_count = 0;
};

enum class QuestionQuality { Acceptable, Flawed };

struct ClusterJudgment {
    bool consistent_meaning = false;
    bool distinct_from_others = false;
    bool equals_true_answer = false;
    friend bool operator==(const ClusterJudgment&, const ClusterJudgment&) = default;
};

struct Annotation {
    std::string question_id;
    std::string reviewer_id;
    QuestionQuality question_quality = QuestionQuality::Acceptable;
    std::string quality_comment;
    bool lp_same_as_true = false;
    bool lp_correct_but_different = false;
    std::vector<ClusterJudgment> clusters;
    std::string submitted_at;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Field-level problems; empty when the annotation is valid for a question
/// with `cluster_count` clusters.
std::vector<std::string> annotation_problems(const Annotation& a, int cluster_count);

std::string encode_annotation(const Annotation& a);
Annotation decode_annotation(std::string_view json);
std::string encode_bundle(const ReviewBundle& b);

/// Seeded uniform sample without replacement, returned in input order.
/// ConfigError unless 0 < n <= eligible count.
std::vector<std::string> sample_review_set(std::span<const std::string> eligible_ids, int n,
                                           std::uint64_t seed);

/// Read-only projection of a scored run.
class ReviewData {
public:
    static ReviewData load(const RunDirectory& run);

    [[nodiscard]] ReviewBundle bundle(const std::string& question_id) const;
    [[nodiscard]] bool has_question(const std::string& question_id) const;
    [[nodiscard]] std::vector<std::string> eligible_ids() const;
    [[nodiscard]] const Clustering& clustering(const std::string& question_id) const;
    [[nodiscard]] const UncertaintyScore& score(const std::string& question_id) const;
    /// The Primary-definition record for `method`.
    [[nodiscard]] const CorrectnessRecord& record(const std::string& question_id,
                                                  Method method) const;

private:
    struct Entry {
        Question question;
        std::vector<Generation> generations;
        Clustering clustering;
        UncertaintyScore score;
        std::vector<CorrectnessRecord> records;
    };
    const Entry& entry(const std::string& question_id) const;

    std::vector<std::string> order_;
    std::map<std::string, Entry> entries_;
};

/// The persisted review set of a run (review/review_set.json). Created on
/// first use; later calls must agree on size and seed.
std::optional<std::vector<std::string>> stored_review_set(const RunDirectory& run);
std::vector<std::string> ensure_review_set(const RunDirectory& run, const ReviewData& data,
                                           int n, std::uint64_t seed);

/// Append-only annotation log with a derived current-state view keyed by
/// (question_id, reviewer_id). Resubmission replaces the current entry;
/// every submission stays in the log.
class AnnotationStore {
public:
    explicit AnnotationStore(std::filesystem::path log_file);

    /// Returns the 1-based revision of this (question, reviewer) pair.
    int submit(const Annotation& a);
    [[nodiscard]] std::vector<Annotation> current() const;
    [[nodiscard]] std::vector<Annotation> for_question(const std::string& question_id) const;
    [[nodiscard]] std::vector<Annotation> history() const;

private:
    std::filesystem::path log_file_;
    mutable std::mutex mutex_;
    std::vector<Annotation> history_;
    std::map<std::pair<std::string, std::string>, Annotation> current_;
};

struct FractionCell {
    int correct = 0;
    int n = 0;
    [[nodiscard]] std::optional<double> fraction() const {
        return n == 0 ? std::nullopt : std::optional<double>(double(correct) / n);
    }
};

/// One row of the accuracy-by-cluster-count grid.
struct ExpertRow {
    int cluster_count = 0;
    FractionCell lowest_perplexity_expert;
    FractionCell lowest_perplexity_llm;
    FractionCell largest_cluster_expert;
    FractionCell largest_cluster_llm;
};

struct ExpertMetrics {
    std::vector<ExpertRow> by_cluster_count;
    /// Expert-scored discrimination; absent when a class is missing.
    std::optional<Interval> semantic_entropy_auroc;
    std::optional<Interval> perplexity_auroc;
    int annotated = 0;
    int unannotated = 0;
    int clustering_successes = 0;
    [[nodiscard]] std::optional<double> clustering_success_rate() const {
        return annotated == 0 ? std::nullopt
                              : std::optional<double>(double(clustering_successes) / annotated);
    }
};

/// Reviewer disagreement is resolved per boolean field by strict majority;
/// an even split resolves to false.
ExpertMetrics expert_metrics(std::span<const Annotation> annotations, const ReviewData& data,
                             std::span<const std::string> review_set,
                             const EvalOptions& options = {});

std::string encode_expert_metrics(const ExpertMetrics& m);

struct ReviewServiceConfig {
    /// bearer token -> reviewer id
    std::map<std::string, std::string> tokens;
    int review_set_size = 105;
    std::uint64_t seed = kDefaultSeed;
    std::optional<std::filesystem::path> static_dir;
    EvalOptions eval;
    std::function<std::string()> clock;
};

/// Loads "token -> reviewer" pairs from a JSON object file.
std::map<std::string, std::string> load_token_file(const std::filesystem::path& path);

/// HTTP front end over a scored run.
///   GET  /api/review-set                    ids + per-reviewer completion
///   GET  /api/bundles/{question_id}          ReviewBundle
///   GET  /api/annotations/{question_id}      caller's current annotation
///   PUT  /api/annotations/{question_id}      submit (validated)
///   GET  /api/annotations                   all current annotations
///   GET  /api/metrics                       expert metrics
/// Every /api route requires `Authorization: Bearer <token>`.
class ReviewService {
public:
    ReviewService(const RunDirectory& run, ReviewServiceConfig config);
    ~ReviewService();
    ReviewService(const ReviewService&) = delete;
    ReviewService& operator=(const ReviewService&) = delete;

    /// Binds and serves until stop(); returns false when binding fails.
    bool listen(const std::string& host, int port);
    /// Binds an ephemeral port and returns it; serve with listen_after_bind().
    int bind_any_port(const std::string& host);
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

    [[nodiscard]] const std::vector<std::string>& review_set() const noexcept { return review_set_; }
    [[nodiscard]] AnnotationStore& annotations() noexcept { return store_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    ReviewData data_;
    std::vector<std::string> review_set_;
    AnnotationStore store_;
    ReviewServiceConfig config_;
};

}  // namespace sement
