#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sement/dataset.hpp"
#include "sement/metrics.hpp"
#include "sement/scoring.hpp"

namespace sement {

enum class Metric { SemanticEntropy, DiscreteSemanticEntropy, Perplexity };
inline constexpr Metric kMetrics[] = {Metric::SemanticEntropy, Metric::DiscreteSemanticEntropy,
                                      Metric::Perplexity};
std::string_view to_string(Metric m) noexcept;
/// Row label used in rendered tables ("Semantic Entropy (SE)", ...).
std::string_view display_name(Metric m) noexcept;

struct Interval {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

/// Probability that a randomly chosen positive scores above a randomly
/// chosen negative, ties counted 1/2 (normalised Mann-Whitney U, computed
/// from mid-ranks in O(n log n)). Higher score means "more likely correct".
/// Throws ValidationError for mismatched lengths or a single class.
double auroc(std::span<const double> scores, const std::vector<bool>& labels);

/// Point estimate with a 95% Wilson score interval.
Interval accuracy_ci(const std::vector<bool>& correct);

inline constexpr int kDefaultResamples = 2000;
inline constexpr std::uint64_t kDefaultSeed = 20240806;

/// AUROC with a 95% percentile interval from a stratified bootstrap:
/// positives and negatives are resampled separately, so every replicate
/// keeps both classes. Replicate b draws from its own generator seeded by
/// (seed, b), which makes the result independent of thread scheduling.
/// Each class needs at least two members.
Interval auroc_ci(std::span<const double> scores, const std::vector<bool>& labels,
                  int resamples = kDefaultResamples, std::uint64_t seed = kDefaultSeed);

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};
/// ROC vertices from (0,0) to (1,1), one per distinct score.
std::vector<RocPoint> roc_curve(std::span<const double> scores, const std::vector<bool>& labels);

// ---------------------------------------------------------------------------
// Subgroup stratification

enum class SubgroupKind { All, Part, Category, Length, Temperature };
std::string_view to_string(SubgroupKind k) noexcept;
std::optional<SubgroupKind> parse_subgroup(std::string_view name) noexcept;

enum class LengthBin { Short, Excluded, Long };
/// Short below 15 characters, long above 60; 15 through 60 inclusive fall in
/// the excluded middle band.
LengthBin length_bin(std::string_view answer) noexcept;
inline constexpr std::size_t kShortBelow = 15;
inline constexpr std::size_t kLongAbove = 60;

/// Everything evaluation needs about one eligible question.
struct EvalItem {
    std::string question_id;
    Part part = Part::One;
    Category category = Category::Unlabelled;
    double temperature = 1.0;
    std::string lowest_perplexity_text;
    bool lowest_perplexity_correct = false;
    std::string largest_cluster_text;
    bool largest_cluster_correct = false;
    std::optional<double> semantic_entropy;
    double discrete_semantic_entropy = 0.0;
    std::optional<double> perplexity;
};

/// Joins questions, metrics and correctness records. Entropy metrics are
/// paired with largest-cluster correctness under `cluster_definition`,
/// perplexity with lowest-perplexity correctness.
std::vector<EvalItem> join_eval_items(std::span<const Question> eligible,
                                      std::span<const UncertaintyScore> scores,
                                      std::span<const CorrectnessRecord> records,
                                      Definition cluster_definition, double temperature);

struct Estimate {
    double point = 0.0;
    std::optional<double> lower;
    std::optional<double> upper;
};

struct EvalReport {
    Metric metric = Metric::SemanticEntropy;
    SubgroupKind subgroup = SubgroupKind::All;
    std::string cell;  // "all", "Part 1", "Knowledge", "Short", "1.0", ...
    int n = 0;
    /// Questions of the eligible set left out of this split (mid-length band,
    /// or metric unavailable).
    int excluded = 0;
    std::optional<Estimate> accuracy;
    std::optional<Estimate> auroc;
    std::string note;
};

struct EvalOptions {
    int resamples = kDefaultResamples;
    std::uint64_t seed = kDefaultSeed;
};

/// One report per metric and cell. Empty cells are reported with n = 0 and
/// no estimates; single-class cells carry accuracy but no AUROC.
std::vector<EvalReport> stratify(std::span<const EvalItem> items, SubgroupKind kind,
                                 const EvalOptions& options = {});

/// Uncertainty oriented as a correctness score: lower uncertainty ranks higher.
inline double correctness_score(double uncertainty) noexcept { return -uncertainty; }

}  // namespace sement
