#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sement/cluster.hpp"
#include "sement/entail.hpp"
#include "sement/genclient.hpp"

namespace sement {

enum class Method { LowestPerplexity, LargestCluster };
enum class Definition { Primary, Strict, Majority, Relaxed };

std::string_view to_string(Method m) noexcept;
std::string_view to_string(Definition d) noexcept;

struct CorrectnessRecord {
    std::string question_id;
    Method method = Method::LowestPerplexity;
    Definition definition = Definition::Primary;
    int chosen_index = -1;
    std::string chosen_text;
    bool correct = false;
    bool tie_broken_incorrect = false;

    friend bool operator==(const CorrectnessRecord&, const CorrectnessRecord&) = default;
};

/// Index of the minimum perplexity among `candidates`; ties go to the lowest
/// sample index. An empty perplexity list means no likelihoods are available
/// and the lowest sample index wins.
int lowest_perplexity_index(std::span<const double> per_sample_perplexity,
                            std::span<const int> candidates);

CorrectnessRecord score_lowest_perplexity(std::span<const Generation> gens,
                                          std::span<const double> per_sample_perplexity,
                                          std::string_view reference_answer,
                                          std::string_view context, EntailmentJudge& judge);

/// When two or more clusters share the largest size the record is incorrect
/// with tie_broken_incorrect set and the judge is never consulted; the chosen
/// text is then the lowest-perplexity member of the earliest tied cluster.
CorrectnessRecord score_largest_cluster(std::span<const Generation> gens,
                                        const Clustering& clustering,
                                        std::span<const double> per_sample_perplexity,
                                        std::string_view reference_answer,
                                        std::string_view context, EntailmentJudge& judge,
                                        Definition definition);

/// LowestPerplexity/Primary (omitted in logprob-free mode) followed by
/// LargestCluster under all four definitions.
std::vector<CorrectnessRecord> score_question_all(std::span<const Generation> gens,
                                                  const Clustering& clustering,
                                                  std::span<const double> per_sample_perplexity,
                                                  std::string_view reference_answer,
                                                  std::string_view context,
                                                  EntailmentJudge& judge, bool logprob_free);

/// Orders by question_id, then method, then definition.
void sort_records(std::vector<CorrectnessRecord>& records);

}  // namespace sement
