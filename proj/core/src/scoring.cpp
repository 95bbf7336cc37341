#include "sement/scoring.hpp"

#include <algorithm>
#include <tuple>

#include "sement/error.hpp"

namespace sement {

std::string_view to_string(Method m) noexcept {
    return m == Method::LowestPerplexity ? "lowest_perplexity" : "largest_cluster";
}

std::string_view to_string(Definition d) noexcept {
    switch (d) {
        case Definition::Primary: return "primary";
        case Definition::Strict: return "strict";
        case Definition::Majority: return "majority";
        case Definition::Relaxed: return "relaxed";
    }
    return "?";
}

int lowest_perplexity_index(std::span<const double> ppl, std::span<const int> candidates) {
    if (candidates.empty()) throw ValidationError("no candidate samples");
    int best = candidates.front();
    for (int c : candidates) {
        if (ppl.empty()) {
            best = std::min(best, c);
            continue;
        }
        const double v = ppl[static_cast<std::size_t>(c)];
        const double b = ppl[static_cast<std::size_t>(best)];
        if (v < b || (v == b && c < best)) best = c;
    }
    return best;
}

namespace {

void check_inputs(std::span<const Generation> gens, std::span<const double> ppl) {
    if (gens.empty()) throw ValidationError("no generations to score");
    if (!ppl.empty() && ppl.size() != gens.size()) {
        throw ValidationError("per-sample perplexity length differs from the number of generations");
    }
}

/// Bidirectional entailment with the reference; blank answers never match.
bool matches_reference(const Generation& g, std::string_view reference, std::string_view context,
                       EntailmentJudge& judge) {
    if (trim(g.text).empty()) return false;
    return judge.bidirectional(g.text, reference, context);
}

}  // namespace

CorrectnessRecord score_lowest_perplexity(std::span<const Generation> gens,
                                          std::span<const double> ppl,
                                          std::string_view reference_answer, std::string_view context,
                                          EntailmentJudge& judge) {
    check_inputs(gens, ppl);
    if (ppl.empty()) throw ValidationError("lowest-perplexity scoring needs per-sample perplexities");
    std::vector<int> all(gens.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);

    CorrectnessRecord r;
    r.question_id = gens.front().question_id;
    r.method = Method::LowestPerplexity;
    r.definition = Definition::Primary;
    r.chosen_index = lowest_perplexity_index(ppl, all);
    const auto& chosen = gens[static_cast<std::size_t>(r.chosen_index)];
    r.chosen_text = chosen.text;
    r.correct = matches_reference(chosen, reference_answer, context, judge);
    return r;
}

CorrectnessRecord score_largest_cluster(std::span<const Generation> gens, const Clustering& clustering,
                                        std::span<const double> ppl, std::string_view reference_answer,
                                        std::string_view context, EntailmentJudge& judge,
                                        Definition definition) {
    check_inputs(gens, ppl);
    validate_partition(clustering, static_cast<int>(gens.size()));

    const auto sizes = cluster_sizes(clustering);
    const int largest = *std::max_element(sizes.begin(), sizes.end());
    const auto first_largest = static_cast<std::size_t>(
        std::find(sizes.begin(), sizes.end(), largest) - sizes.begin());
    const auto tied = std::count(sizes.begin(), sizes.end(), largest);

    const auto& members = clustering.clusters[first_largest];
    CorrectnessRecord r;
    r.question_id = clustering.question_id;
    r.method = Method::LargestCluster;
    r.definition = definition;
    r.chosen_index = lowest_perplexity_index(ppl, members);
    r.chosen_text = gens[static_cast<std::size_t>(r.chosen_index)].text;

    if (tied > 1) {
        r.correct = false;
        r.tie_broken_incorrect = true;
        return r;
    }

    switch (definition) {
        case Definition::Primary:
            r.correct = matches_reference(gens[static_cast<std::size_t>(r.chosen_index)],
                                          reference_answer, context, judge);
            break;
        case Definition::Strict:
        case Definition::Majority:
        case Definition::Relaxed: {
            std::size_t entailed = 0;
            for (int s : members) {
                if (matches_reference(gens[static_cast<std::size_t>(s)], reference_answer, context, judge)) {
                    ++entailed;
                }
            }
            if (definition == Definition::Strict) {
                r.correct = entailed == members.size();
            } else if (definition == Definition::Majority) {
                r.correct = 2 * entailed > members.size();
            } else {
                r.correct = entailed > 0;
            }
            break;
        }
    }
    return r;
}

std::vector<CorrectnessRecord> score_question_all(std::span<const Generation> gens,
                                                  const Clustering& clustering,
                                                  std::span<const double> ppl,
                                                  std::string_view reference_answer,
                                                  std::string_view context, EntailmentJudge& judge,
                                                  bool logprob_free) {
    std::vector<CorrectnessRecord> out;
    if (!logprob_free) {
        out.push_back(score_lowest_perplexity(gens, ppl, reference_answer, context, judge));
    }
    for (auto d : {Definition::Primary, Definition::Strict, Definition::Majority, Definition::Relaxed}) {
        out.push_back(score_largest_cluster(gens, clustering, ppl, reference_answer, context, judge, d));
    }
    return out;
}

void sort_records(std::vector<CorrectnessRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.question_id, a.method, a.definition) <
               std::tie(b.question_id, b.method, b.definition);
    });
}

}  // namespace sement
