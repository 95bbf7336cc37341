#include "sement/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sement/error.hpp"

namespace sement {

double perplexity(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw ValidationError("perplexity of an empty token list");
    return std::exp(-sequence_loglik(token_logprobs));
}

double perplexity(const Generation& gen) { return perplexity(gen.token_logprobs); }

namespace {

double entropy_of(std::span<const double> p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return std::max(h, 0.0);
}

}  // namespace

double discrete_semantic_entropy(std::span<const int> sizes) {
    if (sizes.empty()) throw ValidationError("discrete semantic entropy needs at least one cluster");
    double total = 0.0;
    for (int s : sizes) {
        if (s <= 0) throw ValidationError("cluster sizes must be positive");
        total += s;
    }
    std::vector<double> p;
    p.reserve(sizes.size());
    for (int s : sizes) p.push_back(s / total);
    return entropy_of(p);
}

double semantic_entropy_from_logliks(std::span<const double> logliks, const Clustering& clustering) {
    validate_partition(clustering, static_cast<int>(logliks.size()));
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();

    // log w_c = logsumexp over members; -inf marks a cluster with no mass.
    std::vector<double> log_w;
    log_w.reserve(clustering.clusters.size());
    for (const auto& members : clustering.clusters) {
        double top = neg_inf;
        for (int s : members) top = std::max(top, logliks[static_cast<std::size_t>(s)]);
        if (top == neg_inf) {
            log_w.push_back(neg_inf);
            continue;
        }
        double acc = 0.0;
        for (int s : members) acc += std::exp(logliks[static_cast<std::size_t>(s)] - top);
        log_w.push_back(top + std::log(acc));
    }

    const double top = *std::max_element(log_w.begin(), log_w.end());
    if (top == neg_inf) throw ValidationError("semantic entropy: no sample carries likelihood mass");
    double z = 0.0;
    for (double lw : log_w) z += std::exp(lw - top);
    const double log_z = top + std::log(z);

    // H = -sum p log p with log p = log w - log Z.
    double h = 0.0;
    for (double lw : log_w) {
        if (lw == neg_inf) continue;
        const double log_p = lw - log_z;
        h -= std::exp(log_p) * log_p;
    }
    return std::max(h, 0.0);
}

double semantic_entropy(std::span<const Generation> gens, const Clustering& clustering) {
    std::vector<double> logliks;
    logliks.reserve(gens.size());
    for (const auto& g : gens) {
        if (g.token_logprobs.empty()) {
            if (!trim(g.text).empty()) {
                throw ValidationError("semantic entropy needs token log-probabilities for sample " +
                                      std::to_string(g.sample_index) +
                                      "; use discrete semantic entropy in logprob-free mode");
            }
            logliks.push_back(-std::numeric_limits<double>::infinity());
        } else {
            logliks.push_back(sequence_loglik(g));
        }
    }
    return semantic_entropy_from_logliks(logliks, clustering);
}

UncertaintyScore score_question(std::span<const Generation> gens, const Clustering& clustering,
                                bool logprob_free) {
    validate_partition(clustering, static_cast<int>(gens.size()));
    UncertaintyScore s;
    s.question_id = clustering.question_id;
    s.cluster_count = static_cast<int>(clustering.clusters.size());
    const auto sizes = cluster_sizes(clustering);
    s.discrete_semantic_entropy = discrete_semantic_entropy(sizes);
    s.logprob_free = logprob_free;
    if (logprob_free) return s;

    s.per_sample_perplexity.reserve(gens.size());
    for (const auto& g : gens) {
        // A blank answer without tokens has no likelihood; it never wins the
        // lowest-perplexity selection.
        s.per_sample_perplexity.push_back(g.token_logprobs.empty()
                                              ? std::numeric_limits<double>::infinity()
                                              : perplexity(g));
    }
    s.perplexity = *std::min_element(s.per_sample_perplexity.begin(), s.per_sample_perplexity.end());
    s.semantic_entropy = semantic_entropy(gens, clustering);
    return s;
}

}  // namespace sement
